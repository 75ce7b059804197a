"""Text-guided 3D portrait editing via hypernetwork parameter offsets."""

__version__ = "0.1.0"

from .camera import BACKGROUND_DEPTH, CameraPose, DEFAULT_POSE_SWEEP
from .generator import (
    GeneratorConfig,
    GeneratorParams,
    InputError,
    LatentCode,
    LayerSpec,
    PortraitGenerator,
    RenderOutput,
    generate,
    map_latent,
    sample_field,
    sample_latent,
    substitute_forward,
    upsample,
    volume_render,
)
from .hyper import (
    DirectionFeature,
    EditCoefficients,
    GroupAssignment,
    HyperModule,
    OffsetSet,
    apply_offsets,
    compose_edit,
    encode_direction,
    perturb_direction,
    predict_offsets,
)

__all__ = [
    "BACKGROUND_DEPTH",
    "CameraPose",
    "DEFAULT_POSE_SWEEP",
    "DirectionFeature",
    "EditCoefficients",
    "GeneratorConfig",
    "GeneratorParams",
    "GroupAssignment",
    "HyperModule",
    "InputError",
    "LatentCode",
    "LayerSpec",
    "OffsetSet",
    "PortraitGenerator",
    "RenderOutput",
    "apply_offsets",
    "compose_edit",
    "encode_direction",
    "generate",
    "map_latent",
    "perturb_direction",
    "predict_offsets",
    "sample_field",
    "sample_latent",
    "substitute_forward",
    "upsample",
    "volume_render",
]
