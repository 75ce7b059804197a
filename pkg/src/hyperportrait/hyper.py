"""Hypernetwork that maps text direction features to per-layer offsets.

One small feed-forward predictor per editable generator layer; the
predictors are partitioned into coarse/medium/fine controllers addressed by
the shape/attribute/style editing levels. Offsets are relative and applied
multiplicatively: layer_hat = layer * (1 + alpha * offset).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoders import JointEmbedder
from .generator import (
    GROUPS,
    LEVEL_TO_GROUP,
    LEVELS,
    GeneratorParams,
    InputError,
    LayerSpec,
)


@dataclass(frozen=True)
class DirectionFeature:
    """Text-difference embedding with its editing level."""

    vector: torch.Tensor
    level: str
    src_text: str
    tgt_text: str

    def __post_init__(self) -> None:
        if self.level not in LEVELS:
            raise InputError(f"unknown level {self.level!r}, expected one of {LEVELS}")
        if not torch.isfinite(self.vector).all():
            raise InputError("direction vector contains non-finite entries")


@dataclass(frozen=True)
class GroupAssignment:
    coarse: tuple[int, ...] = (1, 2, 3)
    medium: tuple[int, ...] = (4, 5, 6)
    fine: tuple[int, ...] = (7, 8, 9)

    def __post_init__(self) -> None:
        groups = [set(self.coarse), set(self.medium), set(self.fine)]
        union: set[int] = set()
        for g in groups:
            if union & g:
                raise InputError("layer groups must be disjoint")
            union |= g
        if union != set(range(1, len(union) + 1)):
            raise InputError("layer groups must partition contiguous indices from 1")

    @property
    def all_layers(self) -> tuple[int, ...]:
        return tuple(sorted(self.coarse + self.medium + self.fine))

    def layers_for(self, group: str) -> tuple[int, ...]:
        if group not in GROUPS:
            raise InputError(f"unknown group {group!r}")
        return getattr(self, group)

    def group_of(self, index: int) -> str:
        for g in GROUPS:
            if index in getattr(self, g):
                return g
        raise InputError(f"layer index {index} not assigned to any group")


@dataclass(frozen=True)
class EditCoefficients:
    """Per-group editing degree; negative values reverse the direction."""

    coarse: float = 1.0
    medium: float = 1.0
    fine: float = 1.0

    def __post_init__(self) -> None:
        for name in GROUPS:
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or v != v or abs(v) == float("inf"):
                raise InputError(f"coefficient {name} must be finite")

    def for_group(self, group: str) -> float:
        return float(getattr(self, group))

    @classmethod
    def zeros(cls) -> "EditCoefficients":
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class OffsetSet:
    """Per-layer relative offsets, exact zeros for unrequested levels."""

    offsets: tuple[torch.Tensor, ...]
    specs: tuple[LayerSpec, ...]
    provenance: Mapping[str, DirectionFeature]

    def offset_for(self, index: int) -> torch.Tensor:
        return self.offsets[index - 1]


class LayerOffsetPredictor(nn.Module):
    """Two-hidden-layer MLP from direction feature to one layer's offsets.

    The final linear layer starts at zero so a fresh predictor is an exact
    identity edit; the learnable gain (init 0.1) scales the reshaped output.
    """

    def __init__(self, spec: LayerSpec, embed_dim: int, hidden_dim: int,
                 seed: int, dtype: torch.dtype):
        super().__init__()
        self.spec = spec
        gen = torch.Generator().manual_seed(seed)
        out_numel = 1
        for s in spec.shape:
            out_numel *= s

        def init(out_d: int, in_d: int) -> torch.Tensor:
            t = torch.empty(out_d, in_d, dtype=torch.float64)
            t.normal_(0.0, (2.0 / in_d) ** 0.5, generator=gen)
            return t

        self.w1 = nn.Parameter(init(hidden_dim, embed_dim))
        self.b1 = nn.Parameter(torch.zeros(hidden_dim, dtype=torch.float64))
        self.w2 = nn.Parameter(init(hidden_dim, hidden_dim))
        self.b2 = nn.Parameter(torch.zeros(hidden_dim, dtype=torch.float64))
        self.w_out = nn.Parameter(torch.zeros(out_numel, hidden_dim, dtype=torch.float64))
        self.b_out = nn.Parameter(torch.zeros(out_numel, dtype=torch.float64))
        self.gain = nn.Parameter(torch.tensor(0.1, dtype=torch.float64))
        self.to(dtype)

    def forward(self, direction: torch.Tensor) -> torch.Tensor:
        h = F.silu(F.linear(direction, self.w1, self.b1))
        h = F.silu(F.linear(h, self.w2, self.b2))
        out = F.linear(h, self.w_out, self.b_out)
        return (self.gain * out).reshape(self.spec.shape)


class HyperModule(nn.Module):
    """All per-layer predictors plus their grouping into three controllers."""

    def __init__(
        self,
        layer_specs: Sequence[LayerSpec],
        embed_dim: int = 512,
        hidden_dim: int = 128,
        grouping: GroupAssignment | None = None,
        noise_scale: float = 0.05,
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        if noise_scale < 0:
            raise InputError("noise_scale must be >= 0")
        self.layer_specs = tuple(layer_specs)
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.grouping = grouping or GroupAssignment()
        self.noise_scale = float(noise_scale)
        if set(s.index for s in self.layer_specs) != set(self.grouping.all_layers):
            raise InputError("grouping does not cover the editable layer set")
        self.predictors = nn.ModuleList(
            LayerOffsetPredictor(spec, embed_dim, hidden_dim, seed=seed * 1000 + spec.index, dtype=dtype)
            for spec in self.layer_specs
        )

    @classmethod
    def for_generator(cls, params_or_module, **kwargs) -> "HyperModule":
        module = getattr(params_or_module, "module", params_or_module)
        return cls(module.layer_specs(), **kwargs)

    def predictor_for(self, index: int) -> LayerOffsetPredictor:
        return self.predictors[index - 1]

    def predict(self, directions: Mapping[str, DirectionFeature]) -> OffsetSet:
        return predict_offsets(self, directions)


# ---------------------------------------------------------------- operations


def encode_direction(
    src: str, tgt: str, level: str, embedder: JointEmbedder
) -> DirectionFeature:
    """Direction feature = embed(tgt) - embed(src), tagged with its level."""
    if not src or not tgt:
        raise InputError("prompt texts must be nonempty")
    vector = embedder.embed_text(tgt) - embedder.embed_text(src)
    return DirectionFeature(vector=vector, level=level, src_text=src, tgt_text=tgt)


def perturb_direction(
    f: DirectionFeature, sigma: float, seed: int
) -> DirectionFeature:
    """Add seeded i.i.d. Gaussian noise to the direction vector."""
    if sigma < 0:
        raise InputError("sigma must be >= 0")
    if sigma == 0:
        return f
    gen = torch.Generator().manual_seed(seed)
    noise = torch.randn(f.vector.shape, generator=gen, dtype=f.vector.dtype) * sigma
    return replace(f, vector=f.vector + noise)


def predict_offsets(
    hyper: HyperModule, directions: Mapping[str, DirectionFeature]
) -> OffsetSet:
    """Run each requested level's controller; absent levels get exact zeros."""
    for level, feat in directions.items():
        if level not in LEVELS:
            raise InputError(f"unknown level {level!r}")
        if feat.level != level:
            raise InputError(
                f"direction tagged {feat.level!r} supplied under level {level!r}"
            )
    offsets: list[torch.Tensor] = []
    for spec in hyper.layer_specs:
        group = hyper.grouping.group_of(spec.index)
        level = {v: k for k, v in LEVEL_TO_GROUP.items()}[group]
        if level in directions:
            vec = directions[level].vector
            if vec.shape != (hyper.embed_dim,):
                raise InputError(
                    f"direction vector must have shape ({hyper.embed_dim},), got {tuple(vec.shape)}"
                )
            pred = hyper.predictor_for(spec.index)
            offsets.append(pred(vec.to(pred.w1.dtype)))
        else:
            dtype = hyper.predictor_for(spec.index).w1.dtype
            offsets.append(torch.zeros(spec.shape, dtype=dtype))
    return OffsetSet(offsets=tuple(offsets), specs=hyper.layer_specs, provenance=dict(directions))


def apply_offsets(
    theta: GeneratorParams, offsets: OffsetSet, coeffs: EditCoefficients
) -> GeneratorParams:
    """theta_hat_j = theta_j * (1 + alpha_group(j) * delta_j). Pure function."""
    new_tensors = []
    for (spec, tensor), delta in zip(theta.layers, offsets.offsets):
        if tuple(delta.shape) != spec.shape:
            raise InputError(
                f"offset for {spec.name} has shape {tuple(delta.shape)}, expected {spec.shape}"
            )
        alpha = coeffs.for_group(spec.group)
        new_tensors.append(tensor * (1.0 + alpha * delta.to(tensor.dtype)))
    return theta.with_tensors(new_tensors)


def compose_edit(
    theta: GeneratorParams,
    hyper: HyperModule,
    prompts: Mapping[str, tuple[str, str]],
    coeffs: EditCoefficients,
    embedder: JointEmbedder,
    sigma: float = 0.0,
    seed: int = 0,
) -> GeneratorParams:
    """encode -> perturb -> predict -> apply in one call.

    ``prompts`` maps levels to (src, tgt) text pairs; at least one level must
    be present. Levels not requested leave their layer group bit-identical.
    """
    if not prompts:
        raise InputError("at least one editing level must be requested")
    directions: dict[str, DirectionFeature] = {}
    for i, (level, pair) in enumerate(sorted(prompts.items())):
        src, tgt = pair
        feat = encode_direction(src, tgt, level, embedder)
        directions[level] = perturb_direction(feat, sigma, seed + i)
    offsets = predict_offsets(hyper, directions)
    return apply_offsets(theta, offsets, coeffs)
