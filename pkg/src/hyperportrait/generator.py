"""Toy 3D-aware portrait generator.

A latent-conditioned SDF + color field is volume rendered into a low
resolution feature map and depth map; a small convolutional upsampler turns
the feature map into the output image. The nine trunk linear layers are the
editable parameter set: their weight matrices can be swapped out at render
time (``substitute_forward``), which is how hypernetwork offsets reach the
generator without mutating it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .camera import BACKGROUND_DEPTH, FOREGROUND_WEIGHT_THRESHOLD, CameraPose, camera_rays

GROUPS = ("coarse", "medium", "fine")
LEVELS = ("shape", "attribute", "style")

# Editing levels address layer groups: shape edits the coarse layers,
# attribute the medium layers, style the fine layers.
LEVEL_TO_GROUP = {"shape": "coarse", "attribute": "medium", "style": "fine"}
GROUP_TO_LEVEL = {g: l for l, g in LEVEL_TO_GROUP.items()}


class InputError(ValueError):
    """Raised when an operation receives an invalid input."""


@dataclass(frozen=True)
class GeneratorConfig:
    latent_dim: int = 64
    width: int = 64
    n_layers: int = 9
    feature_channels: int = 32
    feature_res: int = 32
    upscale: int = 4
    scene_bound: float = 0.6
    beta_init: float = 0.02
    first_omega: float = 6.0
    render_steps: int = 32
    coarse_layers: tuple[int, ...] = (1, 2, 3)
    medium_layers: tuple[int, ...] = (4, 5, 6)
    fine_layers: tuple[int, ...] = (7, 8, 9)

    @property
    def image_res(self) -> int:
        return self.feature_res * self.upscale

    def group_of(self, index: int) -> str:
        if index in self.coarse_layers:
            return "coarse"
        if index in self.medium_layers:
            return "medium"
        if index in self.fine_layers:
            return "fine"
        raise InputError(f"layer index {index} outside 1..{self.n_layers}")


@dataclass(frozen=True)
class LayerSpec:
    """One editable linear layer: 1-based index, name, group tag, weight shape."""

    index: int
    name: str
    group: str
    shape: tuple[int, ...]


@dataclass(frozen=True)
class LatentCode:
    z: torch.Tensor
    w: torch.Tensor


@dataclass(frozen=True)
class FieldSample:
    sdf: float
    color: tuple[float, float, float]
    feature: torch.Tensor


@dataclass(frozen=True)
class RenderOutput:
    image: torch.Tensor
    feature_map: torch.Tensor
    depth: torch.Tensor
    pose: CameraPose

    @property
    def foreground_mask(self) -> torch.Tensor:
        return self.depth > 0


@dataclass(frozen=True)
class GeneratorParams:
    """Ordered editable layer tensors plus the frozen remainder of the model.

    ``module`` owns every non-editable parameter (mapping network, FiLM
    affines, heads, upsampler, the SDF sharpness). Functions returning new
    GeneratorParams never mutate the module or the base tensors.
    """

    layers: tuple[tuple[LayerSpec, torch.Tensor], ...]
    module: "PortraitGenerator"

    @property
    def specs(self) -> tuple[LayerSpec, ...]:
        return tuple(spec for spec, _ in self.layers)

    @property
    def tensors(self) -> tuple[torch.Tensor, ...]:
        return tuple(t for _, t in self.layers)

    def tensor_by_name(self, name: str) -> torch.Tensor:
        for spec, t in self.layers:
            if spec.name == name:
                return t
        raise KeyError(name)

    def with_tensors(self, tensors: Sequence[torch.Tensor]) -> "GeneratorParams":
        if len(tensors) != len(self.layers):
            raise InputError(f"expected {len(self.layers)} tensors, got {len(tensors)}")
        new_layers = []
        for (spec, old), t in zip(self.layers, tensors):
            if tuple(t.shape) != spec.shape:
                raise InputError(f"layer {spec.name}: shape {tuple(t.shape)} != {spec.shape}")
            new_layers.append((spec, t))
        return replace(self, layers=tuple(new_layers))


def _siren_first(out_dim: int, in_dim: int, gen: torch.Generator) -> torch.Tensor:
    w = torch.empty(out_dim, in_dim, dtype=torch.float64)
    w.uniform_(-1.0 / in_dim, 1.0 / in_dim, generator=gen)
    return w


def _siren_hidden(out_dim: int, in_dim: int, omega: float, gen: torch.Generator) -> torch.Tensor:
    bound = math.sqrt(6.0 / in_dim) / omega
    w = torch.empty(out_dim, in_dim, dtype=torch.float64)
    w.uniform_(-bound, bound, generator=gen)
    return w


class PortraitGenerator(nn.Module):
    """The full toy generator. Editable layer weights live in ``trunk_weights``;
    everything else is the frozen remainder once pretraining is done."""

    def __init__(self, config: GeneratorConfig | None = None, seed: int = 0,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config or GeneratorConfig()
        cfg = self.config
        if cfg.n_layers != 9:
            raise InputError("the toy trunk is fixed at nine editable layers")
        gen = torch.Generator().manual_seed(seed)

        def rand(*shape: int, scale: float = 1.0) -> torch.Tensor:
            t = torch.empty(*shape, dtype=torch.float64)
            t.normal_(0.0, scale, generator=gen)
            return t

        w_dim = cfg.latent_dim
        width = cfg.width
        omega = cfg.first_omega

        # mapping network z -> w (frozen_rest)
        self.map_w1 = nn.Parameter(rand(w_dim, cfg.latent_dim, scale=1.0 / math.sqrt(cfg.latent_dim)))
        self.map_b1 = nn.Parameter(torch.zeros(w_dim, dtype=torch.float64))
        self.map_w2 = nn.Parameter(rand(w_dim, w_dim, scale=1.0 / math.sqrt(w_dim)))
        self.map_b2 = nn.Parameter(torch.zeros(w_dim, dtype=torch.float64))

        # nine editable trunk weights: 8 point layers + 1 view-conditioned layer
        in_dims = [3] + [width] * 7 + [width + 3]
        weights = []
        for j, in_dim in enumerate(in_dims):
            if j == 0:
                weights.append(_siren_first(width, in_dim, gen))
            else:
                weights.append(_siren_hidden(width, in_dim, omega, gen))
        self.trunk_weights = nn.ParameterList(nn.Parameter(w) for w in weights)
        self.trunk_biases = nn.ParameterList(
            nn.Parameter(torch.zeros(width, dtype=torch.float64)) for _ in in_dims
        )

        # FiLM affines conditioning each trunk layer on w (frozen_rest)
        self.film_gamma_w = nn.ParameterList(
            nn.Parameter(rand(width, w_dim, scale=0.05)) for _ in in_dims
        )
        self.film_gamma_b = nn.ParameterList(
            nn.Parameter(torch.full((width,), omega, dtype=torch.float64)) for _ in in_dims
        )
        self.film_beta_w = nn.ParameterList(
            nn.Parameter(rand(width, w_dim, scale=0.05)) for _ in in_dims
        )
        self.film_beta_b = nn.ParameterList(
            nn.Parameter(torch.zeros(width, dtype=torch.float64)) for _ in in_dims
        )

        # heads (frozen_rest)
        self.sdf_head_w = nn.Parameter(rand(1, width, scale=1.0 / math.sqrt(width)))
        self.sdf_head_b = nn.Parameter(torch.zeros(1, dtype=torch.float64))
        self.color_head_w = nn.Parameter(rand(3, width, scale=1.0 / math.sqrt(width)))
        self.color_head_b = nn.Parameter(torch.zeros(3, dtype=torch.float64))
        self.feat_head_w = nn.Parameter(rand(cfg.feature_channels, width, scale=1.0 / math.sqrt(width)))
        self.feat_head_b = nn.Parameter(torch.zeros(cfg.feature_channels, dtype=torch.float64))

        # SDF sharpness, beta = exp(log_beta) > 0
        self.log_beta = nn.Parameter(torch.tensor(math.log(cfg.beta_init), dtype=torch.float64))

        # upsampler: feature map -> image at 4x resolution (frozen_rest)
        c = cfg.feature_channels
        self.up_conv1 = nn.Conv2d(c, 48, 3, padding=1, dtype=torch.float64)
        self.up_conv2 = nn.Conv2d(48, 48, 3, padding=1, dtype=torch.float64)
        self.up_conv3 = nn.Conv2d(48, 3, 3, padding=1, dtype=torch.float64)
        with torch.no_grad():
            for conv in (self.up_conv1, self.up_conv2, self.up_conv3):
                conv.weight.normal_(0.0, 0.05, generator=gen)
                conv.bias.zero_()

        self.to(dtype)
        self._dtype = dtype

    # ------------------------------------------------------------------ specs

    @property
    def dtype(self) -> torch.dtype:
        return self._dtype

    def layer_specs(self) -> tuple[LayerSpec, ...]:
        cfg = self.config
        specs = []
        for j, w in enumerate(self.trunk_weights):
            index = j + 1
            specs.append(
                LayerSpec(
                    index=index,
                    name=f"trunk_{index}",
                    group=cfg.group_of(index),
                    shape=tuple(w.shape),
                )
            )
        return tuple(specs)

    def params(self) -> GeneratorParams:
        layers = tuple(
            (spec, self.trunk_weights[spec.index - 1])
            for spec in self.layer_specs()
        )
        return GeneratorParams(layers=layers, module=self)

    def freeze(self) -> "PortraitGenerator":
        for p in self.parameters():
            p.requires_grad_(False)
        return self

    # ---------------------------------------------------------------- mapping

    def map_latent(self, z: torch.Tensor) -> torch.Tensor:
        z = _check_vector(z, self.config.latent_dim, "z")
        z = z.to(self._dtype)
        h = F.silu(F.linear(z, self.map_w1, self.map_b1))
        return F.linear(h, self.map_w2, self.map_b2)

    # ------------------------------------------------------------------ field

    def _film_weights(
        self, weights: Sequence[torch.Tensor], w_lat: torch.Tensor
    ) -> tuple[list[torch.Tensor], list[torch.Tensor]]:
        """Fold the FiLM modulation into the layer weights for one latent.

        sin(gamma * (W h + b) + beta) == sin((gamma[:,None] * W) h + (gamma*b + beta)),
        so conditioning costs one small rescale per layer instead of extra
        full-size elementwise passes over every sample.
        """
        fused_w, fused_b = [], []
        for j, w_j in enumerate(weights):
            gamma = F.linear(w_lat, self.film_gamma_w[j], self.film_gamma_b[j])
            beta = F.linear(w_lat, self.film_beta_w[j], self.film_beta_b[j])
            fused_w.append(gamma.unsqueeze(-1) * w_j)
            fused_b.append(gamma * self.trunk_biases[j] + beta)
        return fused_w, fused_b

    def field(
        self,
        weights: Sequence[torch.Tensor],
        x: torch.Tensor,
        d: torch.Tensor,
        w_lat: torch.Tensor,
        with_appearance: bool = True,
        chunk: int = 65536,
    ) -> tuple[torch.Tensor, torch.Tensor | None, torch.Tensor | None]:
        """Evaluate the conditioned field at points x with view directions d.

        x, d: [N, 3]; returns (sdf [N, 1], color [N, 3], feature [N, C]).
        The nine entries of ``weights`` stand in for the editable layers.
        With ``with_appearance=False`` the view branch and heads are skipped
        and color/feature come back as None (depth-only rendering).
        """
        if len(weights) != 9:
            raise InputError(f"expected 9 layer weights, got {len(weights)}")
        fused_w, fused_b = self._film_weights(weights, w_lat)

        sdf_parts, color_parts, feat_parts = [], [], []
        n = x.shape[0]
        for start in range(0, n, chunk):
            h = x[start : start + chunk]
            for j in range(8):
                h = torch.sin(F.linear(h, fused_w[j], fused_b[j]))
            sdf_parts.append(F.linear(h, self.sdf_head_w, self.sdf_head_b))
            if with_appearance:
                hv = torch.cat([h, d[start : start + chunk]], dim=-1)
                hv = torch.sin(F.linear(hv, fused_w[8], fused_b[8]))
                color_parts.append(torch.sigmoid(F.linear(hv, self.color_head_w, self.color_head_b)))
                feat_parts.append(F.linear(hv, self.feat_head_w, self.feat_head_b))
        sdf = torch.cat(sdf_parts) if len(sdf_parts) > 1 else sdf_parts[0]
        if not with_appearance:
            return sdf, None, None
        color = torch.cat(color_parts) if len(color_parts) > 1 else color_parts[0]
        feature = torch.cat(feat_parts) if len(feat_parts) > 1 else feat_parts[0]
        return sdf, color, feature

    @property
    def beta(self) -> torch.Tensor:
        return torch.exp(self.log_beta)

    def upsample(self, feature_map: torch.Tensor) -> torch.Tensor:
        """Feature map [h, w, C] -> image [4h, 4w, 3] in [0, 1]."""
        if feature_map.dim() != 3 or feature_map.shape[-1] != self.config.feature_channels:
            raise InputError(
                f"feature map must be [h, w, {self.config.feature_channels}], got {tuple(feature_map.shape)}"
            )
        x = feature_map.permute(2, 0, 1).unsqueeze(0)
        x = F.silu(self.up_conv1(x))
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = F.silu(self.up_conv2(x))
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = torch.sigmoid(self.up_conv3(x))
        return x.squeeze(0).permute(1, 2, 0)


# ------------------------------------------------------------------- helpers


def _check_vector(v: torch.Tensor, dim: int, name: str) -> torch.Tensor:
    if not isinstance(v, torch.Tensor):
        v = torch.as_tensor(v)
    if v.shape != (dim,):
        raise InputError(f"{name} must have shape ({dim},), got {tuple(v.shape)}")
    if not torch.isfinite(v).all():
        raise InputError(f"{name} contains non-finite entries")
    return v


def sample_latent(dim: int = 64, seed: int | None = None,
                  generator: torch.Generator | None = None,
                  dtype: torch.dtype = torch.float32) -> torch.Tensor:
    if generator is None:
        generator = torch.Generator()
        if seed is not None:
            generator.manual_seed(seed)
    return torch.randn(dim, generator=generator, dtype=dtype)


# ---------------------------------------------------------------- operations


def map_latent(z: torch.Tensor, params: GeneratorParams) -> torch.Tensor:
    return params.module.map_latent(z)


def make_latent(z: torch.Tensor, params: GeneratorParams) -> LatentCode:
    return LatentCode(z=z, w=map_latent(z, params))


def sample_field(
    params: GeneratorParams,
    x: torch.Tensor,
    d: torch.Tensor,
    w: torch.Tensor,
) -> FieldSample:
    module = params.module
    x = _check_vector(x, 3, "x").to(module.dtype)
    d = _check_vector(d, 3, "d").to(module.dtype)
    if abs(float(torch.linalg.vector_norm(d)) - 1.0) > 1e-4:
        raise InputError("view direction must be unit length")
    w = _check_vector(w, module.config.latent_dim, "w").to(module.dtype)
    with torch.no_grad():
        sdf, color, feature = module.field(params.tensors, x, d, w)
    return FieldSample(
        sdf=float(sdf.squeeze()),
        color=tuple(float(c) for c in color),
        feature=feature,
    )


FieldFn = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], tuple[torch.Tensor, torch.Tensor, torch.Tensor]]


def volume_render(
    params: GeneratorParams,
    w: torch.Tensor,
    pose: CameraPose,
    steps: int | None = None,
    res: int | None = None,
    field_fn: FieldFn | None = None,
    with_features: bool = True,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """March rays through the field; return (feature_map, depth, weight_sum).

    feature_map: [res, res, C]; depth: [res, res] holding the transmittance
    weighted expected termination distance for foreground pixels and
    BACKGROUND_DEPTH elsewhere; weight_sum: [res, res] accumulated weights.
    ``with_features=False`` skips the appearance branch and returns an empty
    feature map (depth-only evaluation path).

    ``field_fn`` overrides the generator field (used by analytic oracles);
    it maps (points [N,3], dirs [N,3], w) to (sdf [N,1], color [N,3],
    feature [N,C]).
    """
    module = params.module
    cfg = module.config
    steps = cfg.render_steps if steps is None else steps
    res = cfg.feature_res if res is None else res
    if steps < 2:
        raise InputError("steps must be >= 2")
    if pose.radius <= 0:
        raise InputError("degenerate pose: radius must be positive")

    dtype = module.dtype
    origins, dirs = camera_rays(pose, res, dtype=dtype)
    near = pose.radius - cfg.scene_bound
    far = pose.radius + cfg.scene_bound
    if near <= 0:
        raise InputError("camera radius must exceed the scene bound")
    delta = (far - near) / steps
    # midpoint quadrature keeps the expected-depth estimator first-order unbiased
    t_vals = near + (torch.arange(steps, dtype=dtype) + 0.5) * delta

    pts = origins.unsqueeze(2) + dirs.unsqueeze(2) * t_vals.view(1, 1, steps, 1)
    flat_pts = pts.reshape(-1, 3)

    if field_fn is None:
        w = _check_vector(w, cfg.latent_dim, "w").to(dtype)
        flat_dirs = (
            dirs.unsqueeze(2).expand(res, res, steps, 3).reshape(-1, 3)
            if with_features
            else flat_pts
        )
        sdf, _, feature = module.field(
            params.tensors, flat_pts, flat_dirs, w, with_appearance=with_features
        )
    else:
        flat_dirs = dirs.unsqueeze(2).expand(res, res, steps, 3).reshape(-1, 3)
        sdf, _, feature = field_fn(flat_pts, flat_dirs, w)

    beta = module.beta.to(dtype)
    sigma = torch.sigmoid(-sdf / beta) / beta
    # cap optical depth per step so transmittance stays strictly positive
    tau = torch.clamp(sigma.reshape(res, res, steps) * delta, max=30.0)
    alpha = 1.0 - torch.exp(-tau)
    trans = torch.cumprod(
        torch.cat([torch.ones(res, res, 1, dtype=dtype), 1.0 - alpha], dim=2), dim=2
    )[..., :-1]
    weights = alpha * trans
    weight_sum = weights.sum(dim=2)

    if feature is not None:
        feature_map = (weights.unsqueeze(-1) * feature.reshape(res, res, steps, -1)).sum(dim=2)
    else:
        feature_map = torch.zeros(res, res, 0, dtype=dtype)
    expected_depth = (weights * t_vals.view(1, 1, steps)).sum(dim=2) / weight_sum.clamp(min=1e-12)
    depth = torch.where(
        weight_sum >= FOREGROUND_WEIGHT_THRESHOLD,
        expected_depth,
        torch.as_tensor(BACKGROUND_DEPTH, dtype=dtype),
    )
    return feature_map, depth, weight_sum


def upsample(params: GeneratorParams, feature_map: torch.Tensor) -> torch.Tensor:
    return params.module.upsample(feature_map)


def generate(
    params: GeneratorParams,
    z: torch.Tensor | LatentCode,
    pose: CameraPose,
    steps: int | None = None,
    res: int | None = None,
) -> RenderOutput:
    """Full pipeline: map latent, volume render, upsample."""
    module = params.module
    if isinstance(z, LatentCode):
        w = z.w
    else:
        w = module.map_latent(z)
    feature_map, depth, _ = volume_render(params, w, pose, steps=steps, res=res)
    image = module.upsample(feature_map)
    return RenderOutput(image=image, feature_map=feature_map, depth=depth, pose=pose)


def substitute_forward(
    params: GeneratorParams,
    replacement: Sequence[torch.Tensor],
    z: torch.Tensor | LatentCode,
    pose: CameraPose,
    steps: int | None = None,
    res: int | None = None,
) -> RenderOutput:
    """Render with the editable layers replaced by external tensors.

    Gradients flow into the replacement tensors; with replacement equal to
    the stored parameters the output is bit-identical to ``generate``.
    """
    substituted = params.with_tensors(list(replacement))
    return generate(substituted, z, pose, steps=steps, res=res)


def render_depth(
    params: GeneratorParams,
    w: torch.Tensor,
    pose: CameraPose,
    steps: int | None = None,
    res: int | None = None,
) -> torch.Tensor:
    _, depth, _ = volume_render(params, w, pose, steps=steps, res=res, with_features=False)
    return depth
