"""Latent-conditioned analytic head scenes used to pretrain the toy generator.

Each latent maps to a family of smooth head-like solids (ellipsoid skull,
nose, ears, hair cap) with painted facial color regions. The closed-form
SDF and color act as regression targets, and the same quadrature as the
neural renderer produces target images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .camera import CameraPose, camera_rays


def _smin(a: torch.Tensor, b: torch.Tensor, k: float) -> torch.Tensor:
    # smooth union via log-sum-exp
    return -k * torch.logaddexp(-a / k, -b / k)


@dataclass(frozen=True)
class HeadKnobs:
    head_radii: tuple[float, float, float]
    nose_radius: float
    nose_y: float
    ear_radius: float
    hair_cut: float
    skin: tuple[float, float, float]
    hair: tuple[float, float, float]
    mouth_color: tuple[float, float, float]


class HeadSceneFamily:
    """Deterministic map from latent vectors to analytic head scenes."""

    def __init__(self, latent_dim: int = 64, seed: int = 7, background: float = 0.82):
        rng = np.random.default_rng(seed)
        self.latent_dim = latent_dim
        self.background = background
        self._proj = torch.from_numpy(
            rng.standard_normal((16, latent_dim)) / math.sqrt(latent_dim)
        )

    def knobs(self, z: torch.Tensor) -> HeadKnobs:
        u = torch.tanh(1.5 * (self._proj.to(torch.float64) @ z.to(torch.float64)))
        u = u.tolist()
        return HeadKnobs(
            head_radii=(0.30 + 0.04 * u[0], 0.36 + 0.04 * u[1], 0.32 + 0.03 * u[2]),
            nose_radius=0.050 + 0.012 * u[3],
            nose_y=-0.02 + 0.03 * u[4],
            ear_radius=0.055 + 0.010 * u[5],
            hair_cut=0.10 + 0.05 * u[6],
            skin=(
                min(max(0.72 + 0.12 * u[7], 0.05), 0.95),
                min(max(0.55 + 0.12 * u[8], 0.05), 0.95),
                min(max(0.46 + 0.10 * u[9], 0.05), 0.95),
            ),
            hair=(
                0.18 + 0.22 * abs(u[10]),
                0.12 + 0.18 * abs(u[11]),
                0.10 + 0.15 * abs(u[12]),
            ),
            mouth_color=(0.55 + 0.10 * u[13], 0.22 + 0.06 * u[14], 0.24 + 0.06 * u[15]),
        )

    # ------------------------------------------------------------------ SDF

    def sdf(self, z: torch.Tensor, pts: torch.Tensor) -> torch.Tensor:
        """Signed distance of the head solid at pts [..., 3]."""
        k = self.knobs(z)
        r = torch.tensor(k.head_radii, dtype=pts.dtype)
        head = (torch.linalg.vector_norm(pts / r, dim=-1) - 1.0) * float(min(k.head_radii))

        nose_c = torch.tensor([0.0, k.nose_y, k.head_radii[2] * 0.98], dtype=pts.dtype)
        nose = torch.linalg.vector_norm(pts - nose_c, dim=-1) - k.nose_radius

        ear_r = k.ear_radius
        ear_l = torch.tensor([-k.head_radii[0] * 0.98, 0.02, 0.0], dtype=pts.dtype)
        ear_rt = torch.tensor([k.head_radii[0] * 0.98, 0.02, 0.0], dtype=pts.dtype)
        ears = torch.minimum(
            torch.linalg.vector_norm(pts - ear_l, dim=-1) - ear_r,
            torch.linalg.vector_norm(pts - ear_rt, dim=-1) - ear_r,
        )

        hair_shell = torch.linalg.vector_norm(pts / (r * 1.05), dim=-1) - 1.0
        hair = torch.maximum(hair_shell * float(min(k.head_radii)), k.hair_cut - pts[..., 1])

        s = _smin(head, nose, 0.02)
        s = _smin(s, ears, 0.02)
        s = _smin(s, hair, 0.02)
        return s

    # ---------------------------------------------------------------- color

    def color(self, z: torch.Tensor, pts: torch.Tensor, dirs: torch.Tensor) -> torch.Tensor:
        k = self.knobs(z)
        dtype = pts.dtype
        c = torch.empty(pts.shape[:-1] + (3,), dtype=dtype)
        c[...] = torch.tensor(k.skin, dtype=dtype)

        hair_mask = pts[..., 1] > k.hair_cut
        c[hair_mask] = torch.tensor(k.hair, dtype=dtype)

        front = pts[..., 2] > 0
        for ex in (-0.13, 0.13):
            eye_c = torch.tensor([ex, 0.07, k.head_radii[2] * 0.92], dtype=dtype)
            eye = (torch.linalg.vector_norm(pts - eye_c, dim=-1) < 0.05) & front
            c[eye] = torch.tensor([0.09, 0.09, 0.12], dtype=dtype)
        mouth_c = torch.tensor([0.0, -0.16, k.head_radii[2] * 0.90], dtype=dtype)
        mouth = (torch.linalg.vector_norm((pts - mouth_c) / torch.tensor([1.0, 0.45, 1.0], dtype=dtype), dim=-1) < 0.07) & front
        c[mouth] = torch.tensor(k.mouth_color, dtype=dtype)

        # mild lambertian-style shading against the radial normal
        r = torch.tensor(k.head_radii, dtype=dtype)
        n = pts / (r * r)
        n = n / torch.linalg.vector_norm(n, dim=-1, keepdim=True).clamp(min=1e-9)
        shade = 0.75 + 0.25 * (-(dirs * n).sum(-1)).clamp(min=0.0, max=1.0)
        return (c * shade.unsqueeze(-1)).clamp(0.0, 1.0)

    # --------------------------------------------------------------- renders

    def render(
        self, z: torch.Tensor, pose: CameraPose, res: int, steps: int,
        scene_bound: float = 0.6, beta: float = 0.005,
        dtype: torch.dtype = torch.float64,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Volume render the analytic scene; returns (image [res,res,3], depth)."""
        origins, dirs = camera_rays(pose, res, dtype=dtype)
        near, far = pose.radius - scene_bound, pose.radius + scene_bound
        delta = (far - near) / steps
        t_vals = near + (torch.arange(steps, dtype=dtype) + 0.5) * delta
        pts = origins.unsqueeze(2) + dirs.unsqueeze(2) * t_vals.view(1, 1, steps, 1)
        d_exp = dirs.unsqueeze(2).expand_as(pts)

        sdf = self.sdf(z, pts.reshape(-1, 3)).reshape(res, res, steps)
        color = self.color(z, pts.reshape(-1, 3), d_exp.reshape(-1, 3)).reshape(res, res, steps, 3)

        sigma = torch.sigmoid(-sdf / beta) / beta
        tau = torch.clamp(sigma * delta, max=30.0)
        alpha = 1.0 - torch.exp(-tau)
        trans = torch.cumprod(
            torch.cat([torch.ones(res, res, 1, dtype=dtype), 1.0 - alpha], dim=2), dim=2
        )[..., :-1]
        weights = alpha * trans
        wsum = weights.sum(dim=2)
        img = (weights.unsqueeze(-1) * color).sum(dim=2) + (1.0 - wsum).unsqueeze(-1) * self.background
        depth = (weights * t_vals.view(1, 1, steps)).sum(dim=2) / wsum.clamp(min=1e-12)
        return img.clamp(0.0, 1.0), torch.where(wsum >= 0.5, depth, torch.tensor(-1.0, dtype=dtype))

    def surface_points(
        self, z: torch.Tensor, n: int, generator: torch.Generator,
        dtype: torch.dtype = torch.float64,
    ) -> torch.Tensor:
        """Points in a band around the head surface, for regression sampling."""
        k = self.knobs(z)
        dirs = torch.randn(n, 3, generator=generator, dtype=dtype)
        dirs = dirs / torch.linalg.vector_norm(dirs, dim=-1, keepdim=True)
        scale = 0.75 + 0.55 * torch.rand(n, 1, generator=generator, dtype=dtype)
        r = torch.tensor(k.head_radii, dtype=dtype)
        return dirs * r * scale
