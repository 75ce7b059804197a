"""Pretraining of the toy generator against the analytic head-scene family.

Two phases: (A) direct field regression of SDF, color, and feature channels
at sampled points, which pins down the geometry; (B) joint image-level
regression through the volume renderer, which trains the upsampler. Both
are plain seeded MSE fits, so the result is deterministic and reproducible
in minutes on a CPU.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import torch

from .camera import CameraPose
from .checkpoint import save_generator
from .generator import GeneratorConfig, PortraitGenerator, volume_render
from .scenes import HeadSceneFamily

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PretrainConfig:
    seed: int = 0
    field_steps: int = 2000
    image_steps: int = 400
    points_per_z: int = 384
    z_per_step: int = 6
    lr: float = 1e-3
    render_res: int = 24
    render_steps: int = 16
    log_every: int = 200


def pretrain_generator(
    config: GeneratorConfig | None = None,
    pretrain: PretrainConfig | None = None,
    dtype: torch.dtype = torch.float32,
) -> PortraitGenerator:
    cfg = config or GeneratorConfig()
    pt = pretrain or PretrainConfig()
    module = PortraitGenerator(cfg, seed=pt.seed, dtype=dtype)
    scenes = HeadSceneFamily(latent_dim=cfg.latent_dim, seed=7)
    gen = torch.Generator().manual_seed(pt.seed)
    opt = torch.optim.Adam(module.parameters(), lr=pt.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=pt.field_steps, eta_min=pt.lr * 0.1
    )

    def sample_z() -> torch.Tensor:
        return torch.randn(cfg.latent_dim, generator=gen, dtype=dtype)

    # ------------------------------------------------------- phase A: field
    for step in range(pt.field_steps):
        opt.zero_grad()
        loss = torch.zeros((), dtype=dtype)
        for _ in range(pt.z_per_step):
            z = sample_z()
            w = module.map_latent(z)
            n_uni = pt.points_per_z * 2 // 5
            uniform = (torch.rand(n_uni, 3, generator=gen, dtype=torch.float64) * 2 - 1) * 0.7
            surface = scenes.surface_points(z, pt.points_per_z - n_uni, gen)
            pts = torch.cat([uniform, surface]).to(dtype)
            dirs = torch.randn(pts.shape[0], 3, generator=gen, dtype=torch.float64)
            dirs = (dirs / torch.linalg.vector_norm(dirs, dim=-1, keepdim=True)).to(dtype)

            sdf_raw = scenes.sdf(z, pts.double()).to(dtype)
            sdf_t = sdf_raw.clamp(-0.25, 0.25)
            color_t = scenes.color(z, pts.double(), dirs.double()).to(dtype)
            # near-surface samples dominate so the zero crossing lands exactly
            wgt = 1.0 + 6.0 * torch.exp(-sdf_raw.abs() / 0.04)

            sdf, color, feature = module.field(module.params().tensors, pts, dirs, w)
            loss = loss + torch.mean(wgt * (sdf.squeeze(-1) - sdf_t) ** 2) * 10.0
            loss = loss + torch.mean((color - color_t) ** 2)
            loss = loss + torch.mean((feature[..., :3] - color_t) ** 2)
            loss = loss + 1e-3 * torch.mean(feature[..., 3:] ** 2)
        loss = loss / pt.z_per_step
        loss.backward()
        opt.step()
        sched.step()
        if step % pt.log_every == 0:
            logger.info("field phase step %d loss %.5f", step, loss.item())

    # ------------------------------------------------------ phase B: image
    opt = torch.optim.Adam(module.parameters(), lr=pt.lr * 0.3)
    for step in range(pt.image_steps):
        opt.zero_grad()
        z = sample_z()
        yaw = float(torch.empty(1, dtype=torch.float64).uniform_(-0.45, 0.45, generator=gen))
        pose = CameraPose(yaw=yaw, pitch=0.0)
        w = module.map_latent(z)
        feature_map, _, _ = volume_render(
            module.params(), w, pose, steps=pt.render_steps, res=pt.render_res
        )
        image = module.upsample(feature_map)
        target, _ = scenes.render(
            z, pose, res=pt.render_res * cfg.upscale, steps=pt.render_steps,
            scene_bound=cfg.scene_bound,
        )
        loss = torch.mean((image - target.to(dtype)) ** 2)
        loss.backward()
        opt.step()
        if step % pt.log_every == 0:
            logger.info("image phase step %d loss %.5f", step, loss.item())

    module.freeze()
    return module


def pretrain_and_save(
    out_path: Path | str,
    config: GeneratorConfig | None = None,
    pretrain: PretrainConfig | None = None,
) -> PortraitGenerator:
    module = pretrain_generator(config, pretrain)
    save_generator(module, Path(out_path))
    logger.info("saved pretrained generator to %s", out_path)
    return module
