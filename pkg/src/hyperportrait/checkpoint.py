"""Checkpoint archives for the generator and the hyper-module.

A checkpoint is a single ZIP archive holding ``manifest.json`` (version,
dims, layer specs with group assignment) and ``weights.npz`` with tensors
keyed by name. Loading validates every tensor shape against the manifest;
hyper-module checkpoints are additionally validated against the paired
generator checkpoint's layer shapes.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .generator import GeneratorConfig, InputError, LayerSpec, PortraitGenerator

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _layer_spec_dicts(specs: tuple[LayerSpec, ...]) -> list[dict[str, Any]]:
    return [
        {"index": s.index, "name": s.name, "group": s.group, "shape": list(s.shape)}
        for s in specs
    ]


def _specs_from_manifest(entries: list[dict[str, Any]]) -> tuple[LayerSpec, ...]:
    return tuple(
        LayerSpec(
            index=int(e["index"]),
            name=str(e["name"]),
            group=str(e["group"]),
            shape=tuple(int(v) for v in e["shape"]),
        )
        for e in entries
    )


def _write_archive(path: Path, manifest: dict[str, Any], tensors: dict[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    np.savez(buf, **tensors)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        zf.writestr("weights.npz", buf.getvalue())


def _read_archive(path: Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    if not Path(path).exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            npz = np.load(io.BytesIO(zf.read("weights.npz")))
            tensors = {k: npz[k] for k in npz.files}
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    return manifest, tensors


def manifest_hash(path: Path | str) -> str:
    """Stable identity of a checkpoint: sha256 of its manifest bytes."""
    with zipfile.ZipFile(path) as zf:
        return hashlib.sha256(zf.read("manifest.json")).hexdigest()


def read_manifest(path: Path | str) -> dict[str, Any]:
    manifest, _ = _read_archive(Path(path))
    return manifest


# ---------------------------------------------------------------- generator


def save_generator(module: PortraitGenerator, path: Path | str) -> None:
    path = Path(path)
    cfg = module.config
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "generator",
        "dims": {
            "latent_dim": cfg.latent_dim,
            "width": cfg.width,
            "n_layers": cfg.n_layers,
            "feature_channels": cfg.feature_channels,
            "feature_res": cfg.feature_res,
            "upscale": cfg.upscale,
        },
        "scene_bound": cfg.scene_bound,
        "render_steps": cfg.render_steps,
        "first_omega": cfg.first_omega,
        "groups": {
            "coarse": list(cfg.coarse_layers),
            "medium": list(cfg.medium_layers),
            "fine": list(cfg.fine_layers),
        },
        "layers": _layer_spec_dicts(module.layer_specs()),
    }
    tensors = {
        name: p.detach().cpu().double().numpy() for name, p in module.state_dict().items()
    }
    _write_archive(path, manifest, tensors)


def load_generator(path: Path | str, dtype: torch.dtype = torch.float32) -> PortraitGenerator:
    manifest, tensors = _read_archive(Path(path))
    if manifest.get("kind") != "generator":
        raise CheckpointError(f"{path} is not a generator checkpoint")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {manifest.get('format_version')}")
    dims = manifest["dims"]
    cfg = GeneratorConfig(
        latent_dim=int(dims["latent_dim"]),
        width=int(dims["width"]),
        n_layers=int(dims["n_layers"]),
        feature_channels=int(dims["feature_channels"]),
        feature_res=int(dims["feature_res"]),
        upscale=int(dims["upscale"]),
        scene_bound=float(manifest["scene_bound"]),
        render_steps=int(manifest["render_steps"]),
        first_omega=float(manifest["first_omega"]),
        coarse_layers=tuple(manifest["groups"]["coarse"]),
        medium_layers=tuple(manifest["groups"]["medium"]),
        fine_layers=tuple(manifest["groups"]["fine"]),
    )
    module = PortraitGenerator(cfg, dtype=torch.float64)
    state = module.state_dict()
    specs = _specs_from_manifest(manifest["layers"])
    for spec in specs:
        key = f"trunk_weights.{spec.index - 1}"
        if key not in tensors:
            raise CheckpointError(f"missing tensor for layer {spec.name}")
        if tuple(tensors[key].shape) != spec.shape:
            raise CheckpointError(
                f"layer {spec.name}: stored shape {tuple(tensors[key].shape)} != manifest {spec.shape}"
            )
    for name in state:
        if name not in tensors:
            raise CheckpointError(f"missing tensor {name}")
        if tuple(tensors[name].shape) != tuple(state[name].shape):
            raise CheckpointError(
                f"tensor {name}: shape {tuple(tensors[name].shape)} != expected {tuple(state[name].shape)}"
            )
    module.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    module.to(dtype)
    module._dtype = dtype
    module.freeze()
    return module


# -------------------------------------------------------------- hyper module


def save_hyper(hyper: "torch.nn.Module", path: Path | str) -> None:
    from .hyper import HyperModule

    if not isinstance(hyper, HyperModule):
        raise CheckpointError("save_hyper expects a HyperModule")
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "hyper",
        "embed_dim": hyper.embed_dim,
        "hidden_dim": hyper.hidden_dim,
        "noise_scale": hyper.noise_scale,
        "groups": {
            "coarse": list(hyper.grouping.coarse),
            "medium": list(hyper.grouping.medium),
            "fine": list(hyper.grouping.fine),
        },
        "layers": _layer_spec_dicts(hyper.layer_specs),
    }
    tensors = {
        name: p.detach().cpu().double().numpy() for name, p in hyper.state_dict().items()
    }
    _write_archive(Path(path), manifest, tensors)


def load_hyper(
    path: Path | str,
    generator: PortraitGenerator | None = None,
    dtype: torch.dtype = torch.float32,
):
    from .hyper import GroupAssignment, HyperModule

    manifest, tensors = _read_archive(Path(path))
    if manifest.get("kind") != "hyper":
        raise CheckpointError(f"{path} is not a hyper-module checkpoint")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {manifest.get('format_version')}")
    specs = _specs_from_manifest(manifest["layers"])
    if generator is not None:
        gen_specs = generator.layer_specs()
        if len(gen_specs) != len(specs):
            raise CheckpointError(
                f"hyper checkpoint edits {len(specs)} layers but generator has {len(gen_specs)}"
            )
        for hs, gs in zip(specs, gen_specs):
            if hs.shape != gs.shape or hs.name != gs.name:
                raise CheckpointError(
                    f"layer mismatch against paired generator: {hs} vs {gs}"
                )
    grouping = GroupAssignment(
        coarse=tuple(manifest["groups"]["coarse"]),
        medium=tuple(manifest["groups"]["medium"]),
        fine=tuple(manifest["groups"]["fine"]),
    )
    hyper = HyperModule(
        layer_specs=specs,
        embed_dim=int(manifest["embed_dim"]),
        hidden_dim=int(manifest["hidden_dim"]),
        grouping=grouping,
        noise_scale=float(manifest["noise_scale"]),
        dtype=torch.float64,
    )
    state = hyper.state_dict()
    for name in state:
        if name not in tensors:
            raise CheckpointError(f"missing tensor {name}")
        if tuple(tensors[name].shape) != tuple(state[name].shape):
            raise CheckpointError(
                f"tensor {name}: shape {tuple(tensors[name].shape)} != expected {tuple(state[name].shape)}"
            )
    hyper.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    hyper.to(dtype)
    return hyper
