"""Embedding interfaces and their deterministic stub implementations.

Three pluggable roles: a joint text-image embedder, a face identity
embedder, and a facial region segmenter. The stubs are seeded pure
functions so the whole pipeline trains and tests without downloading
pretrained weights; real-model adapters can be registered behind the same
interfaces via the plugin config.
"""

from __future__ import annotations

import hashlib
import logging
from typing import Iterable, Mapping, Protocol, runtime_checkable

import numpy as np
import torch
import torch.nn.functional as F

from .generator import InputError

logger = logging.getLogger(__name__)

REGION_LABELS = ("skin", "hair", "eyes", "nose", "mouth", "ears", "background")

# keyword-augmented vocabulary used to match a prompt to its region
_REGION_VOCAB: Mapping[str, str] = {
    "skin": "skin face facial cheeks forehead complexion",
    "hair": "hair hairstyle haircut bangs fringe curls",
    "eyes": "eyes eye eyebrows gaze lashes",
    "nose": "nose nostril nasal",
    "mouth": "mouth lips smile teeth beard mustache chin",
    "ears": "ears ear earring",
    "background": "background backdrop scene behind",
}
_TIE_MARGIN = 0.01


@runtime_checkable
class JointEmbedder(Protocol):
    dim: int

    def embed_text(self, text: str) -> torch.Tensor: ...

    def embed_image(self, image: torch.Tensor) -> torch.Tensor: ...


@runtime_checkable
class IdentityEmbedder(Protocol):
    def identity_embed(self, image: torch.Tensor) -> torch.Tensor: ...


@runtime_checkable
class RegionSegmenter(Protocol):
    def segment(self, image: torch.Tensor) -> torch.Tensor: ...


def _check_image(image: torch.Tensor) -> torch.Tensor:
    if not isinstance(image, torch.Tensor) or image.dim() != 3 or image.shape[-1] != 3:
        raise InputError("image must be an [H, W, 3] tensor")
    if not torch.isfinite(image).all():
        raise InputError("image contains non-finite values")
    if float(image.min()) < -1e-6 or float(image.max()) > 1 + 1e-6:
        raise InputError("image values must lie in [0, 1]")
    return image


def _normalize(v: torch.Tensor) -> torch.Tensor:
    return v / torch.linalg.vector_norm(v).clamp(min=1e-12)


def _seeded_matrix(rng: np.random.Generator, rows: int, cols: int) -> torch.Tensor:
    return torch.from_numpy(rng.standard_normal((rows, cols)) / np.sqrt(cols))


def _trigram_bag(text: str, vocab_size: int) -> np.ndarray:
    """Hashed character-trigram counts; stable across processes."""
    padded = f"  {text.lower()} "
    bag = np.zeros(vocab_size, dtype=np.float64)
    for i in range(len(padded) - 2):
        tri = padded[i : i + 3]
        h = int.from_bytes(hashlib.sha1(tri.encode("utf-8")).digest()[:8], "big")
        bag[h % vocab_size] += 1.0
    return bag


class StubJointEmbedder:
    """Seeded random-projection stand-in for a joint text-image embedder.

    Text: hashed trigram bag -> fixed projection -> L2 normalize.
    Image: 4x4 average-pooled pixels -> projection (+ bias) -> normalize.
    The image path is differentiable with respect to the pixels.
    """

    pool = 4

    def __init__(self, seed: int = 0, dim: int = 512, vocab_size: int = 2048):
        self.dim = dim
        self.vocab_size = vocab_size
        rng = np.random.default_rng(seed)
        self._text_proj = _seeded_matrix(rng, dim, vocab_size)
        stats = self.pool * self.pool * 3
        self._image_proj = _seeded_matrix(rng, dim, stats)
        self._image_bias = torch.from_numpy(rng.standard_normal(dim) * 0.05)

    def embed_text(self, text: str) -> torch.Tensor:
        if not text:
            raise InputError("text must be nonempty")
        bag = torch.from_numpy(_trigram_bag(text, self.vocab_size))
        return _normalize(self._text_proj @ bag)

    def embed_image(self, image: torch.Tensor) -> torch.Tensor:
        image = _check_image(image)
        pooled = F.adaptive_avg_pool2d(
            image.permute(2, 0, 1).unsqueeze(0), (self.pool, self.pool)
        ).reshape(-1)
        proj = self._image_proj.to(image.dtype)
        bias = self._image_bias.to(image.dtype)
        return _normalize(proj @ pooled + bias)


class StubIdentityEmbedder:
    """Pooled pixel statistics behind a seeded projection; identity proxy."""

    pool = 8

    def __init__(self, seed: int = 1, dim: int = 256):
        self.dim = dim
        rng = np.random.default_rng(seed)
        stats = self.pool * self.pool * 3
        self._proj = _seeded_matrix(rng, dim, stats)
        self._bias = torch.from_numpy(rng.standard_normal(dim) * 0.05)

    def identity_embed(self, image: torch.Tensor) -> torch.Tensor:
        image = _check_image(image)
        pooled = F.adaptive_avg_pool2d(
            image.permute(2, 0, 1).unsqueeze(0), (self.pool, self.pool)
        ).reshape(-1)
        return _normalize(self._proj.to(image.dtype) @ pooled + self._bias.to(image.dtype))


class StubRegionSegmenter:
    """Positional face-layout template over the fixed label set.

    Labels every pixel from its normalized position: an elliptical face
    region with hair on top, eye/nose/mouth discs, ear patches at the
    sides, background outside. Deterministic and resolution independent.
    """

    def segment(self, image: torch.Tensor) -> torch.Tensor:
        image = _check_image(image)
        h, w = image.shape[0], image.shape[1]
        ys = (torch.arange(h, dtype=torch.float64) + 0.5) / h
        xs = (torch.arange(w, dtype=torch.float64) + 0.5) / w
        v, u = torch.meshgrid(ys, xs, indexing="ij")

        labels = torch.full((h, w), REGION_LABELS.index("background"), dtype=torch.long)
        face = ((u - 0.5) / 0.34) ** 2 + ((v - 0.52) / 0.42) ** 2 <= 1.0
        labels[face] = REGION_LABELS.index("skin")
        labels[face & (v < 0.30)] = REGION_LABELS.index("hair")

        def disc(cx: float, cy: float, r: float) -> torch.Tensor:
            return (u - cx) ** 2 + (v - cy) ** 2 <= r**2

        for cx in (0.38, 0.62):
            labels[face & disc(cx, 0.45, 0.05)] = REGION_LABELS.index("eyes")
        labels[face & disc(0.50, 0.58, 0.05)] = REGION_LABELS.index("nose")
        labels[face & disc(0.50, 0.72, 0.06)] = REGION_LABELS.index("mouth")
        for cx in (0.17, 0.83):
            labels[disc(cx, 0.52, 0.05)] = REGION_LABELS.index("ears")
        return labels


# ---------------------------------------------------------------- operations


def embed_text(embedder: JointEmbedder, text: str) -> torch.Tensor:
    return embedder.embed_text(text)


def embed_image(embedder: JointEmbedder, image: torch.Tensor) -> torch.Tensor:
    return embedder.embed_image(image)


def identity_embed(embedder: IdentityEmbedder, image: torch.Tensor) -> torch.Tensor:
    return embedder.identity_embed(image)


def relevant_region_for(
    prompt: str,
    embedder: JointEmbedder,
    labels: Iterable[str] = REGION_LABELS,
) -> set[str]:
    """Region labels the prompt refers to, by nearest label embedding.

    Within a cosine margin of 0.01 between the top two labels, both are
    returned. Falls back to {"skin"} if the embedder fails.
    """
    if not prompt:
        raise InputError("prompt must be nonempty")
    try:
        pv = embedder.embed_text(prompt)
        scored = []
        for label in labels:
            lv = embedder.embed_text(_REGION_VOCAB.get(label, label))
            scored.append((float(pv @ lv), label))
        scored.sort(reverse=True)
    except Exception:  # noqa: BLE001 - declared fallback
        logger.warning("region matching failed for %r; falling back to skin", prompt)
        return {"skin"}
    result = {scored[0][1]}
    if len(scored) > 1 and scored[0][0] - scored[1][0] < _TIE_MARGIN:
        result.add(scored[1][1])
    return result


# ------------------------------------------------------------------- plugins


def build_joint_embedder(spec: Mapping[str, object]) -> JointEmbedder:
    kind = spec.get("kind", "stub")
    if kind == "stub":
        return StubJointEmbedder(seed=int(spec.get("seed", 0)))
    raise InputError(f"unknown joint embedder kind {kind!r}; supply a plugin")


def build_identity_embedder(spec: Mapping[str, object]) -> IdentityEmbedder:
    kind = spec.get("kind", "stub")
    if kind == "stub":
        return StubIdentityEmbedder(seed=int(spec.get("seed", 1)))
    raise InputError(f"unknown identity embedder kind {kind!r}; supply a plugin")


def build_segmenter(spec: Mapping[str, object]) -> RegionSegmenter:
    kind = spec.get("kind", "stub")
    if kind == "stub":
        return StubRegionSegmenter()
    raise InputError(f"unknown segmenter kind {kind!r}; supply a plugin")
