"""Camera poses and ray generation for the volume renderer.

Conventions: world up is +y, the frontal camera (yaw=0, pitch=0) sits on the
+z axis looking at the origin. Ray directions are unit length, so the depth
parameter t along a ray is the Euclidean distance from the camera origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

# Depth value written for pixels whose accumulated rendering weight stays
# below the foreground threshold. Real depths are always positive.
BACKGROUND_DEPTH = -1.0

FOREGROUND_WEIGHT_THRESHOLD = 0.5


@dataclass(frozen=True)
class CameraPose:
    """Spherical camera looking at the scene origin."""

    yaw: float
    pitch: float
    radius: float = 2.7
    fov: float = 0.35

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.yaw, self.pitch, self.radius, self.fov)):
            raise ValueError("camera pose fields must be finite")
        if not -math.pi <= self.yaw <= math.pi:
            raise ValueError(f"yaw {self.yaw} outside [-pi, pi]")
        if not -math.pi / 2 <= self.pitch <= math.pi / 2:
            raise ValueError(f"pitch {self.pitch} outside [-pi/2, pi/2]")
        if self.radius <= 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not 0 < self.fov < math.pi:
            raise ValueError(f"fov must be in (0, pi), got {self.fov}")

    def origin(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        cp = math.cos(self.pitch)
        pos = (
            self.radius * math.sin(self.yaw) * cp,
            self.radius * math.sin(self.pitch),
            self.radius * math.cos(self.yaw) * cp,
        )
        return torch.tensor(pos, dtype=dtype)


def camera_rays(
    pose: CameraPose, res: int, dtype: torch.dtype = torch.float32
) -> tuple[torch.Tensor, torch.Tensor]:
    """Return (origins, directions), both [res, res, 3], directions unit length.

    Pixel (0, 0) is the top-left corner; rays pass through pixel centers.
    """
    if res < 1:
        raise ValueError("resolution must be >= 1")
    origin = pose.origin(dtype)
    forward = -origin / torch.linalg.vector_norm(origin)
    world_up = torch.tensor([0.0, 1.0, 0.0], dtype=dtype)
    right = torch.linalg.cross(forward, world_up)
    right = right / torch.linalg.vector_norm(right)
    up = torch.linalg.cross(right, forward)

    half = math.tan(pose.fov / 2)
    # pixel centers mapped to [-half, half]; v runs top (+) to bottom (-)
    coords = (torch.arange(res, dtype=dtype) + 0.5) / res * 2 - 1
    u = coords * half
    v = -coords * half
    dirs = (
        forward.view(1, 1, 3)
        + u.view(1, res, 1) * right.view(1, 1, 3)
        + v.view(res, 1, 1) * up.view(1, 1, 3)
    )
    dirs = dirs / torch.linalg.vector_norm(dirs, dim=-1, keepdim=True)
    origins = origin.view(1, 1, 3).expand(res, res, 3)
    return origins, dirs


def yaw_sweep(yaws: list[float] | tuple[float, ...], radius: float = 2.7, fov: float = 0.35) -> list[CameraPose]:
    return [CameraPose(yaw=float(y), pitch=0.0, radius=radius, fov=fov) for y in yaws]


DEFAULT_POSE_SWEEP = (-0.4, -0.2, 0.0, 0.2, 0.4)
