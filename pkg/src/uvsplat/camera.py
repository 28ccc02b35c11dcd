"""Pinhole camera model shared by the baker and the rasterizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Camera:
    """World-to-camera rigid transform plus pinhole intrinsics.

    Camera space: x right, y down, z forward (positive depth in front).
    """

    rotation: np.ndarray  # (3, 3) world-to-camera
    translation: np.ndarray  # (3,)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError("camera rotation is not orthonormal")

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def flat(self) -> np.ndarray:
        """Serialize to a flat float vector (16 values)."""
        return np.concatenate(
            [
                self.rotation.reshape(-1),
                self.translation,
                [self.fx, self.fy, self.cx, self.cy],
            ]
        )

    @classmethod
    def from_flat(cls, v: np.ndarray, width: int, height: int) -> "Camera":
        v = np.asarray(v, dtype=float)
        return cls(
            rotation=v[:9].reshape(3, 3),
            translation=v[9:12],
            fx=float(v[12]),
            fy=float(v[13]),
            cx=float(v[14]),
            cy=float(v[15]),
            width=width,
            height=height,
        )


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera (rotation, translation) looking from eye to target."""
    eye = np.asarray(eye, dtype=float)
    target = np.asarray(target, dtype=float)
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    upv = np.asarray(up, dtype=float)
    right = np.cross(upv, fwd)
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd], axis=0)
    t = -R @ eye
    return R, t
