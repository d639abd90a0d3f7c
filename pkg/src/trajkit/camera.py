"""Calibrated pinhole cameras: world -> camera transform and pixel projection."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InvalidParameter
from .kinematics import _check_rotation

DEPTH_EPS = 1e-6


class PixelPoint(NamedTuple):
    u: float
    v: float
    visible: bool


BEHIND = PixelPoint(-1.0, -1.0, False)


@dataclass(frozen=True, eq=False)
class CameraCalib:
    """Intrinsics plus camera-to-base extrinsics (R, t) for one view.

    Construction does not validate; call :func:`validate_calib` or
    :meth:`checked` when the values come from outside.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        R = np.array(self.R, dtype=float)
        t = np.array(self.t, dtype=float).reshape(-1)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def checked(self) -> CameraCalib:
        problems = validate_calib(self)
        if problems:
            raise InvalidParameter("; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "R": self.R.tolist(),
            "t": self.t.tolist(),
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CameraCalib:
        missing = [k for k in ("fx", "fy", "cx", "cy", "R", "t", "width", "height") if k not in d]
        if missing:
            raise InvalidParameter(f"calibration is missing field(s) {', '.join(missing)}")
        try:
            return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["R"], d["t"], int(d["width"]), int(d["height"]))
        except (TypeError, ValueError) as exc:
            raise InvalidParameter(f"malformed calibration: {exc}") from None

    @classmethod
    def load(cls, path) -> CameraCalib:
        return cls.from_dict(json.loads(Path(path).read_text())).checked()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def validate_calib(calib: CameraCalib) -> list[str]:
    """Return a list of violated invariants; empty means the calibration is usable."""
    problems = []
    for name in ("fx", "fy"):
        v = getattr(calib, name)
        if not np.isfinite(v) or v <= 0:
            problems.append(f"focal length {name} must be positive, got {v}")
    for name in ("cx", "cy"):
        if not np.isfinite(getattr(calib, name)):
            problems.append(f"principal point {name} is not finite")
    problems += _check_rotation(calib.R, "R")
    if calib.t.shape != (3,) or not np.all(np.isfinite(calib.t)):
        problems.append("t must be a finite 3-vector")
    if calib.width < 1 or calib.height < 1:
        problems.append(f"image size must be at least 1x1, got {calib.width}x{calib.height}")
    return problems


def _finite3(p, what: str) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise InvalidParameter(f"{what} must be a finite 3-vector, got {p}")
    return p


def world_to_camera(calib: CameraCalib, p_w) -> np.ndarray:
    p_w = _finite3(p_w, "world point")
    return calib.R.T @ (p_w - calib.t)


def camera_to_world(calib: CameraCalib, p_c) -> np.ndarray:
    return calib.R @ _finite3(p_c, "camera point") + calib.t


def project(calib: CameraCalib, p_c) -> PixelPoint:
    x, y, z = _finite3(p_c, "camera point")
    if z <= DEPTH_EPS:
        return BEHIND
    u = calib.fx * x / z + calib.cx
    v = calib.fy * y / z + calib.cy
    visible = bool(0.0 <= u < calib.width and 0.0 <= v < calib.height)
    return PixelPoint(float(u), float(v), visible)


def project_world(calib: CameraCalib, p_w) -> PixelPoint:
    return project(calib, world_to_camera(calib, p_w))


def track_from_trajectory(calib: CameraCalib, points: Sequence, arm_id: str = "left"):
    from .trajvideo import PixelTrack

    return PixelTrack([project_world(calib, p) for p in points], arm_id)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-base rotation for a camera at ``eye`` looking at ``target``.

    Camera axes follow the image convention: x right, y down, z forward.
    """
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=float))
    if np.linalg.norm(x) < 1e-12:
        raise InvalidParameter("viewing direction is parallel to the up vector")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])
