"""Trajectory control videos: fading glowing trails over a duplicated object-mask prior.

Rendering is integer-exact given the inputs: splat centers are rounded half-up
to whole pixels, trails accumulate additively in float64 and every channel is
rounded half-up and clamped to 0..255 once, at the end.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

from .camera import PixelPoint
from .errors import DimensionMismatch, InvalidParameter
from .maskio import as_mask

DEFAULT_WIDTH = 384
DEFAULT_HEIGHT = 288
DEFAULT_ARM_COLORS = {"left": (0, 255, 0), "right": (255, 0, 0)}


@dataclass
class PixelTrack:
    points: list[PixelPoint]
    arm_id: str = "left"

    def __len__(self):
        return len(self.points)


def linear_decay(k: int) -> tuple[float, ...]:
    return tuple(1.0 - a / k for a in range(k))


@dataclass(frozen=True)
class TrajVideoSpec:
    trail_length: int = 12
    point_radius: float = 6.0
    decay: tuple[float, ...] | None = None  # None -> linear 1 - age/K
    arm_colors: dict = field(default_factory=lambda: dict(DEFAULT_ARM_COLORS))
    mask_color: tuple[int, int, int] = (0, 0, 255)
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    frame_count: int = 81

    def __post_init__(self):
        if int(self.trail_length) < 1:
            raise InvalidParameter(f"trail_length must be >= 1, got {self.trail_length}")
        if not self.point_radius >= 1:
            raise InvalidParameter(f"point_radius must be >= 1, got {self.point_radius}")
        if self.width < 1 or self.height < 1 or self.frame_count < 1:
            raise InvalidParameter("width, height and frame_count must be >= 1")
        decay = linear_decay(self.trail_length) if self.decay is None else tuple(map(float, self.decay))
        if len(decay) != self.trail_length:
            raise InvalidParameter(f"decay has {len(decay)} weights for trail_length {self.trail_length}")
        if decay[0] != 1.0:
            raise InvalidParameter("decay weight at age 0 must be 1")
        if any(not 0.0 <= w <= 1.0 for w in decay):
            raise InvalidParameter("decay weights must lie in [0, 1]")
        if any(b > a for a, b in zip(decay, decay[1:])):
            raise InvalidParameter("decay weights must be non-increasing with age")
        object.__setattr__(self, "decay", decay)
        object.__setattr__(self, "arm_colors", {k: tuple(int(c) for c in v) for k, v in self.arm_colors.items()})
        object.__setattr__(self, "mask_color", tuple(int(c) for c in self.mask_color))

    def color_for(self, arm_id: str) -> tuple[int, int, int]:
        try:
            return self.arm_colors[arm_id]
        except KeyError:
            raise InvalidParameter(f"no trail color for arm {arm_id!r}") from None

    def to_dict(self) -> dict:
        return {
            "trail_length": self.trail_length,
            "point_radius": self.point_radius,
            "decay": list(self.decay),
            "arm_colors": {k: list(v) for k, v in sorted(self.arm_colors.items())},
            "mask_color": list(self.mask_color),
            "width": self.width,
            "height": self.height,
            "frame_count": self.frame_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> TrajVideoSpec:
        d = dict(d)
        if "decay" in d and d["decay"] is not None:
            d["decay"] = tuple(d["decay"])
        for k in ("mask_color",):
            if k in d:
                d[k] = tuple(d[k])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidParameter(f"bad trajectory video spec: {exc}") from None


def glow_kernel(distance, radius):
    if radius < 1:
        raise InvalidParameter(f"radius must be >= 1, got {radius}")
    return np.maximum(0.0, 1.0 - np.asarray(distance, dtype=float) / radius)


def round_half_up(x):
    return np.floor(np.asarray(x, dtype=float) + 0.5)


@lru_cache(maxsize=16)
def _kernel_patch(radius: float) -> tuple[int, np.ndarray]:
    half = int(np.ceil(radius))
    off = np.arange(-half, half + 1)
    d = np.hypot(off[None, :], off[:, None])
    return half, glow_kernel(d, radius)


def _splat(layer: np.ndarray, cu: int, cv: int, weight: float, half: int, patch: np.ndarray) -> None:
    h, w = layer.shape
    x0, x1 = max(cu - half, 0), min(cu + half + 1, w)
    y0, y1 = max(cv - half, 0), min(cv + half + 1, h)
    if x0 >= x1 or y0 >= y1:
        return
    px, py = x0 - (cu - half), y0 - (cv - half)
    layer[y0:y1, x0:x1] += weight * patch[py:py + (y1 - y0), px:px + (x1 - x0)]


def _splats(track: PixelTrack, t: int, spec: TrajVideoSpec) -> list[tuple[int, int, float]]:
    """(column, row, weight) of every splat a track contributes at frame ``t``."""
    out = []
    for age in range(spec.trail_length):
        i = t - age
        if i < 0:
            break
        if i >= len(track.points):
            continue
        p = track.points[i]
        if p.visible:
            out.append((math.floor(p.u + 0.5), math.floor(p.v + 0.5), spec.decay[age]))
    return out


def trail_layer(track: PixelTrack, t: int, spec: TrajVideoSpec) -> np.ndarray:
    """Unquantized glow intensity (height, width) contributed by one track at frame ``t``."""
    layer = np.zeros((spec.height, spec.width))
    half, patch = _kernel_patch(spec.point_radius)
    for cu, cv, w in _splats(track, t, spec):
        _splat(layer, cu, cv, w, half, patch)
    return layer


def blank_frame(spec: TrajVideoSpec) -> np.ndarray:
    return np.zeros((spec.height, spec.width, 3), dtype=np.uint8)


def render_trail_frame(tracks: Sequence[PixelTrack], t: int, spec: TrajVideoSpec, base=None) -> np.ndarray:
    """Trails at frame ``t`` added onto ``base`` (black when omitted)."""
    if not 0 <= t < spec.frame_count:
        raise InvalidParameter(f"frame index {t} outside 0..{spec.frame_count - 1}")
    out = blank_frame(spec) if base is None else np.array(base, dtype=np.uint8)
    if out.shape != (spec.height, spec.width, 3):
        raise DimensionMismatch(f"base frame has shape {out.shape}, expected {(spec.height, spec.width, 3)}")
    half, patch = _kernel_patch(spec.point_radius)
    splats = [(spec.color_for(tr.arm_id), _splats(tr, t, spec)) for tr in tracks]
    centers = [(cu, cv) for _, ss in splats for cu, cv, _ in ss]
    if not centers:
        return out
    # only the bounding region of all splats changes; outside it the base is already integral
    x0 = max(min(c[0] for c in centers) - half, 0)
    x1 = min(max(c[0] for c in centers) + half + 1, spec.width)
    y0 = max(min(c[1] for c in centers) - half, 0)
    y1 = min(max(c[1] for c in centers) + half + 1, spec.height)
    if x0 >= x1 or y0 >= y1:
        return out
    acc = out[y0:y1, x0:x1].astype(float)
    for color, ss in splats:
        layer = np.zeros((spec.height, spec.width))
        for cu, cv, w in ss:
            _splat(layer, cu, cv, w, half, patch)
        acc += layer[y0:y1, x0:x1, None] * np.array(color, dtype=float)
    out[y0:y1, x0:x1] = np.clip(np.floor(acc + 0.5), 0, 255).astype(np.uint8)
    return out


def composite_mask_prior(frame, mask, spec: TrajVideoSpec) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.uint8)
    mask = as_mask(mask)
    if mask.shape != frame.shape[:2]:
        raise DimensionMismatch(f"mask is {mask.shape[::-1]} but frame is {frame.shape[1::-1]} (width x height)")
    out = frame.copy()
    color = np.array(spec.mask_color, dtype=np.uint16)
    # 50% alpha, rounded half-up: (a + b + 1) // 2
    out[mask] = ((frame[mask].astype(np.uint16) + color + 1) // 2).astype(np.uint8)
    return out


def duplicate_mask(mask, T: int) -> np.ndarray:
    if T < 1:
        raise InvalidParameter(f"cannot duplicate a mask over {T} frames")
    mask = as_mask(mask)
    return np.repeat(mask[None], T, axis=0)


def _check_view_inputs(tracks_per_view, initial_masks, spec):
    if len(tracks_per_view) != len(initial_masks):
        raise DimensionMismatch(
            f"{len(tracks_per_view)} views of tracks but {len(initial_masks)} initial masks"
        )
    for v, (tracks, mask) in enumerate(zip(tracks_per_view, initial_masks)):
        for track in tracks:
            if len(track) != spec.frame_count:
                raise DimensionMismatch(
                    f"view {v}: track {track.arm_id!r} has {len(track)} frames, expected {spec.frame_count}",
                    index=v,
                )
        if mask is not None and as_mask(mask).shape != (spec.height, spec.width):
            raise DimensionMismatch(
                f"view {v}: mask is {as_mask(mask).shape[::-1]}, canvas is {(spec.width, spec.height)}",
                index=v,
            )


def iter_view_frames(tracks: Sequence[PixelTrack], initial_mask, spec: TrajVideoSpec) -> Iterator[np.ndarray]:
    base = blank_frame(spec)
    if initial_mask is not None:
        base = composite_mask_prior(base, initial_mask, spec)
    for t in range(spec.frame_count):
        yield render_trail_frame(tracks, t, spec, base=base)


def synth_trajectory_video(tracks_per_view, initial_masks, spec: TrajVideoSpec) -> list[np.ndarray]:
    """Per view, a (frames, height, width, 3) uint8 video of mask prior plus trails."""
    _check_view_inputs(tracks_per_view, initial_masks, spec)
    return [
        np.stack(list(iter_view_frames(tracks, mask, spec)))
        for tracks, mask in zip(tracks_per_view, initial_masks)
    ]


def save_frame(frame: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(frame, dtype=np.uint8), mode="RGB").save(path, format="PNG", compress_level=1)


def load_frame(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def write_view_video(frames, directory, view, spec: TrajVideoSpec) -> Path:
    """Write frame_00000.png ... plus a sidecar ``video.json``; returns the directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n = 0
    for n, frame in enumerate(frames, start=1):
        save_frame(frame, directory / f"frame_{n - 1:05d}.png")
    sidecar = {"view": view, "frames": n, "width": spec.width, "height": spec.height, "spec": spec.to_dict()}
    (directory / "video.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return directory


def load_view_video(directory) -> tuple[dict, np.ndarray]:
    directory = Path(directory)
    sidecar = json.loads((directory / "video.json").read_text())
    frames = [load_frame(p) for p in sorted(directory.glob("frame_*.png"))]
    return sidecar, np.stack(frames) if frames else np.zeros((0, sidecar["height"], sidecar["width"], 3), np.uint8)
