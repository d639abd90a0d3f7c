"""Binary masks on disk and the client boundary to description / segmentation models.

In memory a mask is a 2-D ``bool`` array (height, width) and a mask sequence
is a 3-D ``bool`` array (frames, height, width). On disk masks are 8-bit
grayscale PNGs holding 0 or 255.
"""
from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DimensionMismatch, InvalidParameter, NoObjectsFound, RemoteError

log = logging.getLogger(__name__)

FOREGROUND_THRESHOLD = 127


def as_mask(a) -> np.ndarray:
    m = np.asarray(a)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise InvalidParameter(f"a mask must be a non-empty 2-D grid, got shape {m.shape}")
    return m.astype(bool, copy=False)


def as_mask_sequence(frames) -> np.ndarray:
    if isinstance(frames, np.ndarray) and frames.ndim == 3:
        seq = frames.astype(bool, copy=False)
    else:
        frames = [as_mask(f) for f in frames]
        if not frames:
            raise InvalidParameter("a mask sequence needs at least one frame")
        shapes = {f.shape for f in frames}
        if len(shapes) != 1:
            raise DimensionMismatch(f"mask sequence frames differ in size: {sorted(shapes)}")
        seq = np.stack(frames)
    if seq.shape[0] < 1 or seq.shape[1] < 1 or seq.shape[2] < 1:
        raise InvalidParameter(f"invalid mask sequence shape {seq.shape}")
    return seq


def empty_mask(width: int, height: int) -> np.ndarray:
    return np.zeros((height, width), dtype=bool)


def mask_to_image(mask) -> Image.Image:
    return Image.fromarray(as_mask(mask).astype(np.uint8) * 255, mode="L")


def image_to_mask(img: Image.Image) -> np.ndarray:
    a = np.asarray(img.convert("L"))
    if a.size == 0:
        raise InvalidParameter("mask image has zero size")
    return a > FOREGROUND_THRESHOLD


def save_mask(mask, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mask_to_image(mask).save(path, format="PNG", compress_level=1)


def load_mask(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"mask file not found: {path}")
    try:
        with Image.open(path) as img:
            img.load()
            if img.width == 0 or img.height == 0:
                raise InvalidParameter(f"mask image has zero size: {path}")
            return image_to_mask(img)
    except (UnidentifiedImageError, OSError) as exc:
        raise InvalidParameter(f"malformed mask image {path}: {exc}") from None


def save_mask_sequence(seq, directory, prefix: str = "frame") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, m in enumerate(as_mask_sequence(seq)):
        p = directory / f"{prefix}_{t:05d}.png"
        save_mask(m, p)
        paths.append(p)
    return paths


def load_mask_sequence(directory) -> np.ndarray:
    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no mask frames in {directory}")
    return as_mask_sequence([load_mask(p) for p in paths])


def initial_frame_prior(*sequences) -> np.ndarray:
    """Frame-0 mask of one object sequence, or the union of frame 0 over several."""
    if not sequences:
        raise InvalidParameter("need at least one mask sequence")
    prior = None
    for seq in sequences:
        first = as_mask_sequence(seq)[0]
        if prior is None:
            prior = first.copy()
        elif prior.shape != first.shape:
            raise DimensionMismatch(f"object masks differ in size: {prior.shape} vs {first.shape}")
        else:
            prior |= first
    return prior


# --- model clients -----------------------------------------------------------


@dataclass(frozen=True)
class ObjectDescription:
    text: str
    object_id: str

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise InvalidParameter("object description text is empty")


class DescriptionClient(Protocol):
    def describe(self, image: np.ndarray) -> list[str]: ...


class SegmentationClient(Protocol):
    def segment(self, frames: Sequence[np.ndarray], query: str) -> list[np.ndarray | None]: ...


def content_hash(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.shape).encode())
        h.update(str(a.dtype).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]


def frames_hash(frames: Sequence[np.ndarray]) -> str:
    return content_hash(*frames)


EXCLUDED_CATEGORIES = ("tray",)


def describe_objects(client: DescriptionClient, image, exclude=EXCLUDED_CATEGORIES) -> list[ObjectDescription]:
    texts = client.describe(np.asarray(image))
    kept = [
        t for t in (texts or [])
        if t and t.strip() and not any(word in t.lower() for word in exclude)
    ]
    if not kept:
        raise NoObjectsFound("the description model returned no usable objects")
    return [ObjectDescription(t, f"obj{i}") for i, t in enumerate(kept)]


def segment_video(client: SegmentationClient, frames, desc: ObjectDescription) -> np.ndarray:
    """One mask per frame; frames the client failed on come back empty and are logged."""
    frames = [np.asarray(f) for f in frames]
    if not frames:
        raise InvalidParameter("segment_video needs at least one frame")
    h, w = frames[0].shape[:2]
    out = client.segment(frames, desc.text)
    out = list(out or [])
    masks = np.zeros((len(frames), h, w), dtype=bool)
    for t in range(len(frames)):
        m = out[t] if t < len(out) else None
        if m is None:
            log.warning("segmentation failed for %s at frame %d; using an empty mask", desc.object_id, t)
            continue
        m = np.asarray(m)
        if m.shape[:2] != (h, w):
            log.warning(
                "segmentation for %s at frame %d has shape %s, expected %s; using an empty mask",
                desc.object_id, t, m.shape[:2], (h, w),
            )
            continue
        masks[t] = m.astype(bool)
    return masks


class MockDescriptionClient:
    """Returns fixture descriptions keyed by image content hash."""

    def __init__(self, table: dict[str, list[str]] | None = None):
        self.table = dict(table or {})

    def add(self, image, texts: list[str]) -> str:
        key = content_hash(np.asarray(image))
        self.table[key] = list(texts)
        return key

    def describe(self, image):
        return list(self.table.get(content_hash(np.asarray(image)), []))

    @classmethod
    def from_dir(cls, directory) -> MockDescriptionClient:
        # <hash>.json -> ["description", ...]
        return cls({p.stem: json.loads(p.read_text()) for p in sorted(Path(directory).glob("*.json"))})


class MockSegmentationClient:
    """Returns stored mask fixtures keyed by (frames hash, query)."""

    def __init__(self, table: dict[tuple[str, str], list[np.ndarray]] | None = None):
        self.table = dict(table or {})

    def add(self, frames, query: str, masks) -> None:
        self.table[(frames_hash(frames), query)] = [as_mask(m) for m in masks]

    def segment(self, frames, query):
        key = (frames_hash(frames), query)
        if key not in self.table:
            raise RemoteError(f"no fixture for query {query!r}", attempts=1)
        return [m.copy() for m in self.table[key]]

    @classmethod
    def from_dir(cls, directory) -> MockSegmentationClient:
        # <frames hash>/<query slug>/frame_*.png plus query.txt holding the query
        table = {}
        for qdir in sorted(Path(directory).glob("*/*")):
            if not qdir.is_dir():
                continue
            query = (qdir / "query.txt").read_text().strip()
            table[(qdir.parent.name, query)] = list(load_mask_sequence(qdir))
        return cls(table)


def _png_b64(a: np.ndarray) -> str:
    buf = io.BytesIO()
    a = np.asarray(a)
    img = mask_to_image(a) if a.dtype == bool else Image.fromarray(a.astype(np.uint8))
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _b64_mask(s: str) -> np.ndarray:
    with Image.open(io.BytesIO(base64.b64decode(s))) as img:
        return image_to_mask(img)


class _HttpBackend:
    attempts = 3
    backoff = 1.0
    timeout = 120.0

    def __init__(self, url: str, token: str | None = None, sleep=time.sleep):
        self.url = url
        self.token = token
        self._sleep = sleep

    def _post(self, payload: dict) -> dict:
        body = json.dumps(payload).encode()
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        delay = self.backoff
        last = None
        for attempt in range(1, self.attempts + 1):
            req = urllib.request.Request(self.url, data=body, headers=headers, method="POST")
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read().decode())
            except (urllib.error.URLError, TimeoutError, ConnectionError, json.JSONDecodeError) as exc:
                last = exc
                log.warning("request to %s failed (attempt %d/%d): %s", self.url, attempt, self.attempts, exc)
                if attempt < self.attempts:
                    self._sleep(delay)
                    delay *= 2
        raise RemoteError(f"{self.url} unavailable: {last}", attempts=self.attempts)


class HttpDescriptionClient(_HttpBackend):
    """``prompt``, when set, is sent alongside the image; the default leaves it to the server."""

    def __init__(self, url: str, token: str | None = None, sleep=time.sleep, prompt: str | None = None):
        super().__init__(url, token, sleep)
        self.prompt = prompt

    def describe(self, image):
        payload = {"image": _png_b64(image)}
        if self.prompt:
            payload["prompt"] = self.prompt
        resp = self._post(payload)
        return list(resp.get("descriptions", []))

    @classmethod
    def from_env(cls) -> HttpDescriptionClient:
        return cls(_env_url("MTV_VLM_URL"), os.environ.get("MTV_API_TOKEN"), prompt=os.environ.get("MTV_VLM_PROMPT"))


class HttpSegmentationClient(_HttpBackend):
    def segment(self, frames, query):
        resp = self._post({"frames": [_png_b64(f) for f in frames], "query": query})
        out = []
        for s in resp.get("masks", []):
            try:
                out.append(_b64_mask(s) if s else None)
            except (UnidentifiedImageError, ValueError, OSError):
                out.append(None)
        return out

    @classmethod
    def from_env(cls) -> HttpSegmentationClient:
        return cls(_env_url("MTV_RVOS_URL"), os.environ.get("MTV_API_TOKEN"))


def _env_url(name: str) -> str:
    url = os.environ.get(name)
    if not url:
        raise InvalidParameter(f"environment variable {name} is not set")
    return url
