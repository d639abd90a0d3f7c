"""Bookkeeping for the multi-view latent layout.

Each view contributes one row: a reference slot followed by T frame slots.
Blocks are opaque payloads carrying only a (channels, height, width) shape.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

from .errors import InvalidIndexMap, ShapeMismatch

ORDER = "view_major"


@dataclass(frozen=True)
class Block:
    shape: tuple[int, int, int]
    payload: Any = None
    is_reference: bool = False


@dataclass(frozen=True)
class TokenGrid:
    rows: tuple[tuple[Block, ...], ...]
    block_shape: tuple[int, int, int]

    @property
    def V(self) -> int:
        return len(self.rows)

    @property
    def T(self) -> int:
        return len(self.rows[0]) - 1 if self.rows else 0

    def manifest(self) -> dict:
        return {"V": self.V, "T": self.T, "block_shape": list(self.block_shape), "order": ORDER}


def _shape_of(b) -> tuple[int, int, int]:
    return tuple(b.shape) if isinstance(b, Block) else tuple(getattr(b, "shape", ()))


def assemble(references: Sequence, frames: Sequence[Sequence], block_shape=None) -> TokenGrid:
    """Row v becomes [reference_v, frame_v1 ... frame_vT]."""
    if len(references) != len(frames):
        raise ShapeMismatch(f"{len(references)} references for {len(frames)} views of frames")
    if not references:
        return TokenGrid((), tuple(block_shape or (0, 0, 0)))
    shape = _shape_of(references[0])
    T = len(frames[0])
    rows = []
    for v, (ref, row) in enumerate(zip(references, frames)):
        if len(row) != T:
            raise ShapeMismatch(f"view {v} has {len(row)} frames, expected {T}", index=(v, len(row)))
        if _shape_of(ref) != shape:
            raise ShapeMismatch(f"reference of view {v} has shape {_shape_of(ref)}, expected {shape}", index=(v, 0))
        blocks = [Block(shape, ref.payload if isinstance(ref, Block) else ref, True)]
        for t, b in enumerate(row, start=1):
            if _shape_of(b) != shape:
                raise ShapeMismatch(f"block ({v}, {t}) has shape {_shape_of(b)}, expected {shape}", index=(v, t))
            blocks.append(Block(shape, b.payload if isinstance(b, Block) else b, False))
        rows.append(tuple(blocks))
    return TokenGrid(tuple(rows), shape)


def strip_references(grid: TokenGrid) -> list[list[Block]]:
    return [[b for b in row[1:]] for row in grid.rows]


def flatten(grid: TokenGrid) -> tuple[list[Block], dict]:
    stream = [b for row in grid.rows for b in row]
    index = grid.manifest()
    index["slots"] = [[v, t] for v in range(grid.V) for t in range(grid.T + 1)]
    return stream, index


def unflatten(stream: Sequence[Block], index: dict) -> TokenGrid:
    try:
        V, T = int(index["V"]), int(index["T"])
        shape = tuple(int(x) for x in index["block_shape"])
        order = index.get("order", ORDER)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidIndexMap(f"malformed index map: {exc}") from None
    if order != ORDER:
        raise InvalidIndexMap(f"unsupported order {order!r}")
    if V < 0 or T < 0 or len(shape) != 3:
        raise InvalidIndexMap(f"bad grid dimensions V={V} T={T} block_shape={shape}")
    if V == 0 and T != 0:
        raise InvalidIndexMap("an empty grid cannot have frame slots")
    if len(stream) != V * (T + 1):
        raise InvalidIndexMap(f"stream holds {len(stream)} blocks, index map expects {V * (T + 1)}")
    slots = index.get("slots")
    expected = [[v, t] for v in range(V) for t in range(T + 1)]
    if slots is not None and [list(s) for s in slots] != expected:
        raise InvalidIndexMap("slot list is not in view-major order")
    rows = []
    for v in range(V):
        row = tuple(stream[v * (T + 1):(v + 1) * (T + 1)])
        for t, b in enumerate(row):
            if tuple(b.shape) != shape:
                raise InvalidIndexMap(f"block ({v}, {t}) has shape {b.shape}, index map says {shape}")
            if b.is_reference != (t == 0):
                raise InvalidIndexMap(f"reference flag wrong at ({v}, {t})")
        rows.append(row)
    return TokenGrid(tuple(rows), shape)


def labeled_grid(V: int, T: int, shape=(16, 36, 48)) -> tuple[list[Block], list[list[Block]]]:
    """Uniquely labeled reference and frame blocks for round-trip checks."""
    refs = [Block(shape, f"ref[{v}]") for v in range(V)]
    frames = [[Block(shape, f"x[{v},{t}]") for t in range(1, T + 1)] for v in range(V)]
    return refs, frames


def round_trip_check(V: int, T: int, corrupt: bool = False) -> list[str]:
    """Run assemble/strip/flatten/unflatten on labeled blocks; return failures (empty = pass)."""
    failures = []
    refs, frames = labeled_grid(V, T)
    grid = assemble(refs, frames, block_shape=(16, 36, 48))
    if grid.V != V or (V and grid.T != T):
        failures.append(f"grid is {grid.V}x{grid.T + 1}, expected {V}x{T + 1}")
    if any(not row[0].is_reference or row[0].payload != refs[v].payload for v, row in enumerate(grid.rows)):
        failures.append("column 0 does not hold the references")
    kept = strip_references(grid)
    if corrupt and V and T:
        kept[0][0] = Block(kept[0][0].shape, "corrupted")
    if [[b.payload for b in row] for row in kept] != [[b.payload for b in row] for row in frames]:
        failures.append("strip_references(assemble(refs, frames)) != frames")
    ref_labels = {r.payload for r in refs}
    if any(b.payload in ref_labels or b.is_reference for row in kept for b in row):
        failures.append("reference block leaked into the kept frames")
    stream, index = flatten(grid)
    if unflatten(stream, index) != grid:
        failures.append("unflatten(flatten(grid)) != grid")
    return failures
