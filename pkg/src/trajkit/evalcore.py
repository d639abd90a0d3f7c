"""Mask-matching evaluation: frame and video Jaccard, per-task/per-view aggregation,
rollout-progress curves, task rankings and report files."""
from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidParameter, LengthMismatch, UnknownView
from .maskio import as_mask, as_mask_sequence


class FrameScore(NamedTuple):
    t: int
    j: float
    both_empty: bool = False


def jaccard_frame(pred, gt, t: int = 0) -> FrameScore:
    pred, gt = as_mask(pred), as_mask(gt)
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"frame {t}: prediction {pred.shape} vs ground truth {gt.shape}", index=t)
    union = int(np.count_nonzero(pred | gt))
    if union == 0:
        return FrameScore(t, 1.0, True)
    inter = int(np.count_nonzero(pred & gt))
    return FrameScore(t, inter / union, False)


@dataclass
class VideoScore:
    episode_id: str
    view_id: str
    task_id: str
    frame_scores: list[FrameScore] = field(default_factory=list)
    j_video: float = float("nan")

    def __post_init__(self):
        if self.frame_scores and math.isnan(self.j_video):
            self.j_video = mean_of([f.j for f in self.frame_scores])

    def to_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "view_id": self.view_id,
            "task_id": self.task_id,
            "j_video": self.j_video,
            "frames": [[f.t, f.j, f.both_empty] for f in self.frame_scores],
        }

    @classmethod
    def from_dict(cls, d: dict) -> VideoScore:
        frames = [FrameScore(int(t), float(j), bool(e)) for t, j, e in d.get("frames", [])]
        return cls(str(d["episode_id"]), str(d["view_id"]), str(d["task_id"]), frames, float(d["j_video"]))


def mean_of(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def _frame_scores(preds: np.ndarray, gts: np.ndarray) -> list[FrameScore]:
    if preds.shape[0] != gts.shape[0]:
        raise LengthMismatch(f"{preds.shape[0]} predicted frames vs {gts.shape[0]} ground-truth frames")
    if preds.shape[1:] != gts.shape[1:]:
        raise DimensionMismatch(f"mask size {preds.shape[1:]} vs {gts.shape[1:]}")
    return [jaccard_frame(p, g, t) for t, (p, g) in enumerate(zip(preds, gts))]


def jaccard_video(preds, gts, episode_id="", view_id="", task_id="") -> VideoScore:
    scores = _frame_scores(as_mask_sequence(preds), as_mask_sequence(gts))
    return VideoScore(str(episode_id), str(view_id), str(task_id), scores)


def jaccard_video_objects(pred_objects, gt_objects, episode_id="", view_id="", task_id="") -> VideoScore:
    """Multi-object video score: per-object frame Jaccard averaged per frame, then over time.

    ``pred_objects`` and ``gt_objects`` map object id to mask sequence and must
    hold the same ids.
    """
    if set(pred_objects) != set(gt_objects):
        missing = sorted(set(gt_objects) ^ set(pred_objects))
        raise DimensionMismatch(f"object sets differ: {missing}")
    if not gt_objects:
        raise InvalidParameter("no objects to score")
    per_object = [
        _frame_scores(as_mask_sequence(pred_objects[k]), as_mask_sequence(gt_objects[k]))
        for k in sorted(gt_objects)
    ]
    n = {len(s) for s in per_object}
    if len(n) != 1:
        raise LengthMismatch(f"objects have differing frame counts {sorted(n)}")
    frames = [
        FrameScore(t, mean_of([s[t].j for s in per_object]), all(s[t].both_empty for s in per_object))
        for t in range(n.pop())
    ]
    return VideoScore(str(episode_id), str(view_id), str(task_id), frames)


def task_sort_key(task_id):
    s = str(task_id)
    return (0, int(s), "") if s.lstrip("-").isdigit() else (1, 0, s)


class Cell(NamedTuple):
    total: float
    count: int

    @property
    def mean(self) -> float:
        return self.total / self.count


@dataclass
class EvalReport:
    """Per-(task, view) sums and counts of video scores.

    Kept as sums so partial reports merge exactly; means are derived.
    """

    cells: dict[tuple[str, str], list[float]] = field(default_factory=dict)

    def merge(self, other: EvalReport) -> EvalReport:
        cells = {k: list(v) for k, v in self.cells.items()}
        for k, v in other.cells.items():
            cells.setdefault(k, []).extend(v)
        return EvalReport(cells)

    @property
    def views(self) -> list[str]:
        return sorted({v for _, v in self.cells}, key=task_sort_key)

    @property
    def tasks(self) -> list[str]:
        return sorted({t for t, _ in self.cells}, key=task_sort_key)

    def task_mean(self, task, view) -> float:
        return mean_of(sorted(self.cells[(str(task), str(view))]))

    def count(self, task, view) -> int:
        return len(self.cells.get((str(task), str(view)), ()))

    def task_means(self, view) -> dict[str, float]:
        view = str(view)
        if view not in self.views:
            raise UnknownView(f"view {view!r} not in report (have {self.views})")
        return {t: self.task_mean(t, view) for t in self.tasks if (t, view) in self.cells}

    def overall(self, view) -> float:
        return mean_of(list(self.task_means(view).values()))

    def __bool__(self):
        return bool(self.cells)


def aggregate(scores: Iterable[VideoScore]) -> EvalReport:
    cells: dict[tuple[str, str], list[float]] = defaultdict(list)
    for s in scores:
        cells[(str(s.task_id), str(s.view_id))].append(s.j_video)
    return EvalReport(dict(cells))


def progress_curve(scores: Iterable[VideoScore], n_bins: int) -> list[tuple[int, float]]:
    """Mean frame Jaccard per rollout-progress bin; bins with no frames are omitted."""
    if n_bins < 1:
        raise InvalidParameter(f"n_bins must be >= 1, got {n_bins}")
    buckets: list[list[float]] = [[] for _ in range(n_bins)]
    for s in scores:
        T = len(s.frame_scores)
        for i, f in enumerate(s.frame_scores):
            b = min(n_bins * i // T, n_bins - 1)
            buckets[b].append(f.j)
    return [(b, mean_of(vals)) for b, vals in enumerate(buckets) if vals]


def rank_tasks(report: EvalReport, view) -> list[tuple[str, float]]:
    means = report.task_means(view)
    return sorted(means.items(), key=lambda kv: (-kv[1], task_sort_key(kv[0])))


def display(value: float, scale: float = 100.0) -> str:
    """One-decimal display string, rounded half-up on the decimal representation."""
    return str(Decimal(repr(value * scale)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def _table(report: EvalReport) -> tuple[list[str], list[list[str]]]:
    views = report.views
    header = ["task"] + [f"view {v}" for v in views] + [f"n {v}" for v in views]
    rows = []
    for task in report.tasks:
        row = [task]
        row += [display(report.task_mean(task, v)) if (task, v) in report.cells else "" for v in views]
        row += [str(report.count(task, v)) for v in views]
        rows.append(row)
    if views:
        rows.append(["overall"] + [display(report.overall(v)) for v in views] + [
            str(sum(report.count(t, v) for t in report.tasks)) for v in views
        ])
    return header, rows


def format_report(report: EvalReport, fmt: str = "md") -> str:
    header, rows = _table(report)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()
    if fmt in ("md", "markdown"):
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    raise InvalidParameter(f"unknown report format {fmt!r}")


def emit_report(report: EvalReport, fmt: str, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_report(report, fmt))
    return path


def format_ranking(ranking: list[tuple[str, float]], names: dict | None = None) -> str:
    names = names or {}
    lines = ["| rank | task | name | J |", "|---|---|---|---|"]
    for i, (task, j) in enumerate(ranking, start=1):
        lines.append(f"| {i} | {task} | {names.get(str(task), '')} | {display(j)} |")
    return "\n".join(lines) + "\n"


def format_progress_csv(curve: list[tuple[int, float]], n_bins: int) -> str:
    lines = ["bin,start,end,mean_j"]
    for b, j in curve:
        lines.append(f"{b},{b / n_bins:.4f},{(b + 1) / n_bins:.4f},{j!r}")
    return "\n".join(lines) + "\n"


def write_scores(scores: Iterable[VideoScore], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        for s in scores:
            f.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")
    return path


def read_scores(path) -> list[VideoScore]:
    with Path(path).open() as f:
        return [VideoScore.from_dict(json.loads(line)) for line in f if line.strip()]
