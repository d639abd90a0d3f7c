"""Forward kinematics for serial arms described by classic Denavit-Hartenberg rows.

Convention: each link transform is RotZ(theta + theta_offset) . TransZ(d) .
TransX(a) . RotX(alpha). Angles are radians, lengths meters.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidParameter

ORTHO_TOL = 1e-9


def _check_rotation(R: np.ndarray, name: str = "rotation") -> list[str]:
    problems = []
    if R.shape != (3, 3):
        return [f"{name} must be 3x3, got shape {R.shape}"]
    if not np.all(np.isfinite(R)):
        return [f"{name} has non-finite entries"]
    if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_TOL:
        problems.append(f"{name} is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
        problems.append(f"{name} determinant is not +1")
    return problems


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: rotation (3x3, proper orthonormal) plus translation (m)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        p = np.array(self.translation, dtype=float).reshape(-1)
        problems = _check_rotation(R)
        if p.shape != (3,) or not np.all(np.isfinite(p)):
            problems.append("translation must be a finite 3-vector")
        if problems:
            raise InvalidParameter("; ".join(problems))
        R.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", p)

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_matrix(cls, T) -> Pose:
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def compose(self, other: Pose) -> Pose:
        return Pose.from_matrix(self.matrix() @ other.matrix())

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Pose:
        return cls(d["rotation"], d["translation"])


@dataclass(frozen=True)
class DHRow:
    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0

    def __post_init__(self):
        for name in ("a", "alpha", "d", "theta_offset"):
            v = getattr(self, name)
            try:
                v = float(v)
            except (TypeError, ValueError):
                raise InvalidParameter(f"DH field {name!r} is not a number: {v!r}") from None
            if not np.isfinite(v):
                raise InvalidParameter(f"DH field {name!r} is not finite: {v!r}")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class DHChain:
    rows: tuple[DHRow, ...]
    base: Pose = field(default_factory=Pose)

    def __post_init__(self):
        rows = tuple(self.rows)
        if not rows:
            raise InvalidParameter("a DH chain needs at least one row")
        object.__setattr__(self, "rows", rows)

    def __len__(self):
        return len(self.rows)

    @property
    def dof(self) -> int:
        return len(self.rows)

    def split(self, k: int) -> tuple[DHChain, DHChain]:
        """First ``k`` links (with this base) and the remainder (identity base)."""
        return DHChain(self.rows[:k], self.base), DHChain(self.rows[k:])

    def to_dict(self) -> dict:
        return {
            "base": self.base.to_dict(),
            "rows": [
                {"a": r.a, "alpha": r.alpha, "d": r.d, "theta_offset": r.theta_offset}
                for r in self.rows
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> DHChain:
        if not isinstance(d, dict) or "rows" not in d:
            raise InvalidParameter("DH chain must be an object with a 'rows' field")
        rows = []
        for i, r in enumerate(d["rows"]):
            missing = [k for k in ("a", "alpha", "d") if k not in r]
            if missing:
                raise InvalidParameter(f"rows[{i}] is missing field(s) {', '.join(missing)}")
            rows.append(DHRow(r["a"], r["alpha"], r["d"], r.get("theta_offset", 0.0)))
        base = Pose.from_dict(d["base"]) if "base" in d else Pose()
        return cls(tuple(rows), base)

    @classmethod
    def load(cls, path) -> DHChain:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _link_matrices(row: DHRow, theta: np.ndarray) -> np.ndarray:
    """Batched closed-form link transform, shape (N, 4, 4)."""
    th = theta + row.theta_offset
    ct, st = np.cos(th), np.sin(th)
    ca, sa = np.cos(row.alpha), np.sin(row.alpha)
    T = np.zeros((th.shape[0], 4, 4))
    T[:, 0, 0] = ct
    T[:, 0, 1] = -st * ca
    T[:, 0, 2] = st * sa
    T[:, 0, 3] = row.a * ct
    T[:, 1, 0] = st
    T[:, 1, 1] = ct * ca
    T[:, 1, 2] = -ct * sa
    T[:, 1, 3] = row.a * st
    T[:, 2, 1] = sa
    T[:, 2, 2] = ca
    T[:, 2, 3] = row.d
    T[:, 3, 3] = 1.0
    return T


def dh_link_transform(row: DHRow, theta: float) -> Pose:
    theta = float(theta)
    if not np.isfinite(theta):
        raise InvalidParameter(f"joint angle is not finite: {theta!r}")
    return Pose.from_matrix(_link_matrices(row, np.array([theta]))[0])


def _as_joint_array(chain: DHChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or q.shape[0] != chain.dof:
        raise DimensionMismatch(
            f"expected {chain.dof} joint angles, got {q.shape[0] if q.ndim == 1 else q.shape}"
        )
    if not np.all(np.isfinite(q)):
        raise InvalidParameter("joint angles must be finite")
    return q


def fk_matrices(chain: DHChain, Q: np.ndarray) -> np.ndarray:
    """Homogeneous end-effector transforms for a (N, dof) batch of joint vectors."""
    Q = np.asarray(Q, dtype=float)
    T = np.broadcast_to(chain.base.matrix(), (Q.shape[0], 4, 4))
    for i, row in enumerate(chain.rows):
        T = T @ _link_matrices(row, Q[:, i])
    return T


def forward_kinematics(chain: DHChain, q: Sequence[float]) -> Pose:
    q = _as_joint_array(chain, q)
    return Pose.from_matrix(fk_matrices(chain, q[None, :])[0])


def ee_positions(chain: DHChain, trajectory) -> np.ndarray:
    """End-effector positions for every frame of a joint trajectory, shape (T, 3)."""
    frames = [np.asarray(q, dtype=float) for q in trajectory]
    if not frames:
        return np.zeros((0, 3))
    for t, q in enumerate(frames):
        try:
            _as_joint_array(chain, q)
        except DimensionMismatch as exc:
            raise DimensionMismatch(f"frame {t}: {exc}", index=t) from None
        except InvalidParameter as exc:
            raise InvalidParameter(f"frame {t}: {exc}") from None
    # one row at a time so each frame is bit-identical to a lone forward_kinematics call
    return np.stack([fk_matrices(chain, q[None, :])[0, :3, 3] for q in frames])


def load_joints(path) -> np.ndarray:
    """Read a joint trajectory file: a JSON list of joint vectors, or {"joints": [...]}."""
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        if "joints" not in data:
            raise InvalidParameter("joints file must be a list or contain a 'joints' field")
        data = data["joints"]
    if not isinstance(data, list):
        raise InvalidParameter("joints must be a list of joint vectors")
    return [list(map(float, q)) for q in data]
