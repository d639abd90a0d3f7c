"""Deterministic synthetic episodes with analytically known masks.

A scene is two DH arms following seeded piecewise-linear joint scripts, two
calibrated cameras and a handful of axis-aligned boxes. Boxes either sit
still, follow their own keyframes, or ride along with an end effector during
a grasp interval. Ground-truth masks are the pixel bounding boxes of the
projected box corners, so every number downstream can be checked by hand.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .camera import DEPTH_EPS, CameraCalib, look_at, project_world, validate_calib, world_to_camera
from .errors import InvalidParameter
from .kinematics import DHChain, DHRow, Pose, ee_positions
from .maskio import as_mask_sequence, initial_frame_prior, save_mask_sequence
from .trajvideo import PixelTrack, TrajVideoSpec, iter_view_frames, write_view_video

TASK_NAMES = {
    "1": "Bussing Table",
    "2": "Collect Food",
    "3": "Collect Tableware",
    "4": "Collect Toy",
    "5": "Move and Stack Block AB",
    "6": "Move and Stack Plate",
    "7": "Move Object Two",
    "8": "Place Block A2B Left",
    "9": "Place Block A2B Right",
    "10": "Place Block AB2C Left",
    "11": "Place Block AB2C Right",
    "12": "Place Bread Plate",
    "13": "Place Cup Plate",
    "14": "Shake Bottle",
    "15": "Stack Blocks Two",
}

ARMS = ("left", "right")


@dataclass
class Grasp:
    arm: str
    start: int
    end: int
    offset: tuple[float, float, float] = (0.0, 0.0, -0.03)


@dataclass
class Box:
    """Axis-aligned box. ``keyframes`` are (frame, center) pairs, linearly interpolated.

    With a grasp and no keyframes the box starts under the gripper (the end
    effector at the grasp start plus ``grasp.offset``).
    """

    object_id: str
    label: str
    size: tuple[float, float, float]
    keyframes: list[tuple[int, tuple[float, float, float]]] = field(default_factory=list)
    grasp: Grasp | None = None

    def corners(self, center) -> np.ndarray:
        half = np.asarray(self.size, dtype=float) / 2
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return np.asarray(center, dtype=float) + signs * half

    def to_dict(self) -> dict:
        d = {
            "object_id": self.object_id,
            "label": self.label,
            "size": list(self.size),
            "keyframes": [[t, list(c)] for t, c in self.keyframes],
        }
        if self.grasp:
            d["grasp"] = {"arm": self.grasp.arm, "start": self.grasp.start, "end": self.grasp.end,
                          "offset": list(self.grasp.offset)}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Box:
        g = d.get("grasp")
        return cls(
            d["object_id"], d.get("label", d["object_id"]), tuple(d["size"]),
            [(int(t), tuple(c)) for t, c in d.get("keyframes", [])],
            Grasp(g["arm"], int(g["start"]), int(g["end"]), tuple(g.get("offset", (0, 0, -0.03)))) if g else None,
        )


def default_chain(base_y: float) -> DHChain:
    """A desk-scale 6-DoF arm (about 0.6 m reach) standing at (0, base_y, 0)."""
    pi = np.pi
    rows = (
        DHRow(0.0, pi / 2, 0.15),
        DHRow(0.25, 0.0, 0.0),
        DHRow(0.22, 0.0, 0.0),
        DHRow(0.0, pi / 2, 0.0),
        DHRow(0.0, -pi / 2, 0.08),
        DHRow(0.0, 0.0, 0.06),
    )
    return DHChain(rows, Pose(np.eye(3), [0.0, base_y, 0.0]))


DEFAULT_HOME = {"left": (-0.45, 0.3, -1.2, -0.6, 0.0, 0.0), "right": (0.45, 0.3, -1.2, -0.6, 0.0, 0.0)}


def default_calibs(width: int = 384, height: int = 288) -> list[CameraCalib]:
    f = 300.0 * width / 384
    target = (0.3, 0.0, 0.05)
    eyes = [(1.0, 0.0, 0.7), (0.3, -0.9, 0.8)]
    return [CameraCalib(f, f, width / 2, height / 2, look_at(e, target), e, width, height) for e in eyes]


@dataclass
class SceneTemplate:
    seed: int
    task_id: str
    task_label: str
    chains: dict[str, DHChain]
    calibs: list[CameraCalib]
    objects: list[Box]
    T_total: int = 81
    success: bool = True
    home: dict[str, tuple[float, ...]] = field(default_factory=lambda: dict(DEFAULT_HOME))
    jitter: float = 0.2
    n_keyframes: int = 4
    joint_keyframes: dict[str, list[tuple[int, tuple[float, ...]]]] | None = None
    miss_offset: tuple[float, float, float] = (0.0, 0.12, 0.0)
    spec: TrajVideoSpec | None = None

    def validate(self) -> None:
        problems = []
        if len(self.objects) < 2:
            problems.append(f"need at least two objects, got {len(self.objects)}")
        if self.T_total < 1:
            problems.append("T_total must be >= 1")
        if not self.calibs:
            problems.append("need at least one camera view")
        for k, c in enumerate(self.calibs, start=1):
            problems += [f"view{k}: {p}" for p in validate_calib(c)]
        for b in self.objects:
            if b.grasp and b.grasp.arm not in self.chains:
                problems.append(f"object {b.object_id} grasped by unknown arm {b.grasp.arm!r}")
            if b.grasp and not 0 <= b.grasp.start <= b.grasp.end < self.T_total:
                problems.append(f"object {b.object_id} grasp interval outside 0..{self.T_total - 1}")
            if not b.grasp and not b.keyframes:
                problems.append(f"object {b.object_id} has neither keyframes nor a grasp")
        if self.joint_keyframes is None:
            for arm in self.chains:
                if arm not in self.home or len(self.home[arm]) != self.chains[arm].dof:
                    problems.append(f"arm {arm}: home posture missing or wrong length")
        if problems:
            raise InvalidParameter("; ".join(problems))

    def video_spec(self) -> TrajVideoSpec:
        c = self.calibs[0]
        base = self.spec or TrajVideoSpec()
        d = base.to_dict()
        d.update(width=c.width, height=c.height, frame_count=self.T_total)
        return TrajVideoSpec.from_dict(d)

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "task_id": self.task_id,
            "task_label": self.task_label,
            "T_total": self.T_total,
            "success": self.success,
            "arms": {a: {"chain": c.to_dict(), "home": list(self.home.get(a, ()))} for a, c in self.chains.items()},
            "views": [c.to_dict() for c in self.calibs],
            "objects": [b.to_dict() for b in self.objects],
            "jitter": self.jitter,
            "n_keyframes": self.n_keyframes,
            "miss_offset": list(self.miss_offset),
        }
        if self.joint_keyframes is not None:
            d["joint_keyframes"] = {a: [[t, list(q)] for t, q in kf] for a, kf in self.joint_keyframes.items()}
        if self.spec is not None:
            d["spec"] = self.spec.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict, seed: int | None = None) -> SceneTemplate:
        try:
            arms = d["arms"]
            chains = {a: DHChain.from_dict(v["chain"]) for a, v in arms.items()}
            home = {a: tuple(v["home"]) for a, v in arms.items() if v.get("home")}
            jk = d.get("joint_keyframes")
            t = cls(
                seed=int(d.get("seed", 0) if seed is None else seed),
                task_id=str(d["task_id"]),
                task_label=str(d.get("task_label", TASK_NAMES.get(str(d["task_id"]), d["task_id"]))),
                chains=chains,
                calibs=[CameraCalib.from_dict(c) for c in d["views"]],
                objects=[Box.from_dict(b) for b in d["objects"]],
                T_total=int(d.get("T_total", 81)),
                success=bool(d.get("success", True)),
                home=home or dict(DEFAULT_HOME),
                jitter=float(d.get("jitter", 0.2)),
                n_keyframes=int(d.get("n_keyframes", 4)),
                joint_keyframes={a: [(int(t), tuple(q)) for t, q in kf] for a, kf in jk.items()} if jk else None,
                miss_offset=tuple(d.get("miss_offset", (0.0, 0.12, 0.0))),
                spec=TrajVideoSpec.from_dict(d["spec"]) if d.get("spec") else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidParameter(f"bad scene template: {exc!r}") from None
        t.validate()
        return t


def default_template(task_id="12", seed: int = 0, success: bool = True, T_total: int = 81) -> SceneTemplate:
    """Two arms, two views, two boxes: the left arm carries object A, object B stays put."""
    task_id = str(task_id)
    mid = T_total // 3
    objects = [
        Box("obj0", "the red block", (0.05, 0.05, 0.05),
            grasp=Grasp("left", mid, min(2 * mid, T_total - 1))),
        Box("obj1", "the blue plate", (0.12, 0.12, 0.02), keyframes=[(0, (0.35, -0.05, 0.01))]),
    ]
    return SceneTemplate(
        seed=seed,
        task_id=task_id,
        task_label=TASK_NAMES.get(task_id, f"task {task_id}"),
        chains={"left": default_chain(0.3), "right": default_chain(-0.3)},
        calibs=default_calibs(),
        objects=objects,
        T_total=T_total,
        success=success,
    )


def _interp(keyframes, T: int) -> np.ndarray:
    ts = np.array([k[0] for k in keyframes], dtype=float)
    vals = np.array([k[1] for k in keyframes], dtype=float)
    order = np.argsort(ts, kind="stable")
    ts, vals = ts[order], vals[order]
    frames = np.arange(T, dtype=float)
    return np.stack([np.interp(frames, ts, vals[:, j]) for j in range(vals.shape[1])], axis=1)


def joint_script(template: SceneTemplate) -> dict[str, np.ndarray]:
    """Per-arm (T_total, dof) joint trajectories, fully determined by the seed."""
    if template.joint_keyframes is not None:
        return {a: _interp(kf, template.T_total) for a, kf in template.joint_keyframes.items()}
    rng = np.random.default_rng(template.seed)
    T = template.T_total
    n = max(2, template.n_keyframes)
    key_t = np.linspace(0, T - 1, n).round().astype(int)
    out = {}
    for arm in sorted(template.chains):
        home = np.asarray(template.home[arm], dtype=float)
        kf = [(int(t), tuple(home + rng.uniform(-template.jitter, template.jitter, home.shape))) for t in key_t]
        out[arm] = _interp(kf, T)
    return out


def object_centers(template: SceneTemplate, ee: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Per-object (T_total, 3) box centers."""
    T = template.T_total
    out = {}
    for b in template.objects:
        g = b.grasp
        if g is None:
            out[b.object_id] = _interp(b.keyframes, T)
            continue
        path = ee[g.arm]
        start_center = path[g.start] + np.asarray(g.offset)
        if b.keyframes:
            centers = _interp(b.keyframes, T)
            start_center = centers[g.start]
        else:
            centers = np.repeat(start_center[None], T, axis=0)
        if not template.success:
            # the gripper misses: the object sits beside the path and never moves
            out[b.object_id] = np.repeat((start_center + np.asarray(template.miss_offset))[None], T, axis=0)
            continue
        follow = start_center + (path - path[g.start])
        centers[g.start:g.end + 1] = follow[g.start:g.end + 1]
        centers[g.end + 1:] = follow[g.end]
        out[b.object_id] = centers
    return out


def render_gt_mask(calib: CameraCalib, box: Box, center, width: int | None = None, height: int | None = None) -> np.ndarray:
    """Pixel bounding box of the box's projected corners, clipped to the canvas.

    Pixel (x, y) is covered when u_min <= x <= u_max and v_min <= y <= v_max.
    Corners behind the camera are ignored; a box entirely behind yields an empty mask.
    """
    width = calib.width if width is None else width
    height = calib.height if height is None else height
    mask = np.zeros((height, width), dtype=bool)
    us, vs = [], []
    for c in box.corners(center):
        if world_to_camera(calib, c)[2] <= DEPTH_EPS:
            continue
        p = project_world(calib, c)
        us.append(p.u)
        vs.append(p.v)
    if not us:
        return mask
    x0, x1 = max(int(np.ceil(min(us))), 0), min(int(np.floor(max(us))), width - 1)
    y0, y1 = max(int(np.ceil(min(vs))), 0), min(int(np.floor(max(vs))), height - 1)
    if x0 <= x1 and y0 <= y1:
        mask[y0:y1 + 1, x0:x1 + 1] = True
    return mask


def perturb_masks(seq, dx: int, dy: int) -> np.ndarray:
    """Translate every mask by (dx, dy) pixels; content pushed past the border is lost."""
    seq = as_mask_sequence(seq)
    out = np.zeros_like(seq)
    _, h, w = seq.shape
    dx, dy = int(dx), int(dy)
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src_y = slice(max(0, -dy), h - max(0, dy))
    src_x = slice(max(0, -dx), w - max(0, dx))
    dst_y = slice(max(0, dy), h - max(0, -dy))
    dst_x = slice(max(0, dx), w - max(0, -dx))
    out[:, dst_y, dst_x] = seq[:, src_y, src_x]
    return out


@dataclass
class Scene:
    """Everything computed for one episode, before anything touches disk."""

    template: SceneTemplate
    joints: dict[str, np.ndarray]
    ee: dict[str, np.ndarray]
    centers: dict[str, np.ndarray]
    gt_masks: list[dict[str, np.ndarray]]  # per view: object id -> (T, H, W)

    def tracks(self, view: int) -> list[PixelTrack]:
        calib = self.template.calibs[view]
        return [PixelTrack([project_world(calib, p) for p in self.ee[arm]], arm) for arm in sorted(self.ee)]

    def prior(self, view: int) -> np.ndarray:
        return initial_frame_prior(*[self.gt_masks[view][b.object_id] for b in self.template.objects])


def build_scene(template: SceneTemplate) -> Scene:
    template.validate()
    joints = joint_script(template)
    ee = {arm: ee_positions(template.chains[arm], q) for arm, q in joints.items()}
    centers = object_centers(template, ee)
    gt = []
    for calib in template.calibs:
        gt.append({
            b.object_id: np.stack([render_gt_mask(calib, b, c) for c in centers[b.object_id]])
            for b in template.objects
        })
    return Scene(template, joints, ee, centers, gt)


@dataclass
class EpisodeManifest:
    episode_id: str
    task_id: str
    task_label: str
    success: bool
    frames: int
    joints: str
    arms: dict[str, str]
    objects: list[dict]
    views: list[dict]

    def to_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "task_id": self.task_id,
            "task_label": self.task_label,
            "success": self.success,
            "frames": self.frames,
            "joints": self.joints,
            "arms": dict(sorted(self.arms.items())),
            "objects": self.objects,
            "views": self.views,
        }

    @classmethod
    def from_dict(cls, d: dict) -> EpisodeManifest:
        return cls(d["episode_id"], str(d["task_id"]), d.get("task_label", ""), bool(d["success"]),
                   int(d["frames"]), d["joints"], dict(d["arms"]), list(d["objects"]), list(d["views"]))

    @classmethod
    def load(cls, path) -> EpisodeManifest:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def missing_paths(self, root) -> list[str]:
        root = Path(root)
        paths = [self.joints, *self.arms.values()]
        for v in self.views:
            paths += [v["calib"], v["gt_masks"], v["traj"]]
        return [p for p in paths if not (root / p).exists()]


def _dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_joints(joints: dict[str, np.ndarray], path) -> None:
    _dump({"frames": int(next(iter(joints.values())).shape[0]) if joints else 0,
           "arms": {a: q.tolist() for a, q in sorted(joints.items())}}, Path(path))


def load_arm_joints(path) -> dict[str, list[list[float]]]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict) or "arms" not in data:
        raise InvalidParameter(f"{path}: expected an object with an 'arms' field")
    return {a: [list(map(float, q)) for q in qs] for a, qs in data["arms"].items()}


def generate_episode(template: SceneTemplate, root, episode_id: str, with_traj: bool = True) -> EpisodeManifest:
    """Write one episode tree under ``root/episode_id`` and return its manifest."""
    scene = build_scene(template)
    ep = Path(root) / episode_id
    ep.mkdir(parents=True, exist_ok=True)
    write_joints(scene.joints, ep / "joints.json")
    arms = {}
    for arm, chain in sorted(template.chains.items()):
        rel = f"arms/{arm}.json"
        (ep / "arms").mkdir(exist_ok=True)
        chain.save(ep / rel)
        arms[arm] = rel
    spec = template.video_spec()
    views = []
    for k, calib in enumerate(template.calibs, start=1):
        vdir = ep / f"view{k}"
        vdir.mkdir(exist_ok=True)
        calib.save(vdir / "calib.json")
        for b in template.objects:
            save_mask_sequence(scene.gt_masks[k - 1][b.object_id], vdir / "gt_masks" / b.object_id)
        if with_traj:
            write_view_video(iter_view_frames(scene.tracks(k - 1), scene.prior(k - 1), spec), vdir / "traj", k, spec)
        views.append({"view": k, "calib": f"view{k}/calib.json", "gt_masks": f"view{k}/gt_masks",
                      "traj": f"view{k}/traj"})
    _dump({"spec": spec.to_dict()}, ep / "video_spec.json")
    manifest = EpisodeManifest(
        episode_id, template.task_id, template.task_label, template.success, template.T_total,
        "joints.json", arms, [{"object_id": b.object_id, "label": b.label} for b in template.objects], views,
    )
    _dump(manifest.to_dict(), ep / "manifest.json")
    return manifest


def episode_id_for(index: int, template: SceneTemplate) -> str:
    return f"ep{index:04d}_task{int(template.task_id):02d}" if template.task_id.isdigit() else f"ep{index:04d}_{template.task_id}"


def plan_episodes(templates: Sequence[SceneTemplate], n: int, seed: int) -> list[tuple[str, SceneTemplate]]:
    """Episode ids and per-episode templates; template i % len cycles, seeds derive from (seed, i)."""
    plan = []
    for i in range(n):
        base = templates[i % len(templates)]
        ep_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        t = SceneTemplate(**{**base.__dict__, "seed": ep_seed})
        plan.append((episode_id_for(i, t), t))
    return plan


def default_templates(failure_every: int = 5) -> list[SceneTemplate]:
    """One template per task label; every ``failure_every``-th task is a scripted miss."""
    return [
        default_template(tid, success=(failure_every <= 0 or int(tid) % failure_every != 0))
        for tid in TASK_NAMES
    ]


def load_templates(path) -> list[SceneTemplate]:
    data = json.loads(Path(path).read_text())
    items = data.get("templates", [data]) if isinstance(data, dict) else data
    if not items:
        raise InvalidParameter("template file holds no templates")
    return [SceneTemplate.from_dict(d) for d in items]


class SceneDescriptionClient:
    """Description 'model' that reads the scripted object labels."""

    def __init__(self, template: SceneTemplate):
        self.labels = [b.label for b in template.objects]

    def describe(self, image):
        return list(self.labels)


class SceneSegmentationClient:
    """Segmentation 'model' that returns the analytically rendered masks for one view."""

    def __init__(self, scene: Scene, view: int):
        self.by_label = {b.label: scene.gt_masks[view][b.object_id] for b in scene.template.objects}

    def segment(self, frames, query):
        masks = self.by_label.get(query)
        if masks is None:
            return [None] * len(frames)
        return [masks[t] if t < len(masks) else None for t in range(len(frames))]
