"""``trajkit`` command line: control-signal synthesis and auto-evaluation pipelines.

Exit codes: 0 success, 1 check failure, 2 input/config error, 3 runtime/render error.
"""
from __future__ import annotations

import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click

from . import evalcore, latentgrid
from .camera import CameraCalib, project_world
from .errors import DimensionMismatch, TrajkitError
from .kinematics import DHChain, ee_positions, load_joints
from .maskio import initial_frame_prior, load_mask, load_mask_sequence, save_mask_sequence
from .synthscene import (
    TASK_NAMES,
    EpisodeManifest,
    default_templates,
    generate_episode,
    load_arm_joints,
    load_templates,
    perturb_masks,
    plan_episodes,
)
from .trajvideo import PixelTrack, TrajVideoSpec, iter_view_frames, write_view_video

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2, 3


class InputError(click.ClickException):
    exit_code = EXIT_INPUT


class RenderError(click.ClickException):
    exit_code = EXIT_RUNTIME


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise InputError(f"config {path} must hold a JSON object")
    return cfg


def _jobs(value) -> int:
    n = int(value) if value is not None else (os.cpu_count() or 1)
    if n < 1:
        raise InputError(f"--jobs must be >= 1, got {n}")
    return n


def _pool_map(fn, items, jobs: int):
    if jobs == 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, *zip(*items)))


def _emit_json(obj, out) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(package_name="artifact")
def cli():
    """Trajectory control videos and mask-matching evaluation for robot world models."""


@cli.command("fk")
@click.argument("chain_file", type=click.Path())
@click.argument("joints_file", type=click.Path())
@click.option("--out", type=click.Path(), help="Write the JSON here instead of stdout.")
def cmd_fk(chain_file, joints_file, out):
    """End-effector positions for every frame of a joint trajectory."""
    try:
        chain = DHChain.load(chain_file)
        joints = load_joints(joints_file)
        pts = ee_positions(chain, joints)
    except (TrajkitError, FileNotFoundError, KeyError, TypeError, ValueError) as exc:
        raise InputError(str(exc)) from None
    _emit_json(pts.tolist(), out)


@cli.command("project")
@click.argument("calib_file", type=click.Path())
@click.argument("points_file", type=click.Path())
@click.option("--out", type=click.Path())
def cmd_project(calib_file, points_file, out):
    """Project world points (a JSON list of 3-vectors) into one calibrated view."""
    try:
        calib = CameraCalib.load(calib_file)
        pts = json.loads(Path(points_file).read_text())
        result = [project_world(calib, p)._asdict() for p in pts]
    except (TrajkitError, FileNotFoundError, KeyError, TypeError, ValueError) as exc:
        raise InputError(str(exc)) from None
    _emit_json(result, out)


# --- synth-traj ----------------------------------------------------------------


def _render_views(chains: dict, joints: dict, views: list[dict], spec_overrides: dict, out: Path) -> list[str]:
    """Render every view's trajectory video; returns the written directories."""
    n_frames = {len(q) for q in joints.values()}
    if len(n_frames) != 1:
        raise InputError(f"arms have differing frame counts {sorted(n_frames)}")
    T = n_frames.pop()
    ee = {}
    for arm, q in sorted(joints.items()):
        if arm not in chains:
            raise InputError(f"joints given for arm {arm!r} but no DH chain")
        try:
            ee[arm] = ee_positions(chains[arm], q)
        except TrajkitError as exc:
            raise InputError(f"arm {arm}: {exc}") from None
    written = []
    for view in views:
        calib = view["calib"]
        spec_d = TrajVideoSpec().to_dict()
        spec_d.update(spec_overrides)
        spec_d.update(width=calib.width, height=calib.height, frame_count=T)
        try:
            spec = TrajVideoSpec.from_dict(spec_d)
        except TrajkitError as exc:
            raise InputError(f"view {view['view']}: {exc}") from None
        tracks = [PixelTrack([project_world(calib, p) for p in ee[arm]], arm) for arm in sorted(ee)]
        mask = view.get("mask")
        if mask is not None and mask.shape != (calib.height, calib.width):
            raise InputError(f"view {view['view']}: mask size does not match the calibration image size")
        try:
            d = write_view_video(iter_view_frames(tracks, mask, spec), out / f"view{view['view']}" / "traj",
                                 view["view"], spec)
        except TrajkitError as exc:
            raise RenderError(f"view {view['view']}: {exc}") from None
        written.append(str(d))
    return written


def _load_calib(path, view) -> CameraCalib:
    if path is None:
        raise InputError(f"view {view}: no calibration file given")
    if not Path(path).is_file():
        raise InputError(f"view {view}: calibration file not found: {path}")
    try:
        return CameraCalib.load(path)
    except (TrajkitError, KeyError, ValueError) as exc:
        raise InputError(f"view {view}: {exc}") from None


def _episode_job(ep_dir: str, out: str, spec_overrides: dict, n_views):
    ep = Path(ep_dir)
    try:
        m = EpisodeManifest.load(ep / "manifest.json")
        chains = {arm: DHChain.load(ep / rel) for arm, rel in m.arms.items()}
        joints = load_arm_joints(ep / m.joints)
    except (TrajkitError, FileNotFoundError, KeyError, ValueError) as exc:
        raise InputError(f"episode {ep.name}: {exc}") from None
    views = []
    for v in m.views[:n_views]:
        calib = _load_calib(ep / v["calib"], v["view"])
        obj_dirs = [ep / v["gt_masks"] / o["object_id"] for o in m.objects]
        mask = None
        if all(d.is_dir() for d in obj_dirs) and obj_dirs:
            mask = initial_frame_prior(*[[load_mask(sorted(d.glob("*.png"))[0])] for d in obj_dirs])
        views.append({"view": v["view"], "calib": calib, "mask": mask})
    return _render_views(chains, joints, views, spec_overrides, Path(out) / m.episode_id)


def _episode_dirs(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise InputError(f"episode root not found: {root}")
    return sorted(p.parent for p in root.glob("*/manifest.json"))


@cli.command("synth-traj")
@click.option("--config", "config_path", type=click.Path(), help="RunConfig JSON.")
@click.option("--episodes", type=click.Path(), help="Render every episode tree under this root.")
@click.option("--out", type=click.Path(), help="Output root (overrides config 'out').")
@click.option("--views", type=int, help="Only the first N views.")
@click.option("--jobs", type=int, help="Worker processes (default: all cores).")
def cmd_synth_traj(config_path, episodes, out, views, jobs):
    """Render multi-view trajectory control videos (PNG sequences + sidecar JSON)."""
    cfg = _load_config(config_path)
    out = out or cfg.get("out")
    if not out:
        raise InputError("no output directory: pass --out or set 'out' in the config")
    jobs = _jobs(jobs if jobs is not None else cfg.get("jobs"))
    views = views if views is not None else cfg.get("views_limit")
    spec_overrides = cfg.get("spec", {})
    episodes = episodes or cfg.get("episodes")
    if episodes:
        dirs = _episode_dirs(episodes)
        results = _pool_map(_episode_job, [(str(d), out, spec_overrides, views) for d in dirs], jobs)
        click.echo(f"rendered {sum(len(r) for r in results)} view videos for {len(dirs)} episodes into {out}")
        return
    if not cfg:
        raise InputError("pass --config or --episodes")
    try:
        chains = {arm: DHChain.load(a["chain"]) for arm, a in cfg["arms"].items()}
        jpath = cfg.get("joints")
        if jpath:
            joints = load_arm_joints(jpath)
        else:
            joints = {arm: load_joints(a["joints"]) for arm, a in cfg["arms"].items()}
    except KeyError as exc:
        raise InputError(f"config is missing field {exc}") from None
    except (TrajkitError, FileNotFoundError, ValueError) as exc:
        raise InputError(str(exc)) from None
    vlist = []
    for k, v in enumerate(cfg.get("views", []), start=1):
        if views is not None and k > views:
            break
        calib = _load_calib(v.get("calib"), k)
        mask = None
        if v.get("mask"):
            try:
                mask = load_mask(v["mask"])
            except (TrajkitError, FileNotFoundError) as exc:
                raise InputError(f"view {k}: {exc}") from None
        vlist.append({"view": k, "calib": calib, "mask": mask})
    if not vlist:
        raise InputError("config lists no views")
    written = _render_views(chains, joints, vlist, spec_overrides, Path(out))
    click.echo(f"rendered {len(written)} view videos into {out}")


# --- synth-scene ---------------------------------------------------------------


def _scene_job(template, root, episode_id, with_traj, pred_out, dx, dy):
    m = generate_episode(template, root, episode_id, with_traj=with_traj)
    if pred_out:
        src = Path(root) / episode_id
        for v in m.views:
            for o in m.objects:
                seq = load_mask_sequence(src / v["gt_masks"] / o["object_id"])
                save_mask_sequence(perturb_masks(seq, dx, dy),
                                   Path(pred_out) / episode_id / f"view{v['view']}" / "pred_masks" / o["object_id"])
    return episode_id


@cli.command("synth-scene")
@click.argument("template_file", required=False, type=click.Path())
@click.option("-n", "--n-episodes", type=int, default=15, show_default=True)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--no-traj", is_flag=True, help="Skip trajectory videos (masks and manifests only).")
@click.option("--pred-out", type=click.Path(), help="Also write a shifted-mask prediction tree here.")
@click.option("--pred-dx", type=int, default=0)
@click.option("--pred-dy", type=int, default=0)
@click.option("--jobs", type=int)
def cmd_synth_scene(template_file, n_episodes, seed, out, no_traj, pred_out, pred_dx, pred_dy, jobs):
    """Generate deterministic synthetic episode trees (one per template, cycled)."""
    if n_episodes < 0:
        raise InputError("-n must be >= 0")
    if n_episodes == 0:
        click.echo("nothing to generate")
        return
    try:
        templates = load_templates(template_file) if template_file else default_templates()
    except FileNotFoundError:
        raise InputError(f"template file not found: {template_file}") from None
    except (TrajkitError, json.JSONDecodeError) as exc:
        raise InputError(f"template error: {exc}") from None
    plan = plan_episodes(templates, n_episodes, seed)
    items = [(t, out, eid, not no_traj, pred_out, pred_dx, pred_dy) for eid, t in plan]
    try:
        ids = _pool_map(_scene_job, items, _jobs(jobs))
    except TrajkitError as exc:
        raise RenderError(str(exc)) from None
    click.echo(f"generated {len(ids)} episodes in {out}")


# --- eval / report ---------------------------------------------------------------


def _pred_mask_dir(ep: Path, view: int, obj: str) -> Path:
    d = ep / f"view{view}" / "pred_masks" / obj
    return d if d.is_dir() else ep / f"view{view}" / "gt_masks" / obj


def _score_episode(gt_dir: str, pred_dir: str, n_views):
    gt, pred = Path(gt_dir), Path(pred_dir)
    m = EpisodeManifest.load(gt / "manifest.json")
    scores = []
    for v in m.views[:n_views]:
        k = v["view"]
        objs = [o["object_id"] for o in m.objects]
        gts = {o: load_mask_sequence(gt / v["gt_masks"] / o) for o in objs}
        preds = {}
        for o in objs:
            d = _pred_mask_dir(pred, k, o)
            if not d.is_dir():
                raise InputError(f"episode {m.episode_id} view {k}: no predicted masks for {o}")
            preds[o] = load_mask_sequence(d)
        try:
            scores.append(evalcore.jaccard_video_objects(preds, gts, m.episode_id, k, m.task_id))
        except DimensionMismatch as exc:
            raise InputError(f"episode {m.episode_id} view {k}: {exc}") from None
    return scores, m.task_id, m.task_label


def _write_outputs(scores, out: Path, fmt: str, bins, names: dict) -> evalcore.EvalReport:
    out.mkdir(parents=True, exist_ok=True)
    evalcore.write_scores(scores, out / "scores.jsonl")
    report = evalcore.aggregate(scores)
    ext = "csv" if fmt == "csv" else "md"
    evalcore.emit_report(report, fmt, out / f"report.{ext}")
    for view in report.views:
        (out / f"ranking_view{view}.md").write_text(
            evalcore.format_ranking(evalcore.rank_tasks(report, view), names))
    if bins:
        curve = evalcore.progress_curve(scores, bins)
        (out / "progress.csv").write_text(evalcore.format_progress_csv(curve, bins))
    for view in report.views:
        click.echo(f"view {view}: overall J = {evalcore.display(report.overall(view))} "
                   f"({sum(report.count(t, view) for t in report.tasks)} videos)")
    return report


@cli.command("eval")
@click.option("--config", "config_path", type=click.Path())
@click.option("--pred", "pred_root", type=click.Path(), help="Predicted episode tree root.")
@click.option("--gt", "gt_root", type=click.Path(), help="Ground-truth episode tree root.")
@click.option("--out", type=click.Path())
@click.option("--format", "fmt", type=click.Choice(["md", "csv"]))
@click.option("--bins", type=int, help="Also write a rollout-progress curve with N bins.")
@click.option("--views", type=int)
@click.option("--jobs", type=int)
def cmd_eval(config_path, pred_root, gt_root, out, fmt, bins, views, jobs):
    """Score predicted masks against ground truth; write scores, report and rankings."""
    cfg = _load_config(config_path)
    pred_root = pred_root or cfg.get("pred_root")
    gt_root = gt_root or cfg.get("gt_root")
    out = out or cfg.get("out")
    fmt = fmt or cfg.get("format", "md")
    bins = bins if bins is not None else cfg.get("bins")
    if not (pred_root and gt_root and out):
        raise InputError("eval needs --pred, --gt and --out (or the same keys in --config)")
    if bins is not None and bins < 1:
        raise InputError("--bins must be >= 1")
    gt_eps = {d.name: d for d in _episode_dirs(gt_root)}
    pred_base = Path(pred_root)
    if not pred_base.is_dir():
        raise InputError(f"prediction root not found: {pred_root}")
    pred_eps = {d.name for d in pred_base.iterdir() if d.is_dir()}
    missing = sorted(set(gt_eps) - pred_eps)
    extra = sorted(pred_eps - set(gt_eps))
    if missing or extra:
        lines = [f"missing predictions: {', '.join(missing)}"] if missing else []
        lines += [f"no ground truth for: {', '.join(extra)}"] if extra else []
        raise InputError("episode trees do not match; " + "; ".join(lines))
    items = [(str(gt_eps[e]), str(pred_base / e), views) for e in sorted(gt_eps)]
    try:
        results = _pool_map(_score_episode, items, _jobs(jobs if jobs is not None else cfg.get("jobs")))
    except (TrajkitError, FileNotFoundError, KeyError) as exc:
        raise InputError(str(exc)) from None
    scores = [s for r in results for s in r[0]]
    names = dict(TASK_NAMES)
    names.update({r[1]: r[2] for r in results if r[2]})
    _write_outputs(scores, Path(out), fmt, bins, names)


@cli.command("report")
@click.argument("scores_file", type=click.Path())
@click.option("--out", type=click.Path(), required=True)
@click.option("--format", "fmt", type=click.Choice(["md", "csv"]), default="md", show_default=True)
@click.option("--bins", type=int)
def cmd_report(scores_file, out, fmt, bins):
    """Rebuild report, rankings and progress curve from a JSON-lines score dump."""
    try:
        scores = evalcore.read_scores(scores_file)
    except FileNotFoundError:
        raise InputError(f"scores file not found: {scores_file}") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"malformed score dump: {exc}") from None
    if bins is not None and bins < 1:
        raise InputError("--bins must be >= 1")
    _write_outputs(scores, Path(out), fmt, bins, TASK_NAMES)


# --- latent-check ----------------------------------------------------------------


@cli.command("latent-check")
@click.option("--views", "V", type=int, default=2, show_default=True)
@click.option("--frames", "T", type=int, default=81, show_default=True)
@click.option("--inject-corruption", is_flag=True, hidden=True)
def cmd_latent_check(V, T, inject_corruption):
    """Round-trip labeled blocks through assemble / strip / flatten / unflatten."""
    if V < 0 or T < 0:
        raise InputError("--views and --frames must be >= 0")
    failures = latentgrid.round_trip_check(V, T, corrupt=inject_corruption)
    if failures:
        for f in failures:
            click.echo(f"FAIL: {f}")
        sys.exit(EXIT_CHECK)
    click.echo(f"PASS V={V} T={T} grid={V}x{T + 1} kept={V}x{T}")


def main():
    cli()


if __name__ == "__main__":
    main()
