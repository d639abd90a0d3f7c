import json

import numpy as np
import pytest

from trajkit.camera import PixelPoint
from trajkit.errors import DimensionMismatch, InvalidParameter
from trajkit.trajvideo import (
    PixelTrack,
    TrajVideoSpec,
    composite_mask_prior,
    duplicate_mask,
    glow_kernel,
    load_view_video,
    render_trail_frame,
    synth_trajectory_video,
    write_view_video,
)

GREEN = 1


def small_spec(**kw):
    d = dict(width=64, height=48, frame_count=8, trail_length=4, point_radius=6)
    d.update(kw)
    return TrajVideoSpec(**d)


def vis(u, v):
    return PixelPoint(float(u), float(v), True)


def test_defaults():
    s = TrajVideoSpec()
    assert (s.width, s.height, s.trail_length, s.point_radius) == (384, 288, 12, 6)
    assert s.decay[0] == 1.0 and s.decay[6] == 0.5
    assert s.arm_colors == {"left": (0, 255, 0), "right": (255, 0, 0)}
    assert s.mask_color == (0, 0, 255)


@pytest.mark.parametrize("kw", [
    {"trail_length": 0}, {"point_radius": 0.5}, {"decay": (0.9, 0.5, 0.2, 0.1)},
    {"decay": (1.0, 0.5, 0.7, 0.1)}, {"decay": (1.0, 0.5)}, {"decay": (1.0, 1.2, 0.5, 0.1)},
])
def test_spec_rejects_bad_parameters(kw):
    with pytest.raises(InvalidParameter):
        small_spec(**kw)


def test_glow_kernel_values():
    assert glow_kernel(0, 6) == 1.0
    assert glow_kernel(6, 6) == 0.0
    assert glow_kernel(3, 6) == 0.5
    assert glow_kernel(9, 6) == 0.0
    with pytest.raises(InvalidParameter):
        glow_kernel(1, 0.5)


def test_no_tracks_is_black():
    f = render_trail_frame([], 0, small_spec())
    assert f.shape == (48, 64, 3) and f.dtype == np.uint8 and not f.any()


def test_single_point_peak_and_falloff():
    spec = small_spec(trail_length=1, width=41, height=41, frame_count=1)
    f = render_trail_frame([PixelTrack([vis(20.4, 19.6)])], 0, spec)
    g = f[:, :, GREEN].astype(int)
    assert np.unravel_index(np.argmax(g), g.shape) == (20, 20)
    assert g[20, 20] == 255
    row = g[20, 20:20 + 7]
    assert all(a > b for a, b in zip(row, row[1:]))
    assert row[6] == 0
    assert not f[:, :, 0].any() and not f[:, :, 2].any()


def test_half_up_rounding_of_centers():
    spec = small_spec(trail_length=1, frame_count=1)
    f = render_trail_frame([PixelTrack([vis(10.5, 7.5)])], 0, spec)
    assert f[8, 11, GREEN] == 255


def test_fading_trail_peaks_follow_linear_decay():
    spec = small_spec(width=120, height=30, frame_count=4)
    centers = [(10, 15), (40, 15), (70, 15), (100, 15)]
    track = PixelTrack([vis(*c) for c in centers])
    f = render_trail_frame([track], 3, spec)
    peaks = [int(f[v, u, GREEN]) for u, v in centers]
    # newest point is age 0 -> weight 1; the first point is age 3 -> 0.25
    expected = [255 * w for w in (0.25, 0.5, 0.75, 1.0)]
    assert all(abs(p - e) <= 1 for p, e in zip(peaks, expected))
    assert peaks == [64, 128, 191, 255]
    assert render_trail_frame([track], 3, spec).tobytes() == f.tobytes()


def test_trail_is_causal():
    spec = small_spec(frame_count=6)
    pts = [vis(5 + 8 * i, 20) for i in range(6)]
    a = render_trail_frame([PixelTrack(pts)], 2, spec)
    moved = pts[:3] + [vis(60, 40)] * 3
    b = render_trail_frame([PixelTrack(moved)], 2, spec)
    assert a.tobytes() == b.tobytes()


def test_trail_drops_points_older_than_k():
    spec = small_spec(frame_count=6)
    pts = [vis(5 + 10 * i, 20) for i in range(6)]
    f = render_trail_frame([PixelTrack(pts)], 5, spec)
    assert f[20, 5, GREEN] == 0 and f[20, 15, GREEN] == 0 and f[20, 25, GREEN] > 0


def test_static_point_fade_matches_decay():
    spec = small_spec(trail_length=4, decay=(1.0, 0.6, 0.3, 0.1), frame_count=8)
    # a point that is visible only at frame 0 then leaves the view
    pts = [vis(30, 20)] + [PixelPoint(-1, -1, False)] * 7
    vals = [int(render_trail_frame([PixelTrack(pts)], t, spec)[20, 30, GREEN]) for t in range(5)]
    assert vals == [255, 153, 77, 26, 0]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_invisible_points_contribute_nothing():
    spec = small_spec()
    pts = [PixelPoint(30.0, 20.0, False)] * 8
    assert not render_trail_frame([PixelTrack(pts)], 7, spec).any()


def test_overlapping_trails_add_and_clamp():
    spec = small_spec(trail_length=2, frame_count=2)
    f = render_trail_frame([PixelTrack([vis(30, 20), vis(30, 20)])], 1, spec)
    assert f[20, 30, GREEN] == 255
    # 1.0 + 0.5 at the center, 0.75 * 1.5 * 255 one third of the way out
    assert f[20, 32, GREEN] == 255
    assert f[20, 34, GREEN] == round(1.5 * (1 - 4 / 6) * 255)


def test_two_arms_use_their_own_channels():
    spec = small_spec(trail_length=1, frame_count=1)
    f = render_trail_frame([PixelTrack([vis(10, 10)], "left"), PixelTrack([vis(50, 30)], "right")], 0, spec)
    assert tuple(f[10, 10]) == (0, 255, 0) and tuple(f[30, 50]) == (255, 0, 0)


def test_unknown_arm_color():
    with pytest.raises(InvalidParameter):
        render_trail_frame([PixelTrack([vis(1, 1)], "third")], 0, small_spec(frame_count=1))


def test_frame_index_out_of_range():
    with pytest.raises(InvalidParameter):
        render_trail_frame([], 8, small_spec())


def test_mask_prior_empty_mask_is_noop():
    spec = small_spec()
    frame = np.random.default_rng(0).integers(0, 256, (48, 64, 3), dtype=np.uint8)
    out = composite_mask_prior(frame, np.zeros((48, 64), bool), spec)
    assert out.tobytes() == frame.tobytes()


def test_mask_prior_full_mask_is_half_blue():
    spec = small_spec()
    out = composite_mask_prior(np.zeros((48, 64, 3), np.uint8), np.ones((48, 64), bool), spec)
    assert (out == np.array([0, 0, 128], np.uint8)).all()


def test_mask_prior_under_trail():
    spec = small_spec(trail_length=1, frame_count=1)
    mask = np.zeros((48, 64), bool)
    mask[10:30, 20:50] = True
    base = composite_mask_prior(np.zeros((48, 64, 3), np.uint8), mask, spec)
    f = render_trail_frame([PixelTrack([vis(30, 20)])], 0, spec, base=base)
    assert tuple(f[20, 30]) == (0, 255, 128)
    # three pixels out the splat is 0.5 * 255 = 127.5 -> 128 green, blue untouched
    assert tuple(f[20, 33]) == (0, 128, 128)
    assert tuple(f[5, 5]) == (0, 0, 0)


def test_mask_prior_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        composite_mask_prior(np.zeros((48, 64, 3), np.uint8), np.zeros((10, 10), bool), small_spec())


def test_duplicate_mask():
    m = np.zeros((5, 7), bool)
    m[1:3, 2:6] = True
    assert duplicate_mask(m, 1).shape == (1, 5, 7)
    seq = duplicate_mask(m, 81)
    assert seq.shape == (81, 5, 7) and all(np.array_equal(s, m) for s in seq)
    with pytest.raises(InvalidParameter):
        duplicate_mask(m, 0)


def test_synth_single_black_frame():
    spec = small_spec(frame_count=1)
    (video,) = synth_trajectory_video([[]], [np.zeros((48, 64), bool)], spec)
    assert video.shape == (1, 48, 64, 3) and not video.any()


def test_synth_two_identical_views_are_identical():
    spec = TrajVideoSpec(frame_count=81)
    pts = [vis(100 + i, 120 + 0.5 * i) for i in range(81)]
    mask = np.zeros((288, 384), bool)
    mask[100:140, 50:90] = True
    tracks = [PixelTrack(pts, "left"), PixelTrack(pts[::-1], "right")]
    videos = synth_trajectory_video([tracks, tracks], [mask, mask], spec)
    assert len(videos) == 2
    assert videos[0].shape == (81, 288, 384, 3)
    assert videos[0].tobytes() == videos[1].tobytes()


def test_synth_rejects_short_track_naming_view():
    spec = small_spec()
    good = PixelTrack([vis(1, 1)] * 8)
    bad = PixelTrack([vis(1, 1)] * 5)
    with pytest.raises(DimensionMismatch, match="view 1"):
        synth_trajectory_video([[good], [bad]], [None, None], spec)


def test_written_video_layout(tmp_path):
    spec = small_spec(frame_count=3)
    frames = synth_trajectory_video([[PixelTrack([vis(5, 5), vis(9, 9), vis(13, 13)])]], [None], spec)[0]
    d = write_view_video(frames, tmp_path / "view1" / "traj", 1, spec)
    names = sorted(p.name for p in d.iterdir())
    assert names == ["frame_00000.png", "frame_00001.png", "frame_00002.png", "video.json"]
    side = json.loads((d / "video.json").read_text())
    assert side["view"] == 1 and side["frames"] == 3 and side["width"] == 64 and side["height"] == 48
    assert side["spec"]["trail_length"] == 4
    _, back = load_view_video(d)
    assert back.tobytes() == frames.tobytes()
