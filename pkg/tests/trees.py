"""Hand-built episode trees for evaluation tests."""
import json

import numpy as np

from published_tables import RANKED_MODELS
from trajkit.evalcore import FrameScore, VideoScore, write_scores
from trajkit.maskio import save_mask_sequence
from trajkit.synthscene import EpisodeManifest, perturb_masks


def rectangle_tree(gt_root, pred_root, dx, n_episodes=2, T=6, shape=(48, 64), w=20, h=10):
    """Solid w x h rectangles as ground truth and the same rectangles shifted by dx as predictions."""
    seq = np.zeros((T, *shape), bool)
    seq[:, 19:19 + h, 22:22 + w] = True
    for i in range(n_episodes):
        eid = f"rect{i:02d}"
        m = EpisodeManifest(eid, str(i + 1), f"rectangle {i}", True, T, "joints.json", {},
                            [{"object_id": "obj0", "label": "a rectangle"}],
                            [{"view": 1, "calib": "view1/calib.json", "gt_masks": "view1/gt_masks",
                              "traj": "view1/traj"}])
        (gt_root / eid).mkdir(parents=True)
        (gt_root / eid / "manifest.json").write_text(json.dumps(m.to_dict()))
        save_mask_sequence(seq, gt_root / eid / "view1" / "gt_masks" / "obj0")
        save_mask_sequence(perturb_masks(seq, dx, 0), pred_root / eid / "view1" / "pred_masks" / "obj0")


def published_scores(path, rows_by_view):
    """One single-frame video per (model, task, view) holding the published task value."""
    scores = []
    for view, rows in rows_by_view.items():
        for model in RANKED_MODELS:
            for t, j in enumerate(rows[model], start=1):
                scores.append(VideoScore(model, view, str(t), [FrameScore(0, j / 100)]))
    return write_scores(scores, path)
