import base64
import io
import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from trajkit.errors import InvalidParameter, NoObjectsFound, RemoteError
from trajkit.maskio import (
    HttpDescriptionClient,
    HttpSegmentationClient,
    MockDescriptionClient,
    MockSegmentationClient,
    ObjectDescription,
    content_hash,
    describe_objects,
    initial_frame_prior,
    load_mask,
    load_mask_sequence,
    save_mask,
    save_mask_sequence,
    segment_video,
)
from trajkit.synthscene import SceneDescriptionClient, SceneSegmentationClient, build_scene, default_template


@settings(max_examples=25, deadline=None)
@given(arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))))
def test_mask_round_trip(tmp_path_factory, m):
    p = tmp_path_factory.mktemp("m") / "mask.png"
    save_mask(m, p)
    back = load_mask(p)
    assert back.dtype == bool and np.array_equal(back, m)


def test_mask_file_is_0_255_grayscale(tmp_path):
    m = np.zeros((3, 4), bool)
    m[1, 2] = True
    save_mask(m, tmp_path / "m.png")
    with Image.open(tmp_path / "m.png") as img:
        assert img.mode == "L"
        assert set(np.unique(np.asarray(img))) == {0, 255}


def test_all_zero_image_is_empty(tmp_path):
    Image.fromarray(np.zeros((5, 6), np.uint8)).save(tmp_path / "z.png")
    assert not load_mask(tmp_path / "z.png").any()


def test_threshold_is_strictly_above_127(tmp_path):
    a = np.array([[0, 127, 128, 255]], np.uint8)
    Image.fromarray(a).save(tmp_path / "t.png")
    assert load_mask(tmp_path / "t.png").tolist() == [[False, False, True, True]]


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_mask(tmp_path / "missing.png")
    (tmp_path / "junk.png").write_bytes(b"not a png")
    with pytest.raises(InvalidParameter):
        load_mask(tmp_path / "junk.png")


def test_sequence_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    seq = rng.random((5, 7, 9)) > 0.5
    paths = save_mask_sequence(seq, tmp_path / "seq")
    assert [p.name for p in paths] == [f"frame_{i:05d}.png" for i in range(5)]
    assert np.array_equal(load_mask_sequence(tmp_path / "seq"), seq)


def rect(x0, y0, w, h, shape=(20, 30)):
    m = np.zeros(shape, bool)
    m[y0:y0 + h, x0:x0 + w] = True
    return m


def test_prior_of_single_sequence_is_frame_zero():
    seq = np.stack([rect(0, 0, 3, 3), rect(5, 5, 3, 3)])
    assert np.array_equal(initial_frame_prior(seq), rect(0, 0, 3, 3))


def test_prior_union_disjoint():
    a, b = rect(0, 0, 4, 3), rect(10, 10, 5, 2)
    u = initial_frame_prior([a], [b])
    assert u.sum() == a.sum() + b.sum()


def test_prior_union_overlapping():
    a, b = rect(0, 0, 6, 6), rect(3, 2, 6, 6)
    inter = int((a & b).sum())
    assert inter == 12
    assert initial_frame_prior([a], [b]).sum() == 36 + 36 - inter


def test_description_requires_text():
    with pytest.raises(InvalidParameter):
        ObjectDescription("  ", "o")


def test_mock_description_client_returns_fixture_verbatim():
    img = np.zeros((4, 4, 3), np.uint8)
    client = MockDescriptionClient()
    client.add(img, ["the green cup", "the small plate"])
    got = describe_objects(client, img)
    assert [d.text for d in got] == ["the green cup", "the small plate"]
    assert [d.object_id for d in got] == ["obj0", "obj1"]


def test_mock_description_unknown_image():
    with pytest.raises(NoObjectsFound):
        describe_objects(MockDescriptionClient(), np.ones((4, 4, 3), np.uint8))


def test_trays_are_excluded():
    img = np.zeros((2, 2, 3), np.uint8)
    client = MockDescriptionClient()
    client.add(img, ["the grey tray", "the bread"])
    assert [d.text for d in describe_objects(client, img)] == ["the bread"]
    client.add(img, ["a Tray"])
    with pytest.raises(NoObjectsFound):
        describe_objects(client, img)


def test_mock_description_from_dir(tmp_path):
    img = np.full((3, 3, 3), 7, np.uint8)
    (tmp_path / f"{content_hash(img)}.json").write_text(json.dumps(["the red block"]))
    client = MockDescriptionClient.from_dir(tmp_path)
    assert describe_objects(client, img)[0].text == "the red block"


def test_mock_segmentation_returns_fixtures():
    frames = [np.full((6, 8, 3), i, np.uint8) for i in range(3)]
    masks = [rect(i, 0, 2, 2, (6, 8)) for i in range(3)]
    client = MockSegmentationClient()
    client.add(frames, "the cup", masks)
    out = segment_video(client, frames, ObjectDescription("the cup", "obj0"))
    assert out.shape == (3, 6, 8) and all(np.array_equal(a, b) for a, b in zip(out, masks))
    one = MockSegmentationClient()
    one.add(frames[:1], "the cup", masks[:1])
    assert segment_video(one, frames[:1], ObjectDescription("the cup", "o")).shape == (1, 6, 8)


def test_mock_segmentation_from_dir(tmp_path):
    from trajkit.maskio import frames_hash
    frames = [np.zeros((6, 8, 3), np.uint8)] * 2
    d = tmp_path / frames_hash(frames) / "cup"
    save_mask_sequence([rect(0, 0, 2, 2, (6, 8)), rect(1, 1, 2, 2, (6, 8))], d)
    (d / "query.txt").write_text("the cup\n")
    client = MockSegmentationClient.from_dir(tmp_path)
    out = segment_video(client, frames, ObjectDescription("the cup", "o"))
    assert out[1, 1, 1] and not out[1, 0, 0]


def test_unknown_segmentation_fixture_raises_remote_error():
    with pytest.raises(RemoteError):
        segment_video(MockSegmentationClient(), [np.zeros((2, 2, 3), np.uint8)], ObjectDescription("x", "o"))


class Flaky:
    def segment(self, frames, query):
        return [np.ones((4, 5), bool), None, np.ones((3, 3), bool)]


def test_per_frame_failures_become_empty_masks(caplog):
    frames = [np.zeros((4, 5, 3), np.uint8)] * 4
    with caplog.at_level(logging.WARNING, logger="trajkit.maskio"):
        out = segment_video(Flaky(), frames, ObjectDescription("thing", "obj3"))
    assert out.shape == (4, 4, 5)
    assert out[0].all() and not out[1:].any()
    failed = [r for r in caplog.records if "obj3" in r.getMessage()]
    assert len(failed) == 3


def test_scene_clients_reproduce_rendered_masks():
    scene = build_scene(default_template("3", seed=1, T_total=9))
    descs = describe_objects(SceneDescriptionClient(scene.template), np.zeros((2, 2, 3), np.uint8))
    assert [d.text for d in descs] == ["the red block", "the blue plate"]
    frames = [np.zeros((288, 384, 3), np.uint8)] * 9
    client = SceneSegmentationClient(scene, 1)
    for d, obj in zip(descs, scene.template.objects):
        assert np.array_equal(segment_video(client, frames, d), scene.gt_masks[1][obj.object_id])


def _png(mask):
    buf = io.BytesIO()
    Image.fromarray(mask.astype(np.uint8) * 255).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


@pytest.fixture
def server():
    calls = []

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            calls.append((self.path, body, self.headers.get("Authorization")))
            if self.path == "/vlm":
                resp = {"descriptions": ["the bread", "the tray"]}
            else:
                resp = {"masks": [_png(rect(1, 1, 2, 2, (4, 5))) for _ in body["frames"]]}
            data = json.dumps(resp).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *a):
            pass

    httpd = HTTPServer(("127.0.0.1", 0), Handler)
    th = threading.Thread(target=httpd.serve_forever, daemon=True)
    th.start()
    yield f"http://127.0.0.1:{httpd.server_port}", calls
    httpd.shutdown()


def test_http_clients_speak_the_wire_format(server, monkeypatch):
    url, calls = server
    monkeypatch.setenv("MTV_VLM_URL", url + "/vlm")
    monkeypatch.setenv("MTV_RVOS_URL", url + "/rvos")
    monkeypatch.setenv("MTV_API_TOKEN", "secret")
    monkeypatch.delenv("MTV_VLM_PROMPT", raising=False)
    img = np.zeros((4, 5, 3), np.uint8)
    descs = describe_objects(HttpDescriptionClient.from_env(), img)
    assert [d.text for d in descs] == ["the bread"]
    masks = segment_video(HttpSegmentationClient.from_env(), [img, img], descs[0])
    assert masks.shape == (2, 4, 5) and masks[:, 1:3, 1:3].all() and masks.sum() == 8
    path, body, auth = calls[0]
    assert set(body) == {"image"} and auth == "Bearer secret"
    path, body, auth = calls[1]
    assert set(body) == {"frames", "query"} and body["query"] == "the bread" and len(body["frames"]) == 2


def test_description_prompt_is_optional(server):
    url, calls = server
    HttpDescriptionClient(url + "/vlm", prompt="List the objects on the table.").describe(np.zeros((4, 5, 3), np.uint8))
    assert calls[-1][1]["prompt"] == "List the objects on the table."


def test_http_retries_then_raises_remote_error():
    sleeps = []
    client = HttpSegmentationClient("http://127.0.0.1:9/nothing", sleep=sleeps.append)
    client.timeout = 0.5
    with pytest.raises(RemoteError) as exc:
        client.segment([np.zeros((2, 2, 3), np.uint8)], "x")
    assert exc.value.attempts == 3
    assert sleeps == [1.0, 2.0]


def test_missing_endpoint_env(monkeypatch):
    monkeypatch.delenv("MTV_VLM_URL", raising=False)
    with pytest.raises(InvalidParameter, match="MTV_VLM_URL"):
        HttpDescriptionClient.from_env()
