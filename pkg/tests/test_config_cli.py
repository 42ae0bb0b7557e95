from __future__ import annotations

import json

import numpy as np
import pytest
import yaml

from mftrack.backend import FileProvider
from mftrack.cli import main, schedule_pairs
from mftrack.config import (
    DEFAULT_CONFIG,
    QuerySpec,
    TrackerConfig,
    config_from_dict,
    default_config_dict,
    load_config,
    tracker_from_dict,
)
from mftrack.core import ImageExtent
from mftrack.errors import ConfigError, UnknownBackend
from mftrack.formats import read_tracks, write_tracks
from mftrack.synth import SynthProvider, model_from_dict, scene_from_dict

SMALL_SCENE = {
    "extent": [16, 12],
    "frames": 8,
    "background": {"velocity": [0.5, 0.25]},
    "objects": [{"shape": "ellipse", "center": [4.0, 6.0], "size": [5.0, 4.0], "motion": {"velocity": [1.0, 0.0]}}],
}
SMALL_NOISE = {"noise_base": 0.05, "noise_slope": 0.05, "false_occlusion_rate": 0.02, "seed": 4}


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def scene_file(tmp_path):
    path = tmp_path / "scene.yaml"
    path.write_text(yaml.safe_dump(SMALL_SCENE))
    noise = tmp_path / "noise.yaml"
    noise.write_text(yaml.safe_dump(SMALL_NOISE))
    return path, noise


@pytest.fixture
def synth_dir(tmp_path, scene_file, capsys):
    scene, noise = scene_file
    out = tmp_path / "flows"
    code, _, _ = run(["synth", scene, "--out", out, "--degradation", noise, "--query-stride", 3], capsys)
    assert code == 0
    return out


def write_config(tmp_path, **tracker):
    cfg = {"tracker_a": {"backend": "raft-like", **tracker}, "queries": {"grid_stride": 3}}
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


class TestConfig:
    def test_default_text_holds_the_constants(self):
        d = default_config_dict()
        assert d["tracker_a"]["max_candidates"] == 5
        assert d["tracker_a"]["occlusion_threshold"] == 0.02
        assert d["tracker_a"]["low_certainty_variance"] == 1000.0
        assert d["evaluation"]["thresholds"] == [1, 2, 4, 8, 16]
        assert d["evaluation"]["extent"] == [256, 256]
        assert "0.95" in DEFAULT_CONFIG and "0.05" in DEFAULT_CONFIG

    def test_default_config_loads(self, tmp_path):
        (tmp_path / "flows").mkdir()
        cfg = config_from_dict(default_config_dict(), tmp_path)
        assert cfg.tracker_a.flows == tmp_path / "flows"
        assert cfg.eval_extent == ImageExtent(256, 256)

    @pytest.mark.parametrize("backend,theta", [("raft-like", 0.02), ("dkm-like", 0.95), ("oracle", 0.02)])
    def test_backend_thresholds(self, tmp_path, backend, theta):
        t = tracker_from_dict({"backend": backend, "flows": "x"}, tmp_path)
        assert t.occlusion_threshold == theta

    def test_dkm_adapter(self, tmp_path):
        t = tracker_from_dict({"backend": "dkm-like", "flows": "x"}, tmp_path)
        a = t.adapter_config()
        assert a.certainty_threshold == 0.05 and a.adapt_certainty

    def test_roma_needs_certainty_threshold(self, tmp_path):
        with pytest.raises(ConfigError):
            tracker_from_dict({"backend": "roma-like", "flows": "x"}, tmp_path)
        t = tracker_from_dict({"backend": "roma-like", "flows": "x", "certainty_threshold": 0.4}, tmp_path)
        assert t.adapter_config().certainty_threshold == 0.4

    @pytest.mark.parametrize("d", [
        {"tracker_a": {"flows": "x", "colour": 1}},
        {"tracker_a": {"flows": "x"}, "extra": 1},
        {"tracker_a": {"flows": "x", "scene": {"extent": [2, 2], "frames": 2}}},
        {"tracker_a": {}},
        {"tracker_a": {"flows": "x", "max_candidates": 0}},
        {"tracker_a": {"flows": "x", "strategy": "greedy"}},
        {"tracker_a": {"flows": "x", "degradation": {"noise_base": 1.0}}},
        {"tracker_a": {"flows": "x"}, "ensemble": "selective-b-position"},
        {"tracker_a": {"flows": "x"}, "ensemble": "vote"},
        {"tracker_a": {"flows": "x"}, "frames": 0},
        {"tracker_a": {"flows": "x"}, "evaluation": {"thresholds": [0, 1]}},
        {"tracker_a": {"flows": "x"}, "queries": {"grid_stride": 0}},
        {},
    ])
    def test_invalid(self, tmp_path, d):
        with pytest.raises(ConfigError):
            config_from_dict(d, tmp_path)

    def test_inline_scene_and_degradation(self, tmp_path):
        cfg = config_from_dict({"tracker_a": {"backend": "oracle", "scene": SMALL_SCENE, "degradation": SMALL_NOISE}})
        assert cfg.num_frames() == 8
        assert isinstance(cfg.tracker_a.build_provider(), SynthProvider)

    def test_frames_from_directory(self, synth_dir):
        t = TrackerConfig(flows=synth_dir)
        assert t.available_frames() == 8

    def test_query_file(self, tmp_path, synth_dir):
        q = QuerySpec(file=synth_dir / "gt.tracks").points(ImageExtent(16, 12))
        assert q.shape == (4 * 6, 2)

    def test_unknown_backend(self, tmp_path):
        with pytest.raises(UnknownBackend):
            config_from_dict({"tracker_a": {"flows": "x", "backend": "pwc"}}, tmp_path)
        with pytest.raises(UnknownBackend):
            TrackerConfig(backend="pwc", flows=tmp_path)

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("tracker_a: [unclosed")
        with pytest.raises(ConfigError):
            load_config(path)


class TestSynth:
    def test_writes_schedule_pairs_and_gt(self, synth_dir):
        names = sorted(p.name for p in synth_dir.iterdir())
        assert "gt.tracks" in names
        assert len([n for n in names if n.endswith(".mftflow")]) == len(schedule_pairs(8, 5))
        gt = read_tracks(synth_dir / "gt.tracks")
        assert gt.source is None and gt.extent == ImageExtent(16, 12)

    def test_schedule_pairs(self):
        pairs = schedule_pairs(6, 5)
        assert (1, 6) in pairs and (5, 6) in pairs and (2, 6) in pairs
        assert (3, 6) not in pairs

    @pytest.mark.parametrize("fmt", ["mftflow", "flo"])
    def test_interchange_closure(self, tmp_path, scene_file, capsys, fmt):
        scene, noise = scene_file
        out = tmp_path / fmt
        assert run(["synth", scene, "--out", out, "--degradation", noise, "--format", fmt, "--all-pairs"], capsys)[0] == 0
        oracle = SynthProvider(scene_from_dict(SMALL_SCENE), model_from_dict(dict(SMALL_NOISE)))
        files = FileProvider(out)
        for j in range(2, 9):
            for i in range(1, j):
                for a, b in zip(oracle.provide(i, j).planes(), files.provide(i, j).planes()):
                    assert a.dtype == b.dtype == np.float32
                    assert a.tobytes() == b.tobytes()


class TestPipeline:
    def test_synth_track_eval(self, tmp_path, synth_dir, capsys):
        cfg = write_config(tmp_path, flows=str(synth_dir))
        pred = tmp_path / "pred.tracks"
        assert run(["track", cfg, "--out", pred, "--strategy", "mft"], capsys)[0] == 0
        code, out, _ = run(["eval", pred, synth_dir / "gt.tracks", "--json"], capsys)
        assert code == 0
        report = json.loads(out)
        assert 0.0 <= report["delta_avg"] <= 1.0
        assert report["convention"].startswith("rescaled")
        code, out, _ = run(["eval", pred, synth_dir / "gt.tracks", "--eval-extent", "native"], capsys)
        assert "delta_avg=" in out and "convention=native" in out

    def test_track_is_byte_identical(self, tmp_path, synth_dir, capsys):
        cfg = write_config(tmp_path, flows=str(synth_dir))
        a, b = tmp_path / "a.tracks", tmp_path / "b.tracks"
        run(["track", cfg, "--out", a], capsys)
        run(["track", cfg, "--out", b], capsys)
        assert a.read_bytes() == b.read_bytes()

    def test_two_trackers(self, tmp_path, synth_dir, capsys):
        cfg = {
            "tracker_a": {"backend": "raft-like", "flows": str(synth_dir)},
            "tracker_b": {"backend": "oracle", "scene": SMALL_SCENE},
            "ensemble": "selective-b-position",
            "queries": {"grid_stride": 4},
        }
        path = tmp_path / "pair.yaml"
        path.write_text(yaml.safe_dump(cfg))
        out = tmp_path / "pair.tracks"
        assert run(["track", path, "--out", out], capsys)[0] == 0
        t = read_tracks(out)
        assert set(np.unique(t.source)) <= {"a", "b"}
        a_only = tmp_path / "a.tracks"
        run(["track", path, "--out", a_only, "--ensemble", "a-only"], capsys)
        assert np.array_equal(read_tracks(a_only).visible, t.visible)

    def test_dump_states(self, tmp_path, synth_dir, capsys):
        cfg = write_config(tmp_path, flows=str(synth_dir))
        dump = tmp_path / "states"
        run(["track", cfg, "--out", tmp_path / "t.tracks", "--frames", 3, "--dump-states", dump], capsys)
        files = sorted(p.name for p in dump.iterdir())
        assert files == ["state_a_00001.npz", "state_a_00002.npz", "state_a_00003.npz"]
        with np.load(dump / files[0]) as z:
            assert z["x"].shape == (12, 16)

    def test_compare(self, tmp_path, capsys):
        cfg = {"tracker_a": {"backend": "oracle", "scene": SMALL_SCENE, "degradation": SMALL_NOISE},
               "queries": {"grid_stride": 2}}
        path = tmp_path / "cmp.yaml"
        path.write_text(yaml.safe_dump(cfg))
        code, out, _ = run(["compare", path, "--out", tmp_path / "reports"], capsys)
        assert code == 0
        rows = out.splitlines()
        assert rows[0].split() == ["strategy", "delta_avg", "AJ", "OA"]
        assert [r.split()[0] for r in rows[1:]] == ["direct", "chain", "mft"]
        assert (tmp_path / "reports" / "report_mft.txt").exists()
        assert (tmp_path / "reports" / "summary.txt").read_text() == out

    def test_viz(self, tmp_path, synth_dir, capsys):
        out = tmp_path / "viz"
        code, _, _ = run(["viz", synth_dir / "gt.tracks", "--out", out, "--frames", "1,8", "--scale", 2], capsys)
        assert code == 0
        from PIL import Image

        img = Image.open(out / "frame_00008.png")
        assert img.size == (32, 24)

    def test_config_command(self, tmp_path, capsys):
        code, out, _ = run(["config"], capsys)
        assert code == 0 and out == DEFAULT_CONFIG
        run(["config", "--out", tmp_path / "c.yaml"], capsys)
        assert (tmp_path / "c.yaml").read_text() == DEFAULT_CONFIG


class TestErrors:
    def test_mismatched_point_ids(self, tmp_path, synth_dir, capsys):
        gt = read_tracks(synth_dir / "gt.tracks")
        gt.point_ids = gt.point_ids + 100
        other = tmp_path / "other.tracks"
        write_tracks(gt, other, gt=True)
        code, _, err = run(["eval", other, synth_dir / "gt.tracks"], capsys)
        assert code == 1
        assert err.startswith("error: ShapeMismatch: ")
        assert err.count("\n") == 1

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(["eval", tmp_path / "nope.tracks", tmp_path / "gt.tracks"], capsys)
        assert code == 1 and err.startswith("error: MissingFile: ")

    def test_malformed_config(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text("tracker_a: {flows: x, colour: red}\n")
        code, _, err = run(["track", path, "--out", tmp_path / "t"], capsys)
        assert code == 1 and err.startswith("error: ConfigError: ")

    def test_bad_track_file(self, tmp_path, capsys):
        path = tmp_path / "junk.tracks"
        path.write_text("hello\n")
        code, _, err = run(["eval", path, path], capsys)
        assert code == 1 and err.startswith("error: BadMagic: ")

    def test_compare_without_gt(self, tmp_path, synth_dir, capsys):
        cfg = write_config(tmp_path, flows=str(synth_dir))
        code, _, err = run(["compare", cfg], capsys)
        assert code == 1 and err.startswith("error: MissingGT: ")

    def test_missing_pair(self, tmp_path, synth_dir, capsys):
        (synth_dir / "flow_00001_00005.mftflow").unlink()
        cfg = write_config(tmp_path, flows=str(synth_dir))
        code, _, err = run(["track", cfg, "--out", tmp_path / "t"], capsys)
        assert code == 1 and err.startswith("error: MissingPair: ")

    def test_usage_errors_exit_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["eval"])
        assert exc.value.code == 2
