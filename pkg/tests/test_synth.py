from __future__ import annotations

import math

import numpy as np
import pytest

from mftrack.core import ImageExtent, Point
from mftrack.errors import ConfigError, InvalidFrames, OutOfBounds
from mftrack.rng import PairStream, box_muller, hash_uniform, splitmix64
from mftrack.synth import (
    ACCEPTANCE_SEEDS,
    DegradationModel,
    SynthProvider,
    acceptance_model,
    acceptance_scene,
    degraded_flow,
    grid_queries,
    gt_flow,
    gt_tracks,
    model_from_dict,
    motion_matrices,
    patch_difficulty,
    scene_from_dict,
    transfer,
)
from oracles import hash_uniform_ref, pair_uniforms, philox4x64_10, splitmix64_ref


def translating(w=8, h=8, n=4, velocity=(2.0, 0.0), objects=()):
    return scene_from_dict({"extent": [w, h], "frames": n, "background": {"velocity": list(velocity)},
                            "objects": list(objects)})


# a 5x4 rectangle sliding right over a static background: centres x = 2, 4, 6, ... per frame
SLIDER = {"shape": "rectangle", "center": [2.0, 5.0], "size": [5.0, 4.0], "motion": {"velocity": [2.0, 0.0]}}


class TestGeneratorsArePortable:
    def test_philox_known_answer(self):
        assert philox4x64_10((0, 0, 0, 0), (0, 0)) == (
            0x16554D9ECA36314C, 0xDB20FE9D672D0FDC, 0xD7E772CEE186176B, 0x7E68B68AEC7BA23B)

    @pytest.mark.parametrize("seed,i,j", [(0, 1, 2), (7, 3, 9), (2**40 + 5, 12, 48)])
    def test_pair_stream_matches_reference(self, seed, i, j):
        assert PairStream(seed, i, j).uniform(11).tolist() == pair_uniforms(seed, i, j, 11)

    def test_splitmix_known_answer(self):
        assert int(splitmix64(0)) == 0xE220A8397B1DCDAF == splitmix64_ref(0)

    @pytest.mark.parametrize("values", [(0,), (-1, 2, 3), (5, -7, 1 << 40)])
    def test_hash_matches_reference(self, values):
        assert float(hash_uniform(9, *values)[0]) == hash_uniform_ref(9, *values)

    def test_hash_broadcasts(self):
        out = hash_uniform(1, np.array([0, 1, 2]), 4)
        assert out.tolist() == [hash_uniform_ref(1, k, 4) for k in range(3)]

    def test_box_muller(self):
        u1 = np.array([0.0, 0.5, 0.9])
        u2 = np.array([0.25, 0.0, 0.5])
        z0, z1, tail = box_muller(u1, u2)
        for k in range(3):
            r = math.sqrt(-2 * math.log(1 - u1[k]))
            assert z0[k] == pytest.approx(r * math.cos(2 * math.pi * u2[k]), abs=1e-12)
            assert z1[k] == pytest.approx(r * math.sin(2 * math.pi * u2[k]), abs=1e-12)
        assert tail.tolist() == [1.0, 0.5, 1.0 - 0.9]

    def test_streams_are_independent_of_generation_order(self):
        a = PairStream(4, 2, 5).uniform(6)
        PairStream(4, 1, 5).uniform(100)
        assert np.array_equal(a, PairStream(4, 2, 5).uniform(6))


class TestGtFlow:
    def test_static_scene(self):
        scene = translating(velocity=(0.0, 0.0))
        b = gt_flow(scene, 1, 4)
        assert not b.flow.u.any() and not b.flow.v.any() and not b.occlusion.values.any()

    def test_translation_composes(self):
        b = gt_flow(translating(w=16, velocity=(2.0, 0.0)), 1, 4)
        assert np.all(b.flow.u == 6.0) and np.all(b.flow.v == 0.0)

    def test_translation_out_of_bounds_is_occluded(self):
        b = gt_flow(translating(w=16, velocity=(2.0, 0.0)), 1, 4)
        assert b.occlusion.values[:, 10:].all() and not b.occlusion.values[:, :10].any()

    def test_nearer_object_occludes(self):
        scene = translating(w=20, h=10, n=8, velocity=(0.0, 0.0), objects=[SLIDER])
        b = gt_flow(scene, 1, 3)
        assert b.occlusion.values[5, 6] == 1.0
        assert b.flow.u[5, 6] == 0.0
        assert b.occlusion.values[0, 6] == 0.0

    def test_object_pixels_move_with_the_object(self):
        scene = translating(w=20, h=10, n=8, velocity=(0.0, 0.0), objects=[SLIDER])
        b = gt_flow(scene, 1, 3)
        assert b.flow.u[5, 2] == 4.0 and b.occlusion.values[5, 2] == 0.0

    def test_zero_variance(self):
        assert not gt_flow(acceptance_scene(), 1, 2).variance.values.any()

    @pytest.mark.parametrize("i,j", [(0, 2), (3, 3), (2, 9)])
    def test_invalid_frames(self, i, j):
        with pytest.raises(InvalidFrames):
            gt_flow(translating(n=4), i, j)

    def test_composition(self):
        scene = acceptance_scene()
        xs, ys = np.meshgrid(np.arange(64.0), np.arange(64.0))
        i, m, j = 3, 11, 30
        mx, my, occ_im, _ = transfer(scene, xs, ys, i, m)
        jx, jy, occ_mj, _ = transfer(scene, mx, my, m, j)
        dx, dy, _, _ = transfer(scene, xs, ys, i, j)
        ok = ~occ_im & ~occ_mj
        assert ok.sum() > 1000
        assert np.max(np.abs(jx - dx)[ok]) < 1e-9
        assert np.max(np.abs(jy - dy)[ok]) < 1e-9


class TestDegradedFlow:
    def test_degenerate_model_is_exact(self):
        scene = acceptance_scene()
        exact, noisy = gt_flow(scene, 2, 9), degraded_flow(scene, 2, 9, DegradationModel(seed=3))
        for a, b in zip(exact.planes(), noisy.planes()):
            assert np.array_equal(a, b)

    def test_noise_scale_grows_with_gap(self):
        m = DegradationModel(noise_base=0.0, noise_slope=0.5)
        assert m.noise_scale(1, 9) == 4.0
        assert m.noise_scale(8, 9) == 0.5

    def test_missed_rate_one_clears_occlusion(self):
        scene = acceptance_scene()
        out = degraded_flow(scene, 1, 40, DegradationModel(missed_occlusion_rate=1.0))
        assert gt_flow(scene, 1, 40).occlusion.values.any()
        assert not out.occlusion.values.any()

    def test_false_rate_one_flags_everything(self):
        out = degraded_flow(acceptance_scene(), 1, 2, DegradationModel(false_occlusion_rate=1.0))
        assert out.occlusion.values.all()

    def test_reproducible_and_seed_dependent(self):
        scene = acceptance_scene()
        a = degraded_flow(scene, 1, 5, acceptance_model(0))
        b = degraded_flow(scene, 1, 5, acceptance_model(0))
        c = degraded_flow(scene, 1, 5, acceptance_model(1))
        for x, y in zip(a.planes(), b.planes()):
            assert x.tobytes() == y.tobytes()
        assert not np.array_equal(a.flow.u, c.flow.u)

    def test_noise_matches_documented_draws(self):
        scene = translating(w=5, h=3, n=3, velocity=(0.0, 0.0))
        model = DegradationModel(noise_base=0.5, noise_slope=0.25, seed=11)
        out = degraded_flow(scene, 1, 3, model)
        u = pair_uniforms(11, 1, 3, 30)
        u1, u2 = np.array(u[:15]), np.array(u[15:])
        r = np.sqrt(-2 * np.log(1 - u1))
        sigma = 0.5 + 0.25 * 2
        assert np.allclose(out.flow.u.ravel(), sigma * r * np.cos(2 * np.pi * u2), atol=1e-12, rtol=0)
        assert np.allclose(out.flow.v.ravel(), sigma * r * np.sin(2 * np.pi * u2), atol=1e-12, rtol=0)

    def test_noise_statistics(self):
        scene = translating(w=64, h=64, n=5, velocity=(0.5, 0.25))
        out = degraded_flow(scene, 1, 5, DegradationModel(noise_base=0.1, noise_slope=0.2, seed=2))
        err = out.flow.u - gt_flow(scene, 1, 5).flow.u
        assert abs(err.mean()) < 0.05
        assert err.std() == pytest.approx(0.9, rel=0.05)

    def test_variance_reports(self):
        scene = translating(n=3)
        honest = degraded_flow(scene, 1, 3, DegradationModel(noise_base=0.5, noise_slope=0.25))
        assert np.all(honest.variance.values == 1.0)
        mis = DegradationModel(noise_base=0.5, variance_report="miscalibrated", reported_variance=7.0)
        assert np.all(degraded_flow(scene, 1, 3, mis).variance.values == 7.0)

    @pytest.mark.parametrize("coherence", [0.0, 0.9])
    def test_false_flag_rate_is_kept(self, coherence):
        scene = translating(w=64, h=64, n=3, velocity=(0.0, 0.0))
        model = DegradationModel(false_occlusion_rate=0.2, difficulty_coherence=coherence, difficulty_cell=4.0)
        rates = [degraded_flow(scene, 1, j, model).occlusion.values.mean() for j in (2, 3)]
        assert np.mean(rates) == pytest.approx(0.2, abs=0.03)

    def test_coherent_flags_repeat_across_pairs(self):
        scene = translating(w=64, h=64, n=6, velocity=(0.0, 0.0))
        model = DegradationModel(false_occlusion_rate=0.2, difficulty_coherence=1.0, difficulty_cell=8.0)
        a = degraded_flow(scene, 1, 3, model).occlusion.values
        b = degraded_flow(scene, 2, 6, model).occlusion.values
        assert np.array_equal(a, b)
        independent = DegradationModel(false_occlusion_rate=0.2)
        c = degraded_flow(scene, 1, 3, independent).occlusion.values
        d = degraded_flow(scene, 2, 6, independent).occlusion.values
        assert (c == d).mean() < 0.8

    def test_patch_difficulty_follows_the_surface(self):
        scene = translating(w=32, h=16, n=5, velocity=(4.0, 0.0))
        model = DegradationModel(difficulty_cell=8.0)
        d1 = patch_difficulty(scene, 1, model)
        d3 = patch_difficulty(scene, 3, model)
        for r in (0, 8):
            for c in range(0, 32, 8):
                assert len(np.unique(d1[r:r + 8, c:c + 8])) == 1
        # two frames later the surface has moved 8 px right, and its difficulty with it
        assert np.array_equal(d3[:, 8:16], d1[:, :8])

    @pytest.mark.parametrize("kwargs", [
        {"noise_base": -1.0},
        {"noise_slope": -0.1},
        {"variance_report": "optimistic"},
        {"false_occlusion_rate": 1.5},
        {"missed_occlusion_rate": -0.5},
        {"difficulty_coherence": 2.0},
        {"difficulty_cell": 0.0},
    ])
    def test_invalid_models(self, kwargs):
        with pytest.raises(ConfigError):
            DegradationModel(**kwargs)

    def test_unknown_model_key(self):
        with pytest.raises(ConfigError):
            model_from_dict({"noise": 1.0})


class TestGtTracks:
    def test_static_scene(self):
        t = gt_tracks(translating(n=5, velocity=(0.0, 0.0)), [Point(3.0, 2.0)])
        assert (t.positions[0] == [3.0, 2.0]).all() and t.visible.all()

    def test_translation(self):
        t = gt_tracks(translating(n=3, velocity=(1.0, 0.0)), [Point(0.0, 0.0)])
        assert t.positions[0].tolist() == [[0, 0], [1, 0], [2, 0]]

    def test_occluded_frames(self):
        scene = translating(w=20, h=10, n=8, velocity=(0.0, 0.0), objects=[SLIDER])
        t = gt_tracks(scene, np.array([[10.0, 5.0]]))
        assert np.flatnonzero(~t.visible[0]).tolist() == [3, 4, 5]

    def test_query_outside(self):
        with pytest.raises(OutOfBounds):
            gt_tracks(translating(), [Point(8.0, 0.0)])

    def test_visibility_matches_gt_flow(self):
        scene = acceptance_scene()
        q = grid_queries(scene.extent, 7, 1)
        t = gt_tracks(scene, q)
        for j in (2, 17, 48):
            occ = gt_flow(scene, 1, j).occlusion.values
            expected = occ[q[:, 1].astype(int), q[:, 0].astype(int)] == 0
            assert np.array_equal(t.visible[:, j - 1], expected)

    def test_extent_recorded(self):
        assert gt_tracks(translating(w=6, h=4), [Point(0, 0)]).extent == ImageExtent(6, 4)


class TestScenes:
    def test_grid_queries(self):
        q = grid_queries(ImageExtent(5, 5), 2, 1)
        assert q.tolist() == [[1, 1], [3, 1], [1, 3], [3, 3]]

    def test_motion_matrices_rotate_about_center(self):
        m = motion_matrices(3, rotation=math.pi / 2, center=(1.0, 1.0))
        assert np.allclose(m[1] @ np.array([1.0, 1.0, 1.0]), [1.0, 1.0])
        assert np.allclose(m[1] @ np.array([2.0, 1.0, 1.0]), [1.0, 2.0])

    def test_explicit_matrices(self):
        mats = [[[1, 0, 0], [0, 1, 0]], [[1, 0, 1.5], [0, 1, 0]]]
        scene = scene_from_dict({"extent": [4, 4], "frames": 2, "background": {"matrices": mats}})
        assert np.all(gt_flow(scene, 1, 2).flow.u == 1.5)

    @pytest.mark.parametrize("d", [
        {"frames": 3},
        {"extent": [4, 4], "frames": 0},
        {"extent": [4, 4], "frames": 2, "background": {"scale": 0.0}},
        {"extent": [4, 4], "frames": 2, "objects": [{"shape": "star", "center": [1, 1], "size": [1, 1]}]},
        {"extent": [4, 4], "frames": 2, "objects": [{"center": [1, 1], "size": [0, 1]}]},
        {"extent": [4, 4], "frames": 2, "objects": [{"size": [1, 1]}]},
        {"extent": [4, 4], "frames": 2, "background": {"matrices": [[[1, 0, 0], [0, 1, 0]]]}},
    ])
    def test_invalid_scenes(self, d):
        with pytest.raises(ConfigError):
            scene_from_dict(d)

    def test_acceptance_fixture(self):
        scene = acceptance_scene()
        assert scene.extent == ImageExtent(64, 64) and scene.num_frames == 48
        assert len(scene.objects) == 2
        m = acceptance_model(4)
        assert (m.noise_base, m.noise_slope, m.seed) == (0.1, 0.15, 4)
        assert m.false_occlusion_rate == m.missed_occlusion_rate == 0.05
        assert m.variance_report == "honest"
        assert len(ACCEPTANCE_SEEDS) == 3

    def test_provider_is_float32(self):
        b = SynthProvider(acceptance_scene(), acceptance_model(0)).provide(1, 2)
        assert all(p.dtype == np.float32 for p in b.planes())
