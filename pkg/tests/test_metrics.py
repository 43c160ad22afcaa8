import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egostereo.errors import ConfigurationError, ShapeError, UndefinedMetricError
from egostereo.metrics import (
    UNCATEGORIZED,
    aggregate_by_category,
    auc,
    auc_thresholds,
    mpe,
    mpjpe,
    pa_mpjpe,
    pck,
    per_frame_metrics,
)
from egostereo.skeleton import FOOT_JOINTS, FrameTag, Pose3D


def horn_align(x, y):
    """Independent similarity alignment via Horn's unit-quaternion method."""
    mx, my = x.mean(0), y.mean(0)
    xc, yc = x - mx, y - my
    s = xc.T @ yc
    n = np.array(
        [
            [s[0, 0] + s[1, 1] + s[2, 2], s[1, 2] - s[2, 1], s[2, 0] - s[0, 2], s[0, 1] - s[1, 0]],
            [s[1, 2] - s[2, 1], s[0, 0] - s[1, 1] - s[2, 2], s[0, 1] + s[1, 0], s[2, 0] + s[0, 2]],
            [s[2, 0] - s[0, 2], s[0, 1] + s[1, 0], -s[0, 0] + s[1, 1] - s[2, 2], s[1, 2] + s[2, 1]],
            [s[0, 1] - s[1, 0], s[2, 0] + s[0, 2], s[1, 2] + s[2, 1], -s[0, 0] - s[1, 1] + s[2, 2]],
        ]
    )
    w, v = np.linalg.eigh(n)
    q0, qx, qy, qz = v[:, -1]
    r = np.array(
        [
            [q0**2 + qx**2 - qy**2 - qz**2, 2 * (qx * qy - q0 * qz), 2 * (qx * qz + q0 * qy)],
            [2 * (qy * qx + q0 * qz), q0**2 - qx**2 + qy**2 - qz**2, 2 * (qy * qz - q0 * qx)],
            [2 * (qz * qx - q0 * qy), 2 * (qz * qy + q0 * qx), q0**2 - qx**2 - qy**2 + qz**2],
        ]
    )
    rx = xc @ r.T
    scale = (yc * rx).sum() / (xc * xc).sum()
    return scale * rx + my


def random_similarity(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    r = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
    return rng.uniform(0.5, 2.0), r, rng.normal(size=3)


class TestMPJPE:
    def test_zero_for_equal(self):
        g = np.random.default_rng(0).normal(size=(4, 16, 3))
        assert mpjpe(g, g) == 0.0

    def test_uniform_offset(self):
        g = np.random.default_rng(1).normal(size=(3, 16, 3))
        assert mpjpe(g + [0.003, 0.0, 0.004], g) == pytest.approx(5.0, abs=1e-9)

    def test_mean_of_frames(self):
        g = np.zeros((2, 16, 3))
        p = g.copy()
        p[0, :, 0] = 0.010
        p[1, :, 0] = 0.020
        assert mpjpe(p, g) == pytest.approx(15.0, abs=1e-12)

    def test_accepts_pose_objects(self):
        g = [Pose3D(np.zeros((16, 3)), FrameTag.DEVICE)]
        p = [Pose3D(np.full((16, 3), 0.001), FrameTag.DEVICE)]
        assert mpjpe(p, g) == pytest.approx(np.sqrt(3), abs=1e-12)

    def test_empty_and_mismatch(self):
        with pytest.raises(UndefinedMetricError):
            mpjpe([], [])
        with pytest.raises(ShapeError):
            mpjpe(np.zeros((2, 16, 3)), np.zeros((3, 16, 3)))

    @given(seed=st.integers(0, 100_000))
    @settings(max_examples=60, deadline=None)
    def test_metric_axioms(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (rng.normal(size=(1, 16, 3)) for _ in range(3))
        assert mpjpe(a, b) == pytest.approx(mpjpe(b, a), abs=1e-12)
        assert mpjpe(a, b) > 0
        assert mpjpe(a, c) <= mpjpe(a, b) + mpjpe(b, c) + 1e-9


class TestPAMPJPE:
    def test_zero_for_similarity_copies(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            g = rng.normal(size=(16, 3)) * 0.3
            s, r, t = random_similarity(rng)
            assert pa_mpjpe([s * g @ r.T + t], [g]) < 1e-9

    def test_matches_horn_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            g = rng.normal(size=(16, 3)) * 0.3
            p = g + rng.normal(size=(16, 3)) * 0.01
            oracle = np.linalg.norm(horn_align(p, g) - g, axis=1).mean() * 1000
            assert pa_mpjpe([p], [g]) == pytest.approx(oracle, abs=1e-6)

    @given(seed=st.integers(0, 100_000))
    @settings(max_examples=60, deadline=None)
    def test_not_above_mpjpe_and_rigid_invariant(self, seed):
        rng = np.random.default_rng(seed)
        g = rng.normal(size=(2, 16, 3))
        p = g + rng.normal(size=g.shape) * 0.1
        assert pa_mpjpe(p, g) <= mpjpe(p, g) + 1e-9
        _, r, t = random_similarity(rng)
        assert pa_mpjpe(p @ r.T + t, g @ r.T + t) == pytest.approx(pa_mpjpe(p, g), abs=1e-9)
        assert mpjpe(p @ r.T + t, g @ r.T + t) == pytest.approx(mpjpe(p, g), abs=1e-9)

    def test_degenerate_frame_skipped(self):
        rng = np.random.default_rng(2)
        g = rng.normal(size=(2, 16, 3))
        p = g.copy()
        p[1] = 0.0
        with pytest.warns(UserWarning):
            value, skipped = pa_mpjpe(p, g, return_skipped=True)
        assert skipped == 1 and value < 1e-9

    def test_all_degenerate(self):
        with pytest.raises(UndefinedMetricError):
            pa_mpjpe(np.zeros((1, 16, 3)), np.ones((1, 16, 3)))


class TestPCKAUC:
    def test_perfect(self):
        g = np.random.default_rng(0).normal(size=(2, 16, 3))
        assert pck(g, g, 1.0) == 100.0
        assert auc(g, g) == 100.0

    def test_strict_boundary(self):
        g = np.zeros((1, 16, 3))
        assert pck(g + [0.010, 0, 0], g, tau=10.0) == 0.0

    def test_half(self):
        g = np.zeros((1, 16, 3))
        p = g.copy()
        p[0, :8, 0] = 0.001
        p[0, 8:, 0] = 1.0
        assert pck(p, g, 100.0) == 50.0

    def test_step_function_auc(self):
        g = np.zeros((1, 16, 3))
        # 0.075 m -> 75 mm up to rounding; build the error exactly from integers
        p = g + [0.0, 0.0, 75.0 / 1000.0]
        errs = np.linalg.norm(p - g, axis=-1) * 1000
        assert np.all(errs == 75.0)
        assert auc(p, g, 150.0, 1.0) == 50.0

    def test_auc_is_mean_of_pck_steps(self):
        rng = np.random.default_rng(4)
        g = rng.normal(size=(5, 16, 3))
        p = g + rng.normal(size=g.shape) * 0.05
        steps = [pck(p, g, t) for t in auc_thresholds(150.0, 1.0)]
        assert auc(p, g) == float(np.mean(steps))

    @given(seed=st.integers(0, 100_000), t1=st.floats(0.1, 500), t2=st.floats(0.1, 500))
    @settings(max_examples=60, deadline=None)
    def test_pck_monotone(self, seed, t1, t2):
        rng = np.random.default_rng(seed)
        g = rng.normal(size=(2, 16, 3))
        p = g + rng.normal(size=g.shape) * 0.1
        lo, hi = sorted((t1, t2))
        assert pck(p, g, lo) <= pck(p, g, hi)

    def test_bad_thresholds(self):
        g = np.zeros((1, 16, 3))
        with pytest.raises(ValueError):
            pck(g, g, 0.0)
        with pytest.raises(ValueError):
            auc(g, g, tau_max=0.0)


class TestMPE:
    def test_clean(self):
        p = np.ones((3, 16, 3))
        assert mpe(p, 0.0) == 0.0

    def test_half_penetration(self):
        p = np.ones((2, 16, 3))
        p[0, FOOT_JOINTS[0], 1] = -0.005
        assert mpe(p, 0.0) == pytest.approx(2.5, abs=1e-12)

    def test_lifting_removes_penetration(self):
        p = np.random.default_rng(0).normal(size=(4, 16, 3)) * 0.1
        assert mpe(p + [0, 1.0, 0], 0.0) == 0.0

    def test_missing_floor(self):
        with pytest.raises(ConfigurationError):
            mpe(np.zeros((1, 16, 3)), None)


class TestAggregation:
    def frames(self, values):
        n = len(values)
        g = np.zeros((n, 16, 3))
        p = g.copy()
        p[:, :, 0] = np.asarray(values)[:, None] / 1000
        return per_frame_metrics(p, g)

    def test_single_category_equals_global(self):
        r = aggregate_by_category(self.frames([10.0, 20.0]), ["walk", "walk"])
        assert r.per_category["walk"]["mpjpe_mm"] == r.mpjpe_mm

    def test_frame_weighted_global(self):
        r = aggregate_by_category(self.frames([10.0, 10.0, 30.0, 30.0]), ["a", "a", "b", "b"])
        assert r.mpjpe_mm == pytest.approx(20.0, abs=1e-12)
        assert r.per_category["a"]["mpjpe_mm"] == pytest.approx(10.0, abs=1e-12)

    def test_no_labels(self):
        r = aggregate_by_category(self.frames([10.0]))
        assert r.per_category == {} and r.count == 1

    def test_unknown_label(self):
        r = aggregate_by_category(self.frames([10.0, 20.0]), ["walk", None], known_categories={"walk"})
        assert set(r.per_category) == {"walk", UNCATEGORIZED}
        r = aggregate_by_category(self.frames([10.0]), ["dance"], known_categories={"walk"})
        assert set(r.per_category) == {UNCATEGORIZED}

    def test_report_serialisation(self):
        r = aggregate_by_category(self.frames([10.0, 20.0]), ["walk", "run"])
        d = json.loads(r.to_json())
        assert d["count"] == 2 and set(d["per_category"]) == {"run", "walk"}
        text = r.to_text()
        assert text.startswith("# PCK@100 mm")
        assert "walk" in text and "ALL" in text
        assert 0 <= r.pck <= 100 and 0 <= r.auc <= 100
