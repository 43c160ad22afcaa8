import json
import shutil

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egostereo.dataset import (
    MANIFEST_NAME,
    FrameRecord,
    Sequence,
    dataset_statistics,
    load_dataset,
    render_gt_heatmap,
    sample_windows,
    window_indices,
    write_manifest,
)
from egostereo.errors import IntegrityError, NotADatasetError
from egostereo.geometry import RigidTransform
from egostereo.heatmap2d import heatmaps_argmax
from egostereo.skeleton import FrameTag, Pose3D


def fake_sequence(root, n, seq_id="s0"):
    from PIL import Image

    (root / seq_id).mkdir(parents=True, exist_ok=True)
    frames = []
    for i in range(n):
        paths = []
        for v in "lr":
            p = root / seq_id / f"{i:06d}_{v}.png"
            Image.fromarray(np.full((256, 256, 3), i, np.uint8)).save(p)
            paths.append(p)
        frames.append(
            FrameRecord(
                seq_id,
                i,
                tuple(paths),
                Pose3D(np.full((16, 3), float(i)), FrameTag.WORLD),
                RigidTransform.identity(),
                np.full((2, 15, 2), np.nan),
                False,
            )
        )
    return Sequence(seq_id, 25.0, tuple(frames))


class TestManifest:
    def test_missing_manifest(self, tmp_path):
        with pytest.raises(NotADatasetError):
            load_dataset(tmp_path)

    def test_empty_manifest(self, tmp_path):
        (tmp_path / MANIFEST_NAME).write_text(json.dumps({"sequences": []}))
        assert len(load_dataset(tmp_path).sequences) == 0

    def test_one_sequence(self, tmp_path):
        write_manifest(tmp_path, [fake_sequence(tmp_path, 10)])
        index = load_dataset(tmp_path)
        assert len(index.sequences) == 1 and index.num_frames == 10
        f = index.sequences[0].frames[4]
        assert f.load_image("r")[0, 0, 0] == 4
        assert np.array_equal(f.gt_pose_device.joints, np.full((16, 3), 4.0))

    def test_deleted_image(self, tmp_path):
        write_manifest(tmp_path, [fake_sequence(tmp_path, 3)])
        victim = tmp_path / "s0" / "000001_l.png"
        victim.unlink()
        with pytest.raises(IntegrityError) as info:
            load_dataset(tmp_path)
        assert victim in info.value.paths
        assert str(victim) in str(info.value)

    def test_non_increasing_indices(self, tmp_path):
        write_manifest(tmp_path, [fake_sequence(tmp_path, 3)])
        doc = json.loads((tmp_path / MANIFEST_NAME).read_text())
        doc["sequences"][0]["frames"][2]["idx"] = 0
        (tmp_path / MANIFEST_NAME).write_text(json.dumps(doc))
        with pytest.raises(IntegrityError):
            load_dataset(tmp_path)

    def test_round_trip_of_generated(self, tiny_dataset, tmp_path):
        copy = tmp_path / "copy"
        shutil.copytree(tiny_dataset.root, copy)
        again = load_dataset(copy)
        a = list(tiny_dataset.frames())
        b = list(again.frames())
        assert len(a) == len(b)
        for fa, fb in zip(a, b):
            assert np.array_equal(fa.gt_pose_world.joints, fb.gt_pose_world.joints)
            assert np.array_equal(fa.gt_joints2d, fb.gt_joints2d, equal_nan=True)
            assert fa.depth_available == fb.depth_available
        assert again.camera == tiny_dataset.camera and again.room == tiny_dataset.room

    def test_statistics(self, tiny_dataset):
        s = dataset_statistics(tiny_dataset)
        assert s["sequences"] == 2 and s["frames"] == 24
        assert 0 < s["depth_available_fraction"] < 1
        assert s["skeleton_joints"] == 16


class TestWindows:
    def test_ten_frame_example(self):
        idx = window_indices(10, 3, 3)
        assert idx.shape == (10, 3)
        assert idx[0].tolist() == [0, 0, 0]
        assert idx[9].tolist() == [3, 6, 9]
        assert idx[4].tolist() == [0, 1, 4]

    def test_single_frame_window(self):
        assert window_indices(6, 1, 4)[:, 0].tolist() == list(range(6))

    def test_full_clamp(self):
        assert window_indices(1, 5, 3).tolist() == [[0, 0, 0, 0, 0]]

    @given(n=st.integers(1, 60), T=st.integers(1, 8), skip=st.integers(1, 6))
    @settings(max_examples=100, deadline=None)
    def test_properties(self, n, T, skip):
        idx = window_indices(n, T, skip)
        assert idx.shape == (n, T)
        assert np.array_equal(idx[:, -1], np.arange(n))
        assert (idx <= idx[:, -1:]).all()  # never looks ahead
        assert (idx >= 0).all()
        for row in idx:
            unpadded = row[row > 0]
            if len(unpadded) > 1:
                assert set(np.diff(unpadded)) == {skip}

    def test_invalid(self):
        with pytest.raises(ValueError):
            window_indices(5, 0, 1)
        with pytest.raises(ValueError):
            window_indices(0, 2, 1)

    def test_samples_pad_with_first_frame(self, tiny_dataset):
        seq = tiny_dataset.sequences[0]
        samples = sample_windows(seq, 5, 3)
        assert len(samples) == len(seq)
        s = samples[2]
        assert s.T == 5 and s.target_index == 4
        assert [f.frame_index for f in s.frames] == [0, 0, 0, 0, 2]
        imgs = s.images
        assert imgs.shape == (5, 2, 256, 256, 3)
        assert np.array_equal(imgs[0], imgs[3])
        assert s.gt_heatmaps.shape == (5, 2, 15, 64, 64)
        assert len(s.depth_observations) == 5 and len(s.gt_poses) == 5


class TestHeatmaps:
    def test_absent_is_zero(self):
        j = np.full((15, 2), np.nan)
        assert render_gt_heatmap(j).sum() == 0

    def test_centre(self):
        j = np.full((15, 2), np.nan)
        j[0] = [128.0, 128.0]
        h = render_gt_heatmap(j)
        assert h.shape == (15, 64, 64)
        assert np.unravel_index(h[0].argmax(), (64, 64)) == (32, 32)
        assert h[0].max() == 1.0
        assert h.min() >= 0.0 and h.max() <= 1.0

    def test_deterministic(self):
        j = np.random.default_rng(0).uniform(0, 256, (15, 2))
        assert np.array_equal(render_gt_heatmap(j), render_gt_heatmap(j))

    def test_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            render_gt_heatmap(np.zeros((15, 2)), sigma=0.0)

    def test_argmax_tracks_projection(self, tiny_dataset):
        for f in tiny_dataset.frames():
            for v in range(2):
                h = render_gt_heatmap(f.gt_joints2d[v])
                peaks, _ = heatmaps_argmax(h)
                vis = np.isfinite(f.gt_joints2d[v]).all(axis=1)
                d = np.linalg.norm(peaks[vis] - f.gt_joints2d[v][vis] / 4, axis=1)
                assert (d <= 1.0).all()
