import numpy as np
import pytest

from egostereo.dataset import load_dataset
from egostereo.geometry import fisheye_project, unproject_pixels, pixel_grid
from egostereo.scene_depth import DiskDepthProvider
from egostereo.skeleton import BONE_EDGES, FOOT_JOINTS, J, JOINT_NAMES, bones
from egostereo.synthetic import (
    FOOT_CLEARANCE,
    SyntheticScene,
    SyntheticSceneConfig,
    animate,
    generate_synthetic,
    render_view,
)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SyntheticSceneConfig(depth_dropout_prob=1.5)
        with pytest.raises(ValueError):
            SyntheticSceneConfig(room=(6.0, -1.0, 6.0))

    def test_round_trip(self, tmp_path):
        cfg = SyntheticSceneConfig(num_frames=7, motion_seed=9)
        p = tmp_path / "c.json"
        import json

        p.write_text(json.dumps(cfg.to_dict()))
        assert SyntheticSceneConfig.load(p) == cfg


class TestMotion:
    def test_limb_lengths_constant(self):
        cfg = SyntheticSceneConfig(num_frames=50)
        poses, _ = animate(cfg, np.random.default_rng(0))
        lengths = np.linalg.norm(np.stack([bones(p).bones for p in poses]), axis=-1)
        # neck-to-thigh bones span the bending spine, every other bone is rigid
        spine = [i for i, (a, b) in enumerate(BONE_EDGES) if a == J["neck"] and "thigh" in JOINT_NAMES[b]]
        rigid = [i for i in range(len(BONE_EDGES)) if i not in spine]
        assert len(spine) == 2
        assert np.allclose(lengths[:, rigid], lengths[0, rigid], atol=1e-9)
        assert np.ptp(lengths[:, spine], axis=0).max() < 0.05

    def test_feet_just_above_floor_inside_room(self):
        cfg = SyntheticSceneConfig(num_frames=50)
        poses, rigs = animate(cfg, np.random.default_rng(1))
        lowest = poses[:, list(FOOT_JOINTS), 1].min(axis=1)
        assert np.allclose(lowest, FOOT_CLEARANCE, atol=1e-12)
        assert (poses > 0).all() and (poses < np.array(cfg.room)).all()
        for r in rigs:
            assert np.allclose(r.rotation.T @ r.rotation, np.eye(3), atol=1e-12)

    def test_height_scale(self):
        poses, _ = animate(SyntheticSceneConfig(num_frames=5), np.random.default_rng(2))
        # standing height: head to floor clearance, roughly the configured scale
        assert 1.3 < poses[0, J["head"], 1] < 1.9

    def test_head_out_of_view(self, tiny_dataset):
        scene = SyntheticScene.from_index(tiny_dataset)
        for f in tiny_dataset.frames():
            for view in "lr":
                local = scene.camera_pose(f, view).inverse().apply(f.gt_pose_world.joints[J["head"]])
                assert fisheye_project(local, scene.camera) is None
        assert f.gt_joints2d.shape == (2, 15, 2)


class TestGenerator:
    def test_deterministic(self, tmp_path, tiny_config):
        cfg = SyntheticSceneConfig(**{**tiny_config.to_dict(), "num_sequences": 1, "num_frames": 4})
        generate_synthetic(cfg, tmp_path / "a")
        generate_synthetic(cfg, tmp_path / "b")
        assert (tmp_path / "a" / "manifest.json").read_text().replace("/a/", "/") == (
            tmp_path / "b" / "manifest.json"
        ).read_text().replace("/b/", "/")
        for rel in ("seq_000/img_l/000003.png", "seq_000/mask_r/000001.png"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_no_dropout(self, tmp_path):
        index = generate_synthetic(SyntheticSceneConfig(num_frames=5, depth_dropout_prob=0.0), tmp_path)
        assert all(f.depth_available for f in index.frames())

    def test_dropout_seeded(self, tiny_dataset):
        avail = [f.depth_available for f in tiny_dataset.frames()]
        assert any(avail) and not all(avail)

    def test_backends_render_identically(self, tiny_dataset):
        pytest.importorskip("numba")
        scene = SyntheticScene.from_index(tiny_dataset)
        f = tiny_dataset.sequences[1].frames[5]
        pose = scene.camera_pose(f, "l")
        a = render_view(scene.camera, pose, scene.room, f.gt_pose_world.joints, scene.k, "numpy")
        b = render_view(scene.camera, pose, scene.room, f.gt_pose_world.joints, scene.k, "numba")
        assert np.array_equal(a[1], b[1])
        assert np.abs(a[0].astype(int) - b[0].astype(int)).max() <= 1

    def test_images_show_body(self, tiny_dataset):
        for f in list(tiny_dataset.frames())[:6]:
            img = f.load_images()
            assert img.shape == (2, 256, 256, 3) and img.dtype == np.uint8
            assert SyntheticScene.from_index(tiny_dataset).silhouette(f, "l").mean() > 0.01

    def test_disk_depth_on_room_surface(self, tiny_dataset):
        scene = SyntheticScene.from_index(tiny_dataset)
        rays = unproject_pixels(pixel_grid(64, 64, 4.0), scene.camera)
        for f in tiny_dataset.frames():
            if not f.depth_available:
                continue
            obs = DiskDepthProvider()(f, "r")
            pose = scene.camera_pose(f, "r")
            valid = obs.region_mask.ravel()
            pts = pose.apply(rays[valid] * obs.depth.ravel()[valid, None])
            # 1 mm storage quantisation along the ray
            assert scene.room.distance_to_surface(pts).max() < 6e-4

    def test_reload_equals_returned_index(self, tiny_dataset):
        again = load_dataset(tiny_dataset.root)
        assert again.num_frames == tiny_dataset.num_frames
