"""Synthetic video generator: determinism, ground-truth exactness, disk format."""

import time

import numpy as np
import pytest

from motionseg.flow import compose_flow, identity_grid
from motionseg.synth import (
    SyntheticDataset,
    Trajectory,
    analytic_backward_flow,
    check_sample,
    generate_dataset,
    make_sample,
    render_video,
    sample_pair,
    sample_pair_indices,
    sample_scene_spec,
)
from motionseg.tensor import Tensor


def _scene(seed, **kw):
    return sample_scene_spec(np.random.default_rng(seed), **kw)


class TestSceneAndRendering:
    def test_masks_partition_canvas(self):
        video = render_video(_scene(0))
        for t in range(video.frames.shape[0]):
            masks = video.masks(t)
            np.testing.assert_array_equal(masks.sum(axis=0), np.ones_like(masks[0]))

    def test_background_is_static(self):
        video = render_video(_scene(1))
        bg_everywhere = np.all(video.labels == video.k_parts, axis=0)
        assert bg_everywhere.sum() > 100
        ref = video.frames[0][:, bg_everywhere]
        for t in range(1, video.frames.shape[0]):
            np.testing.assert_array_equal(video.frames[t][:, bg_everywhere], ref)

    def test_parts_stay_inside_canvas(self):
        for seed in range(5):
            video = render_video(_scene(seed))
            border = np.concatenate([
                video.labels[:, 0, :].ravel(), video.labels[:, -1, :].ravel(),
                video.labels[:, :, 0].ravel(), video.labels[:, :, -1].ravel(),
            ])
            assert np.all(border == video.k_parts)

    def test_frames_quantized_to_8bit(self):
        video = render_video(_scene(2))
        scaled = video.frames * 255.0
        np.testing.assert_allclose(scaled, np.round(scaled), atol=1e-4)


class TestAnalyticFlow:
    def test_static_scene_gives_identity_flow(self):
        video = render_video(_scene(3))
        flow = analytic_backward_flow(video.centers[0], video.mats[0],
                                      video.centers[0], video.mats[0], video.labels[0])
        np.testing.assert_allclose(flow, identity_grid(64, 64, np.float64), atol=1e-9)

    def test_pure_translation_sign_convention(self):
        k = 1
        h = w = 32
        label_t = np.full((h, w), k, dtype=np.int8)
        label_t[10:20, 12:22] = 0
        c_t = np.array([[17.0, 15.0]])
        d = np.array([3.0, -2.0])
        c_s = c_t - d[None]  # part moved by +d from source to target
        eye = np.eye(2)[None]
        flow = analytic_backward_flow(c_s, eye, c_t, eye, label_t)
        sel = label_t == 0
        grid = identity_grid(h, w, np.float64)
        np.testing.assert_allclose(flow[0][sel], grid[0][sel] - d[0], atol=1e-12)
        np.testing.assert_allclose(flow[1][sel], grid[1][sel] - d[1], atol=1e-12)

    def test_rotation_about_center_closed_form(self):
        h = w = 16
        label_t = np.zeros((h, w), dtype=np.int8)
        c = np.array([[7.5, 7.5]])
        th = np.pi / 2
        rot = np.array([[[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]]])
        flow = analytic_backward_flow(c, rot, c, np.eye(2)[None], label_t)
        grid = identity_grid(h, w, np.float64)
        rel = grid - c[0].reshape(2, 1, 1)
        expected = np.einsum("ij,jhw->ihw", rot[0], rel) + c[0].reshape(2, 1, 1)
        np.testing.assert_allclose(flow, expected, atol=1e-12)

    def test_warp_reproduces_target_on_valid_pixels(self):
        for seed in (4, 5, 6):
            video = render_video(_scene(seed))
            sample = make_sample(video, 2, 9)
            check_sample(sample)

    def test_integer_motion_is_exact(self):
        video = render_video(_scene(7, integer_motion=True))
        sample = make_sample(video, 0, 7)
        assert sample.integer_motion
        check_sample(sample)  # strict 1e-6 tolerance path

    def test_masks_and_flow_satisfy_soft_assignment_identity(self):
        """Composing per-part analytic flows under one-hot masks equals the flow."""
        video = render_video(_scene(8))
        sample = make_sample(video, 1, 5)
        k = sample.k_parts
        h, w = sample.label_t.shape
        grid = identity_grid(h, w, np.float64)
        fields = np.empty((1, k, 2, h, w))
        for ki in range(k):
            m = sample.mats_s[ki] @ np.linalg.inv(sample.mats_t[ki])
            rel = grid - sample.centers_t[ki].reshape(2, 1, 1)
            fields[0, ki] = np.einsum("ij,jhw->ihw", m, rel) + sample.centers_s[ki].reshape(2, 1, 1)
        composed = compose_flow(Tensor(sample.masks_t[None], dtype=np.float64),
                                Tensor(fields), grid)
        np.testing.assert_allclose(composed.data[0], sample.flow, atol=1e-9)

    def test_occlusion_definition(self):
        video = render_video(_scene(9))
        sample = make_sample(video, 0, 6)
        expected = (sample.label_t == sample.k_parts) & (sample.label_s != sample.k_parts)
        np.testing.assert_array_equal(sample.occlusion, expected)


class TestSamplePairing:
    def test_two_frame_video_gives_both_orders(self):
        seen = set()
        rng = np.random.default_rng(0)
        for _ in range(50):
            seen.add(sample_pair_indices(rng, 2))
        assert seen == {(0, 1), (1, 0)}

    def test_seeded_reproducibility(self):
        a = [sample_pair_indices(np.random.default_rng(42), 10) for _ in range(1)]
        b = [sample_pair_indices(np.random.default_rng(42), 10) for _ in range(1)]
        assert a == b

    def test_single_frame_video_rejected(self):
        with pytest.raises(ValueError):
            sample_pair_indices(np.random.default_rng(0), 1)

    def test_pair_distribution_uniform_chi_square(self):
        rng = np.random.default_rng(123)
        t = 8
        counts = np.zeros((t, t))
        n = 10_000
        for _ in range(n):
            i, j = sample_pair_indices(rng, t)
            counts[i, j] += 1
        assert np.all(np.diag(counts) == 0)
        cells = counts[~np.eye(t, dtype=bool)]
        expected = n / (t * (t - 1))
        chi2 = ((cells - expected) ** 2 / expected).sum()
        # df = 55; mean 55, sd ~10.5 -> 100 is a ~4-sigma bound
        assert chi2 < 100.0

    def test_sample_pair_returns_validated_sample(self):
        video = render_video(_scene(10))
        sample = sample_pair(video, np.random.default_rng(3))
        check_sample(sample)


class TestDatasetOnDisk:
    def test_same_seed_byte_identical(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        generate_dataset(a, n_videos=2, seed=5, n_frames=4)
        generate_dataset(b, n_videos=2, seed=5, n_frames=4)
        files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_different_seed_differs(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        generate_dataset(a, n_videos=1, seed=1, n_frames=3)
        generate_dataset(b, n_videos=1, seed=2, n_frames=3)
        assert (a / "vid_0000/frame_00.png").read_bytes() != (b / "vid_0000/frame_00.png").read_bytes()

    def test_layout_and_roundtrip(self, tmp_path):
        root = tmp_path / "ds"
        generate_dataset(root, n_videos=2, seed=3, n_frames=4, n_parts=2)
        assert (root / "manifest.json").exists()
        assert (root / "vid_0000" / "frame_00.png").exists()
        assert (root / "vid_0000" / "gt_00.cpmt").exists()
        ds = SyntheticDataset(root)
        assert ds.n_videos == 2 and ds.n_frames == 4 and ds.k_parts == 2
        frame = ds.frame(0, 0)
        assert frame.shape == (3, 64, 64) and frame.dtype == np.float32
        masks = ds.masks(0, 0)
        np.testing.assert_array_equal(masks.sum(axis=0), np.ones((64, 64), dtype=np.float32))
        sample = ds.make_sample(0, 0, 3)
        check_sample(sample)

    def test_loaded_sample_matches_rendered(self, tmp_path):
        root = tmp_path / "ds"
        generate_dataset(root, n_videos=1, seed=11, n_frames=4)
        ds = SyntheticDataset(root)
        children = np.random.SeedSequence(11).spawn(1)
        video = render_video(sample_scene_spec(np.random.default_rng(children[0]), n_frames=4))
        np.testing.assert_allclose(ds.frame(0, 2), video.frames[2], atol=1e-7)
        np.testing.assert_array_equal(ds.label(0, 2), video.labels[2])

    def test_generation_speed(self, tmp_path):
        t0 = time.perf_counter()
        generate_dataset(tmp_path / "speed", n_videos=20, seed=0, n_frames=16)
        elapsed = time.perf_counter() - t0
        assert elapsed < 20.0, f"20 videos took {elapsed:.1f}s"


class TestTrajectory:
    def test_integer_motion_poses_are_integral(self):
        traj = Trajectory(center0=np.array([20.0, 20.0]), center_amp=np.array([4.0, 3.0]),
                          center_freq=np.array([1.0, 2.0]), center_phase=np.array([0.3, 1.1]),
                          integer_motion=True)
        for t01 in np.linspace(0, 1, 9):
            c, a = traj.pose(t01)
            np.testing.assert_array_equal(c, np.round(c))
            np.testing.assert_array_equal(a, np.eye(2))

    def test_pose_bounded_velocity(self):
        traj = Trajectory(center0=np.array([30.0, 30.0]), center_amp=np.array([5.0, 5.0]),
                          center_freq=np.array([1.0, 1.0]), center_phase=np.array([0.0, 0.0]),
                          angle_amp=0.3, log_scale_amp=np.array([0.08, 0.08]))
        prev, _ = traj.pose(0.0)
        for t in np.linspace(0.0625, 1, 16):
            cur, _ = traj.pose(t)
            assert np.abs(cur - prev).max() < 4.0
            prev = cur
