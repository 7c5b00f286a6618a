"""Part flows, flow composition, visibility masks and flow resampling."""

import numpy as np
import pytest

from motionseg import ops
from motionseg.flow import (
    SegmentMotion,
    compose_flow,
    identity_grid,
    part_flow,
    part_flows,
    resize_flow,
    upsample_flow_and_mask,
    visibility_mask,
)
from motionseg.tensor import Tensor


def motion_from_arrays(p_s, p_t, a_s, a_t, dtype=np.float64):
    return SegmentMotion(
        Tensor(np.asarray(p_s)[None], dtype=dtype),
        Tensor(np.asarray(p_t)[None], dtype=dtype),
        Tensor(np.asarray(a_s)[None], dtype=dtype),
        Tensor(np.asarray(a_t)[None], dtype=dtype),
    )


class TestPartFlow:
    def test_identity_motion(self):
        eye = [np.eye(2)]
        motion = motion_from_arrays([[2.0, 3.0]], [[2.0, 3.0]], eye, eye)
        grid = identity_grid(5, 6, np.float64)
        flow = part_flow(motion, 0, grid, ridge_eps=0.0)
        np.testing.assert_allclose(flow.data[0], grid, atol=1e-9)

    def test_pure_shift(self):
        eye = [np.eye(2)]
        motion = motion_from_arrays([[2.0, 3.0]], [[0.0, 0.0]], eye, eye)
        grid = identity_grid(4, 4, np.float64)
        flow = part_flow(motion, 0, grid, ridge_eps=0.0)
        np.testing.assert_allclose(flow.data[0, 0], grid[0] + 2.0, atol=1e-9)
        np.testing.assert_allclose(flow.data[0, 1], grid[1] + 3.0, atol=1e-9)

    def test_rotation_30_degrees(self):
        th = np.deg2rad(30.0)
        rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        motion = motion_from_arrays([[0.0, 0.0]], [[0.0, 0.0]], [rot], [np.eye(2)])
        grid = identity_grid(3, 3, np.float64)
        flow = part_flow(motion, 0, grid, ridge_eps=0.0)
        # z = (1, 0) is column 1, row 0
        np.testing.assert_allclose(flow.data[0, :, 0, 1], [np.cos(th), np.sin(th)], atol=1e-4)

    def test_index_out_of_range(self):
        eye = [np.eye(2)]
        motion = motion_from_arrays([[0.0, 0.0]], [[0.0, 0.0]], eye, eye)
        with pytest.raises(IndexError):
            part_flow(motion, 3, identity_grid(2, 2, np.float64))


class TestComposeFlow:
    def test_pure_background(self, rng):
        h = w = 5
        y = np.zeros((1, 3, h, w))
        y[:, 2] = 1.0
        flows = Tensor(rng.standard_normal((1, 2, 2, h, w)) * 10 + 30)
        grid = identity_grid(h, w, np.float64)
        out = compose_flow(Tensor(y), flows, grid)
        np.testing.assert_allclose(out.data[0], grid, atol=1e-9)

    def test_hard_assignment_selects_part_flow(self, rng):
        h = w = 4
        y = np.zeros((1, 3, h, w))
        y[:, 1] = 1.0  # every pixel assigned to segment 2 (index 1)
        flows = Tensor(rng.standard_normal((1, 2, 2, h, w)))
        grid = identity_grid(h, w, np.float64)
        out = compose_flow(Tensor(y), flows, grid)
        np.testing.assert_allclose(out.data[0], flows.data[0, 1], atol=1e-9)

    def test_even_mixture(self):
        h = w = 3
        grid = identity_grid(h, w, np.float64)
        y = np.zeros((1, 3, h, w))
        y[:, 0] = 0.5
        y[:, 1] = 0.5
        f = np.stack([grid + np.array([1.0, 0.0]).reshape(2, 1, 1),
                      grid + np.array([0.0, 1.0]).reshape(2, 1, 1)])[None]
        out = compose_flow(Tensor(y), Tensor(f), grid)
        np.testing.assert_allclose(out.data[0], grid + 0.5, atol=1e-9)

    def test_weighted_sum_oracle(self, rng):
        h = w = 6
        k = 3
        logits = rng.standard_normal((1, k + 1, h, w))
        y = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        flows = rng.standard_normal((1, k, 2, h, w)) * 5 + 10
        grid = identity_grid(h, w, np.float64)
        out = compose_flow(Tensor(y), Tensor(flows), grid)
        expected = (y[:, :k, None] * flows).sum(axis=1) + y[:, k, None] * grid
        np.testing.assert_allclose(out.data, expected, atol=1e-9)

    def test_convexity(self, rng):
        h = w = 5
        k = 2
        logits = rng.standard_normal((1, k + 1, h, w)) * 2
        y = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        flows = rng.standard_normal((1, k, 2, h, w)) * 8 + 20
        grid = identity_grid(h, w, np.float64)
        out = compose_flow(Tensor(y), Tensor(flows), grid).data[0]
        candidates = np.concatenate([flows[0], grid[None]], axis=0)
        lo, hi = candidates.min(axis=0), candidates.max(axis=0)
        assert np.all(out >= lo - 1e-9) and np.all(out <= hi + 1e-9)


class TestVisibilityMask:
    @staticmethod
    def soft_masks(rng, n, k, h, w):
        logits = rng.standard_normal((n, k + 1, h, w))
        return np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)

    def test_no_source_foreground(self):
        h = w = 4
        y_s = np.zeros((1, 3, h, w))
        y_s[:, 2] = 1.0
        y_t = np.zeros((1, 3, h, w))
        y_t[:, 2] = 1.0
        v = visibility_mask(Tensor(y_s), Tensor(y_t))
        np.testing.assert_allclose(v.data, 1.0, atol=1e-9)

    def test_no_target_background(self, rng):
        h = w = 4
        y_s = self.soft_masks(rng, 1, 2, h, w)
        y_t = np.zeros((1, 3, h, w))
        y_t[:, 0] = 1.0
        v = visibility_mask(Tensor(y_s), Tensor(y_t))
        np.testing.assert_allclose(v.data, 1.0, atol=1e-9)

    def test_quadrant_product(self):
        h = w = 4
        y_t = np.zeros((1, 2, h, w))
        y_t[0, 1, :, : w // 2] = 1.0          # background on the left half
        y_t[0, 0] = 1.0 - y_t[0, 1]
        y_s = np.zeros((1, 2, h, w))
        y_s[0, 0, : h // 2, :] = 1.0          # foreground on the top half
        y_s[0, 1] = 1.0 - y_s[0, 0]
        v = visibility_mask(Tensor(y_s), Tensor(y_t)).data[0, 0]
        expected = np.ones((h, w))
        expected[: h // 2, : w // 2] = 0.0
        np.testing.assert_allclose(v, expected, atol=1e-9)

    def test_range_and_pixelwise_oracle(self, rng):
        y_s = self.soft_masks(rng, 2, 3, 5, 5)
        y_t = self.soft_masks(rng, 2, 3, 5, 5)
        v = visibility_mask(Tensor(y_s), Tensor(y_t)).data
        expected = 1.0 - y_t[:, 3:] * y_s[:, :3].sum(axis=1, keepdims=True)
        np.testing.assert_allclose(v, expected, atol=1e-9)
        assert np.all(v >= 0) and np.all(v <= 1)

    def test_stop_gradient_blocks_target_logits(self, rng):
        logits_s = Tensor(rng.standard_normal((1, 3, 4, 4)), requires_grad=True)
        logits_t = Tensor(rng.standard_normal((1, 3, 4, 4)), requires_grad=True)
        v = visibility_mask(ops.channel_softmax(logits_s), ops.channel_softmax(logits_t),
                            stop_gradient=True)
        ops.sum_(ops.mul(v, v)).backward()
        assert logits_t.grad is None
        assert logits_s.grad is not None and np.abs(logits_s.grad).max() > 0

    def test_backprop_variant_reaches_target_logits(self, rng):
        logits_s = Tensor(rng.standard_normal((1, 3, 4, 4)), requires_grad=True)
        logits_t = Tensor(rng.standard_normal((1, 3, 4, 4)), requires_grad=True)
        v = visibility_mask(ops.channel_softmax(logits_s), ops.channel_softmax(logits_t),
                            stop_gradient=False)
        ops.sum_(ops.mul(v, v)).backward()
        assert logits_t.grad is not None and np.abs(logits_t.grad).max() > 0


class TestFlowResampling:
    def test_identity_flow_scale_consistency(self):
        grid64 = identity_grid(64, 64)
        flow = Tensor(np.broadcast_to(grid64, (1, 2, 64, 64)).copy())
        up, _ = upsample_flow_and_mask(flow, Tensor(np.ones((1, 1, 64, 64), dtype=np.float32)), (128, 128))
        np.testing.assert_allclose(up.data[0], identity_grid(128, 128), atol=1e-4)

    def test_constant_shift_doubles(self):
        grid = identity_grid(64, 64)
        shift = grid + np.array([2.0, 0.0], dtype=np.float32).reshape(2, 1, 1)
        flow = Tensor(np.broadcast_to(shift, (1, 2, 64, 64)).copy())
        up = resize_flow(flow, (128, 128))
        expected = identity_grid(128, 128) + np.array([4.0, 0.0], dtype=np.float32).reshape(2, 1, 1)
        np.testing.assert_allclose(up.data[0], expected, atol=1e-4)

    def test_random_flow_matches_bilinear_rescale_oracle(self, rng):
        h = w = 8
        h2 = w2 = 16
        disp = rng.standard_normal((2, h, w)).astype(np.float64)
        flow = Tensor((identity_grid(h, w, np.float64) + disp)[None].copy())
        out = resize_flow(flow, (h2, w2)).data[0]

        # oracle: independent numpy bilinear resize of the displacement
        def bilinear_resize(img):
            ys = np.clip((np.arange(h2) + 0.5) * h / h2 - 0.5, 0, h - 1)
            xs = np.clip((np.arange(w2) + 0.5) * w / w2 - 0.5, 0, w - 1)
            y0 = np.floor(ys).astype(int)
            x0 = np.floor(xs).astype(int)
            y1 = np.minimum(y0 + 1, h - 1)
            x1 = np.minimum(x0 + 1, w - 1)
            ty = (ys - y0)[:, None]
            tx = (xs - x0)[None, :]
            return ((1 - ty) * (1 - tx) * img[np.ix_(y0, x0)] + (1 - ty) * tx * img[np.ix_(y0, x1)]
                    + ty * (1 - tx) * img[np.ix_(y1, x0)] + ty * tx * img[np.ix_(y1, x1)])

        expected = identity_grid(h2, w2, np.float64).copy()
        expected[0] += bilinear_resize(disp[0]) * (w2 / w)
        expected[1] += bilinear_resize(disp[1]) * (h2 / h)
        np.testing.assert_allclose(out, expected, atol=1e-9)

    def test_downsample_supported_by_resize(self):
        grid = identity_grid(16, 16)
        flow = Tensor(np.broadcast_to(grid, (1, 2, 16, 16)).copy())
        down = resize_flow(flow, (4, 4))
        np.testing.assert_allclose(down.data[0], identity_grid(4, 4), atol=1e-4)

    def test_upsample_rejects_shrinking(self):
        flow = Tensor(np.broadcast_to(identity_grid(8, 8), (1, 2, 8, 8)).copy())
        mask = Tensor(np.ones((1, 1, 8, 8), dtype=np.float32))
        with pytest.raises(Exception, match="smaller"):
            upsample_flow_and_mask(flow, mask, (4, 4))


class TestPartFlowGradients:
    def test_gradients_reach_all_motion_parameters(self, rng):
        p_s = Tensor(rng.uniform(1, 3, (1, 2, 2)), requires_grad=True, dtype=np.float64)
        p_t = Tensor(rng.uniform(1, 3, (1, 2, 2)), requires_grad=True, dtype=np.float64)
        a_s = Tensor((np.eye(2) + 0.1 * rng.standard_normal((1, 2, 2, 2))), requires_grad=True, dtype=np.float64)
        a_t = Tensor((np.eye(2) + 0.1 * rng.standard_normal((1, 2, 2, 2))), requires_grad=True, dtype=np.float64)
        flows = part_flows(SegmentMotion(p_s, p_t, a_s, a_t), identity_grid(4, 4, np.float64))
        ops.sum_(ops.mul(flows, flows)).backward()
        for t in (p_s, p_t, a_s, a_t):
            assert t.grad is not None and np.abs(t.grad).max() > 0
