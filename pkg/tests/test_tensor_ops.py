"""Forward-value oracles and autodiff semantics for the tensor engine."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionseg import ops
from motionseg.tensor import NumericError, ShapeError, Tensor, no_grad


def conv2d_loop_oracle(x, w, b, stride, padding):
    """Direct six-nested-loop cross-correlation."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=np.float64)
    xp[:, :, padding : padding + h, padding : padding + wd] = x
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for ni in range(n):
        for oi in range(o):
            for yi in range(oh):
                for xi in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += xp[ni, ci, yi * stride + ky, xi * stride + kx] * w[oi, ci, ky, kx]
                    out[ni, oi, yi, xi] = acc + (b[oi] if b is not None else 0.0)
    return out


class TestConv2d:
    def test_all_ones_center(self):
        x = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        w = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        out = ops.conv2d(x, w, padding=1)
        assert out.data[0, 0, 1, 1] == 9.0

    def test_identity_kernel(self, rng):
        x = Tensor(rng.random((2, 1, 5, 5), dtype=np.float32))
        w = Tensor(np.ones((1, 1, 1, 1), dtype=np.float32))
        out = ops.conv2d(x, w, padding=0)
        np.testing.assert_array_equal(out.data, x.data)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
    def test_matches_loop_oracle(self, rng, stride, padding):
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out = ops.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                         Tensor(b, dtype=np.float64), stride=stride, padding=padding)
        expected = conv2d_loop_oracle(x, w, b, stride, padding)
        np.testing.assert_allclose(out.data, expected, atol=1e-6)

    def test_channel_mismatch_error(self):
        x = Tensor(np.zeros((1, 2, 4, 4), dtype=np.float32))
        w = Tensor(np.zeros((1, 3, 3, 3), dtype=np.float32))
        with pytest.raises(ShapeError, match="C=2"):
            ops.conv2d(x, w)

    def test_kernel_does_not_fit(self):
        x = Tensor(np.zeros((1, 1, 2, 2), dtype=np.float32))
        w = Tensor(np.zeros((1, 1, 3, 3), dtype=np.float32))
        with pytest.raises(ShapeError):
            ops.conv2d(x, w, padding=0)


class TestAvgPool:
    def test_constant(self):
        x = Tensor(np.full((1, 2, 4, 4), 3.25, dtype=np.float32))
        out = ops.avg_pool2(x)
        assert out.shape == (1, 2, 2, 2)
        np.testing.assert_array_equal(out.data, np.full((1, 2, 2, 2), 3.25, dtype=np.float32))

    def test_single_window(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32))
        assert ops.avg_pool2(x).data[0, 0, 0, 0] == 2.5

    def test_matches_window_mean(self, rng):
        x = rng.random((1, 1, 4, 4))
        out = ops.avg_pool2(Tensor(x, dtype=np.float64))
        expected = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                expected[i, j] = x[0, 0, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].mean()
        np.testing.assert_allclose(out.data[0, 0], expected, atol=1e-12)

    def test_odd_dims_error(self):
        with pytest.raises(ShapeError, match="even"):
            ops.avg_pool2(Tensor(np.zeros((1, 1, 3, 4), dtype=np.float32)))


class TestUpsample:
    def test_constant(self):
        x = Tensor(np.full((1, 1, 2, 2), 0.7, dtype=np.float32))
        for mode in ("nearest", "bilinear"):
            out = ops.upsample2(x, mode)
            np.testing.assert_allclose(out.data, 0.7, atol=1e-7)

    def test_nearest_block_replication(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32))
        out = ops.upsample2(x, "nearest")
        expected = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]], dtype=np.float32)
        np.testing.assert_array_equal(out.data[0, 0], expected)

    def test_bilinear_ramp_stays_linear(self):
        # closed form under half-pixel-center mapping with clamped edges:
        # out(i) = ramp(clip((i + 0.5) / 2 - 0.5, 0, w - 1))
        w = 8
        ramp = np.broadcast_to(np.arange(w, dtype=np.float64), (1, 1, 4, w)).copy()
        out = ops.upsample2(Tensor(ramp), "bilinear")
        src = np.clip((np.arange(2 * w) + 0.5) / 2 - 0.5, 0, w - 1)
        np.testing.assert_allclose(out.data[0, 0], np.broadcast_to(src, (8, 2 * w)), atol=1e-6)
        interior = out.data[0, 0, :, 1:-1]
        assert np.allclose(np.diff(interior, axis=1), 0.5, atol=1e-6)


class TestChannelSoftmax:
    def test_equal_logits(self):
        x = Tensor(np.zeros((1, 2, 1, 1), dtype=np.float32))
        np.testing.assert_allclose(ops.channel_softmax(x).data.ravel(), [0.5, 0.5])

    def test_large_logits_no_overflow(self):
        x = Tensor(np.array([1000.0, 0.0], dtype=np.float64).reshape(1, 2, 1, 1))
        out = ops.channel_softmax(x).data.ravel()
        assert abs(out[0] - 1.0) < 1e-12 and out[1] < 1e-12

    def test_matches_exp_normalize(self, rng):
        x = rng.standard_normal((2, 5, 3, 3))
        out = ops.channel_softmax(Tensor(x, dtype=np.float64)).data
        e = np.exp(x)
        np.testing.assert_allclose(out, e / e.sum(axis=1, keepdims=True), atol=1e-12)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_simplex_property(self, seed):
        x = np.random.default_rng(seed).standard_normal((1, 4, 2, 2)) * 10
        out = ops.channel_softmax(Tensor(x, dtype=np.float32)).data
        assert np.all(out >= 0) and np.all(out <= 1)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-5)


class TestGridSample:
    def test_identity_grid(self, rng):
        x = rng.random((2, 3, 5, 7)).astype(np.float32)
        grid = ops.coordinate_grid(5, 7)
        coords = np.broadcast_to(grid, (2, 2, 5, 7))
        out = ops.grid_sample_bilinear(Tensor(x), coords)
        np.testing.assert_allclose(out.data, x, atol=1e-6)

    def test_constant_image(self, rng):
        x = Tensor(np.full((1, 1, 6, 6), 0.4, dtype=np.float32))
        coords = rng.uniform(0, 5, size=(1, 2, 4, 4)).astype(np.float32)
        out = ops.grid_sample_bilinear(x, coords)
        np.testing.assert_allclose(out.data, 0.4, atol=1e-6)

    def test_half_pixel_shift_on_ramp(self):
        w = 8
        img = np.broadcast_to(np.arange(w, dtype=np.float32), (1, 1, 4, w)).copy()
        grid = ops.coordinate_grid(4, w)
        coords = grid.copy()
        coords[0] += 0.5
        out = ops.grid_sample_bilinear(Tensor(img), np.broadcast_to(coords, (1, 2, 4, w)))
        np.testing.assert_allclose(out.data[0, 0, :, : w - 1],
                                   img[0, 0, :, : w - 1] + 0.5, atol=1e-6)

    def test_gradient_to_both_inputs(self, rng):
        x = Tensor(rng.random((1, 2, 5, 5)).astype(np.float32), requires_grad=True)
        c = Tensor(rng.uniform(1.2, 3.2, size=(1, 2, 3, 3)).astype(np.float32), requires_grad=True)
        ops.sum_(ops.grid_sample_bilinear(x, c)).backward()
        assert x.grad is not None and c.grad is not None


class TestSoftArgmax:
    def test_delta_peak(self):
        hm = np.zeros((1, 1, 9, 9), dtype=np.float32)
        hm[0, 0, 2, 6] = 1e4
        p, _ = ops.soft_argmax2d(Tensor(hm))
        np.testing.assert_allclose(p.data[0, 0], [6.0, 2.0], atol=1e-4)

    def test_uniform_centroid(self):
        p, conf = ops.soft_argmax2d(Tensor(np.zeros((1, 2, 5, 7), dtype=np.float32)))
        np.testing.assert_allclose(p.data[0, 0], [3.0, 2.0], atol=1e-5)
        np.testing.assert_allclose(conf.data.sum(axis=(2, 3)), 1.0, atol=1e-5)

    def test_two_peak_expectation(self):
        # softmax weights w1/w2 = 3 -> logits differ by ln 3
        hm = np.full((1, 1, 6, 6), -1e4, dtype=np.float64)
        z1, z2 = (1, 2), (4, 5)  # (y, x)
        hm[0, 0, z1[0], z1[1]] = np.log(3.0)
        hm[0, 0, z2[0], z2[1]] = 0.0
        p, _ = ops.soft_argmax2d(Tensor(hm))
        expected = 0.75 * np.array([z1[1], z1[0]]) + 0.25 * np.array([z2[1], z2[0]])
        np.testing.assert_allclose(p.data[0, 0], expected, atol=1e-6)


class TestAutodiffSemantics:
    def test_detach_blocks_gradient(self, rng):
        x = Tensor(rng.random(5), requires_grad=True)
        y = ops.sum_(ops.mul(x.detach(), x.detach()))
        y.backward()
        assert x.grad is None

    def test_add_detached_copy(self, rng):
        x = Tensor(rng.random(4), requires_grad=True)
        y = ops.sum_(ops.add(x, x.detach()))
        y.backward()
        np.testing.assert_array_equal(x.grad, np.ones(4, dtype=np.float32))

    def test_sum_of_squares_gradient(self, rng):
        v = rng.random(6)
        x = Tensor(v, requires_grad=True, dtype=np.float64)
        ops.sum_(ops.mul(x, x)).backward()
        np.testing.assert_allclose(x.grad, 2 * v, atol=1e-12)

    def test_relu_linear_fd(self, rng):
        w = rng.standard_normal((3, 4))
        x0 = rng.standard_normal((4, 2)) + 0.3

        def loss_value(xv):
            return ops.sum_(ops.relu(ops.matmul(Tensor(w), Tensor(xv)))).item()

        x = Tensor(x0, requires_grad=True, dtype=np.float64)
        ops.sum_(ops.relu(ops.matmul(Tensor(w), x))).backward()
        eps = 1e-4
        fd = np.zeros_like(x0)
        for idx in np.ndindex(*x0.shape):
            hi, lo = x0.copy(), x0.copy()
            hi[idx] += eps
            lo[idx] -= eps
            fd[idx] = (loss_value(hi) - loss_value(lo)) / (2 * eps)
        np.testing.assert_allclose(x.grad, fd, atol=1e-7)

    def test_double_backward_doubles_leaf_grads(self, rng):
        x = Tensor(rng.random(3), requires_grad=True, dtype=np.float64)
        loss = ops.sum_(ops.mul(x, x))
        loss.backward()
        first = x.grad.copy()
        loss.backward()
        np.testing.assert_array_equal(x.grad, 2 * first)

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError, match="scalar"):
            ops.mul(x, x).backward()

    def test_nonfinite_raises(self):
        with pytest.raises(NumericError):
            ops.div(Tensor(np.ones(2)), Tensor(np.zeros(2)))
        with pytest.raises(NumericError):
            Tensor(np.array([np.nan, 1.0]))

    def test_no_grad_builds_no_graph(self, rng):
        x = Tensor(rng.random(3), requires_grad=True)
        with no_grad():
            y = ops.mul(x, x)
        assert not y.requires_grad and y.is_leaf()

    def test_forward_purity(self, rng):
        x = rng.standard_normal((2, 3, 6, 6)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        a = ops.conv2d(Tensor(x), Tensor(w), padding=1).data
        b = ops.conv2d(Tensor(x), Tensor(w), padding=1).data
        np.testing.assert_array_equal(a, b)

    def test_dtype_mismatch_error(self):
        with pytest.raises(ShapeError, match="dtype"):
            ops.add(Tensor(np.ones(2), dtype=np.float32), Tensor(np.ones(2), dtype=np.float64))


class TestSmallMatrixOps:
    def test_inv2x2_matches_numpy(self, rng):
        m = rng.standard_normal((3, 2, 2)) + 2 * np.eye(2)
        inv = ops.inv2x2(Tensor(m, dtype=np.float64)).data
        np.testing.assert_allclose(inv, np.linalg.inv(m), atol=1e-10)

    def test_inv2x2_ridge_regularizes_singular(self):
        m = Tensor(np.zeros((1, 2, 2)), dtype=np.float64)
        inv = ops.inv2x2(m, ridge=1e-5).data
        np.testing.assert_allclose(inv[0], np.eye(2) * 1e5, rtol=1e-6)

    def test_mat2_mul_matches_numpy(self, rng):
        a = rng.standard_normal((2, 3, 2, 2))
        b = rng.standard_normal((2, 3, 2, 2))
        out = ops.mat2_mul(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64)).data
        np.testing.assert_allclose(out, a @ b, atol=1e-12)
