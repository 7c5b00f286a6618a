"""Differentiable operations on :class:`~motionseg.tensor.Tensor`.

Each op builds its output via ``Tensor.from_op`` with a vector-Jacobian
product closure.  Shapes follow the numpy NCHW convention for image tensors.
Flow fields store absolute source pixel coordinates, channel 0 = x (column),
channel 1 = y (row), with pixel centers at integer positions.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor

Axis = Union[None, int, Tuple[int, ...]]


def _promote(a, b) -> Tuple[Tensor, Tensor]:
    """Coerce operands to Tensors of a common float dtype (scalars follow tensors)."""
    ta = isinstance(a, Tensor)
    tb = isinstance(b, Tensor)
    if ta and tb:
        if a.dtype != b.dtype:
            raise ShapeError(f"dtype mismatch: {a.dtype.name} vs {b.dtype.name}")
        return a, b
    if ta:
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if tb:
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    a = as_tensor(a)
    return a, Tensor(np.asarray(b, dtype=a.dtype))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _promote(a, b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(out, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = _promote(a, b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor.from_op(out, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = _promote(a, b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor.from_op(out, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = _promote(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return Tensor.from_op(out, (a, b), vjp, "div")


def neg(a: Tensor) -> Tensor:
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,), "neg")


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return Tensor.from_op(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = np.where(mask, a.data, a.data.dtype.type(0))
    return Tensor.from_op(out, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    # stable: exp of non-positive argument only
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return Tensor.from_op(out, (a,), vjp, "sigmoid")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,), "exp")


def square(a: Tensor) -> Tensor:
    return mul(a, a)


def cast(a: Tensor, dtype) -> Tensor:
    dtype = np.dtype(dtype)
    if dtype == a.dtype:
        return a
    out = a.data.astype(dtype)

    def vjp(g):
        return (g.astype(a.dtype),)

    return Tensor.from_op(out, (a,), vjp, "cast")


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum_(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    out = np.asarray(out, dtype=a.dtype)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g.reshape((1,) * a.ndim), a.shape).copy(),)
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        if not keepdims:
            g = np.expand_dims(g, tuple(ax % a.ndim for ax in axes))
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor.from_op(out, (a,), vjp, "sum")


def mean(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    s = sum_(a, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / count)


def spatial_mean(a: Tensor, keepdims: bool = False) -> Tensor:
    """Mean over the last two (spatial) axes."""
    return mean(a, axis=(a.ndim - 2, a.ndim - 1), keepdims=keepdims)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    out = a.data.reshape(shape)
    return Tensor.from_op(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def getitem(a: Tensor, idx) -> Tensor:
    out = np.ascontiguousarray(a.data[idx])

    def vjp(g):
        buf = np.zeros_like(a.data)
        buf[idx] += g
        return (buf,)

    return Tensor.from_op(out, (a,), vjp, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise ShapeError("concat requires uniform dtype")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        pieces = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            pieces.append(np.ascontiguousarray(g[tuple(sl)]))
        return pieces

    return Tensor.from_op(out, tuple(tensors), vjp, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        return [np.ascontiguousarray(piece) for piece in np.moveaxis(g, axis, 0)]

    return Tensor.from_op(out, tuple(tensors), vjp, "stack")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 2-D operands or equal-batch stacked matrices."""
    a, b = _promote(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul requires >=2-D operands")
    if a.ndim != b.ndim or (a.ndim > 2 and a.shape[:-2] != b.shape[:-2]):
        raise ShapeError(f"matmul batch dims must match: {a.shape} vs {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner dimension mismatch: {a.shape[-1]} (last of a) vs {b.shape[-2]}"
        )
    out = a.data @ b.data

    def vjp(g):
        at = np.swapaxes(a.data, -1, -2)
        bt = np.swapaxes(b.data, -1, -2)
        return g @ bt, at @ g

    return Tensor.from_op(out, (a, b), vjp, "matmul")


# ---------------------------------------------------------------------------
# softmax family


def softmax(a: Tensor, axis: Axis) -> Tensor:
    """Numerically stabilized softmax over ``axis`` (int or tuple)."""
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    m = a.data.max(axis=axes, keepdims=True)
    e = np.exp(a.data - m)
    s = e / e.sum(axis=axes, keepdims=True)

    def vjp(g):
        dot = (g * s).sum(axis=axes, keepdims=True)
        return (s * (g - dot),)

    return Tensor.from_op(s, (a,), vjp, "softmax")


def channel_softmax(a: Tensor) -> Tensor:
    """Softmax over the channel axis of an NCHW tensor."""
    if a.ndim != 4:
        raise ShapeError(f"channel_softmax expects NCHW, got {a.ndim}-D")
    return softmax(a, axis=1)


def spatial_softmax(a: Tensor) -> Tensor:
    """Softmax over the (H, W) axes of an NKHW tensor."""
    if a.ndim != 4:
        raise ShapeError(f"spatial_softmax expects NKHW, got {a.ndim}-D")
    return softmax(a, axis=(2, 3))


# ---------------------------------------------------------------------------
# convolution / pooling / resampling


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with OIkk weights."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be NCHW, got {x.ndim}-D")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be OIkk, got {weight.ndim}-D")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: input C={c}, weight I={ci}")
    if x.dtype != weight.dtype:
        raise ShapeError(f"dtype mismatch: {x.dtype.name} vs {weight.dtype.name}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d kernel {kh}x{kw} does not fit padded input H={h + 2 * padding}, W={w + 2 * padding}"
        )

    if padding:
        xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
        xp[:, :, padding : padding + h, padding : padding + w] = x.data
    else:
        xp = x.data

    def make_cols(arr):
        cols = np.empty((n, c, kh, kw, oh, ow), dtype=arr.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, :, i, j] = arr[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
        return cols.reshape(n, c * kh * kw, oh * ow)

    cols = make_cols(xp)
    wmat = weight.data.reshape(o, c * kh * kw)
    out = np.matmul(wmat, cols).reshape(n, o, oh, ow)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)

    def vjp(g):
        gf = g.reshape(n, o, oh * ow)
        grads = [None, None]
        if weight.requires_grad:
            gw = np.tensordot(gf, cols, axes=([0, 2], [0, 2]))
            grads[1] = gw.reshape(weight.shape).astype(weight.dtype, copy=False)
        if x.requires_grad:
            dcols = np.matmul(wmat.T, gf).reshape(n, c, kh, kw, oh, ow)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[:, :, i, j]
            dx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
            grads[0] = np.ascontiguousarray(dx)
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)).astype(bias.dtype, copy=False) if bias.requires_grad else None)
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, vjp, "conv2d")


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling; spatial dims must be even."""
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2 expects NCHW, got {x.ndim}-D")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 requires even spatial dims, got H={h}, W={w}")
    r = x.data.reshape(n, c, h // 2, 2, w // 2, 2)
    out = r.mean(axis=(3, 5))

    def vjp(g):
        q = (g * 0.25).astype(x.dtype, copy=False)
        return (np.repeat(np.repeat(q, 2, axis=2), 2, axis=3),)

    return Tensor.from_op(out.astype(x.dtype, copy=False), (x,), vjp, "avg_pool2")


def upsample2(x: Tensor, mode: str = "nearest") -> Tensor:
    """Double the spatial resolution (nearest replication or bilinear)."""
    if x.ndim != 4:
        raise ShapeError(f"upsample2 expects NCHW, got {x.ndim}-D")
    if mode == "nearest":
        out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

        def vjp(g):
            n, c, h2, w2 = g.shape
            return (g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)),)

        return Tensor.from_op(out, (x,), vjp, "upsample2_nearest")
    if mode == "bilinear":
        n, c, h, w = x.shape
        return resize_bilinear(x, (2 * h, 2 * w))
    raise ValueError(f"unknown upsample mode '{mode}'")


def _resize_grid(src_hw, dst_hw, dtype) -> np.ndarray:
    """Absolute source coordinates for a bilinear resize (half-pixel-center mapping)."""
    sh, sw = src_hw
    dh, dw = dst_hw
    xs = (np.arange(dw, dtype=dtype) + 0.5) * (sw / dw) - 0.5
    ys = (np.arange(dh, dtype=dtype) + 0.5) * (sh / dh) - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy]).astype(dtype)


def resize_bilinear(x: Tensor, out_hw: Tuple[int, int]) -> Tensor:
    """Bilinear resample of an NCHW tensor to ``out_hw`` (edges clamped)."""
    grid = _resize_grid(x.shape[2:], out_hw, x.dtype)
    coords = np.broadcast_to(grid, (x.shape[0],) + grid.shape)
    return grid_sample_bilinear(x, coords)


def grid_sample_bilinear(x: Tensor, coords: Union[Tensor, np.ndarray]) -> Tensor:
    """Sample NCHW input at absolute pixel coordinates with bilinear weights.

    ``coords`` has shape (N, 2, Hg, Wg): channel 0 holds x (column) and
    channel 1 holds y (row) positions.  Out-of-range positions clamp to the
    edge.  Differentiable with respect to both the input and the coordinates.
    """
    coords_t = coords if isinstance(coords, Tensor) else None
    cdata = coords.data if coords_t is not None else np.asarray(coords, dtype=x.dtype)
    if coords_t is not None and coords_t.dtype != x.dtype:
        raise ShapeError(f"dtype mismatch: input {x.dtype.name}, coords {coords_t.dtype.name}")
    if x.ndim != 4 or cdata.ndim != 4 or cdata.shape[1] != 2:
        raise ShapeError(
            f"grid_sample_bilinear expects NCHW input and (N,2,Hg,Wg) coords, got {x.shape} and {cdata.shape}"
        )
    if cdata.shape[0] != x.shape[0]:
        raise ShapeError(f"batch mismatch: input N={x.shape[0]}, coords N={cdata.shape[0]}")
    n, c, h, w = x.shape
    hg, wg = cdata.shape[2], cdata.shape[3]

    cx = np.clip(cdata[:, 0], 0.0, w - 1.0)
    cy = np.clip(cdata[:, 1], 0.0, h - 1.0)
    x0 = np.floor(cx).astype(np.int64)
    y0 = np.floor(cy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    tx = (cx - x0).astype(x.dtype)[:, None]
    ty = (cy - y0).astype(x.dtype)[:, None]

    nn = np.arange(n)[:, None, None, None]
    cc = np.arange(c)[None, :, None, None]
    y0b, y1b = y0[:, None], y1[:, None]
    x0b, x1b = x0[:, None], x1[:, None]

    v00 = x.data[nn, cc, y0b, x0b]
    v01 = x.data[nn, cc, y0b, x1b]
    v10 = x.data[nn, cc, y1b, x0b]
    v11 = x.data[nn, cc, y1b, x1b]

    w00 = (1 - tx) * (1 - ty)
    w01 = tx * (1 - ty)
    w10 = (1 - tx) * ty
    w11 = tx * ty
    out = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11

    def vjp(g):
        grads: list[Optional[np.ndarray]] = []
        if x.requires_grad:
            # input gradient: scatter-add the four corner contributions
            dx = np.zeros(n * c * h * w, dtype=np.float64)
            base = (nn * c + cc) * h
            for yy, xx, ww in ((y0b, x0b, w00), (y0b, x1b, w01), (y1b, x0b, w10), (y1b, x1b, w11)):
                flat = ((base + yy) * w + xx)
                flat = np.broadcast_to(flat, g.shape)
                contrib = (g * ww).astype(np.float64, copy=False)
                dx += np.bincount(flat.ravel(), weights=contrib.ravel(), minlength=dx.size)
            grads.append(dx.reshape(n, c, h, w).astype(x.dtype))
        else:
            grads.append(None)
        if coords_t is not None:
            dout_dx = (1 - ty) * (v01 - v00) + ty * (v11 - v10)
            dout_dy = (1 - tx) * (v10 - v00) + tx * (v11 - v01)
            mask_x = ((cdata[:, 0] > 0) & (cdata[:, 0] < w - 1)).astype(x.dtype)[:, None]
            mask_y = ((cdata[:, 1] > 0) & (cdata[:, 1] < h - 1)).astype(x.dtype)[:, None]
            gx = (g * dout_dx).sum(axis=1) * mask_x[:, 0]
            gy = (g * dout_dy).sum(axis=1) * mask_y[:, 0]
            grads.append(np.stack([gx, gy], axis=1).astype(cdata.dtype, copy=False))
        return grads

    parents = (x,) if coords_t is None else (x, coords_t)
    return Tensor.from_op(out.astype(x.dtype, copy=False), parents, vjp, "grid_sample_bilinear")


# ---------------------------------------------------------------------------
# normalization


def normalize_moments(x: Tensor, axes: Tuple[int, ...], eps: float = 1e-5,
                      stats: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Tensor:
    """Whiten ``x`` over ``axes`` using batch statistics (biased variance).

    ``stats`` may carry precomputed keepdims (mean, var) of ``x`` over the
    same axes; the backward pass still treats them as functions of ``x``.
    """
    if stats is None:
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
    else:
        mu, var = stats
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * invstd

    def vjp(g):
        gm = g.mean(axis=axes, keepdims=True)
        gxm = (g * xhat).mean(axis=axes, keepdims=True)
        return ((invstd * (g - gm - xhat * gxm)).astype(x.dtype, copy=False),)

    return Tensor.from_op(xhat.astype(x.dtype, copy=False), (x,), vjp, "normalize")


# ---------------------------------------------------------------------------
# keypoint extraction


def coordinate_grid(h: int, w: int, dtype=np.float32) -> np.ndarray:
    """Identity grid of absolute pixel coordinates, shape (2, h, w): [x; y]."""
    gx, gy = np.meshgrid(np.arange(w, dtype=dtype), np.arange(h, dtype=dtype))
    return np.stack([gx, gy])


def soft_argmax2d(heatmap: Tensor) -> Tuple[Tensor, Tensor]:
    """Spatial-softmax expectation of pixel coordinates per (N, K) map.

    Returns ``(points, conf)`` where points has shape (N, K, 2) in (x, y)
    pixel coordinates and conf is the normalized (N, K, H, W) confidence map.
    """
    if heatmap.ndim != 4:
        raise ShapeError(f"soft_argmax2d expects NKHW, got {heatmap.ndim}-D")
    _, _, h, w = heatmap.shape
    conf = spatial_softmax(heatmap)
    grid = coordinate_grid(h, w, dtype=heatmap.dtype)
    px = sum_(mul(conf, Tensor(grid[0])), axis=(2, 3))
    py = sum_(mul(conf, Tensor(grid[1])), axis=(2, 3))
    points = stack([px, py], axis=2)
    return points, conf


# ---------------------------------------------------------------------------
# small-matrix helpers (used by the affine flow model)


def inv2x2(m: Tensor, ridge: float = 0.0) -> Tensor:
    """Inverse of stacked 2x2 matrices (..., 2, 2), with optional ridge.

    ``ridge`` is added to the diagonal before inversion so near-singular
    inputs stay invertible.
    """
    if m.shape[-2:] != (2, 2):
        raise ShapeError(f"inv2x2 expects (..., 2, 2), got {m.shape}")
    a = add(m[..., 0, 0], ridge)
    b = m[..., 0, 1]
    c = m[..., 1, 0]
    d = add(m[..., 1, 1], ridge)
    det = sub(mul(a, d), mul(b, c))
    row0 = stack([div(d, det), div(neg(b), det)], axis=-1)
    row1 = stack([div(neg(c), det), div(a, det)], axis=-1)
    return stack([row0, row1], axis=-2)


def mat2_mul(a: Tensor, b: Tensor) -> Tensor:
    """Product of stacked 2x2 matrices with matching batch shape."""
    if a.shape[-2:] != (2, 2) or b.shape[-2:] != (2, 2):
        raise ShapeError(f"mat2_mul expects (..., 2, 2) operands, got {a.shape} and {b.shape}")
    c00 = add(mul(a[..., 0, 0], b[..., 0, 0]), mul(a[..., 0, 1], b[..., 1, 0]))
    c01 = add(mul(a[..., 0, 0], b[..., 0, 1]), mul(a[..., 0, 1], b[..., 1, 1]))
    c10 = add(mul(a[..., 1, 0], b[..., 0, 0]), mul(a[..., 1, 1], b[..., 1, 0]))
    c11 = add(mul(a[..., 1, 0], b[..., 0, 1]), mul(a[..., 1, 1], b[..., 1, 1]))
    row0 = stack([c00, c01], axis=-1)
    row1 = stack([c10, c11], axis=-1)
    return stack([row0, row1], axis=-2)
