"""Central finite-difference validation of every differentiable operation.

Each registered case draws random small-shape inputs, builds a scalar loss
through the op under test, and compares the backpropagated gradients against
central differences computed in float64.  The float32 pass reuses the float64
difference oracle (a float32 difference quotient at eps=1e-4 is dominated by
rounding noise).  Cases whose difference quotients are inconsistent between
eps and eps/2 (a kink crossed by the probe) are redrawn.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import ops
from .flow import SegmentMotion, compose_flow, identity_grid, part_flows, visibility_mask
from .losses import FeatureExtractor, GeometricTransform, equivariance_loss, reconstruction_loss
from .nn import BatchNorm2d
from .segnet import affine_head
from .tensor import Tensor

EPS = 1e-4
THRESHOLDS = {"float64": 1e-6, "float32": 1e-3}

# (arrays, build) where build maps Tensors (same order) to a scalar Tensor
Case = Tuple[List[np.ndarray], Callable[..., Tensor]]
CaseFactory = Callable[[np.random.Generator], Case]


@dataclass
class GradCheckResult:
    name: str
    dtype: str
    instances: int
    max_rel_err: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.threshold


def _loss_fn(build, arrays: Sequence[np.ndarray], dtype) -> float:
    tensors = [Tensor(a.astype(dtype)) for a in arrays]
    return build(*tensors).item()


def _fd_gradients(build, arrays: Sequence[np.ndarray], eps: float) -> List[np.ndarray]:
    grads = []
    work = [a.copy() for a in arrays]
    for i, a in enumerate(work):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = _loss_fn(build, work, np.float64)
            flat[j] = orig - eps
            lo = _loss_fn(build, work, np.float64)
            flat[j] = orig
            gflat[j] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def _fd_consistent(build, arrays, eps: float, tol: float = 1e-4) -> Tuple[bool, List[np.ndarray]]:
    g1 = _fd_gradients(build, arrays, eps)
    g2 = _fd_gradients(build, arrays, eps / 2)
    for a, b in zip(g1, g2):
        if np.abs(a - b).max() > tol * max(1.0, np.abs(b).max()):
            return False, g1
    return True, g1


def _analytic_gradients(build, arrays, dtype) -> List[np.ndarray]:
    tensors = [Tensor(a.astype(dtype), requires_grad=True) for a in arrays]
    loss = build(*tensors)
    loss.backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def check_case(factory: CaseFactory, rng: np.random.Generator, dtype: str,
               eps: float = EPS, max_redraws: int = 8) -> float:
    """Scaled infinity-norm error between analytic and FD gradients.

    error = max over inputs of  max|analytic - fd| / max(1, max|fd|)
    """
    for _ in range(max_redraws):
        arrays, build = factory(rng)
        consistent, fd = _fd_consistent(build, arrays, eps)
        if consistent:
            break
    analytic = _analytic_gradients(build, arrays, np.dtype(dtype))
    worst = 0.0
    for a, n in zip(analytic, fd):
        scale = max(1.0, float(np.abs(n).max()))
        worst = max(worst, float(np.abs(a.astype(np.float64) - n).max()) / scale)
    return worst


# ---------------------------------------------------------------------------
# case registry


def _dims(rng, lo=2, hi=5) -> int:
    return int(rng.integers(lo, hi + 1))


def _signed_margin(rng, shape, lo=0.2, hi=1.2) -> np.ndarray:
    """Values bounded away from zero (for |x| and relu kinks)."""
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _interior_coords(rng, n, hg, wg, h, w) -> np.ndarray:
    """Sampling coordinates strictly inside the image and away from integers."""
    x0 = rng.integers(1, w - 2, size=(n, hg, wg)).astype(np.float64)
    y0 = rng.integers(1, h - 2, size=(n, hg, wg)).astype(np.float64)
    fx = rng.uniform(0.15, 0.85, size=(n, hg, wg))
    fy = rng.uniform(0.15, 0.85, size=(n, hg, wg))
    return np.stack([x0 + fx, y0 + fy], axis=1)


def _well_conditioned_mats(rng, *batch) -> np.ndarray:
    theta = rng.uniform(-0.6, 0.6, size=batch)
    s = rng.uniform(0.7, 1.4, size=batch + (2,))
    rot = np.stack([
        np.stack([np.cos(theta), -np.sin(theta)], axis=-1),
        np.stack([np.sin(theta), np.cos(theta)], axis=-1),
    ], axis=-2)
    return rot * s[..., None, :]


def _proj(rng, shape) -> np.ndarray:
    return rng.standard_normal(shape)


def _project(out: Tensor, r: np.ndarray) -> Tensor:
    return ops.sum_(ops.mul(out, Tensor(r.astype(out.dtype))))


def _case_binary(op):
    def factory(rng):
        shape = (_dims(rng), _dims(rng, 2, 4))
        a = rng.standard_normal(shape)
        b = rng.standard_normal(shape)
        if op is ops.div:
            b = _signed_margin(rng, shape, lo=0.4, hi=1.5)
        r = _proj(rng, shape)
        return [a, b], lambda ta, tb: _project(op(ta, tb), r)

    return factory


def _case_broadcast_mul(rng):
    n, c, h, w = 2, _dims(rng, 2, 3), 4, 4
    a = rng.standard_normal((n, c, h, w))
    b = rng.standard_normal((1, c, 1, 1))
    r = _proj(rng, (n, c, h, w))
    return [a, b], lambda ta, tb: _project(ops.mul(ta, tb), r)


def _case_unary(op, margin=False):
    def factory(rng):
        shape = (_dims(rng), _dims(rng, 2, 4), _dims(rng, 2, 4))
        a = _signed_margin(rng, shape) if margin else rng.standard_normal(shape)
        r = _proj(rng, shape)
        return [a], lambda t: _project(op(t), r)

    return factory


def _case_sum(rng):
    shape = (2, _dims(rng, 2, 4), 3, 3)
    a = rng.standard_normal(shape)
    axis = (0, 2) if rng.integers(2) else 1
    keep = bool(rng.integers(2))
    out_shape = np.sum(a, axis=axis, keepdims=keep).shape

    def build(t):
        return _project(ops.sum_(t, axis=axis, keepdims=keep), _r)

    _r = _proj(rng, out_shape)
    return [a], build


def _case_mean(rng):
    shape = (2, 3, _dims(rng, 2, 4), _dims(rng, 2, 4))
    a = rng.standard_normal(shape)
    r = _proj(rng, shape[:2])
    return [a], lambda t: _project(ops.spatial_mean(t), r)


def _case_reshape(rng):
    c = _dims(rng, 2, 4)
    a = rng.standard_normal((2, c, 3, 2))
    r = _proj(rng, (2, c * 6))
    return [a], lambda t: _project(ops.reshape(t, (2, c * 6)), r)


def _case_getitem(rng):
    a = rng.standard_normal((3, 4, 5))
    r = _proj(rng, (2, 4, 3))
    return [a], lambda t: _project(t[1:3, :, 1:4], r)


def _case_concat(rng):
    c1, c2 = _dims(rng, 1, 3), _dims(rng, 1, 3)
    a = rng.standard_normal((2, c1, 3, 3))
    b = rng.standard_normal((2, c2, 3, 3))
    r = _proj(rng, (2, c1 + c2, 3, 3))
    return [a, b], lambda ta, tb: _project(ops.concat([ta, tb], axis=1), r)


def _case_stack(rng):
    shape = (2, 3)
    a = rng.standard_normal(shape)
    b = rng.standard_normal(shape)
    r = _proj(rng, (2, 2, 3))
    return [a, b], lambda ta, tb: _project(ops.stack([ta, tb], axis=1), r)


def _case_matmul(rng):
    if rng.integers(2):
        a = rng.standard_normal((_dims(rng), 3))
        b = rng.standard_normal((3, _dims(rng)))
    else:
        a = rng.standard_normal((2, 2, 3))
        b = rng.standard_normal((2, 3, 2))
    r = _proj(rng, (a @ b).shape)
    return [a, b], lambda ta, tb: _project(ops.matmul(ta, tb), r)


def _case_channel_softmax(rng):
    a = rng.standard_normal((2, _dims(rng, 2, 5), 3, 3))
    r = _proj(rng, a.shape)
    return [a], lambda t: _project(ops.channel_softmax(t), r)


def _case_conv2d(rng):
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    cin, cout = _dims(rng, 1, 3), _dims(rng, 1, 3)
    h = int(rng.integers(5, 8))
    x = rng.standard_normal((2, cin, h, h))
    w = rng.standard_normal((cout, cin, 3, 3)) * 0.5
    b = rng.standard_normal(cout) * 0.2
    oh = (h + 2 * pad - 3) // stride + 1
    r = _proj(rng, (2, cout, oh, oh))
    return [x, w, b], lambda tx, tw, tb: _project(
        ops.conv2d(tx, tw, tb, stride=stride, padding=pad), r
    )


def _case_avg_pool(rng):
    a = rng.standard_normal((2, _dims(rng, 1, 3), 4, 6))
    r = _proj(rng, (2, a.shape[1], 2, 3))
    return [a], lambda t: _project(ops.avg_pool2(t), r)


def _case_upsample_nearest(rng):
    a = rng.standard_normal((2, 2, 3, 3))
    r = _proj(rng, (2, 2, 6, 6))
    return [a], lambda t: _project(ops.upsample2(t, "nearest"), r)


def _case_upsample_bilinear(rng):
    a = rng.standard_normal((1, 2, 3, 4))
    r = _proj(rng, (1, 2, 6, 8))
    return [a], lambda t: _project(ops.upsample2(t, "bilinear"), r)


def _case_resize(rng):
    a = rng.standard_normal((1, 2, 6, 6))
    out = (3, 3) if rng.integers(2) else (9, 9)
    r = _proj(rng, (1, 2) + out)
    return [a], lambda t: _project(ops.resize_bilinear(t, out), r)


def _case_grid_sample(rng):
    h = w = 6
    x = rng.standard_normal((2, 2, h, w))
    coords = _interior_coords(rng, 2, 4, 4, h, w)
    r = _proj(rng, (2, 2, 4, 4))
    return [x, coords], lambda tx, tc: _project(ops.grid_sample_bilinear(tx, tc), r)


def _case_normalize(rng):
    a = rng.standard_normal((3, 2, 4, 4)) * 1.5
    r = _proj(rng, a.shape)
    return [a], lambda t: _project(ops.normalize_moments(t, axes=(0, 2, 3)), r)


def _case_soft_argmax(rng):
    a = rng.standard_normal((1, 2, 5, 5))
    r = _proj(rng, (1, 2, 2))
    return [a], lambda t: _project(ops.soft_argmax2d(t)[0], r)


def _case_affine_head(rng):
    k = 2
    coeff = rng.standard_normal((1, 4 * k, 4, 4))
    logits = rng.standard_normal((1, k, 4, 4))

    def build(tc, tl):
        conf = ops.spatial_softmax(tl)
        return _project(affine_head(tc, conf), _r)

    _r = _proj(rng, (1, k, 2, 2))
    return [coeff, logits], build


def _case_inv2x2(rng):
    m = _well_conditioned_mats(rng, 2, 2)
    r = _proj(rng, m.shape)
    return [m], lambda t: _project(ops.inv2x2(t, ridge=1e-6), r)


def _case_mat2_mul(rng):
    a = rng.standard_normal((2, 2, 2, 2))
    b = rng.standard_normal((2, 2, 2, 2))
    r = _proj(rng, a.shape)
    return [a, b], lambda ta, tb: _project(ops.mat2_mul(ta, tb), r)


def _case_sigmoid(rng):
    a = rng.standard_normal((2, 3, 3)) * 2
    r = _proj(rng, a.shape)
    return [a], lambda t: _project(ops.sigmoid(t), r)


def _case_batchnorm(rng):
    bn = BatchNorm2d(2)
    a = rng.standard_normal((3, 2, 3, 3)) * 1.3
    gamma = rng.uniform(0.5, 1.5, size=2)
    beta = rng.standard_normal(2) * 0.3
    r = _proj(rng, a.shape)

    def build(t, tg, tb):
        bn.gamma = tg  # type: ignore[assignment]
        bn.beta = tb  # type: ignore[assignment]
        bn.training = True
        return _project(bn(t), r)

    return [a, gamma, beta], build


def _case_resblock(rng):
    a = rng.standard_normal((1, 2, 4, 4))
    w1 = rng.standard_normal((2, 2, 3, 3)) * 0.5
    w2 = rng.standard_normal((2, 2, 3, 3)) * 0.5
    r = _proj(rng, a.shape)

    def build(t, tw1, tw2):
        h = ops.relu(ops.conv2d(t, tw1, padding=1))
        h = ops.conv2d(h, tw2, padding=1)
        return _project(ops.add(t, h), r)

    return [a, w1, w2], build


def _case_part_flow(rng):
    n, k, h, w = 1, 2, 5, 5
    p_s = rng.uniform(1, 4, size=(n, k, 2))
    p_t = rng.uniform(1, 4, size=(n, k, 2))
    a_s = _well_conditioned_mats(rng, n, k)
    a_t = _well_conditioned_mats(rng, n, k)
    r = _proj(rng, (n, k, 2, h, w))

    def build(tps, tpt, tas, tat):
        grid = identity_grid(h, w, tps.dtype)
        motion = SegmentMotion(tps, tpt, tas, tat)
        return _project(part_flows(motion, grid, ridge_eps=1e-6), r)

    return [p_s, p_t, a_s, a_t], build


def _case_compose_flow(rng):
    n, k, h, w = 1, 2, 4, 4
    logits = rng.standard_normal((n, k + 1, h, w))
    flows = rng.standard_normal((n, k, 2, h, w)) * 2 + 1.5
    r = _proj(rng, (n, 2, h, w))

    def build(tl, tf):
        y = ops.channel_softmax(tl)
        grid = identity_grid(h, w, tl.dtype)
        return _project(compose_flow(y, tf, grid), r)

    return [logits, flows], build


def _case_visibility(rng):
    n, k, h, w = 1, 2, 4, 4
    ls = rng.standard_normal((n, k + 1, h, w))
    lt = rng.standard_normal((n, k + 1, h, w))
    r = _proj(rng, (n, 1, h, w))

    def build(tls, tlt):
        v = visibility_mask(ops.channel_softmax(tls), ops.channel_softmax(tlt), stop_gradient=False)
        return _project(v, r)

    return [ls, lt], build


def _case_deform(rng):
    n, c, h, w = 1, 2, 6, 6
    xi = rng.standard_normal((n, c, h, w))
    flow = _interior_coords(rng, n, h, w, h, w)
    vis = rng.uniform(0.2, 0.9, size=(n, 1, h, w))
    r = _proj(rng, (n, c, h, w))

    def build(txi, tf, tv):
        warped = ops.grid_sample_bilinear(txi, tf)
        return _project(ops.mul(tv, warped), r)

    return [xi, flow, vis], build


def _case_recon_loss(mode):
    def factory(rng):
        a = rng.uniform(0.1, 0.9, size=(1, 3, 8, 8))
        b = a + _signed_margin(rng, a.shape, lo=0.05, hi=0.3)
        extractor = FeatureExtractor(mode=mode, channels=(4, 4), seed=int(rng.integers(1 << 30)))

        def build(ta, tb):
            return reconstruction_loss(ta, tb, extractor, scales=(8, 4))

        return [a, b], build

    return factory


def _case_equivariance(rng):
    n, k = 1, 2
    p = rng.uniform(5, 20, size=(n, k, 2))
    pw = rng.uniform(5, 20, size=(n, k, 2))
    a = _well_conditioned_mats(rng, n, k)
    aw = _well_conditioned_mats(rng, n, k)
    jac = _well_conditioned_mats(rng)
    g = GeometricTransform(jac=jac, translation=rng.uniform(-3, 3, size=2),
                           center=np.array([12.0, 12.0]))

    class _SegStub:
        def __init__(self, p, a):
            self.p, self.a = p, a

    def build(tp, tpw, ta, taw):
        kp, mat = equivariance_loss(_SegStub(tp, ta), _SegStub(tpw, taw), g, ridge_eps=1e-6)
        return ops.add(kp, mat)

    return [p, pw, a, aw], build


CASES: Dict[str, CaseFactory] = {
    "add": _case_binary(ops.add),
    "sub": _case_binary(ops.sub),
    "mul": _case_binary(ops.mul),
    "mul_broadcast": _case_broadcast_mul,
    "div": _case_binary(ops.div),
    "abs": _case_unary(ops.abs_, margin=True),
    "relu": _case_unary(ops.relu, margin=True),
    "sigmoid": _case_sigmoid,
    "exp": _case_unary(ops.exp),
    "sum": _case_sum,
    "spatial_mean": _case_mean,
    "reshape": _case_reshape,
    "getitem": _case_getitem,
    "concat": _case_concat,
    "stack": _case_stack,
    "matmul": _case_matmul,
    "channel_softmax": _case_channel_softmax,
    "conv2d": _case_conv2d,
    "avg_pool2": _case_avg_pool,
    "upsample2_nearest": _case_upsample_nearest,
    "upsample2_bilinear": _case_upsample_bilinear,
    "resize_bilinear": _case_resize,
    "grid_sample_bilinear": _case_grid_sample,
    "batch_norm_kernel": _case_normalize,
    "batch_norm_module": _case_batchnorm,
    "soft_argmax2d": _case_soft_argmax,
    "affine_head": _case_affine_head,
    "inv2x2": _case_inv2x2,
    "mat2_mul": _case_mat2_mul,
    "residual_block": _case_resblock,
    "part_flow": _case_part_flow,
    "compose_flow": _case_compose_flow,
    "visibility_mask": _case_visibility,
    "deform": _case_deform,
    "reconstruction_loss_raw": _case_recon_loss("raw-pixels"),
    "reconstruction_loss_conv": _case_recon_loss("random-conv"),
    "equivariance_loss": _case_equivariance,
}


def run_suite(instances: int = 20, dtypes: Sequence[str] = ("float64", "float32"),
              seed: int = 0, names: Optional[Sequence[str]] = None,
              verbose: bool = False) -> List[GradCheckResult]:
    """Run every registered gradient check; returns one result per (op, dtype)."""
    import zlib

    results = []
    selected = names if names is not None else list(CASES)
    for name in selected:
        factory = CASES[name]
        for dtype in dtypes:
            rng = np.random.default_rng(
                np.random.SeedSequence((seed, zlib.crc32(name.encode()), 0 if dtype == "float64" else 1))
            )
            worst = 0.0
            for _ in range(instances):
                worst = max(worst, check_case(factory, rng, dtype))
            res = GradCheckResult(name=name, dtype=dtype, instances=instances,
                                  max_rel_err=worst, threshold=THRESHOLDS[dtype])
            results.append(res)
            if verbose:
                status = "ok" if res.passed else "FAIL"
                print(f"  {name:28s} {dtype:8s} max_rel_err={worst:.3e} [{status}]")
    return results


def suite_passed(results: Sequence[GradCheckResult]) -> bool:
    return all(r.passed for r in results)
