"""Dense backward flow and background visibility from two segmentations.

A flow field is a (N, 2, H, W) tensor of absolute source pixel coordinates
per target pixel (x first, then y).  The motion of segment k is the affine
map ``F_k(z) = p_s + A_s (A_t + eps I)^-1 (z - p_t)``; the dense flow is the
per-pixel convex combination of the K part flows and the identity grid,
weighted by the target segmentation channels (background weights the
identity: the background is assumed static).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import ops
from .segnet import SegmentationOutput
from .tensor import ShapeError, Tensor

DEFAULT_RIDGE = 1e-6


@dataclass
class SegmentMotion:
    """Per-segment affine motion parameters for a frame pair.

    p_s, p_t: (N, K, 2) anchor keypoints (pixels); a_s, a_t: (N, K, 2, 2).
    """

    p_s: Tensor
    p_t: Tensor
    a_s: Tensor
    a_t: Tensor

    @staticmethod
    def from_outputs(seg_s: SegmentationOutput, seg_t: SegmentationOutput) -> "SegmentMotion":
        return SegmentMotion(p_s=seg_s.p, p_t=seg_t.p, a_s=seg_s.a, a_t=seg_t.a)

    def with_identity_matrices(self) -> "SegmentMotion":
        """Shift-only simplification: both affine matrices pinned to identity."""
        eye = np.broadcast_to(np.eye(2, dtype=self.a_s.dtype), self.a_s.shape).copy()
        return SegmentMotion(self.p_s, self.p_t, Tensor(eye), Tensor(eye))

    @property
    def k_parts(self) -> int:
        return self.p_s.shape[1]


def identity_grid(h: int, w: int, dtype=np.float32) -> np.ndarray:
    """Absolute pixel coordinate grid, shape (2, h, w): [x; y]."""
    return ops.coordinate_grid(h, w, dtype)


def part_flows(motion: SegmentMotion, grid: np.ndarray, ridge_eps: float = DEFAULT_RIDGE) -> Tensor:
    """All K per-part flow fields, shape (N, K, 2, H, W).

    Evaluated in displacement form,
    ``F = z + (p_s - p_t) + (A_s - A_t - eps I)(A_t + eps I)^-1 (z - p_t)``,
    which equals the direct affine map but cancels exactly (identity grid out)
    when source and target poses coincide.
    """
    n, k = motion.p_s.shape[0], motion.p_s.shape[1]
    dtype = motion.p_s.dtype
    eye = np.broadcast_to(np.eye(2, dtype=dtype) * dtype.type(ridge_eps),
                          motion.a_t.shape).copy()
    num = ops.sub(ops.sub(motion.a_s, motion.a_t), Tensor(eye))
    m = ops.mat2_mul(num, ops.inv2x2(motion.a_t, ridge=ridge_eps))

    gx = Tensor(np.asarray(grid[0], dtype=dtype))
    gy = Tensor(np.asarray(grid[1], dtype=dtype))
    ptx = motion.p_t[:, :, 0].reshape(n, k, 1, 1)
    pty = motion.p_t[:, :, 1].reshape(n, k, 1, 1)
    psx = motion.p_s[:, :, 0].reshape(n, k, 1, 1)
    psy = motion.p_s[:, :, 1].reshape(n, k, 1, 1)
    dx = ops.sub(gx, ptx)
    dy = ops.sub(gy, pty)

    def entry(i, j):
        return m[:, :, i, j].reshape(n, k, 1, 1)

    shift_x = ops.sub(psx, ptx)
    shift_y = ops.sub(psy, pty)
    fx = ops.add(gx, ops.add(shift_x, ops.add(ops.mul(entry(0, 0), dx), ops.mul(entry(0, 1), dy))))
    fy = ops.add(gy, ops.add(shift_y, ops.add(ops.mul(entry(1, 0), dx), ops.mul(entry(1, 1), dy))))
    return ops.stack([fx, fy], axis=2)


def part_flow(motion: SegmentMotion, k: int, grid: np.ndarray,
              ridge_eps: float = DEFAULT_RIDGE) -> Tensor:
    """Flow field of a single segment, shape (N, 2, H, W)."""
    if not 0 <= k < motion.k_parts:
        raise IndexError(f"segment index {k} out of range [0, {motion.k_parts})")
    return part_flows(motion, grid, ridge_eps)[:, k]


def compose_flow(y_t: Tensor, flows: Tensor, grid: np.ndarray) -> Tensor:
    """Soft assignment of part flows plus the static-background identity term.

    y_t: (N, K+1, H, W) channel-softmax segmentation of the target frame;
    flows: (N, K, 2, H, W) part flows.  Returns (N, 2, H, W).
    """
    n, kp1, h, w = y_t.shape
    k = kp1 - 1
    if flows.shape != (n, k, 2, h, w):
        raise ShapeError(f"flows shape {flows.shape} does not match masks {y_t.shape}")
    # displacement form of the convex combination: the background term and the
    # unit mass of the softmax cancel into the identity grid exactly
    grid_t = Tensor(np.asarray(grid, dtype=y_t.dtype))
    weights = y_t[:, :k].reshape(n, k, 1, h, w)
    disp = ops.sub(flows, grid_t)
    return ops.add(grid_t, ops.sum_(ops.mul(weights, disp), axis=1))


def visibility_mask(y_s: Tensor, y_t: Tensor, stop_gradient: bool = True) -> Tensor:
    """Background visibility ``V = 1 - Y_t^bg * O_s`` with ``O_s`` the merged
    source foreground.

    With ``stop_gradient`` the target background channel is detached, so no
    gradient reaches the target segmentation through V; the source masks keep
    their gradient either way.  Returns (N, 1, H, W) values in [0, 1].
    """
    if y_s.shape != y_t.shape:
        raise ShapeError(f"segmentation shapes differ: {y_s.shape} vs {y_t.shape}")
    k = y_s.shape[1] - 1
    o_s = ops.sum_(y_s[:, :k], axis=1, keepdims=True)
    bg_t = y_t[:, k : k + 1]
    if stop_gradient:
        bg_t = bg_t.detach()
    return ops.sub(1.0, ops.mul(bg_t, o_s))


def resize_flow(flow: Tensor, out_hw: Tuple[int, int]) -> Tensor:
    """Bilinear flow resampling with coordinate rescaling.

    The displacement (flow minus identity) is resampled and scaled by the
    per-axis resolution ratio, then re-anchored on the identity grid of the
    target resolution, so values remain valid absolute coordinates.
    """
    n, two, h, w = flow.shape
    if two != 2:
        raise ShapeError(f"flow must be (N,2,H,W), got {flow.shape}")
    h2, w2 = out_hw
    if (h2, w2) == (h, w):
        return flow
    dtype = flow.dtype
    src_grid = identity_grid(h, w, dtype)
    disp = ops.sub(flow, Tensor(src_grid))
    disp = ops.resize_bilinear(disp, out_hw)
    ratio = np.array([w2 / w, h2 / h], dtype=dtype).reshape(2, 1, 1)
    out = ops.mul(disp, Tensor(ratio))
    return ops.add(out, Tensor(identity_grid(h2, w2, dtype)))


def resize_mask(mask: Tensor, out_hw: Tuple[int, int]) -> Tensor:
    """Bilinear mask resampling (either direction)."""
    if mask.shape[2:] == tuple(out_hw):
        return mask
    return ops.resize_bilinear(mask, out_hw)


def upsample_flow_and_mask(flow: Tensor, mask: Tensor,
                           out_hw: Tuple[int, int]) -> Tuple[Tensor, Tensor]:
    """Upsample a flow field and visibility mask to a larger resolution."""
    h2, w2 = out_hw
    if h2 < flow.shape[2] or w2 < flow.shape[3]:
        raise ShapeError(f"target {out_hw} smaller than source {flow.shape[2:]}")
    return resize_flow(flow, out_hw), resize_mask(mask, out_hw)


def resize_flow_and_mask(flow: Tensor, mask: Tensor,
                         out_hw: Tuple[int, int]) -> Tuple[Tensor, Tensor]:
    """Resample flow and mask to any resolution (up or down)."""
    return resize_flow(flow, out_hw), resize_mask(mask, out_hw)
