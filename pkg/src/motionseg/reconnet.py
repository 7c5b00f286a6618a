"""Encoder-decoder generator that reconstructs the target frame.

The generator encodes the source frame, warps the bottleneck features by the
dense backward flow, suppresses them with the background visibility mask
(``xi' = V * warp(xi, flow)``), and decodes the result.  Five training
variants share the weights layout except for ``naive``, which skips the
motion model entirely and concatenates the (resized) target masks onto the
bottleneck features.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import ops
from .flow import (
    SegmentMotion,
    compose_flow,
    identity_grid,
    part_flows,
    resize_flow,
    resize_flow_and_mask,
    resize_mask,
    visibility_mask,
    DEFAULT_RIDGE,
)
from .nn import Conv2d, ConvBlock, Module, ResBlock
from .segnet import SegmentationOutput
from .tensor import ShapeError, Tensor

VARIANTS = ("naive", "shift-only", "affine-only", "v-backprop", "full")


@dataclass
class ReconResult:
    """Reconstruction plus the motion quantities used to produce it.

    flow and vis are at the segmentation resolution; for the naive variant
    they are the identity grid and all-ones mask (its decode path uses
    neither).
    """

    x_rec: Tensor
    flow: Tensor
    vis: Tensor


class ReconstructionNet(Module):
    """Johnson-style generator: 2 downsampling blocks, 6 residual blocks,
    2 upsampling blocks, sigmoid output.

    ``extra_bottleneck`` widens the residual/decoder path for the naive
    variant's mask concatenation (K+1 extra channels).
    """

    def __init__(self, bottleneck_channels: int = 64, extra_bottleneck: int = 0,
                 seed: int = 0, allow_batch1: bool = False):
        super().__init__()
        if bottleneck_channels % 4:
            raise ValueError(f"bottleneck_channels must be divisible by 4, got {bottleneck_channels}")
        rng = np.random.default_rng(seed)
        cb = bottleneck_channels
        c0 = cb // 4
        self.bottleneck_channels = cb
        self.extra_bottleneck = extra_bottleneck
        self.in_block = ConvBlock(3, c0, rng, allow_batch1=allow_batch1)
        self.down1 = ConvBlock(c0, cb // 2, rng, stride=2, allow_batch1=allow_batch1)
        self.down2 = ConvBlock(cb // 2, cb, rng, stride=2, allow_batch1=allow_batch1)
        wide = cb + extra_bottleneck
        self.res = [ResBlock(wide, rng, allow_batch1=allow_batch1) for _ in range(6)]
        self.up1 = ConvBlock(wide, cb // 2, rng, allow_batch1=allow_batch1)
        self.up2 = ConvBlock(cb // 2, c0, rng, allow_batch1=allow_batch1)
        self.out_conv = Conv2d(c0, 3, 3, padding=1, rng=rng)

    # ------------------------------------------------------------------

    def encode(self, x: Tensor) -> Tensor:
        """Source-frame features at 1/4 resolution."""
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (N,3,H,W) frames, got {x.shape}")
        h = self.in_block(x)
        h = self.down1(h)
        return self.down2(h)

    def deform(self, xi: Tensor, flow_b: Tensor, vis_b: Tensor) -> Tensor:
        """Warp bottleneck features by the flow and mask them by visibility."""
        if flow_b.shape[2:] != xi.shape[2:]:
            raise ShapeError(
                f"flow resolution {flow_b.shape[2:]} != feature resolution {xi.shape[2:]}"
            )
        if vis_b.shape[2:] != xi.shape[2:]:
            raise ShapeError(
                f"visibility resolution {vis_b.shape[2:]} != feature resolution {xi.shape[2:]}"
            )
        warped = ops.grid_sample_bilinear(xi, flow_b)
        return ops.mul(vis_b, warped)

    def decode(self, xi: Tensor) -> Tensor:
        """Decode bottleneck features into an image in [0, 1]."""
        h = xi
        for block in self.res:
            h = block(h)
        h = self.up1(ops.upsample2(h, mode="nearest"))
        h = self.up2(ops.upsample2(h, mode="nearest"))
        return ops.sigmoid(self.out_conv(h))

    # ------------------------------------------------------------------

    def reconstruct(self, x_s: Tensor, seg_s: SegmentationOutput, seg_t: SegmentationOutput,
                    variant: str = "full", ridge_eps: float = DEFAULT_RIDGE) -> ReconResult:
        """Reconstruct the target frame from the source frame and both
        segmentations, dispatching on the ablation variant."""
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant '{variant}'; expected one of {VARIANTS}")
        n = x_s.shape[0]
        hp, wp = seg_t.y.shape[2], seg_t.y.shape[3]
        dtype = x_s.dtype
        grid = identity_grid(hp, wp, dtype)

        if variant == "naive":
            xi = self.encode(x_s)
            y_b = resize_mask(seg_t.y, xi.shape[2:])
            x_rec = self.decode(ops.concat([xi, y_b], axis=1))
            flow = Tensor(np.broadcast_to(grid, (n, 2, hp, wp)).copy())
            vis = Tensor(np.ones((n, 1, hp, wp), dtype=dtype))
            return ReconResult(x_rec, flow, vis)

        motion = SegmentMotion.from_outputs(seg_s, seg_t)
        if variant == "shift-only":
            # identity matrices by construction: exact inversion, no ridge
            motion = motion.with_identity_matrices()
            flows = part_flows(motion, grid, ridge_eps=0.0)
        else:
            flows = part_flows(motion, grid, ridge_eps)
        flow = compose_flow(seg_t.y, flows, grid)
        if variant in ("shift-only", "affine-only"):
            vis = Tensor(np.ones((n, 1, hp, wp), dtype=dtype))
        else:
            vis = visibility_mask(seg_s.y, seg_t.y, stop_gradient=(variant == "full"))

        xi = self.encode(x_s)
        flow_b, vis_b = resize_flow_and_mask(flow, vis, xi.shape[2:])
        xi = self.deform(xi, flow_b, vis_b)
        x_rec = self.decode(xi)
        return ReconResult(x_rec, flow, vis)

    def part_swap(self, x_src: Tensor, x_tgt: Tensor, seg_src: SegmentationOutput,
                  seg_tgt: SegmentationOutput, swap_set: Iterable[int],
                  ridge_eps: float = DEFAULT_RIDGE) -> Tensor:
        """Composite the target frame with the listed parts taken from the source.

        ``swap_set`` holds 1-based foreground segment indices.  Source features
        are warped into the target pose by the same flow model used for
        reconstruction, then blended with the target features under the
        (continuous) union of the selected target masks.
        """
        k = seg_tgt.k_parts
        swap = sorted(set(int(s) for s in swap_set))
        if any(s < 1 or s > k for s in swap):
            raise ValueError(f"swap indices must lie in 1..{k}, got {swap}")
        xi_t = self.encode(x_tgt)
        if not swap:
            return self.decode(xi_t)

        hp, wp = seg_tgt.y.shape[2], seg_tgt.y.shape[3]
        grid = identity_grid(hp, wp, x_src.dtype)
        motion = SegmentMotion.from_outputs(seg_src, seg_tgt)
        flow = compose_flow(seg_tgt.y, part_flows(motion, grid, ridge_eps), grid)
        xi_s = self.encode(x_src)
        xi_s = ops.grid_sample_bilinear(xi_s, resize_flow(flow, xi_s.shape[2:]))

        sel = [s - 1 for s in swap]
        m = ops.sum_(seg_tgt.y[:, sel], axis=1, keepdims=True)
        m = resize_mask(m, xi_t.shape[2:])
        # m*src + (1-m)*tgt, written so identical features pass through exactly
        blend = ops.add(xi_t, ops.mul(m, ops.sub(xi_s, xi_t)))
        return self.decode(blend)
