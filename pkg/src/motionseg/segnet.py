"""U-Net that predicts part masks, anchor keypoints and per-part affine matrices.

Given one frame, the network emits 6K+1 channels at the working resolution:
K+1 segmentation logits (background last), K keypoint heatmaps, and 4K affine
coefficient maps.  Keypoints come from a spatial soft-argmax; each affine
matrix is the keypoint-confidence-weighted spatial average of its four
coefficient maps, laid out row-major.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import ops
from .nn import Conv2d, ConvBlock, Module, Parameter
from .tensor import ShapeError, Tensor

WIDTH_PROFILES = {
    "tiny": (8, 16, 32, 64, 64),
    "full": (32, 64, 128, 256, 512),
}


@dataclass
class SegmentationOutput:
    """Per-frame predictions, batched along the leading axis.

    y:    (N, K+1, H', W') soft part masks; channel K (last) is background.
    p:    (N, K, 2) anchor keypoints in (x, y) pixel coordinates.
    a:    (N, K, 2, 2) affine matrices.
    conf: (N, K, H', W') normalized keypoint confidence maps.
    """

    y: Tensor
    p: Tensor
    a: Tensor
    conf: Tensor

    @property
    def k_parts(self) -> int:
        return self.y.shape[1] - 1

    def detached(self) -> "SegmentationOutput":
        return SegmentationOutput(self.y.detach(), self.p.detach(), self.a.detach(), self.conf.detach())


def affine_head(coeff: Tensor, conf: Tensor) -> Tensor:
    """Confidence-weighted spatial average of affine coefficient maps.

    coeff: (N, 4K, H, W) with channels 4k..4k+3 mapping row-major onto the
    entries of matrix k.  conf: (N, K, H, W), each map summing to 1.
    Returns (N, K, 2, 2).
    """
    n, c4, h, w = coeff.shape
    if c4 % 4:
        raise ShapeError(f"affine_head expects 4K coefficient channels, got {c4}")
    k = c4 // 4
    if conf.shape != (n, k, h, w):
        raise ShapeError(f"conf shape {conf.shape} does not match coeff {coeff.shape}")
    cr = coeff.reshape(n, k, 2, 2, h, w)
    wr = conf.reshape(n, k, 1, 1, h, w)
    return ops.sum_(ops.mul(cr, wr), axis=(4, 5))


class SegmentationNet(Module):
    """Five-stage U-Net with a 6K+1 channel prediction head.

    Frames are resampled to the working resolution ``hw`` before the encoder.
    The head conv starts near zero (std ``head_std``) so that early masks are
    near uniform and keypoints near the grid centroid; the affine-coefficient
    biases start at the identity-matrix pattern so that predicted matrices
    begin well-conditioned.
    """

    def __init__(self, k_parts: int, hw: Tuple[int, int] = (64, 64), widths="tiny",
                 seed: int = 0, allow_batch1: bool = False, head_std: float = 1e-2,
                 kp_head_std: float = 0.5):
        super().__init__()
        if isinstance(widths, str):
            widths = WIDTH_PROFILES[widths]
        if len(widths) != 5:
            raise ValueError(f"expected 5 encoder widths, got {len(widths)}")
        if hw[0] % 32 or hw[1] % 32:
            raise ValueError(f"working resolution must be divisible by 32, got {hw}")
        self.k_parts = k_parts
        self.hw = tuple(hw)
        rng = np.random.default_rng(seed)

        w1, w2, w3, w4, w5 = widths
        self.enc = [
            ConvBlock(3, w1, rng, allow_batch1=allow_batch1),
            ConvBlock(w1, w2, rng, allow_batch1=allow_batch1),
            ConvBlock(w2, w3, rng, allow_batch1=allow_batch1),
            ConvBlock(w3, w4, rng, allow_batch1=allow_batch1),
            ConvBlock(w4, w5, rng, allow_batch1=allow_batch1),
        ]
        self.dec = [
            ConvBlock(w5 + w5, w4, rng, allow_batch1=allow_batch1),
            ConvBlock(w4 + w4, w3, rng, allow_batch1=allow_batch1),
            ConvBlock(w3 + w3, w2, rng, allow_batch1=allow_batch1),
            ConvBlock(w2 + w2, w1, rng, allow_batch1=allow_batch1),
            ConvBlock(w1 + w1, w1, rng, allow_batch1=allow_batch1),
        ]
        head_channels = 6 * k_parts + 1
        self.head = Conv2d(w1, head_channels, 3, padding=1, rng=rng, weight_std=head_std)
        # keypoint heatmap channels start with larger weights so the K
        # soft-argmax points spread around the centroid instead of coinciding;
        # a fully symmetric start leaves all part flows identical and stalls
        # part discovery
        w = self.head.weight.data.copy()
        kp_rows = slice(k_parts + 1, 2 * k_parts + 1)
        w[kp_rows] *= kp_head_std / head_std
        self.head.weight = Parameter(w)
        bias = np.zeros(head_channels, dtype=np.float32)
        for k in range(k_parts):
            base = 2 * k_parts + 1 + 4 * k
            bias[base] = 1.0      # a00
            bias[base + 3] = 1.0  # a11
        self.head.bias = Parameter(bias)

    def forward(self, frames: Tensor) -> SegmentationOutput:
        if frames.ndim == 3:
            frames = frames.reshape((1,) + frames.shape)
        if frames.ndim != 4 or frames.shape[1] != 3:
            raise ShapeError(f"expected (N,3,H,W) frames, got {frames.shape}")
        if frames.shape[2:] != self.hw:
            frames = ops.resize_bilinear(frames, self.hw)

        skips = []
        h = frames
        for block in self.enc:
            h = block(h)
            skips.append(h)
            h = ops.avg_pool2(h)
        for block, skip in zip(self.dec, reversed(skips)):
            h = ops.upsample2(h, mode="nearest")
            h = block(ops.concat([h, skip], axis=1))
        out = self.head(h)

        k = self.k_parts
        y = ops.channel_softmax(out[:, : k + 1])
        p, conf = ops.soft_argmax2d(out[:, k + 1 : 2 * k + 1])
        a = affine_head(out[:, 2 * k + 1 :], conf)
        return SegmentationOutput(y=y, p=p, a=a, conf=conf)

    __call__ = forward
