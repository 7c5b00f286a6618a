"""Training objective: multi-scale reconstruction loss plus equivariance loss.

The reconstruction loss compares feature activations of the reconstructed and
real target frames at several resolutions (mean absolute difference per
tapped layer, summed over taps and scales).  Features come from a frozen,
seeded stack of random conv+relu layers, or from the raw pixels.

The equivariance loss constrains keypoints and affine matrices predicted on a
geometrically transformed frame to be consistent with the transform:
``sum_k |p_k - g(p~_k)| + sum_k |I - A_k (J_g A~_k)^-1|`` where tilde marks
predictions on the transformed frame and J_g is the transform Jacobian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from . import ops
from .segnet import SegmentationOutput
from .tensor import ShapeError, Tensor


# ---------------------------------------------------------------------------
# feature extractor


class FeatureExtractor:
    """Frozen feature stack for the reconstruction loss.

    mode "raw-pixels": features are the image itself (used by exact oracles).
    mode "random-conv": a seeded stack of conv3x3+relu layers with taps after
    every relu; weights are fixed at construction and receive no gradient.
    """

    MODES = ("raw-pixels", "random-conv")

    def __init__(self, mode: str = "random-conv", channels: Sequence[int] = (8, 8, 8),
                 seed: int = 77, dtype=np.float32):
        if mode not in self.MODES:
            raise ValueError(f"unknown extractor mode '{mode}'; expected one of {self.MODES}")
        self.mode = mode
        self.channels = tuple(channels)
        self.seed = seed
        self.weights: List[Tensor] = []
        if mode == "random-conv":
            rng = np.random.default_rng(seed)
            c_in = 3
            for c_out in self.channels:
                w = (rng.standard_normal((c_out, c_in, 3, 3)) * math.sqrt(2.0 / (c_in * 9)))
                self.weights.append(Tensor(w.astype(dtype)))
                c_in = c_out

    def features(self, img: Tensor) -> List[Tensor]:
        if self.mode == "raw-pixels":
            return [img]
        if img.dtype != self.weights[0].dtype:
            weights = [w.to(img.dtype) for w in self.weights]
        else:
            weights = self.weights
        taps = []
        h = img
        for w in weights:
            h = ops.relu(ops.conv2d(h, w, stride=1, padding=1))
            taps.append(h)
        return taps


# ---------------------------------------------------------------------------
# reconstruction loss


def _downsample_to(img: Tensor, size: int) -> Tensor:
    h = img.shape[2]
    if h == size:
        return img
    if h % size:
        raise ShapeError(f"scale {size} does not divide frame size {h}")
    factor = h // size
    if factor & (factor - 1):
        raise ShapeError(f"scale {size} is not a power-of-two fraction of {h}")
    out = img
    while out.shape[2] > size:
        out = ops.avg_pool2(out)
    return out


def reconstruction_loss(x_rec: Tensor, x_ref: Tensor, extractor: FeatureExtractor,
                        scales: Sequence[int]) -> Tensor:
    """Sum over scales and feature taps of mean absolute feature differences."""
    if x_rec.shape != x_ref.shape:
        raise ShapeError(f"shape mismatch: {x_rec.shape} vs {x_ref.shape}")
    total = None
    for s in scales:
        a = _downsample_to(x_rec, s)
        b = _downsample_to(x_ref, s)
        for fa, fb in zip(extractor.features(a), extractor.features(b)):
            term = ops.mean(ops.abs_(ops.sub(fa, fb)))
            total = term if total is None else ops.add(total, term)
    if total is None:
        raise ValueError("at least one scale is required")
    return total


# ---------------------------------------------------------------------------
# geometric transforms


@dataclass
class TransformRanges:
    """Sampling ranges for equivariance transforms (at a 64-pixel frame)."""

    max_deg: float = 15.0
    scale_low: float = 0.85
    scale_high: float = 1.15
    max_translate: float = 8.0
    max_shear: float = 0.1

    @staticmethod
    def identity() -> "TransformRanges":
        return TransformRanges(max_deg=0.0, scale_low=1.0, scale_high=1.0,
                               max_translate=0.0, max_shear=0.0)


@dataclass
class GeometricTransform:
    """Affine map ``g(z) = J (z - c) + c + t`` about the image center ``c``."""

    jac: np.ndarray
    translation: np.ndarray
    center: np.ndarray

    @staticmethod
    def identity(hw: Tuple[int, int]) -> "GeometricTransform":
        c = np.array([(hw[1] - 1) / 2.0, (hw[0] - 1) / 2.0])
        return GeometricTransform(np.eye(2), np.zeros(2), c)

    def apply_np(self, pts: np.ndarray) -> np.ndarray:
        """Apply to an (..., 2) array of (x, y) points."""
        rel = pts - self.center
        out = rel @ self.jac.T
        return out + self.center + self.translation

    def apply(self, pts: Tensor) -> Tensor:
        """Differentiable application to a (..., 2) tensor of points."""
        j = self.jac.astype(pts.dtype)
        off = (self.center + self.translation - self.jac @ self.center).astype(pts.dtype)
        px, py = pts[..., 0], pts[..., 1]
        qx = ops.add(ops.add(ops.mul(px, float(j[0, 0])), ops.mul(py, float(j[0, 1]))), float(off[0]))
        qy = ops.add(ops.add(ops.mul(px, float(j[1, 0])), ops.mul(py, float(j[1, 1]))), float(off[1]))
        return ops.stack([qx, qy], axis=-1)

    def rescaled(self, factor: float) -> "GeometricTransform":
        """Same transform expressed at a resolution scaled by ``factor``.

        Pixel centers map as x' = factor*x + (factor-1)/2 (half-pixel-center
        convention), so the pivot shifts accordingly while the Jacobian is
        resolution-free and translations scale linearly.
        """
        center = self.center * factor + (factor - 1.0) / 2.0
        return GeometricTransform(self.jac.copy(), self.translation * factor, center)


def sample_transform(rng: np.random.Generator, ranges: TransformRanges,
                     hw: Tuple[int, int]) -> GeometricTransform:
    """Draw a random affine transform; deterministic per rng state.

    Rotation U(-max_deg, max_deg), log-scale U(log scale_low, log scale_high),
    shear U(-max_shear, max_shear), translation U(-max_translate,
    max_translate) per axis scaled to the frame height (ranges are quoted at
    height 64).
    """
    theta = math.radians(rng.uniform(-ranges.max_deg, ranges.max_deg))
    log_s = rng.uniform(math.log(ranges.scale_low), math.log(ranges.scale_high))
    shear = rng.uniform(-ranges.max_shear, ranges.max_shear)
    t_scale = hw[0] / 64.0
    t = rng.uniform(-ranges.max_translate, ranges.max_translate, size=2) * t_scale
    rot = np.array([[math.cos(theta), -math.sin(theta)],
                    [math.sin(theta), math.cos(theta)]])
    sh = np.array([[1.0, shear], [0.0, 1.0]])
    jac = rot @ sh * math.exp(log_s)
    center = np.array([(hw[1] - 1) / 2.0, (hw[0] - 1) / 2.0])
    return GeometricTransform(jac=jac, translation=t, center=center)


def warp_frame(frame: Tensor, transform: GeometricTransform) -> Tensor:
    """Resample ``frame`` at transformed coordinates (edges clamped).

    Output pixel u takes the value of the input at g(u), so image content
    moves by the inverse map: predictions on the warped frame relate to the
    originals by ``p = g(p~)`` and ``A = J_g A~``, which is exactly what the
    equivariance loss penalizes deviations from.
    """
    if frame.ndim != 4:
        raise ShapeError(f"expected (N,3,H,W) frame batch, got {frame.shape}")
    n, _, h, w = frame.shape
    grid = ops.coordinate_grid(h, w, frame.dtype)  # (2, h, w)
    pts = np.moveaxis(grid, 0, -1)  # (h, w, 2)
    coords = np.moveaxis(transform.apply_np(pts), -1, 0).astype(frame.dtype)
    coords = np.broadcast_to(coords, (n, 2, h, w))
    return ops.grid_sample_bilinear(frame, coords)


# ---------------------------------------------------------------------------
# equivariance loss


def equivariance_loss(seg: SegmentationOutput, seg_warped: SegmentationOutput,
                      transform: GeometricTransform,
                      ridge_eps: float = 0.0) -> Tuple[Tensor, Tensor]:
    """Keypoint and matrix consistency terms (each a scalar, batch-averaged).

    keypoint term: sum_k |p_k - g(p~_k)|_1
    matrix term:   sum_k |I - A_k (J_g A~_k)^-1|_1

    The default inverse is exact, so the loss vanishes identically in the
    self-consistent identity-transform case; training passes a small ridge
    for robustness against ill-conditioned predicted matrices.
    """
    n, k = seg.p.shape[0], seg.p.shape[1]
    dtype = seg.p.dtype

    p_mapped = transform.apply(seg_warped.p)
    kp_term = ops.mean(ops.sum_(ops.abs_(ops.sub(seg.p, p_mapped)), axis=(1, 2)))

    jac = np.broadcast_to(transform.jac.astype(dtype), (n, k, 2, 2)).copy()
    b = ops.mat2_mul(Tensor(jac), seg_warped.a)
    c = ops.mat2_mul(seg.a, ops.inv2x2(b, ridge=ridge_eps))
    eye = np.broadcast_to(np.eye(2, dtype=dtype), (n, k, 2, 2)).copy()
    mat_term = ops.mean(ops.sum_(ops.abs_(ops.sub(Tensor(eye), c)), axis=(1, 2, 3)))
    return kp_term, mat_term


def total_loss(l_rec: Tensor, kp_term: Tensor, mat_term: Tensor,
               lambda_eq: float = 10.0, lambda_mat: float = 10.0) -> Tensor:
    """Overall objective: reconstruction plus weighted equivariance terms."""
    total = l_rec
    if lambda_eq:
        total = ops.add(total, ops.mul(kp_term, lambda_eq))
    if lambda_mat:
        total = ops.add(total, ops.mul(mat_term, lambda_mat))
    return total
