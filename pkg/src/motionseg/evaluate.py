"""Evaluation protocol: landmark-regression MAE, foreground IoU, flow EPE.

Landmark regression: each foreground segment contributes its soft center of
mass; a linear map (with intercept) from the 2K-vector of centers to every
ground-truth landmark coordinate is fitted on one image set and scored as
mean absolute error (pixels) on another.  Foreground IoU thresholds the
summed foreground channels at 0.5 against the true foreground.  Endpoint
error compares the composed flow with the analytic flow on visible moving
pixels (synthetic data only).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .flow import SegmentMotion, compose_flow, identity_grid, part_flows
from .losses import FeatureExtractor, reconstruction_loss
from .reconnet import ReconstructionNet
from .segnet import SegmentationNet
from .synth import SyntheticDataset
from .tensor import Tensor, no_grad

EMPTY_MASS = 1e-8


def segment_centers(y: np.ndarray) -> np.ndarray:
    """Soft centers of mass of the foreground channels.

    y: (N, K+1, H, W) soft masks (background last).  Returns (N, K, 2) in
    (x, y) pixels; segments with total mass below ``EMPTY_MASS`` fall back to
    the grid centroid.
    """
    n, kp1, h, w = y.shape
    k = kp1 - 1
    y64 = y[:, :k].astype(np.float64)
    grid = identity_grid(h, w, np.float64)
    mass = y64.sum(axis=(2, 3))
    sx = (y64 * grid[0]).sum(axis=(2, 3))
    sy = (y64 * grid[1]).sum(axis=(2, 3))
    centers = np.stack([sx, sy], axis=-1)
    centroid = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    out = np.where(mass[..., None] < EMPTY_MASS, centroid, centers / np.maximum(mass[..., None], EMPTY_MASS))
    return out


def fit_linear_regression(features: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Least-squares linear map with intercept, in float64.

    features: (M, F); targets: (M, L).  Returns (F+1, L) coefficients; the
    last row is the intercept.
    """
    x = np.concatenate([features, np.ones((features.shape[0], 1))], axis=1).astype(np.float64)
    coef, *_ = np.linalg.lstsq(x, targets.astype(np.float64), rcond=None)
    return coef


def apply_linear_regression(coef: np.ndarray, features: np.ndarray) -> np.ndarray:
    x = np.concatenate([features, np.ones((features.shape[0], 1))], axis=1).astype(np.float64)
    return x @ coef


def _predict_centers(segnet: SegmentationNet, dataset: SyntheticDataset,
                     images: Sequence[Tuple[int, int]], batch: int = 16) -> np.ndarray:
    segnet.eval()
    outs = []
    with no_grad():
        for i in range(0, len(images), batch):
            chunk = images[i : i + batch]
            frames = np.stack([dataset.frame(v, t) for v, t in chunk])
            seg = segnet(Tensor(frames))
            outs.append(segment_centers(seg.y.data))
    return np.concatenate(outs, axis=0)


def _gt_landmarks(dataset: SyntheticDataset, images: Sequence[Tuple[int, int]]) -> np.ndarray:
    rows = []
    for v, t in images:
        centers, _ = dataset.poses(v, t)
        rows.append(centers.reshape(-1))
    return np.asarray(rows)


def evaluate_mae(segnet: SegmentationNet, dataset: SyntheticDataset,
                 fit_images: Sequence[Tuple[int, int]],
                 test_images: Sequence[Tuple[int, int]]) -> float:
    """Landmark-regression mean absolute error in pixels."""
    if set(fit_images) & set(test_images):
        raise ValueError("fit and test image sets must be disjoint")
    feats_fit = _predict_centers(segnet, dataset, fit_images).reshape(len(fit_images), -1)
    feats_test = _predict_centers(segnet, dataset, test_images).reshape(len(test_images), -1)
    lm_fit = _gt_landmarks(dataset, fit_images)
    lm_test = _gt_landmarks(dataset, test_images)
    coef = fit_linear_regression(feats_fit, lm_fit)
    pred = apply_linear_regression(coef, feats_test)
    return float(np.abs(pred - lm_test).mean())


def foreground_iou(pred_fg: np.ndarray, gt_fg: np.ndarray) -> float:
    """IoU of two boolean masks (empty union counts as full agreement)."""
    inter = np.logical_and(pred_fg, gt_fg).sum()
    union = np.logical_or(pred_fg, gt_fg).sum()
    if union == 0:
        return 1.0
    return float(inter) / float(union)


def evaluate_iou(segnet: SegmentationNet, dataset: SyntheticDataset,
                 test_images: Sequence[Tuple[int, int]], threshold: float = 0.5,
                 batch: int = 16) -> float:
    """Mean foreground IoU over the test images."""
    segnet.eval()
    scores = []
    with no_grad():
        for i in range(0, len(test_images), batch):
            chunk = test_images[i : i + batch]
            frames = np.stack([dataset.frame(v, t) for v, t in chunk])
            seg = segnet(Tensor(frames))
            k = seg.k_parts
            pred_fg = seg.y.data[:, :k].sum(axis=1) > threshold
            for j, (v, t) in enumerate(chunk):
                gt_fg = dataset.label(v, t) != dataset.k_parts
                scores.append(foreground_iou(pred_fg[j], gt_fg))
    return float(np.mean(scores))


def predict_flow(segnet: SegmentationNet, x_s: np.ndarray, x_t: np.ndarray,
                 ridge_eps: float = 1e-6) -> np.ndarray:
    """Compose the model flow for a frame pair, (2, H', W') numpy."""
    segnet.eval()
    with no_grad():
        seg_s = segnet(Tensor(x_s[None]))
        seg_t = segnet(Tensor(x_t[None]))
        hp, wp = seg_t.y.shape[2], seg_t.y.shape[3]
        grid = identity_grid(hp, wp, seg_t.y.dtype)
        motion = SegmentMotion.from_outputs(seg_s, seg_t)
        flow = compose_flow(seg_t.y, part_flows(motion, grid, ridge_eps), grid)
    return flow.data[0]


def endpoint_error(flow_pred: np.ndarray, flow_gt: np.ndarray,
                   mask: np.ndarray) -> Tuple[float, int]:
    """Sum and count of per-pixel endpoint errors on ``mask``."""
    d = flow_pred.astype(np.float64) - flow_gt
    epe = np.sqrt(d[0] ** 2 + d[1] ** 2)
    return float(epe[mask].sum()), int(mask.sum())


def evaluate_epe(segnet: SegmentationNet, dataset: SyntheticDataset,
                 pairs: Sequence[Tuple[int, int, int]], ridge_eps: float = 1e-6) -> float:
    """Mean endpoint error over visible foreground pixels of the given pairs."""
    total, count = 0.0, 0
    for vid, t_s, t_t in pairs:
        sample = dataset.make_sample(vid, t_s, t_t)
        pred = predict_flow(segnet, sample.x_s, sample.x_t, ridge_eps)
        if pred.shape[1:] != sample.flow.shape[1:]:
            raise ValueError(
                f"flow resolution {pred.shape[1:]} != ground truth {sample.flow.shape[1:]}"
            )
        fg = sample.label_t != dataset.k_parts
        mask = fg & sample.valid
        s, c = endpoint_error(pred, sample.flow, mask)
        total += s
        count += c
    return total / max(count, 1)


# ---------------------------------------------------------------------------
# report


@dataclass
class MetricsReport:
    variant: str
    mae: float
    iou: float
    epe: float
    recon_loss: float
    n_fit: int
    n_test: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "MetricsReport":
        data = json.loads(text)
        validate_report(data)
        return MetricsReport(**data)


REPORT_FIELDS = {
    "variant": str,
    "mae": (int, float),
    "iou": (int, float),
    "epe": (int, float),
    "recon_loss": (int, float),
    "n_fit": int,
    "n_test": int,
}


def validate_report(data: dict) -> None:
    """Check a metrics report dict against the documented schema."""
    missing = set(REPORT_FIELDS) - set(data)
    extra = set(data) - set(REPORT_FIELDS)
    if missing or extra:
        raise ValueError(f"bad report: missing={sorted(missing)}, unexpected={sorted(extra)}")
    for name, types in REPORT_FIELDS.items():
        if not isinstance(data[name], types):
            raise ValueError(f"bad report field '{name}': expected {types}, got {type(data[name])}")
    if not 0.0 <= data["iou"] <= 1.0:
        raise ValueError(f"iou out of range: {data['iou']}")
    if data["mae"] < 0 or data["epe"] < 0:
        raise ValueError("mae and epe must be non-negative")


def eval_image_split(dataset: SyntheticDataset, eval_videos: Sequence[int],
                     n_fit: int = 500, n_test: int = 100) -> Tuple[List[Tuple[int, int]], List[Tuple[int, int]]]:
    """Deterministic fit/test image lists drawn from held-out videos."""
    images = [(v, t) for v in eval_videos for t in range(dataset.n_frames)]
    if len(images) < n_fit + n_test:
        raise ValueError(
            f"need {n_fit + n_test} held-out images, have {len(images)};"
            " reduce the split sizes or add videos"
        )
    return images[:n_fit], images[n_fit : n_fit + n_test]


def eval_pairs(dataset: SyntheticDataset, eval_videos: Sequence[int],
               pairs_per_video: int = 2, seed: int = 2024) -> List[Tuple[int, int, int]]:
    """Deterministic frame pairs from held-out videos for flow metrics."""
    from .synth import sample_pair_indices

    rng = np.random.default_rng(seed)
    pairs = []
    for v in eval_videos:
        for _ in range(pairs_per_video):
            i, j = sample_pair_indices(rng, dataset.n_frames)
            pairs.append((v, i, j))
    return pairs


def evaluate_model(segnet: SegmentationNet, reconnet: ReconstructionNet,
                   extractor: FeatureExtractor, dataset: SyntheticDataset,
                   eval_videos: Sequence[int], variant: str, scales: Sequence[int],
                   n_fit: int = 500, n_test: int = 100, ridge_eps: float = 1e-6) -> MetricsReport:
    """Full metrics over a held-out video range."""
    fit_images, test_images = eval_image_split(dataset, eval_videos, n_fit, n_test)
    mae = evaluate_mae(segnet, dataset, fit_images, test_images)
    iou = evaluate_iou(segnet, dataset, test_images)
    pairs = eval_pairs(dataset, eval_videos)
    epe = evaluate_epe(segnet, dataset, pairs, ridge_eps)

    segnet.eval()
    reconnet.eval()
    losses = []
    with no_grad():
        for vid, t_s, t_t in pairs:
            sample = dataset.make_sample(vid, t_s, t_t)
            x_s = Tensor(sample.x_s[None])
            x_t = Tensor(sample.x_t[None])
            res = reconnet.reconstruct(x_s, segnet(x_s), segnet(x_t), variant, ridge_eps)
            losses.append(reconstruction_loss(res.x_rec, x_t, extractor, scales).item())
    return MetricsReport(variant=variant, mae=mae, iou=iou, epe=epe,
                         recon_loss=float(np.mean(losses)),
                         n_fit=len(fit_images), n_test=len(test_images))
