"""Training loop, configuration, Adam optimizer and checkpointing.

A training step samples frame pairs from random training videos, runs the
segmentation network on both frames (and on a randomly warped target frame
for the equivariance terms), reconstructs the target through the selected
variant, and takes one Adam step on the total loss.  Runs are deterministic
per (config, seed, dataset): all randomness flows through one generator whose
state is checkpointed, so a resumed run reproduces an uninterrupted one
bit for bit.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from . import cpmt
from .losses import (
    FeatureExtractor,
    TransformRanges,
    equivariance_loss,
    reconstruction_loss,
    sample_transform,
    total_loss,
    warp_frame,
)
from .reconnet import VARIANTS, ReconstructionNet
from .segnet import WIDTH_PROFILES, SegmentationNet
from .synth import SyntheticDataset, sample_pair_indices
from .tensor import NumericError, Tensor


class ConfigError(ValueError):
    """Raised for invalid configuration values, naming the offending field."""


@dataclass
class TrainConfig:
    """Desk-scale defaults; ``paper_scale`` gives the published settings."""

    variant: str = "full"
    k_parts: int = 3
    lr: float = 2e-4
    batch_size: int = 4
    iterations: int = 2000
    height: int = 64
    width: int = 64
    seg_widths: str = "tiny"
    bottleneck_channels: int = 32
    scales: Tuple[int, ...] = (64, 32, 16)
    lambda_eq: float = 10.0
    lambda_mat: float = 10.0
    max_deg: float = 15.0
    scale_low: float = 0.85
    scale_high: float = 1.15
    max_translate: float = 8.0
    max_shear: float = 0.1
    seed: int = 0
    extractor: str = "random-conv"
    extractor_channels: Tuple[int, ...] = (8, 8, 8)
    extractor_seed: int = 77
    ridge_eps: float = 1e-6
    bn_batch1: bool = False
    checkpoint_every: int = 1000
    train_fraction: float = 0.8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    @staticmethod
    def paper_scale() -> "TrainConfig":
        return TrainConfig(k_parts=10, batch_size=20, iterations=10000,
                           height=256, width=256, seg_widths="full",
                           bottleneck_channels=64, scales=(256, 128, 64, 32))

    def validate(self) -> "TrainConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant: '{self.variant}' not in {VARIANTS}")
        if self.k_parts < 1:
            raise ConfigError(f"k_parts: must be >= 1, got {self.k_parts}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size: must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr: must be > 0, got {self.lr}")
        if self.iterations < 1:
            raise ConfigError(f"iterations: must be >= 1, got {self.iterations}")
        if self.seg_widths not in WIDTH_PROFILES:
            raise ConfigError(f"seg_widths: '{self.seg_widths}' not in {sorted(WIDTH_PROFILES)}")
        if self.bottleneck_channels % 4:
            raise ConfigError(f"bottleneck_channels: must be divisible by 4, got {self.bottleneck_channels}")
        if self.height % 32 or self.width % 32:
            raise ConfigError(f"height/width: must be divisible by 32, got {self.height}x{self.width}")
        for s in self.scales:
            if self.height % s:
                raise ConfigError(f"scales: {s} does not divide frame height {self.height}")
        if not 0 < self.scale_low <= self.scale_high:
            raise ConfigError(f"scale_low/scale_high: bad range ({self.scale_low}, {self.scale_high})")
        if self.extractor not in FeatureExtractor.MODES:
            raise ConfigError(f"extractor: '{self.extractor}' not in {FeatureExtractor.MODES}")
        if not 0 < self.train_fraction < 1:
            raise ConfigError(f"train_fraction: must be in (0,1), got {self.train_fraction}")
        if self.ridge_eps <= 0:
            raise ConfigError(f"ridge_eps: must be > 0, got {self.ridge_eps}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scales"] = list(self.scales)
        d["extractor_channels"] = list(self.extractor_channels)
        return d

    @staticmethod
    def from_dict(data: dict) -> "TrainConfig":
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"{sorted(unknown)[0]}: unknown config field")
        kwargs = dict(data)
        if "scales" in kwargs:
            kwargs["scales"] = tuple(kwargs["scales"])
        if "extractor_channels" in kwargs:
            kwargs["extractor_channels"] = tuple(kwargs["extractor_channels"])
        return TrainConfig(**kwargs).validate()

    def transform_ranges(self) -> TransformRanges:
        return TransformRanges(max_deg=self.max_deg, scale_low=self.scale_low,
                               scale_high=self.scale_high, max_translate=self.max_translate,
                               max_shear=self.max_shear)


def load_config(path, overrides: Optional[Dict[str, str]] = None) -> TrainConfig:
    """Read a JSON config file and apply string-typed overrides."""
    data = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config: file not found: {p}")
        with open(p) as f:
            data = json.load(f)
    if overrides:
        base = TrainConfig()
        for key, raw in overrides.items():
            if not hasattr(base, key):
                raise ConfigError(f"{key}: unknown config field")
            current = getattr(base, key)
            try:
                if isinstance(current, bool):
                    value = raw.lower() in ("1", "true", "yes")
                elif isinstance(current, int):
                    value = int(raw)
                elif isinstance(current, float):
                    value = float(raw)
                elif isinstance(current, tuple):
                    value = [type(current[0])(v) for v in raw.split(",")]
                else:
                    value = raw
            except ValueError as exc:
                raise ConfigError(f"{key}: cannot parse '{raw}' ({exc})") from exc
            data[key] = value
    return TrainConfig.from_dict(data)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with per-parameter first/second moment estimates."""

    def __init__(self, params: Dict[str, "Tensor"], lr: float = 2e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m[...] = b1 * m + (1 - b1) * g
            v[...] = b2 * v + (1 - b2) * (g * g)
            mhat = m / bias1
            vhat = v / bias2
            p.data = p.data - (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)


# ---------------------------------------------------------------------------
# model assembly


def build_models(config: TrainConfig) -> Tuple[SegmentationNet, ReconstructionNet, FeatureExtractor]:
    segnet = SegmentationNet(config.k_parts, hw=(64, 64), widths=config.seg_widths,
                             seed=config.seed, allow_batch1=config.bn_batch1)
    extra = config.k_parts + 1 if config.variant == "naive" else 0
    reconnet = ReconstructionNet(bottleneck_channels=config.bottleneck_channels,
                                 extra_bottleneck=extra, seed=config.seed + 1,
                                 allow_batch1=config.bn_batch1)
    extractor = FeatureExtractor(mode=config.extractor, channels=config.extractor_channels,
                                 seed=config.extractor_seed)
    return segnet, reconnet, extractor


def merged_params(segnet: SegmentationNet, reconnet: ReconstructionNet) -> Dict[str, Tensor]:
    params = {f"seg.{name}": p for name, p in segnet.named_parameters()}
    params.update({f"gen.{name}": p for name, p in reconnet.named_parameters()})
    return params


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(path, segnet: SegmentationNet, reconnet: ReconstructionNet,
                    optimizer: Adam, iteration: int, config: TrainConfig,
                    rng: np.random.Generator) -> Path:
    path = Path(path)
    tensors: Dict[str, np.ndarray] = {}
    for name, arr in segnet.state_dict().items():
        tensors[f"seg.{name}"] = arr
    for name, arr in reconnet.state_dict().items():
        tensors[f"gen.{name}"] = arr
    for name, arr in optimizer.m.items():
        tensors[f"adam.m.{name}"] = arr
    for name, arr in optimizer.v.items():
        tensors[f"adam.v.{name}"] = arr
    meta = {
        "kind": "motionseg-checkpoint-v1",
        "iteration": iteration,
        "adam_t": optimizer.t,
        "config": config.to_dict(),
        "rng_state": rng.bit_generator.state,
    }
    cpmt.write_container(path, tensors, meta)
    return path


def load_checkpoint(path):
    """Rebuild (segnet, reconnet, optimizer, iteration, config, rng) from disk."""
    tensors, meta = cpmt.read_container(path)
    if meta.get("kind") != "motionseg-checkpoint-v1":
        raise cpmt.FormatError(f"{path}: not a motionseg checkpoint")
    config = TrainConfig.from_dict(meta["config"])
    segnet, reconnet, extractor = build_models(config)
    segnet.load_state_dict({n[4:]: a for n, a in tensors.items() if n.startswith("seg.")})
    reconnet.load_state_dict({n[4:]: a for n, a in tensors.items() if n.startswith("gen.")})
    optimizer = Adam(merged_params(segnet, reconnet), lr=config.lr,
                     beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps)
    optimizer.t = meta["adam_t"]
    for name in optimizer.m:
        optimizer.m[name] = tensors[f"adam.m.{name}"].astype(optimizer.m[name].dtype)
        optimizer.v[name] = tensors[f"adam.v.{name}"].astype(optimizer.v[name].dtype)
    rng = np.random.default_rng(0)
    rng.bit_generator.state = meta["rng_state"]
    return segnet, reconnet, extractor, optimizer, meta["iteration"], config, rng


# ---------------------------------------------------------------------------
# training


def train_split(dataset: SyntheticDataset, fraction: float) -> Tuple[range, range]:
    """Leading videos train, trailing videos are held out for evaluation."""
    n_train = max(1, int(round(dataset.n_videos * fraction)))
    n_train = min(n_train, dataset.n_videos - 1) if dataset.n_videos > 1 else 1
    return range(n_train), range(n_train, dataset.n_videos)


def _csv_row(iteration: int, l_rec: float, kp: float, mat: float, total: float,
             wall_ms: float) -> str:
    return f"{iteration},{l_rec!r},{kp!r},{mat!r},{total!r},{wall_ms:.3f}\n"


def train(config: TrainConfig, dataset: SyntheticDataset, out_dir,
          resume_from=None) -> Path:
    """Run the training loop; returns the final checkpoint path.

    Writes ``loss.csv`` (columns iter, l_rec, l_eq_kp, l_eq_A, total,
    wall_ms) and periodic checkpoints under ``out_dir``.  On a non-finite
    loss the last batch indices and parameter norms are dumped to
    ``diagnostic.json`` before the error propagates.
    """
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        segnet, reconnet, extractor, optimizer, start_iter, ck_config, rng = load_checkpoint(resume_from)
        if ck_config.to_dict() != config.to_dict():
            raise ConfigError("config: resume config differs from checkpoint config")
    else:
        segnet, reconnet, extractor = build_models(config)
        optimizer = Adam(merged_params(segnet, reconnet), lr=config.lr,
                         beta1=config.adam_beta1, beta2=config.adam_beta2,
                         eps=config.adam_eps)
        start_iter = 0
        rng = np.random.default_rng(config.seed)

    train_videos, _ = train_split(dataset, config.train_fraction)
    ranges = config.transform_ranges()
    seg_hw = segnet.hw
    frame_scale = config.height / seg_hw[0]

    csv_path = out / "loss.csv"
    mode = "a" if (resume_from is not None and csv_path.exists()) else "w"
    csv_file = open(csv_path, mode)
    if mode == "w":
        csv_file.write("iter,l_rec,l_eq_kp,l_eq_A,total,wall_ms\n")

    segnet.train(True)
    reconnet.train(True)
    last_pairs = []
    try:
        for it in range(start_iter, config.iterations):
            t0 = time.perf_counter()
            last_pairs = [
                (
                    int(train_videos[int(rng.integers(len(train_videos)))]),
                    *sample_pair_indices(rng, dataset.n_frames),
                )
                for _ in range(config.batch_size)
            ]
            xs, xt = dataset.frame_batch(last_pairs)
            x_s = Tensor(xs)
            x_t = Tensor(xt)

            seg_s = segnet(x_s)
            seg_t = segnet(x_t)
            result = reconnet.reconstruct(x_s, seg_s, seg_t, config.variant, config.ridge_eps)
            l_rec = reconstruction_loss(result.x_rec, x_t, extractor, config.scales)

            g = sample_transform(rng, ranges, seg_hw)
            x_w = warp_frame(x_t, g.rescaled(frame_scale) if frame_scale != 1.0 else g)
            seg_w = segnet(x_w)
            kp_term, mat_term = equivariance_loss(seg_t, seg_w, g, config.ridge_eps)

            loss = total_loss(l_rec, kp_term, mat_term, config.lambda_eq, config.lambda_mat)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            wall_ms = (time.perf_counter() - t0) * 1e3
            csv_file.write(_csv_row(it, l_rec.item(), kp_term.item(), mat_term.item(),
                                    loss.item(), wall_ms))
            csv_file.flush()

            done = it + 1
            if config.checkpoint_every and done % config.checkpoint_every == 0 and done < config.iterations:
                save_checkpoint(out / f"ckpt_{done:06d}", segnet, reconnet, optimizer,
                                done, config, rng)
    except NumericError:
        _dump_diagnostics(out, segnet, reconnet, last_pairs)
        raise
    finally:
        csv_file.close()

    final = save_checkpoint(out / "ckpt_final", segnet, reconnet, optimizer,
                            config.iterations, config, rng)
    return final


def _dump_diagnostics(out: Path, segnet, reconnet, pairs) -> None:
    norms = {name: float(np.linalg.norm(p.data)) for name, p in merged_params(segnet, reconnet).items()}
    with open(out / "diagnostic.json", "w") as f:
        json.dump({"last_batch_pairs": [list(p) for p in pairs], "param_norms": norms}, f, indent=1)
