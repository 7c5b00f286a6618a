"""Seeded generator of articulated-shape videos with exact ground truth.

Each video shows textured parts (rectangle / ellipse / capsule) moving over a
static textured background along smooth affine trajectories.  Textures are
band-limited sinusoid mixtures evaluated in part-local coordinates, so the
rendered pair of frames is an exact sample of one continuous function in two
poses: the analytic backward flow reproduces the target from the source up to
bilinear-interpolation error (exactly, for integer-translation motion).

Ground truth per frame: one-hot part masks (background last), the affine pose
(center + 2x2 matrix) of every part, and, per frame pair, the analytic
backward flow, the occlusion map (target background covered by source
foreground) and a conservative validity mask for warp-based checks.

Disk layout:
    dataset/manifest.json
    dataset/vid_0000/frame_00.png      8-bit RGB frames
    dataset/vid_0000/gt_00.cpmt        one-hot masks, (K+1, H, W) float32
    dataset/vid_0000/poses.cpmt        (T, K, 2, 3) float64, [:, :, :, :2] = A,
                                       [:, :, :, 2] = center
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from . import cpmt
from .flow import identity_grid

SHAPES = ("rectangle", "ellipse", "capsule")

# per-wave frequency bands (rad/px) and curvature budgets a * |w|^2; the
# budgets keep the bilinear interpolation error of a rendered texture under
# ~0.003 so warp-reconstruction checks pass at the 2/255 tolerance
_WAVE_BANDS = ((0.12, 0.18), (0.18, 0.26), (0.28, 0.38), (0.40, 0.50))
_WAVE_BUDGETS = (0.00225, 0.00387, 0.00545, 0.004)


# ---------------------------------------------------------------------------
# textures


@dataclass
class TextureParams:
    """Smooth RGB texture: per channel a base level plus sinusoid waves."""

    base: np.ndarray          # (3,)
    amp: np.ndarray           # (3, J)
    freq: np.ndarray          # (3, J, 2) rad/px
    phase: np.ndarray         # (3, J)


def sample_texture(rng: np.random.Generator, base: Optional[Sequence[float]] = None) -> TextureParams:
    n_waves = len(_WAVE_BANDS)
    if base is None:
        base_arr = rng.uniform(0.30, 0.70, size=3)
    else:
        base_arr = np.asarray(base, dtype=np.float64)
    amp = np.zeros((3, n_waves))
    freq = np.zeros((3, n_waves, 2))
    phase = rng.uniform(0, 2 * np.pi, size=(3, n_waves))
    for c in range(3):
        for j, ((lo, hi), budget) in enumerate(zip(_WAVE_BANDS, _WAVE_BUDGETS)):
            w = rng.uniform(lo, hi)
            ang = rng.uniform(0, 2 * np.pi)
            freq[c, j] = (w * np.cos(ang), w * np.sin(ang))
            amp[c, j] = budget / (w * w)
    return TextureParams(base=base_arr, amp=amp, freq=freq, phase=phase)


def eval_texture(tex: TextureParams, u: np.ndarray) -> np.ndarray:
    """Evaluate at continuous local coordinates u (2, ...) -> (3, ...)."""
    ux, uy = u[0], u[1]
    out = np.empty((3,) + ux.shape, dtype=np.float64)
    for c in range(3):
        acc = np.full(ux.shape, tex.base[c])
        for j in range(tex.amp.shape[1]):
            acc += tex.amp[c, j] * np.sin(tex.freq[c, j, 0] * ux + tex.freq[c, j, 1] * uy + tex.phase[c, j])
        out[c] = acc
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# trajectories and parts


@dataclass
class Trajectory:
    """Sinusoidal affine pose path; time parameter runs over [0, 1]."""

    center0: np.ndarray            # (2,)
    center_amp: np.ndarray         # (2,)
    center_freq: np.ndarray        # (2,) cycles per video
    center_phase: np.ndarray       # (2,)
    angle_amp: float = 0.0
    angle_freq: float = 1.0
    angle_phase: float = 0.0
    log_scale_amp: np.ndarray = field(default_factory=lambda: np.zeros(2))
    log_scale_freq: np.ndarray = field(default_factory=lambda: np.ones(2))
    log_scale_phase: np.ndarray = field(default_factory=lambda: np.zeros(2))
    integer_motion: bool = False

    def pose(self, t01: float) -> Tuple[np.ndarray, np.ndarray]:
        """Center and 2x2 matrix of the part at normalized time t01."""
        c = self.center0 + self.center_amp * np.sin(2 * np.pi * self.center_freq * t01 + self.center_phase)
        if self.integer_motion:
            return np.round(c), np.eye(2)
        theta = self.angle_amp * np.sin(2 * np.pi * self.angle_freq * t01 + self.angle_phase)
        ls = self.log_scale_amp * np.sin(2 * np.pi * self.log_scale_freq * t01 + self.log_scale_phase)
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        return c, rot @ np.diag(np.exp(ls))

    def max_scale(self) -> float:
        return float(np.exp(np.max(np.abs(self.log_scale_amp))))


@dataclass
class PartSpec:
    shape: str                 # rectangle | ellipse | capsule
    size: Tuple[float, float]  # half extents / semi-axes / (half length, radius)
    texture: TextureParams
    z: int
    traj: Trajectory

    def bounding_radius(self) -> float:
        a, b = self.size
        if self.shape == "rectangle":
            return float(np.hypot(a, b))
        if self.shape == "ellipse":
            return float(max(a, b))
        if self.shape == "capsule":
            return float(a + b)
        raise ValueError(f"unknown shape '{self.shape}'")


@dataclass
class SceneSpec:
    height: int
    width: int
    n_frames: int
    background: TextureParams
    parts: List[PartSpec]
    integer_motion: bool = False

    @property
    def k_parts(self) -> int:
        return len(self.parts)


def _region_mask(shape: str, size, u: np.ndarray) -> np.ndarray:
    a, b = size
    ux, uy = u[0], u[1]
    if shape == "rectangle":
        return (np.abs(ux) <= a) & (np.abs(uy) <= b)
    if shape == "ellipse":
        return (ux / a) ** 2 + (uy / b) ** 2 <= 1.0
    if shape == "capsule":
        cx = np.clip(ux, -a, a)
        return (ux - cx) ** 2 + uy ** 2 <= b * b
    raise ValueError(f"unknown shape '{shape}'")


def sample_scene_spec(rng: np.random.Generator, hw: Tuple[int, int] = (64, 64),
                      n_frames: int = 16, n_parts: int = 2,
                      integer_motion: bool = False,
                      part_base_colors: Optional[Sequence[Sequence[float]]] = None,
                      motion_scale: float = 1.0,
                      max_tries: int = 50) -> SceneSpec:
    """Draw a scene whose parts stay fully inside the canvas in every frame.

    ``motion_scale`` multiplies the trajectory amplitude ranges (translation
    and rotation); placement retries keep scaled-up motion inside the canvas.
    """
    h, w = hw
    background = sample_texture(rng)
    parts: List[PartSpec] = []
    for k in range(n_parts):
        base = None
        if part_base_colors is not None and k < len(part_base_colors):
            base = part_base_colors[k]
        texture = sample_texture(rng, base=base)
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
        for attempt in range(max_tries):
            if shape == "capsule":
                size = (float(rng.uniform(6, 10)), float(rng.uniform(3.5, 5.5)))
            else:
                size = (float(rng.uniform(6, 12)), float(rng.uniform(6, 12)))
            traj = _sample_trajectory(rng, hw, integer_motion, motion_scale)
            part = PartSpec(shape=shape, size=size, texture=texture, z=k, traj=traj)
            if _inside_canvas(part, hw, n_frames):
                parts.append(part)
                break
        else:
            raise RuntimeError(f"could not place part {k} inside the canvas after {max_tries} tries")
    return SceneSpec(height=h, width=w, n_frames=n_frames, background=background,
                     parts=parts, integer_motion=integer_motion)


def _sample_trajectory(rng: np.random.Generator, hw, integer_motion: bool,
                       motion_scale: float = 1.0) -> Trajectory:
    h, w = hw
    margin = 18.0
    center0 = np.array([rng.uniform(margin, w - margin), rng.uniform(margin, h - margin)])
    center_amp = rng.uniform(2.0, 7.0, size=2) * motion_scale
    center_freq = rng.integers(1, 3, size=2).astype(float)
    center_phase = rng.uniform(0, 2 * np.pi, size=2)
    if integer_motion:
        return Trajectory(center0=np.round(center0), center_amp=center_amp,
                          center_freq=center_freq, center_phase=center_phase,
                          integer_motion=True)
    return Trajectory(
        center0=center0,
        center_amp=center_amp,
        center_freq=center_freq,
        center_phase=center_phase,
        angle_amp=float(rng.uniform(0.1, 0.45)) * min(motion_scale, 1.4),
        angle_freq=float(rng.integers(1, 3)),
        angle_phase=float(rng.uniform(0, 2 * np.pi)),
        log_scale_amp=rng.uniform(0.02, 0.10, size=2),
        log_scale_freq=rng.integers(1, 3, size=2).astype(float),
        log_scale_phase=rng.uniform(0, 2 * np.pi, size=2),
    )


def _inside_canvas(part: PartSpec, hw, n_frames: int) -> bool:
    h, w = hw
    radius = part.bounding_radius() * part.traj.max_scale() + 1.5
    for t in range(n_frames):
        c, _ = part.traj.pose(t / max(n_frames - 1, 1))
        if not (radius <= c[0] <= w - 1 - radius and radius <= c[1] <= h - 1 - radius):
            return False
    return True


# ---------------------------------------------------------------------------
# rendering


@dataclass
class Video:
    """Rendered video with full ground truth (frames quantized to 8 bit)."""

    spec: SceneSpec
    frames: np.ndarray      # (T, 3, H, W) float32 in [0, 1], 8-bit quantized
    labels: np.ndarray      # (T, H, W) int8; background = K
    centers: np.ndarray     # (T, K, 2) float64
    mats: np.ndarray        # (T, K, 2, 2) float64

    @property
    def k_parts(self) -> int:
        return self.spec.k_parts

    def masks(self, t: int) -> np.ndarray:
        return one_hot_masks(self.labels[t], self.k_parts)


def one_hot_masks(label: np.ndarray, k_parts: int) -> np.ndarray:
    """(K+1, H, W) float32 one-hot masks from a label map (background = K)."""
    masks = np.zeros((k_parts + 1,) + label.shape, dtype=np.float32)
    for k in range(k_parts + 1):
        masks[k] = label == k
    return masks


def render_video(spec: SceneSpec) -> Video:
    h, w, t_n = spec.height, spec.width, spec.n_frames
    k_n = spec.k_parts
    grid = identity_grid(h, w, np.float64)
    frames = np.empty((t_n, 3, h, w), dtype=np.float32)
    labels = np.empty((t_n, h, w), dtype=np.int8)
    centers = np.empty((t_n, k_n, 2))
    mats = np.empty((t_n, k_n, 2, 2))

    order = sorted(range(k_n), key=lambda k: (spec.parts[k].z, k))
    for t in range(t_n):
        t01 = t / max(t_n - 1, 1)
        img = eval_texture(spec.background, grid)
        label = np.full((h, w), k_n, dtype=np.int8)
        for k in order:
            part = spec.parts[k]
            c, a = part.traj.pose(t01)
            centers[t, k], mats[t, k] = c, a
            rel = grid - c.reshape(2, 1, 1)
            ainv = np.linalg.inv(a)
            u = np.einsum("ij,jhw->ihw", ainv, rel)
            inside = _region_mask(part.shape, part.size, u)
            img = np.where(inside, eval_texture(part.texture, u), img)
            label[inside] = k
        frames[t] = (np.round(img * 255.0) / 255.0).astype(np.float32)
        labels[t] = label
    return Video(spec=spec, frames=frames, labels=labels, centers=centers, mats=mats)


# ---------------------------------------------------------------------------
# pairwise ground truth


def analytic_backward_flow(centers_s, mats_s, centers_t, mats_t, label_t) -> np.ndarray:
    """Backward flow target->source, (2, H, W) float64.

    On the pixels of part k the flow is the affine composition
    pose_s o pose_t^-1; background pixels map to themselves.
    """
    h, w = label_t.shape
    grid = identity_grid(h, w, np.float64)
    flow = grid.copy()
    k_n = centers_s.shape[0]
    for k in range(k_n):
        m = mats_s[k] @ np.linalg.inv(mats_t[k])
        rel = grid - centers_t[k].reshape(2, 1, 1)
        field = np.einsum("ij,jhw->ihw", m, rel) + centers_s[k].reshape(2, 1, 1)
        sel = label_t == k
        flow[:, sel] = field[:, sel]
    return flow


def occlusion_map(label_s: np.ndarray, label_t: np.ndarray, k_parts: int) -> np.ndarray:
    """Target-background pixels covered by source foreground."""
    return (label_t == k_parts) & (label_s != k_parts)


def warp_validity(label_s: np.ndarray, label_t: np.ndarray, flow: np.ndarray,
                  k_parts: int) -> np.ndarray:
    """Pixels where warping the source by the flow provably reproduces the target.

    Foreground pixels qualify when all four bilinear neighbors of the flow
    endpoint carry the same part in the source frame (no occlusion by another
    part and no out-of-canvas sampling); background pixels qualify when the
    source pixel at the same location is background.
    """
    h, w = label_t.shape
    fx, fy = flow[0], flow[1]
    inside = (fx >= 0) & (fx <= w - 1) & (fy >= 0) & (fy <= h - 1)
    x0 = np.clip(np.floor(fx).astype(int), 0, w - 1)
    y0 = np.clip(np.floor(fy).astype(int), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    valid = np.zeros((h, w), dtype=bool)
    for k in range(k_parts):
        sel = label_t == k
        same = (label_s[y0, x0] == k) & (label_s[y0, x1] == k) \
            & (label_s[y1, x0] == k) & (label_s[y1, x1] == k)
        valid |= sel & same & inside
    bg = label_t == k_parts
    valid |= bg & (label_s == k_parts)
    return valid


@dataclass
class SyntheticSample:
    """A source/target frame pair with exact ground truth."""

    x_s: np.ndarray          # (3, H, W) float32
    x_t: np.ndarray
    masks_s: np.ndarray      # (K+1, H, W) float32, one-hot, background last
    masks_t: np.ndarray
    label_s: np.ndarray      # (H, W) int8
    label_t: np.ndarray
    centers_s: np.ndarray    # (K, 2) float64
    centers_t: np.ndarray
    mats_s: np.ndarray       # (K, 2, 2) float64
    mats_t: np.ndarray
    flow: np.ndarray         # (2, H, W) float64, target -> source
    occlusion: np.ndarray    # (H, W) bool
    valid: np.ndarray        # (H, W) bool
    integer_motion: bool = False

    @property
    def k_parts(self) -> int:
        return self.masks_s.shape[0] - 1


def make_sample(video: Video, t_src: int, t_tgt: int) -> SyntheticSample:
    flow = analytic_backward_flow(video.centers[t_src], video.mats[t_src],
                                  video.centers[t_tgt], video.mats[t_tgt],
                                  video.labels[t_tgt])
    k_n = video.k_parts
    return SyntheticSample(
        x_s=video.frames[t_src],
        x_t=video.frames[t_tgt],
        masks_s=video.masks(t_src),
        masks_t=video.masks(t_tgt),
        label_s=video.labels[t_src],
        label_t=video.labels[t_tgt],
        centers_s=video.centers[t_src],
        centers_t=video.centers[t_tgt],
        mats_s=video.mats[t_src],
        mats_t=video.mats[t_tgt],
        flow=flow,
        occlusion=occlusion_map(video.labels[t_src], video.labels[t_tgt], k_n),
        valid=warp_validity(video.labels[t_src], video.labels[t_tgt], flow, k_n),
        integer_motion=video.spec.integer_motion,
    )


def sample_pair_indices(rng: np.random.Generator, n_frames: int) -> Tuple[int, int]:
    """Uniform ordered pair of distinct frame indices."""
    if n_frames < 2:
        raise ValueError(f"need at least 2 frames, got {n_frames}")
    i = int(rng.integers(n_frames))
    j = int(rng.integers(n_frames - 1))
    if j >= i:
        j += 1
    return i, j


def sample_pair(video: Video, rng: np.random.Generator) -> SyntheticSample:
    i, j = sample_pair_indices(rng, video.spec.n_frames)
    return make_sample(video, i, j)


# ---------------------------------------------------------------------------
# disk IO


def generate_dataset(out_dir, n_videos: int, seed: int, hw: Tuple[int, int] = (64, 64),
                     n_frames: int = 16, n_parts: int = 2,
                     integer_motion: bool = False, motion_scale: float = 1.0) -> Path:
    """Render ``n_videos`` seeded videos with ground truth into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(seed).spawn(n_videos)
    videos = []
    for i in range(n_videos):
        rng = np.random.default_rng(children[i])
        spec = sample_scene_spec(rng, hw=hw, n_frames=n_frames, n_parts=n_parts,
                                 integer_motion=integer_motion, motion_scale=motion_scale)
        video = render_video(spec)
        vdir = out / f"vid_{i:04d}"
        vdir.mkdir(exist_ok=True)
        write_video(vdir, video)
        videos.append({"dir": vdir.name, "n_frames": n_frames, "k_parts": n_parts})
    manifest = {
        "format": "motionseg-synthetic-v1",
        "seed": seed,
        "n_videos": n_videos,
        "height": hw[0],
        "width": hw[1],
        "n_frames": n_frames,
        "k_parts": n_parts,
        "integer_motion": integer_motion,
        "motion_scale": motion_scale,
        "videos": videos,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return out


def write_video(vdir: Path, video: Video) -> None:
    t_n, k_n = video.frames.shape[0], video.k_parts
    for t in range(t_n):
        u8 = np.round(video.frames[t] * 255.0).astype(np.uint8)
        Image.fromarray(np.moveaxis(u8, 0, -1)).save(vdir / f"frame_{t:02d}.png")
        cpmt.write_tensor(vdir / f"gt_{t:02d}.cpmt", video.masks(t))
    poses = np.concatenate([video.mats, video.centers[..., None]], axis=-1)  # (T, K, 2, 3)
    cpmt.write_tensor(vdir / "poses.cpmt", poses.astype(np.float64))


class SyntheticDataset:
    """Loader for a generated dataset directory (frames kept as uint8)."""

    def __init__(self, root):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.exists():
            raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
        with open(manifest_path) as f:
            self.manifest = json.load(f)
        self.n_videos = self.manifest["n_videos"]
        self.n_frames = self.manifest["n_frames"]
        self.k_parts = self.manifest["k_parts"]
        self.hw = (self.manifest["height"], self.manifest["width"])
        self.integer_motion = self.manifest.get("integer_motion", False)
        self._frames: dict[int, np.ndarray] = {}
        self._labels: dict[int, np.ndarray] = {}
        self._poses: dict[int, np.ndarray] = {}

    def _video_dir(self, vid: int) -> Path:
        return self.root / self.manifest["videos"][vid]["dir"]

    def _load(self, vid: int) -> None:
        if vid in self._frames:
            return
        vdir = self._video_dir(vid)
        frames = np.empty((self.n_frames, 3) + self.hw, dtype=np.uint8)
        labels = np.empty((self.n_frames,) + self.hw, dtype=np.int8)
        for t in range(self.n_frames):
            img = np.asarray(Image.open(vdir / f"frame_{t:02d}.png"))
            frames[t] = np.moveaxis(img, -1, 0)
            masks = cpmt.read_tensor(vdir / f"gt_{t:02d}.cpmt")
            labels[t] = np.argmax(masks, axis=0).astype(np.int8)
        self._frames[vid] = frames
        self._labels[vid] = labels
        self._poses[vid] = cpmt.read_tensor(vdir / "poses.cpmt")

    def frame(self, vid: int, t: int) -> np.ndarray:
        self._load(vid)
        return self._frames[vid][t].astype(np.float32) / 255.0

    def label(self, vid: int, t: int) -> np.ndarray:
        self._load(vid)
        return self._labels[vid][t]

    def masks(self, vid: int, t: int) -> np.ndarray:
        return one_hot_masks(self.label(vid, t), self.k_parts)

    def poses(self, vid: int, t: int) -> Tuple[np.ndarray, np.ndarray]:
        """Centers (K, 2) and matrices (K, 2, 2) of frame t."""
        self._load(vid)
        p = self._poses[vid][t]
        return p[:, :, 2], p[:, :, :2]

    def make_sample(self, vid: int, t_src: int, t_tgt: int) -> SyntheticSample:
        self._load(vid)
        c_s, a_s = self.poses(vid, t_src)
        c_t, a_t = self.poses(vid, t_tgt)
        label_s, label_t = self.label(vid, t_src), self.label(vid, t_tgt)
        flow = analytic_backward_flow(c_s, a_s, c_t, a_t, label_t)
        return SyntheticSample(
            x_s=self.frame(vid, t_src), x_t=self.frame(vid, t_tgt),
            masks_s=one_hot_masks(label_s, self.k_parts),
            masks_t=one_hot_masks(label_t, self.k_parts),
            label_s=label_s, label_t=label_t,
            centers_s=c_s, centers_t=c_t, mats_s=a_s, mats_t=a_t,
            flow=flow,
            occlusion=occlusion_map(label_s, label_t, self.k_parts),
            valid=warp_validity(label_s, label_t, flow, self.k_parts),
            integer_motion=self.integer_motion,
        )

    def sample_pair(self, vid: int, rng: np.random.Generator) -> SyntheticSample:
        i, j = sample_pair_indices(rng, self.n_frames)
        return self.make_sample(vid, i, j)

    def frame_batch(self, pairs: Sequence[Tuple[int, int, int]]) -> Tuple[np.ndarray, np.ndarray]:
        """Stack (vid, t_src, t_tgt) picks into source/target float batches."""
        xs = np.stack([self.frame(v, s) for v, s, _ in pairs])
        xt = np.stack([self.frame(v, _t) for v, _, _t in pairs])
        return xs, xt


# ---------------------------------------------------------------------------
# invariants


def check_sample(sample: SyntheticSample, strict_tol: float = 1e-6,
                 interp_tol: float = 2.0 / 255.0) -> None:
    """Validate the ground-truth invariants of one sample; raises on failure."""
    k_n = sample.k_parts
    total = sample.masks_s.sum(axis=0)
    if not np.array_equal(total, np.ones_like(total)):
        raise AssertionError("source masks do not partition the canvas")
    total = sample.masks_t.sum(axis=0)
    if not np.array_equal(total, np.ones_like(total)):
        raise AssertionError("target masks do not partition the canvas")

    occ = occlusion_map(sample.label_s, sample.label_t, k_n)
    if not np.array_equal(occ, sample.occlusion):
        raise AssertionError("occlusion map inconsistent with labels")

    bg = sample.label_t == k_n
    grid = identity_grid(*sample.label_t.shape, np.float64)
    if not np.allclose(sample.flow[:, bg], grid[:, bg]):
        raise AssertionError("background flow is not the identity")

    warped = _warp_numpy(sample.x_s, sample.flow)
    tol = strict_tol if sample.integer_motion else interp_tol
    err = np.abs(warped - sample.x_t)[:, sample.valid]
    if err.size and err.max() >= tol:
        raise AssertionError(f"warp reproduction error {err.max():.6f} >= {tol}")


def _warp_numpy(img: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Plain-numpy bilinear backward warp (independent of the autodiff op)."""
    c, h, w = img.shape
    fx = np.clip(flow[0], 0, w - 1)
    fy = np.clip(flow[1], 0, h - 1)
    x0 = np.floor(fx).astype(int)
    y0 = np.floor(fy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    tx, ty = fx - x0, fy - y0
    out = (img[:, y0, x0] * (1 - tx) * (1 - ty)
           + img[:, y0, x1] * tx * (1 - ty)
           + img[:, y1, x0] * (1 - tx) * ty
           + img[:, y1, x1] * tx * ty)
    return out
