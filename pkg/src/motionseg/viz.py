"""PNG rendering of masks, overlays, flow fields and visibility maps."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

# fixed part palette (background renders black); repeats beyond 15 parts
PALETTE = np.array([
    (230, 60, 60), (60, 160, 230), (80, 200, 100), (240, 190, 50),
    (180, 90, 220), (250, 130, 40), (70, 220, 210), (240, 100, 170),
    (150, 210, 70), (110, 110, 250), (200, 140, 90), (90, 160, 120),
    (220, 210, 120), (160, 80, 90), (100, 190, 250),
], dtype=np.uint8)


def save_png(path, array_hwc_u8: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array_hwc_u8).save(path)


def load_image(path) -> np.ndarray:
    """PNG/JPEG file -> (3, H, W) float32 in [0, 1]."""
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return np.moveaxis(img, -1, 0)


def frame_to_u8(frame_chw: np.ndarray) -> np.ndarray:
    u8 = np.round(np.clip(frame_chw, 0, 1) * 255).astype(np.uint8)
    return np.moveaxis(u8, 0, -1)


def mask_to_color(y: np.ndarray) -> np.ndarray:
    """Soft masks (K+1, H, W) -> palette image (H, W, 3); background black."""
    label = np.argmax(y, axis=0)
    k = y.shape[0] - 1
    out = np.zeros(label.shape + (3,), dtype=np.uint8)
    for i in range(k):
        out[label == i] = PALETTE[i % len(PALETTE)]
    return out


def overlay(frame_chw: np.ndarray, y: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend the palette-colored segmentation onto the frame (foreground only)."""
    base = frame_to_u8(frame_chw).astype(np.float32)
    color = mask_to_color(y).astype(np.float32)
    label = np.argmax(y, axis=0)
    fg = (label < y.shape[0] - 1)[..., None]
    mixed = np.where(fg, (1 - alpha) * base + alpha * color, base)
    return np.round(mixed).astype(np.uint8)


def flow_to_color(flow: np.ndarray, max_mag: float | None = None) -> np.ndarray:
    """Color-wheel rendering of a flow field's displacement, (H, W, 3) uint8.

    Hue encodes direction, saturation encodes magnitude relative to
    ``max_mag`` (defaults to the field's maximum displacement).
    """
    from .flow import identity_grid

    h, w = flow.shape[1:]
    disp = flow - identity_grid(h, w, flow.dtype)
    mag = np.sqrt(disp[0] ** 2 + disp[1] ** 2)
    ang = np.arctan2(disp[1], disp[0])
    if max_mag is None:
        max_mag = max(float(mag.max()), 1e-6)
    sat = np.clip(mag / max_mag, 0, 1)
    hue = (ang + np.pi) / (2 * np.pi)

    i = np.floor(hue * 6).astype(int) % 6
    f = hue * 6 - np.floor(hue * 6)
    v = np.ones_like(sat)
    p = v * (1 - sat)
    q = v * (1 - f * sat)
    t = v * (1 - (1 - f) * sat)
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.round(np.stack([r, g, b], axis=-1) * 255).astype(np.uint8)


def mask_to_gray(values_hw: np.ndarray) -> np.ndarray:
    """A [0,1] map as an 8-bit grayscale image."""
    return np.round(np.clip(values_hw, 0, 1) * 255).astype(np.uint8)
