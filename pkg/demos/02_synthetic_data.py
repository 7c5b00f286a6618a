#!/usr/bin/env python3
"""Generate a few synthetic videos and visualize frames, masks and flow.

Run:  python3 demos/02_synthetic_data.py
Outputs land in demos/out/.
"""

from pathlib import Path

import numpy as np

from motionseg import viz
from motionseg.synth import make_sample, render_video, sample_scene_spec, check_sample

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

rng = np.random.default_rng(42)
video = render_video(sample_scene_spec(rng, n_parts=3))

print(f"video: {video.frames.shape[0]} frames, {video.k_parts} parts")

# frames and ground-truth masks
for t in (0, 8, 15):
    viz.save_png(out / f"synth_frame_{t:02d}.png", viz.frame_to_u8(video.frames[t]))
    viz.save_png(out / f"synth_masks_{t:02d}.png", viz.mask_to_color(video.masks(t)))
    viz.save_png(out / f"synth_overlay_{t:02d}.png", viz.overlay(video.frames[t], video.masks(t)))

# a frame pair with its analytic backward flow and occlusion map
sample = make_sample(video, 2, 13)
check_sample(sample)  # raises if the ground truth were inconsistent
print("ground-truth invariants hold (masks partition, warp reproduces target)")

viz.save_png(out / "synth_flow.png", viz.flow_to_color(sample.flow.astype(np.float32)))
viz.save_png(out / "synth_occlusion.png", viz.mask_to_gray(sample.occlusion.astype(np.float64)))

moving = (sample.label_t != sample.k_parts).sum()
occluded = sample.occlusion.sum()
print(f"foreground pixels: {moving}, occluded background pixels: {occluded}")
print(f"wrote PNGs to {out}")
