#!/usr/bin/env python3
"""Use a trained model: still-image segmentation, metrics, and part swapping.

Requires the checkpoint produced by demos/04_train_toy.py (run that first).

Run:  python3 demos/05_segment_and_swap.py
"""

from pathlib import Path

import numpy as np

from motionseg import Tensor, viz
from motionseg.evaluate import eval_image_split, evaluate_iou, evaluate_mae
from motionseg.synth import SyntheticDataset, render_video, sample_scene_spec
from motionseg.tensor import no_grad
from motionseg.train import load_checkpoint, train_split

base = Path(__file__).parent / "out"
ckpt_path = base / "demo_run" / "ckpt_final"
if not ckpt_path.exists():
    raise SystemExit("no checkpoint found; run demos/04_train_toy.py first")

segnet, reconnet, extractor, _, iteration, config, _ = load_checkpoint(ckpt_path)
segnet.eval()
reconnet.eval()
print(f"loaded checkpoint at iteration {iteration} (variant={config.variant})")

dataset = SyntheticDataset(base / "demo_data")
_, eval_videos = train_split(dataset, config.train_fraction)

# still-image segmentation on a held-out frame
frame = dataset.frame(list(eval_videos)[0], 5)
with no_grad():
    seg = segnet(Tensor(frame[None]))
viz.save_png(base / "segmented_mask.png", viz.mask_to_color(seg.y.data[0]))
viz.save_png(base / "segmented_overlay.png", viz.overlay(frame, seg.y.data[0]))

# quick metrics on the held-out videos
fit_images, test_images = eval_image_split(dataset, list(eval_videos), n_fit=40, n_test=16)
print(f"foreground IoU:        {evaluate_iou(segnet, dataset, test_images):.4f}")
print(f"landmark-regress. MAE: {evaluate_mae(segnet, dataset, fit_images, test_images):.3f} px")

# part swap between two freshly rendered scenes with different textures
src = render_video(sample_scene_spec(np.random.default_rng(100),
                                     part_base_colors=[(0.7, 0.2, 0.2), (0.4, 0.6, 0.4)]))
tgt = render_video(sample_scene_spec(np.random.default_rng(200),
                                     part_base_colors=[(0.2, 0.3, 0.7), (0.5, 0.5, 0.4)]))
x_src, x_tgt = Tensor(src.frames[0][None]), Tensor(tgt.frames[5][None])
with no_grad():
    swapped = reconnet.part_swap(x_src, x_tgt, segnet(x_src), segnet(x_tgt), swap_set=[1])
viz.save_png(base / "swap_source.png", viz.frame_to_u8(src.frames[0]))
viz.save_png(base / "swap_target.png", viz.frame_to_u8(tgt.frames[5]))
viz.save_png(base / "swap_result.png", viz.frame_to_u8(swapped.data[0]))
print(f"wrote segmentation and swap PNGs to {base}")
