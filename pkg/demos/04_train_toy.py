#!/usr/bin/env python3
"""Short self-supervised training run on a small synthetic dataset.

This is a scaled-down session (300 iterations, 20 videos) that shows the
moving pieces end to end; expect a few minutes of CPU time.  For the real
desk-scale run (2000 iterations, 200 videos) use the CLI:

    motionseg gen-data --out data/ --videos 200 --seed 7
    motionseg train --data data/ --out runs/full

Run:  python3 demos/04_train_toy.py
"""

from pathlib import Path

import numpy as np

from motionseg.synth import SyntheticDataset, generate_dataset
from motionseg.train import TrainConfig, train

base = Path(__file__).parent / "out"
data_dir = base / "demo_data"
run_dir = base / "demo_run"

if not (data_dir / "manifest.json").exists():
    print("generating 20 videos ...")
    generate_dataset(data_dir, n_videos=20, seed=1, n_frames=16, n_parts=2)
dataset = SyntheticDataset(data_dir)

config = TrainConfig(variant="full", k_parts=3, iterations=300, batch_size=4,
                     scales=(64, 32, 16), checkpoint_every=150, seed=0)
print("training 'full' variant for 300 iterations ...")
ckpt = train(config, dataset, run_dir)
print(f"final checkpoint: {ckpt}")

rows = np.genfromtxt(run_dir / "loss.csv", delimiter=",", names=True)
head = rows[:20]
tail = rows[-20:]
print(f"reconstruction loss: {head['l_rec'].mean():.4f} (start) -> {tail['l_rec'].mean():.4f} (end)")
print(f"keypoint equivariance: {head['l_eq_kp'].mean():.3f} -> {tail['l_eq_kp'].mean():.3f}")
print(f"loss curve in {run_dir / 'loss.csv'}")
