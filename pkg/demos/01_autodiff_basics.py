#!/usr/bin/env python3
"""Tour of the tensor engine: ops, gradients, and a finite-difference check.

Run:  python3 demos/01_autodiff_basics.py
"""

import numpy as np

from motionseg import Tensor, ops

rng = np.random.default_rng(0)

# --- scalars flow backward through compositions -------------------------
x = Tensor(rng.standard_normal(5), requires_grad=True, dtype=np.float64)
loss = ops.sum_(ops.mul(x, x))          # sum of squares
loss.backward()
print("d(sum x^2)/dx  ==  2x :", np.allclose(x.grad, 2 * x.data))

# --- detach cuts the graph ----------------------------------------------
x = Tensor(rng.standard_normal(4), requires_grad=True, dtype=np.float64)
y = ops.sum_(ops.add(x, x.detach()))    # d/dx of (x + stop_grad(x)) is 1
y.backward()
print("gradient through detach is exactly one:", np.array_equal(x.grad, np.ones(4)))

# --- a small conv net gradient vs central differences -------------------
img = rng.standard_normal((1, 2, 8, 8))
w1 = rng.standard_normal((4, 2, 3, 3)) * 0.5


def forward(img_arr):
    t = Tensor(img_arr, dtype=np.float64)
    h = ops.relu(ops.conv2d(t, Tensor(w1, dtype=np.float64), padding=1))
    return ops.mean(ops.mul(h, h))


t = Tensor(img, requires_grad=True, dtype=np.float64)
h = ops.relu(ops.conv2d(t, Tensor(w1, dtype=np.float64), padding=1))
ops.mean(ops.mul(h, h)).backward()

eps = 1e-5
idx = (0, 1, 3, 4)
bumped = img.copy()
bumped[idx] += eps
hi = forward(bumped).item()
bumped[idx] -= 2 * eps
lo = forward(bumped).item()
fd = (hi - lo) / (2 * eps)
print(f"conv-net grad check at one element: analytic={t.grad[idx]:+.8f}  fd={fd:+.8f}")

# --- every op guards against silent NaN/Inf ------------------------------
try:
    ops.div(Tensor(np.ones(2)), Tensor(np.zeros(2)))
except Exception as exc:
    print("division by zero is caught immediately:", type(exc).__name__)
