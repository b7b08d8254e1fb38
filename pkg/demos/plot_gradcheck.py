"""
Checking backpropagation with finite differences
================================================

Builds a small conv/pool network, computes analytic gradients of the mean
cross-entropy, and compares them with central differences.
"""

import numpy as np

from ptrlab import nn
from ptrlab.nn import Conv2d, Dense, Flatten, MaxPool2d, NetworkSpec, ReLU

rng = np.random.default_rng(0)

# Two-channel 6x6 inputs, one conv block, a 5-unit representation and a
# 3-way classifier head. The representation is the ReLU before the head.
spec = NetworkSpec(
    (2, 6, 6),
    (Conv2d(2, 3, 3, stride=1, padding=1), ReLU(), MaxPool2d(2), Flatten(), Dense(27, 5), ReLU(), Dense(5, 3)),
    rep_index=5,
)
state = nn.init_state(spec, rng)
x = rng.normal(size=(4, 2, 6, 6))
y = np.array([0, 1, 2, 1])

loss, grads = nn.loss_and_gradients(spec, state, x, y)
print(f"mean CE {loss:.4f}")

# The error is a per-tensor norm ratio, maximised over every weight and bias.
for eps in (1e-4, 1e-6, 1e-8):
    print(f"epsilon {eps:g}: max relative error {nn.finite_difference_check(spec, state, x, y, epsilon=eps):.2e}")
