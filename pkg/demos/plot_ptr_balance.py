"""
How the pseudo-task weight is balanced
======================================

The regression gradient at the representation is rescaled each batch so the
cross-entropy gradient norm is ``R`` times the weighted regression norm,
whatever the raw scale of the regression loss.
"""

import numpy as np

from ptrlab import nn
from ptrlab.regularizer import PtrConfig, balance, generate_pseudo_targets, grad_ce_at_rep, regression_loss

rng = np.random.default_rng(1)
spec = nn.mlp_spec(10, [16], 8, 4)
state = nn.init_state(spec, rng)
x, y = rng.normal(size=(20, 10)), rng.integers(0, 4, 20)

trace = nn.forward(spec, state, x)
_, g_logits = nn.softmax_cross_entropy(trace.logits, y)
g_ce = grad_ce_at_rep(state[-1].weights, g_logits)

###############################################################################
# Pseudo-targets are fresh uniform draws on ``[0, 2m)``. Try both losses.
cfg = PtrConfig(R=3, m=1, T=1, loss_kind="SML1")
targets = generate_pseudo_targets(20, spec.rep_dim, cfg.m, rng)
for kind in ("L2", "SML1"):
    _, g_ptr = regression_loss(trace.rep, targets, kind)
    rec = balance(g_ce, g_ptr, cfg)
    print(f"{kind:5s} G_ce {rec.g_ce_mean:.4f}  G_ptr {rec.g_ptr_mean:.4f}  w {rec.w:.5f}  "
          f"ratio {rec.g_ce_mean / (rec.w * rec.g_ptr_mean):.6f}")

###############################################################################
# Multiplying the loss by a constant changes ``w`` but not the injected
# gradient ``w * dL/drep``.
_, g_ptr = regression_loss(trace.rep, targets, "SML1")
ref = balance(g_ce, g_ptr, cfg).w * g_ptr
for c in (0.01, 100.0):
    inj = balance(g_ce, c * g_ptr, cfg).w * (c * g_ptr)
    print(f"scale {c:g}: max change in injected gradient {np.max(np.abs(inj - ref)):.1e}")
