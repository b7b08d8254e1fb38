"""Pseudo-task regularizer: random regression targets with gradient-norm balancing.

The pseudo-task regresses the representation layer onto targets drawn fresh
every batch from ``Uniform[0, 2m)``. Its weight ``w`` is recomputed per batch
so that the mean per-instance gradient norm of the cross-entropy at the
representation is exactly ``R`` times the weighted pseudo-task norm.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

LOSS_KINDS = ("L2", "SML1", "FNP")


@dataclass(frozen=True)
class PtrConfig:
    """Pseudo-task settings. ``loss_kind=None`` disables the pseudo-task."""

    R: float = 3.0
    m: float = 1.0
    T: float = 1.0
    loss_kind: str | None = "SML1"
    epsilon_norm: float = 1e-12

    def __post_init__(self):
        if self.R <= 0:
            raise ValueError(f"ratio R must be positive, got {self.R}")
        if self.m < 0:
            raise ValueError(f"target mean m must be non-negative, got {self.m}")
        if self.T < 0:
            # T = 0 is allowed: the gate then never opens (mean CE is always > 0)
            raise ValueError(f"gate threshold T must be non-negative, got {self.T}")
        if self.epsilon_norm <= 0:
            raise ValueError(f"epsilon_norm must be positive, got {self.epsilon_norm}")
        if self.loss_kind is not None and self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS} or null, got {self.loss_kind!r}")

    @property
    def enabled(self):
        return self.loss_kind is not None

    def to_dict(self):
        return {
            "ratio_R": self.R,
            "target_mean_m": self.m,
            "gate_T": self.T,
            "loss_kind": self.loss_kind,
            "epsilon_norm": self.epsilon_norm,
        }

    @classmethod
    def from_dict(cls, d):
        known = {"ratio_R": "R", "target_mean_m": "m", "gate_T": "T", "loss_kind": "loss_kind", "epsilon_norm": "epsilon_norm"}
        unknown = set(d) - set(known)
        if unknown:
            raise KeyError(f"unknown ptr keys: {sorted(unknown)}")
        return cls(**{known[k]: v for k, v in d.items()})


@dataclass
class BalanceRecord:
    g_ce_mean: float
    g_ptr_mean: float
    w: float
    gated_on: bool
    per_instance_g_ce: np.ndarray = field(repr=False)
    per_instance_g_ptr: np.ndarray = field(repr=False)

    def summary(self):
        d = asdict(self)
        d.pop("per_instance_g_ce")
        d.pop("per_instance_g_ptr")
        return d


def generate_pseudo_targets(batch_size, rep_dim, m, rng):
    """I.i.d. ``Uniform[0, 2m)`` targets of shape ``(batch_size, rep_dim)``."""
    if m < 0:
        raise ValueError(f"m must be non-negative, got {m}")
    if m == 0:
        return np.zeros((batch_size, rep_dim))
    return rng.uniform(0.0, 2.0 * m, size=(batch_size, rep_dim))


def regression_loss(rep, targets, kind):
    """Per-instance regression loss and its gradient w.r.t. ``rep``.

    L2 is ``0.5 * sum(d**2)``; SML1 is smooth-L1 with threshold 1; FNP is L2
    toward zero, ignoring ``targets``.
    """
    rep = np.asarray(rep, dtype=np.float64)
    if kind == "FNP":
        targets = np.zeros_like(rep)
    targets = np.asarray(targets, dtype=np.float64)
    if rep.shape != targets.shape:
        raise ValueError(f"rep shape {rep.shape} and target shape {targets.shape} differ")
    diff = rep - targets
    if kind in ("L2", "FNP"):
        return 0.5 * np.sum(diff**2, axis=1), diff
    if kind == "SML1":
        a = np.abs(diff)
        per = np.where(a < 1.0, 0.5 * diff**2, a - 0.5)
        return per.sum(axis=1), np.clip(diff, -1.0, 1.0)
    raise ValueError(f"unknown regression loss kind {kind!r}")


def grad_ce_at_rep(classifier_weights, grad_logits):
    """Per-instance dCE/d(rep) through a Dense head with weights ``(K, D)``."""
    w = np.asarray(classifier_weights, dtype=np.float64)
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.ndim != 2 or g.shape[1] != w.shape[0]:
        raise ValueError(f"grad_logits shape {g.shape} incompatible with head weights {w.shape}")
    return g @ w


def balance(grad_rep_ce, grad_rep_ptr, config, gated_on=True):
    """Per-instance norms, their batch means, and the balance weight ``w``.

    ``w = mean(G_ce) / (mean(G_ptr) * R)`` when the gate is open and the
    pseudo-task norm clears ``config.epsilon_norm``; otherwise ``w = 0`` and
    ``gated_on`` is reported as False.
    """
    g_ce = np.linalg.norm(np.asarray(grad_rep_ce, dtype=np.float64), axis=1)
    g_ptr = np.linalg.norm(np.asarray(grad_rep_ptr, dtype=np.float64), axis=1)
    g_ce_mean = float(g_ce.mean())
    g_ptr_mean = float(g_ptr.mean())
    on = bool(gated_on) and g_ptr_mean >= config.epsilon_norm
    w = g_ce_mean / (g_ptr_mean * config.R) if on else 0.0
    return BalanceRecord(g_ce_mean, g_ptr_mean, w, on, g_ce, g_ptr)


def gate(prev_epoch_mean_ce, T, latched=False):
    """True once a previous epoch's mean CE fell below ``T``; stays true after."""
    if latched:
        return True
    return prev_epoch_mean_ce is not None and prev_epoch_mean_ce < T
