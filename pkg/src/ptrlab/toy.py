"""Single-neuron gradient-variance experiment.

A single ReLU unit ``f_out = relu(a * x)`` regressed onto a target ``t`` with
``E = 0.5 * (f_out - t)**2``. While the unit is active the gradient in ``a``
is ``(f_out - t) * x``, so for fixed ``x`` its variance is
``x**2 * (Var(f_out) + Var(t))`` when ``t`` is independent of ``f_out``.
A constant zero target (feature-norm penalty) contributes no variance;
uniform pseudo-targets on ``[0, 2m)`` add ``m**2 / 3``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def sample(self, rng, n):
        return rng.uniform(self.low, self.high, size=n)

    @property
    def var(self):
        return (self.high - self.low) ** 2 / 12.0


@dataclass(frozen=True)
class Constant:
    value: float

    def sample(self, rng, n):
        return np.full(n, float(self.value))

    @property
    def var(self):
        return 0.0


def parse_sampler(text):
    """``"uniform:LOW:HIGH"`` or ``"const:VALUE"``."""
    kind, *args = text.split(":")
    if kind == "uniform" and len(args) == 2:
        return Uniform(float(args[0]), float(args[1]))
    if kind in ("const", "constant") and len(args) == 1:
        return Constant(float(args[0]))
    raise ValueError(f"cannot parse sampler {text!r}; use uniform:LOW:HIGH or const:VALUE")


@dataclass
class VarianceResult:
    empirical_var: float
    predicted_var: float
    n_samples: int
    relative_gap: float


def energy(a, x, t):
    return 0.5 * (np.maximum(a * x, 0.0) - t) ** 2


def toy_gradient(a, x, t):
    """dE/da; zero wherever the unit is inactive (``a * x <= 0``)."""
    a, x, t = np.broadcast_arrays(np.asarray(a, float), np.asarray(x, float), np.asarray(t, float))
    active = a * x > 0
    g = np.where(active, (np.maximum(a * x, 0.0) - t) * x, 0.0)
    return g if g.ndim else float(g)


def variance_experiment(f_o_sampler, t_sampler, n=1_000_000, x=1.0, seed=0, rng=None):
    """Empirical gradient variance against ``x**2 * (Var(f_out) + Var(t))``.

    ``f_out`` samples must be positive (active unit); the weight is recovered
    as ``a = f_out / x`` so the gradient is evaluated through ``toy_gradient``.
    """
    if x == 0:
        raise ValueError("x must be non-zero")
    rng = np.random.default_rng(seed) if rng is None else rng
    f_o = f_o_sampler.sample(rng, n)
    t = t_sampler.sample(rng, n)
    return _result(f_o, t, x, f_o_sampler.var + t_sampler.var)


def _var(g):
    # shifting by one sample makes constant inputs give exactly 0
    return float(np.var(g - g[0])) if len(g) else 0.0


def _result(f_o, t, x, analytic_var):
    g = toy_gradient(f_o / x, x, t)
    empirical = _var(g)
    predicted = x * x * analytic_var
    if predicted == 0:
        gap = 0.0 if empirical == 0 else float("inf")
    else:
        gap = abs(empirical - predicted) / predicted
    return VarianceResult(empirical, predicted, len(g), gap)


def fnp_vs_ptr_variance(f_o_sampler, m, n=1_000_000, seed=0):
    """Gradient variance with a zero target versus ``Uniform[0, 2m)`` targets.

    Both arms share the same ``f_out`` draws.
    """
    if m < 0:
        raise ValueError(f"m must be non-negative, got {m}")
    rng = np.random.default_rng(seed)
    f_o = f_o_sampler.sample(rng, n)
    t = rng.uniform(0.0, 2.0 * m, size=n) if m > 0 else np.zeros(n)
    var_fnp = _var(toy_gradient(f_o, 1.0, 0.0))
    var_ptr = _var(toy_gradient(f_o, 1.0, t))
    return var_fnp, var_ptr
