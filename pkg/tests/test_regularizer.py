import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptrlab import nn
from ptrlab.regularizer import (
    PtrConfig,
    balance,
    gate,
    generate_pseudo_targets,
    grad_ce_at_rep,
    regression_loss,
)


def test_config_defaults_and_validation():
    cfg = PtrConfig()
    assert (cfg.R, cfg.m, cfg.T, cfg.loss_kind) == (3.0, 1.0, 1.0, "SML1")
    for bad in (dict(R=0), dict(m=-1), dict(epsilon_norm=0), dict(loss_kind="L1")):
        with pytest.raises(ValueError):
            PtrConfig(**bad)


def test_config_json_keys_roundtrip():
    cfg = PtrConfig(R=5, m=12, T=0.5, loss_kind="L2", epsilon_norm=1e-10)
    d = cfg.to_dict()
    assert set(d) == {"ratio_R", "target_mean_m", "gate_T", "loss_kind", "epsilon_norm"}
    assert PtrConfig.from_dict(d) == cfg


# --- pseudo-targets --------------------------------------------------------


def test_targets_m_zero():
    t = generate_pseudo_targets(4, 3, 0.0, np.random.default_rng(0))
    npt.assert_array_equal(t, 0.0)


def test_targets_uniform_moments():
    t = generate_pseudo_targets(1000, 1000, 1.0, np.random.default_rng(0))
    assert t.min() >= 0 and t.max() < 2
    assert 0.997 <= t.mean() <= 1.003
    assert abs(t.var() - 1 / 3) / (1 / 3) < 0.01


def test_targets_determinism():
    a = generate_pseudo_targets(5, 4, 2.0, np.random.default_rng(7))
    b = generate_pseudo_targets(5, 4, 2.0, np.random.default_rng(7))
    c = generate_pseudo_targets(5, 4, 2.0, np.random.default_rng(8))
    npt.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_targets_fresh_each_call():
    rng = np.random.default_rng(0)
    assert not np.array_equal(generate_pseudo_targets(3, 3, 1, rng), generate_pseudo_targets(3, 3, 1, rng))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 20), st.integers(0, 2**31))
def test_targets_in_range(m, seed):
    t = generate_pseudo_targets(50, 8, m, np.random.default_rng(seed))
    assert t.min() >= 0 and t.max() < 2 * m


# --- regression losses -----------------------------------------------------


@pytest.mark.parametrize("kind", ["L2", "SML1", "FNP"])
def test_regression_loss_zero_at_target(kind):
    rep = np.array([[0.0, 0.0], [0.0, 0.0]]) if kind == "FNP" else np.array([[1.0, 2.0], [3.0, -1.0]])
    loss, grad = regression_loss(rep, rep.copy(), kind)
    npt.assert_array_equal(loss, 0.0)
    npt.assert_array_equal(grad, 0.0)


def test_l2_values():
    loss, grad = regression_loss(np.array([[1.0, 2.0]]), np.zeros((1, 2)), "L2")
    npt.assert_array_equal(loss, [2.5])
    npt.assert_array_equal(grad, [[1.0, 2.0]])


def test_sml1_values():
    loss, grad = regression_loss(np.array([[0.5, 2.0]]), np.zeros((1, 2)), "SML1")
    npt.assert_allclose(loss, [1.625], rtol=0, atol=1e-15)
    npt.assert_array_equal(grad, [[0.5, 1.0]])


def test_fnp_ignores_targets():
    rep = np.array([[1.0, -3.0]])
    a = regression_loss(rep, np.full((1, 2), 9.0), "FNP")
    b = regression_loss(rep, np.zeros((1, 2)), "L2")
    npt.assert_array_equal(a[0], b[0])
    npt.assert_array_equal(a[1], b[1])


def test_regression_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        regression_loss(np.zeros((2, 3)), np.zeros((2, 4)), "L2")


@pytest.mark.parametrize("kind", ["L2", "SML1"])
def test_regression_grad_matches_finite_differences(kind):
    rng = np.random.default_rng(0)
    rep = rng.normal(scale=2, size=(3, 5))
    t = rng.uniform(0, 2, size=(3, 5))
    _, grad = regression_loss(rep, t, kind)
    eps = 1e-6
    num = np.zeros_like(rep)
    for i in np.ndindex(rep.shape):
        up, down = rep.copy(), rep.copy()
        up[i] += eps
        down[i] -= eps
        num[i] = (regression_loss(up, t, kind)[0][i[0]] - regression_loss(down, t, kind)[0][i[0]]) / (2 * eps)
    npt.assert_allclose(grad, num, atol=1e-7)


def test_sml1_bounded_l2_unbounded():
    diffs = np.linspace(-50, 50, 101)[None, :]
    _, g_sml1 = regression_loss(diffs, np.zeros_like(diffs), "SML1")
    _, g_l2 = regression_loss(diffs, np.zeros_like(diffs), "L2")
    assert np.abs(g_sml1).max() <= 1.0
    assert np.abs(g_l2).max() == 50.0


# --- CE gradient at the representation ------------------------------------


def test_grad_ce_at_rep_trivial_cases():
    npt.assert_array_equal(grad_ce_at_rep(np.ones((3, 4)), np.zeros((2, 3))), 0.0)
    g = np.array([[0.1, -0.3, 0.2]])
    npt.assert_array_equal(grad_ce_at_rep(np.eye(3), g), g)
    with pytest.raises(ValueError):
        grad_ce_at_rep(np.eye(3), np.zeros((1, 4)))


def test_grad_ce_at_rep_finite_differences():
    rng = np.random.default_rng(5)
    W, b = rng.normal(size=(3, 4)), rng.normal(size=3)
    rep = rng.normal(size=(2, 4))
    labels = np.array([2, 0])
    _, g_logits = nn.softmax_cross_entropy(rep @ W.T + b, labels)
    ana = grad_ce_at_rep(W, g_logits)
    eps = 1e-6
    for n in range(2):
        for d in range(4):
            up, down = rep.copy(), rep.copy()
            up[n, d] += eps
            down[n, d] -= eps
            lu = nn.softmax_cross_entropy(up @ W.T + b, labels)[0][n]
            ld = nn.softmax_cross_entropy(down @ W.T + b, labels)[0][n]
            assert abs((lu - ld) / (2 * eps) - ana[n, d]) < 1e-6


# --- balance ---------------------------------------------------------------


def _rows_with_norm(norms, dim=4):
    out = np.zeros((len(norms), dim))
    out[:, 0] = norms
    return out


def test_balance_examples():
    rec = balance(_rows_with_norm([3.0, 3.0]), _rows_with_norm([1.0, 1.0]), PtrConfig(R=3))
    assert rec.w == pytest.approx(1.0, rel=1e-15) and rec.gated_on
    rec = balance(_rows_with_norm([1.0]), _rows_with_norm([2.0]), PtrConfig(R=5))
    assert rec.w == pytest.approx(0.1, rel=1e-15)


def test_balance_degenerate_guard():
    rec = balance(_rows_with_norm([1.0, 2.0]), np.zeros((2, 4)), PtrConfig())
    assert rec.w == 0.0 and not rec.gated_on


def test_balance_gate_closed():
    rec = balance(_rows_with_norm([1.0]), _rows_with_norm([1.0]), PtrConfig(), gated_on=False)
    assert rec.w == 0.0 and not rec.gated_on


def test_balance_uses_per_instance_norms_then_mean():
    ce = np.array([[3.0, 4.0], [0.0, 1.0]])
    ptr = np.array([[1.0, 0.0], [0.0, 0.0]])
    rec = balance(ce, ptr, PtrConfig(R=2))
    npt.assert_array_equal(rec.per_instance_g_ce, [5.0, 1.0])
    assert rec.g_ce_mean == 3.0 and rec.g_ptr_mean == 0.5
    assert rec.w == 3.0


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 20), st.integers(1, 16), st.floats(0.1, 10), st.integers(0, 2**31))
def test_ratio_identity(b, d, R, seed):
    rng = np.random.default_rng(seed)
    rec = balance(rng.normal(size=(b, d)), rng.normal(size=(b, d)), PtrConfig(R=R))
    assert rec.g_ce_mean / (rec.w * rec.g_ptr_mean) == pytest.approx(R, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 20), st.integers(0, 2**31))
def test_norms_permutation_invariant(b, seed):
    rng = np.random.default_rng(seed)
    ce, ptr = rng.normal(size=(b, 5)), rng.normal(size=(b, 5))
    perm = rng.permutation(b)
    r1, r2 = balance(ce, ptr, PtrConfig()), balance(ce[perm], ptr[perm], PtrConfig())
    npt.assert_array_equal(r1.per_instance_g_ce[perm], r2.per_instance_g_ce)
    assert r1.g_ce_mean == pytest.approx(r2.g_ce_mean, rel=1e-14)
    assert r1.w == pytest.approx(r2.w, rel=1e-14)


@pytest.mark.parametrize("c", [0.01, 1.0, 100.0])
def test_rescaling_invariance(c):
    rng = np.random.default_rng(0)
    rep = rng.normal(size=(8, 6))
    g_ce = rng.normal(size=(8, 6))
    t = generate_pseudo_targets(8, 6, 1.0, rng)
    _, g_ptr = regression_loss(rep, t, "SML1")
    r1, rc = balance(g_ce, g_ptr, PtrConfig()), balance(g_ce, c * g_ptr, PtrConfig())
    npt.assert_allclose(rc.per_instance_g_ptr, c * r1.per_instance_g_ptr, rtol=1e-12)
    assert rc.w == pytest.approx(r1.w / c, rel=1e-12)
    npt.assert_allclose(rc.w * c * g_ptr, r1.w * g_ptr, rtol=1e-9)


# --- gate ------------------------------------------------------------------


def test_gate_semantics():
    assert gate(None, 1.0) is False
    assert gate(0.9, 1.0) is True
    assert gate(1.5, 1.0) is False
    assert gate(1.5, 1.0, latched=True) is True
    assert gate(1e-9, 0.0) is False
