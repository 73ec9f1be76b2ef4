import numpy as np
import pytest

from neuralcrn import oracle
from neuralcrn.compiler import VARIANTS, CircuitConfig
from neuralcrn.verification import random_case, rel_err


def test_forward_theta_z_exponential():
    cfg = CircuitConfig("theta_z", d=2, T=1.0)
    res = oracle.forward(cfg, [1.0, 1.0], [1.0, 1.0])
    assert res.y_hat == pytest.approx(2 * np.e, rel=1e-10)


def test_forward_linreg_constant_flux():
    cfg = CircuitConfig("linreg", d=2, beta=1.0, T=1.0)
    assert oracle.forward(cfg, [1.0, 1.0], [1.0, 2.0]).y_hat == pytest.approx(5.0, rel=1e-12)


def test_forward_nlreg_quadratic_decay():
    cfg = CircuitConfig("nlreg", d=2, T=1.0, z_init="copy-x")
    res = oracle.forward(cfg, [1.0, 1.0], [0.0, 0.0])
    assert res.z_final == pytest.approx([0.5, 0.5], rel=1e-10)
    assert res.y_hat == pytest.approx(1.0, rel=1e-10)


def test_adjoint_trivial_scalar():
    cfg = CircuitConfig("theta_z", d=1, T=1.0)
    res = oracle.adjoint_gradients(cfg, [1.0], 0.0, [0.0])
    assert res.y_hat == pytest.approx(1.0)
    assert res.adjoint_final == pytest.approx([1.0])
    assert res.gradient == pytest.approx([1.0], rel=1e-10)


def test_adjoint_zero_at_exact_target():
    cfg = CircuitConfig("nlreg", d=2, p=1, pad_value=1.0, T=0.5, signed_params=True)
    th = np.array([0.3, -0.2, 0.9])
    y = oracle.forward(cfg, [1.0, 1.5], th).y_hat
    assert np.all(oracle.adjoint_gradients(cfg, [1.0, 1.5], y, th).gradient == 0.0)


def test_adjoint_vs_fd_theta_z():
    cfg = CircuitConfig("theta_z", d=2, T=1.0)
    th = np.array([0.3, 0.5])
    g = oracle.adjoint_gradients(cfg, [1.0, 2.0], 1.0, th).gradient
    assert rel_err(g, oracle.finite_diff_gradients(cfg, [1.0, 2.0], 1.0, h=1e-5, theta=th)) <= 1e-6


def test_adjoint_retraces_state():
    cfg = CircuitConfig("nlcls", d=2, p=2, beta=0.1, pad_value=1.0, T=1.0)
    th = np.random.default_rng(2).normal(0, 0.5, cfg.theta_shape)
    res = oracle.adjoint_gradients(cfg, [0.3, -0.6], 1.0, th)
    assert res.stats["z_retrace"] == pytest.approx([0.0] * 4, abs=1e-8)


def test_fd_linreg_closed_form():
    cfg = CircuitConfig("linreg", d=2, beta=0.4, T=0.7)
    th, x, y = np.array([0.8, 1.3]), np.array([1.1, 0.4]), 2.0
    y_hat = 0.7 * (th @ x + 2 * 0.4)
    analytic = (y_hat - y) * 0.7 * x
    assert rel_err(oracle.finite_diff_gradients(cfg, x, y, h=1e-5, theta=th), analytic) <= 1e-6


def test_fd_truncation_shows_with_large_step():
    cfg = CircuitConfig("nlreg", d=2, T=1.0, z_init="copy-x")
    th, x, y = np.array([0.6, 0.9]), np.array([1.2, 0.8]), 0.5
    coarse = oracle.finite_diff_gradients(cfg, x, y, h=1.0, theta=th)
    fine = oracle.finite_diff_gradients(cfg, x, y, h=1e-4, theta=th)
    exact = oracle.adjoint_gradients(cfg, x, y, th).gradient
    assert rel_err(fine, exact) < 1e-6 < rel_err(coarse, exact)


def test_fd_at_zero_loss_is_noise():
    cfg = CircuitConfig("theta_z", d=2, T=1.0)
    th, h = np.array([0.2, 0.4]), 1e-4
    y = oracle.forward(cfg, [1.0, 1.0], th).y_hat
    assert np.max(np.abs(oracle.finite_diff_gradients(cfg, [1.0, 1.0], y, h=h, theta=th))) <= 10 * h ** 2


def test_fd_rejects_bad_step():
    with pytest.raises(ValueError):
        oracle.finite_diff_gradients(CircuitConfig("linreg"), [1.0, 1.0], 1.0, h=0.0)


@pytest.mark.parametrize("variant", VARIANTS)
def test_adjoint_vs_fd_all_variants(variant):
    for seed in range(3):
        cfg, x, y = random_case(variant, seed)
        g = oracle.adjoint_gradients(cfg, x, y).gradient
        assert g.shape == cfg.theta_shape
        assert rel_err(g, oracle.finite_diff_gradients(cfg, x, y, h=1e-5)) <= 1e-6


def test_sgd_step_clamps_single_rail():
    cfg = CircuitConfig("linreg", d=2, eta=1.0)
    out = oracle.sgd_step(cfg, np.array([1.0, 2.0]), np.array([2.0, 0.5]))
    assert out == pytest.approx([0.0, 1.5])
    signed = CircuitConfig("linreg", d=2, eta=0.5, signed_params=True)
    assert oracle.sgd_step(signed, np.array([1.0, 2.0]), np.array([4.0, 0.0])) == pytest.approx([-1.0, 2.0])
