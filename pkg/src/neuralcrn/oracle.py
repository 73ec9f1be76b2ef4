"""Direct Neural ODE reference: forward solve, adjoint gradients, finite differences.

Nothing here touches reactions or rails. Dynamics and Jacobians are written
out by hand per variant so the circuit can be checked against them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .compiler import CircuitConfig


@dataclass(frozen=True)
class OracleSolver:
    rtol: float = 1e-12
    atol: float = 1e-12
    method: str = "DOP853"


@dataclass
class OracleResult:
    y_hat: float
    z_final: np.ndarray
    adjoint_final: np.ndarray | None = None
    gradient: np.ndarray | None = None
    stats: dict = field(default_factory=dict)


class OracleError(RuntimeError):
    pass


def _bias(cfg: CircuitConfig) -> float:
    return cfg.beta if cfg.f_theta in ("linreg", "lincls", "nlcls") else 0.0


def dynamics(cfg: CircuitConfig, theta: np.ndarray, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    v = cfg.f_theta
    if v in ("linreg", "lincls"):
        return theta * x + _bias(cfg)
    if v == "nlreg":
        return theta * x - z * z
    if v == "nlcls":
        return theta @ x + _bias(cfg) - z ** 3
    if v == "nlclsV2":
        return theta @ x - cfg.alpha * z * z
    if v == "theta_z":
        return theta * z
    raise ValueError(v)


def _jac_z_diag(cfg, theta, z):
    # every supported f_theta has a diagonal state Jacobian
    v = cfg.f_theta
    if v in ("linreg", "lincls"):
        return np.zeros_like(z)
    if v == "nlreg":
        return -2.0 * z
    if v == "nlcls":
        return -3.0 * z * z
    if v == "nlclsV2":
        return -2.0 * cfg.alpha * z
    return theta.copy()


def _grad_rate(cfg, a, x, z):
    v = cfg.f_theta
    if v in ("nlcls", "nlclsV2"):
        return np.outer(a, x).ravel()
    if v == "theta_z":
        return a * z
    return a * x


def _initial_z(cfg, x):
    return x.copy() if cfg.resolved_z_init == "copy-x" else np.zeros_like(x)


def _theta(cfg, theta):
    return cfg.initial_theta() if theta is None else np.asarray(theta, dtype=float).reshape(cfg.theta_shape)


def forward(config: CircuitConfig, x, theta=None, solver: OracleSolver = OracleSolver()) -> OracleResult:
    """Integrate dz/dt = f_theta over [0, T] and read y_hat = sum(z(T))."""
    th = _theta(config, theta)
    xa = config.augment(x)
    sol = solve_ivp(lambda t, z: dynamics(config, th, xa, z), (0.0, config.T), _initial_z(config, xa),
                    method=solver.method, rtol=solver.rtol, atol=solver.atol)
    if sol.status != 0:
        raise OracleError(f"forward solve failed: {sol.message}")
    z = sol.y[:, -1]
    return OracleResult(float(z.sum()), z, stats={"nfev": sol.nfev})


def loss(config: CircuitConfig, x, y, theta=None, solver: OracleSolver = OracleSolver()) -> float:
    return 0.5 * (forward(config, x, theta, solver).y_hat - y) ** 2


def adjoint_gradients(config: CircuitConfig, x, y, theta=None,
                      solver: OracleSolver = OracleSolver()) -> OracleResult:
    """dL/dtheta for squared error via the adjoint system solved forward in tau.

    The hidden state is re-evolved backwards alongside the adjoint rather than
    checkpointed.
    """
    th = _theta(config, theta)
    xa = config.augment(x)
    fw = forward(config, x, th, solver)
    n = config.n
    n_par = th.size
    a0 = np.full(n, fw.y_hat - float(y))

    def rhs(tau, s):
        z, a = s[:n], s[n:2 * n]
        return np.concatenate([-dynamics(config, th, xa, z), _jac_z_diag(config, th, z) * a,
                               _grad_rate(config, a, xa, z)])

    s0 = np.concatenate([fw.z_final, a0, np.zeros(n_par)])
    sol = solve_ivp(rhs, (0.0, config.T), s0, method=solver.method, rtol=solver.rtol, atol=solver.atol)
    if sol.status != 0:
        raise OracleError(f"adjoint solve failed: {sol.message}")
    s = sol.y[:, -1]
    return OracleResult(fw.y_hat, fw.z_final, s[n:2 * n], s[2 * n:].reshape(th.shape),
                        {"nfev": fw.stats["nfev"] + sol.nfev, "z_retrace": s[:n]})


def finite_diff_gradients(config: CircuitConfig, x, y, h: float = 1e-5, theta=None,
                          solver: OracleSolver = OracleSolver()) -> np.ndarray:
    """Central differences of the loss, two forward solves per parameter."""
    if not h > 0:
        raise ValueError("h must be positive")
    th = _theta(config, theta)
    flat = th.ravel()
    out = np.empty_like(flat)
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (loss(config, x, y, up.reshape(th.shape), solver)
                  - loss(config, x, y, dn.reshape(th.shape), solver)) / (2 * h)
    return out.reshape(th.shape)


def sgd_step(config: CircuitConfig, theta: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    """theta - eta * g, saturating at zero for single-rail (unsigned) parameters."""
    new = theta - config.eta * gradient
    if not config.resolved_signed_params:
        new = np.maximum(new, 0.0)
    return new


def train(config: CircuitConfig, samples, order, theta=None, overflow: float = 1e6):
    """Plain Neural ODE SGD over ``order`` (sample indices); returns (theta, losses)."""
    th = _theta(config, theta).copy()
    losses = []
    for idx in order:
        s = samples[idx]
        res = adjoint_gradients(config, s.x, s.y, th)
        losses.append(0.5 * (res.y_hat - s.y) ** 2)
        th = sgd_step(config, th, res.gradient)
        if not np.all(np.isfinite(th)) or np.max(np.abs(th)) > overflow:
            raise OracleError(f"parameters diverged after {len(losses)} iterations")
    return th, losses


def predict(config: CircuitConfig, X, theta) -> np.ndarray:
    return np.array([forward(config, x, theta).y_hat for x in np.atleast_2d(X)])
