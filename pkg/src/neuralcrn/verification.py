"""Circuit-versus-reference gradient checks shared by the CLI and the test suite."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import oracle
from .compiler import VARIANTS, CircuitConfig, build_circuit
from .learning import run_iteration


def rel_err(a, b) -> float:
    """Max-norm relative error of ``a`` against reference ``b``."""
    a, b = np.ravel(a), np.ravel(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def random_case(variant: str, seed: int):
    """A seeded (config, x, y) point respecting the variant's sign conventions."""
    rng = np.random.default_rng([seed, VARIANTS.index(variant)])
    kw = {"p": 1} if variant in ("nlcls", "nlclsV2") else {}
    if variant in ("linreg", "lincls", "nlcls"):
        kw["beta"] = float(rng.uniform(0.1, 0.5))
    base = CircuitConfig(variant, **kw)
    if base.resolved_signed_params:
        theta = rng.uniform(-1.0, 1.0, base.theta_shape)
    else:
        theta = rng.uniform(0.1, 1.5, base.theta_shape)
    x = rng.uniform(-1.0, 1.0, base.d) if base.resolved_signed_inputs else rng.uniform(0.2, 2.0, base.d)
    return CircuitConfig(variant, theta_init=theta, **kw), x, float(rng.uniform(0.0, 3.0))


@dataclass(frozen=True)
class GradientCheck:
    variant: str
    circuit_vs_adjoint: float
    adjoint_vs_fd: float

    def ok(self, tol_circuit: float = 1e-3, tol_fd: float = 1e-6) -> bool:
        return self.circuit_vs_adjoint <= tol_circuit and self.adjoint_vs_fd <= tol_fd


def gradient_check(variant: str, seeds: int = 20, h: float = 1e-5) -> GradientCheck:
    worst_c = worst_fd = 0.0
    for seed in range(seeds):
        cfg, x, y = random_case(variant, seed)
        trace = run_iteration(build_circuit(cfg), x, y)
        ref = oracle.adjoint_gradients(cfg, x, y)
        fd = oracle.finite_diff_gradients(cfg, x, y, h=h)
        worst_c = max(worst_c, rel_err(trace.gradient, ref.gradient))
        worst_fd = max(worst_fd, rel_err(ref.gradient, fd))
    return GradientCheck(variant, worst_c, worst_fd)
