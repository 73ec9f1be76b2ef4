"""Acceptance criteria, one test each. Results are summarized at the end of the run.

Criteria 6-9 train full experiments and take several minutes in total.
"""
import time

import numpy as np
from scipy.integrate import solve_ivp

from neuralcrn import datasets as ds
from neuralcrn import oracle
from neuralcrn.compiler import VARIANTS, CircuitConfig, build_circuit, first_order_simplify
from neuralcrn.crn import C2, SolverConfig, simulate
from neuralcrn.experiments import resolve, run_experiment
from neuralcrn.learning import OFF, ClassSpec, classify, predict, run_iteration, shuffled_order, train
from neuralcrn.verification import gradient_check, rel_err


def test_01_circuit_size(acceptance):
    t0 = time.perf_counter()
    full = build_circuit(CircuitConfig("linreg", d=2, beta=1.0)).counts()
    minimal = build_circuit(CircuitConfig("linreg", d=2, merge_adjoints=True)).counts()
    dt = time.perf_counter() - t0
    ok = full == (17, 14) and minimal == (15, 13) and dt < 1
    assert acceptance(1, "circuit size", ok, f"full {full}, minimal {minimal}, {dt:.2f}s")


def test_02_gradient_equivalence(acceptance):
    t0 = time.perf_counter()
    checks = [gradient_check(v, seeds=20, h=1e-5) for v in VARIANTS]
    dt = time.perf_counter() - t0
    worst_c = max(c.circuit_vs_adjoint for c in checks)
    worst_fd = max(c.adjoint_vs_fd for c in checks)
    ok = all(c.ok() for c in checks) and dt < 120
    assert acceptance(2, "oracle gradient equivalence", ok,
                      f"circuit-vs-adjoint {worst_c:.1e} (<=1e-3), adjoint-vs-fd {worst_fd:.1e} (<=1e-6), {dt:.0f}s")


def test_03_retrace(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        th, x = rng.uniform(0.0, 1.5, 2), rng.uniform(0.1, 2.0, 2)
        c = build_circuit(CircuitConfig("theta_z", d=2, T=1.0, theta_init=th))
        tr = run_iteration(c, x, float(rng.uniform(0, 3)))
        worst = max(worst, float(np.max(np.abs(c.read(tr.snapshots["N3"], c.logical["Zb"]) - x))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-5 and dt < 30
    assert acceptance(3, "retrace", ok, f"max |zb(T) - x| {worst:.1e} (<=1e-5), {dt:.1f}s")


def _random_feedback_state(circuit, rng):
    values = {}
    for v in circuit.systems["N3"].variables:
        lo = -0.8 if v.domain == "real" else 0.0
        values[v.name] = float(rng.uniform(lo, 0.8))
    return values


def test_04_dual_rail_feedback(acceptance):
    t0 = time.perf_counter()
    T, worst = 0.25, 0.0
    builds = [CircuitConfig("nlreg", d=2, p=1, signed_params=True), CircuitConfig("nlcls", d=2, p=1, beta=0.1),
              CircuitConfig("nlclsV2", d=2, p=1), CircuitConfig("theta_z", d=2, signed_params=True)]
    for cfg in builds:
        c = build_circuit(cfg)
        fb = c.systems["N3"]
        for seed in range(5):
            vals = _random_feedback_state(c, np.random.default_rng(seed))
            state = c.zeros()
            c.load(state, list(vals), list(vals.values()))
            sim = simulate(c.crn(["N3"]), state, T, C2, SolverConfig(kappa_fast=1e3))
            ref = solve_ivp(fb.vector_field(fb.names), (0, T), [vals[n] for n in fb.names],
                            rtol=1e-11, atol=1e-12, method="DOP853").y[:, -1]
            worst = max(worst, float(np.max(np.abs(c.read(sim.final, fb.names) - ref))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-4 and dt < 60
    assert acceptance(4, "dual-rail feedback semantics", ok, f"max abs err {worst:.1e} (<=1e-4), {dt:.1f}s")


def test_05_mode_agreement(acceptance):
    t0 = time.perf_counter()
    _, cfg = resolve("linreg2d")
    data = ds.generate(ds.DatasetSpec("LinReg2D", 10, seed=0))
    ideal = train(build_circuit(cfg), data, 1, seed=0)
    full_cfg = CircuitConfig(**{**cfg.__dict__, "mode": "full_kinetics"})
    full = train(build_circuit(full_cfg), data, 1, seed=0)
    worst = max(rel_err(f.theta, i.theta) for f, i in zip(full.traces, ideal.traces))
    dt = time.perf_counter() - t0
    ok = len(full.traces) == 10 and worst <= 0.01 and dt < 120
    assert acceptance(5, "mode agreement", ok, f"max parameter rel err {worst:.2%} over 10 iterations (<=1%), {dt:.1f}s")


def test_06_linreg2d(acceptance):
    t0 = time.perf_counter()
    res = run_experiment("linreg2d", seed=7)
    m = res.metrics
    ratio = m["loss_last50"] / m["loss_first50"]
    # the same schedule through the reference Neural ODE
    exp, cfg = resolve("linreg2d")
    data = ds.generate(ds.DatasetSpec(exp.dataset, exp.size, 7))
    tr, va = ds.split(data, 0.2, 7)
    th, _ = oracle.train(cfg, tr, shuffled_order(len(tr), exp.passes, 7), cfg.initial_theta())
    X, y = ds.as_arrays(va)
    oracle_rmse = float(np.sqrt(np.mean((oracle.predict(cfg, X, th) - y) ** 2)))
    dt = time.perf_counter() - t0
    ok = m["after"]["rmse"] <= 0.8 and ratio <= 0.2 and oracle_rmse <= 0.8 and dt < 300
    assert acceptance(6, "LinReg2D learning", ok,
                      f"rmse {m['after']['rmse']:.3f} (oracle {oracle_rmse:.3f}, <=0.8), "
                      f"loss last50/first50 {ratio:.3f} (<=0.2), {dt:.0f}s")


def test_07_linear2d_intercepts(acceptance):
    t0 = time.perf_counter()
    res = run_experiment("linear2d", seed=0, overrides={"resolution": 41})
    _, cfg = resolve("linear2d")
    th = res.theta
    # yhat = T (theta . x) + d T beta; the boundary is yhat = phi
    level = (2.0 - cfg.d * cfg.T * cfg.beta) / cfg.T
    x1, x2 = level / th[0], level / th[1]
    circuit = build_circuit(cfg)
    origin = classify(circuit, [0.0, 0.0], ClassSpec(4.0, 0.0, 2.0), th)
    dt = time.perf_counter() - t0
    ok = 1.8 <= x1 <= 2.2 and 0.9 <= x2 <= 1.1 and origin == OFF and dt < 300
    assert acceptance(7, "Linear2D intercepts", ok,
                      f"x1-axis {x1:.3f} in [1.8,2.2], x2-axis {x2:.3f} in [0.9,1.1], "
                      f"accuracy {res.metrics['after']['accuracy']:.3f}, {dt:.0f}s")


def test_08_nonlinear_parity(acceptance):
    t0 = time.perf_counter()
    details, ok = [], True
    for name in ("xor2d", "rings2d"):
        res = run_experiment(name, seed=0)
        m = res.metrics
        gap = m["oracle"]["accuracy"] - m["after"]["accuracy"]
        ok &= gap <= 0.05
        details.append(f"{name} {m['after']['accuracy']:.3f} vs oracle {m['oracle']['accuracy']:.3f}")
        if name == "xor2d":
            cells = {(r[0], r[1]): r[3] for r in res.grid}
            corners = {(0.0, 0.0): "OFF", (1.0, 1.0): "OFF", (0.0, 1.0): "ON", (1.0, 0.0): "ON"}
            right = sum(cells[k] == v for k, v in corners.items())
            ok &= right == 4
            details.append(f"xor corners {right}/4")
    dt = time.perf_counter() - t0
    ok &= dt < 900
    assert acceptance(8, "nonlinear classification parity", ok, "; ".join(details) + f", {dt:.0f}s")


def test_09_first_order(acceptance):
    t0 = time.perf_counter()
    _, cfg = resolve("linreg2d")
    exact = build_circuit(cfg)
    approx = first_order_simplify(exact)
    data = ds.generate(ds.DatasetSpec("LinReg2D", 50, seed=1))
    a, b = train(exact, data, 1, seed=1), train(approx, data, 1, seed=1)
    identical = all(np.array_equal(s.theta, t.theta) and np.array_equal(s.gradient, t.gradient)
                    and s.y_hat == t.y_hat for s, t in zip(a.traces, b.traces))
    res = run_experiment("nonlinreg2d_approx", seed=0)
    rmse = res.metrics["after"]["rmse"]
    _, ncfg = resolve("nonlinreg2d_approx")
    at_11 = predict(build_circuit(ncfg), [1.0, 1.0], res.theta)
    dt = time.perf_counter() - t0
    ok = identical and rmse <= 0.8 and abs(at_11 - 2.0) <= 0.8 and dt < 300
    assert acceptance(9, "first-order simplification", ok,
                      f"LR traces bit-identical: {identical}; NLR first-order rmse {rmse:.3f} (<=0.8), "
                      f"yhat(1,1) {at_11:.2f} (target 2), {dt:.0f}s")


def test_10_molecularity(acceptance):
    t0 = time.perf_counter()
    worst = {}
    for v in ("linreg", "lincls", "nlreg", "nlclsV2"):
        for approx in (False, True):
            p = 2 if v == "nlclsV2" else 0
            c = build_circuit(CircuitConfig(v, d=2, p=p, beta=0.1, approx_gradients=approx))
            worst[v] = max(worst.get(v, 0), max(r.order for r in c.crn().reactions))
    dt = time.perf_counter() - t0
    ok = max(worst.values()) <= 2 and dt < 1
    assert acceptance(10, "molecularity", ok, f"max reactant count {worst}, {dt:.2f}s")
