"""Clocked training and inference over an assembled circuit.

One iteration runs four stages on two clock phases::

    C1 [0, T]      N1   hidden state evolves from the loaded input
    C2 [T, 2T]     N2   adjoints (and retrace copies) created from Z and Y
                   N3   gradients accumulate alongside the feedback dynamics
    C1 [2T, 2T+e]  N4   parameter update and flush

In idealized mode N2 and N4 are exact completion maps and rail annihilation
is applied exactly at every stage boundary. In full-kinetics mode every stage
is chemistry with fast reactions sped up by ``kappa_fast / T``.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .compiler import Circuit
from .crn import (C1, C2, DivergenceError, SimulationError, SolverConfig,
                  apply_discrete_map, simulate)

ON, OFF = "ON", "OFF"


class TrainingDiverged(DivergenceError):
    """Divergence during train(); ``report`` holds the iterations completed."""

    def __init__(self, cause: SimulationError, report: "TrainReport"):
        super().__init__(f"iteration {len(report.traces)}: {cause.args[0] if cause.args else cause}",
                         cause.time, cause.state, cause.stage)
        self.report = report


@dataclass(frozen=True)
class IterationTrace:
    index: int
    x: np.ndarray
    target: float
    y_hat: float
    loss: float
    gradient: np.ndarray
    theta: np.ndarray
    snapshots: dict = field(default_factory=dict, repr=False)


@dataclass
class TrainReport:
    traces: list[IterationTrace]
    config: dict
    seed: int | None
    wall_time: float
    theta_init: np.ndarray
    val_losses: list[float] = field(default_factory=list)

    @property
    def theta(self) -> np.ndarray:
        return self.traces[-1].theta if self.traces else self.theta_init

    @property
    def losses(self) -> np.ndarray:
        return np.array([t.loss for t in self.traces])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        k = self.theta_init.size
        w.writerow(["iter", "loss", "y_hat", "target"] + [f"theta_{i}" for i in range(k)]
                   + [f"grad_{i}" for i in range(k)])
        for t in self.traces:
            w.writerow([t.index, repr(t.loss), repr(t.y_hat), repr(t.target)]
                       + [repr(float(v)) for v in t.theta.ravel()] + [repr(float(v)) for v in t.gradient.ravel()])
        return buf.getvalue()


@dataclass(frozen=True)
class ClassSpec:
    y_on: float
    y_off: float
    phi: float

    def __post_init__(self):
        if self.y_on == self.y_off:
            raise ValueError("y_on and y_off must differ")


def shuffled_order(n: int, passes: int, seed) -> np.ndarray:
    """Sample indices for ``passes`` passes, reshuffled each pass."""
    rng = np.random.default_rng(seed)
    if passes <= 0 or n == 0:
        return np.zeros(0, dtype=int)
    return np.concatenate([rng.permutation(n) for _ in range(passes)])


def _stage_solver(circuit: Circuit, solver: SolverConfig) -> SolverConfig:
    # fast rates are set relative to the slow clock so eps = 0.01T spans ~10 fast time constants
    return replace(solver, kappa_fast=solver.kappa_fast / circuit.config.T)


def _guard(state: np.ndarray, circuit: Circuit, stage: str, limit: float) -> None:
    if not np.all(np.isfinite(state)) or np.max(np.abs(state)) > limit:
        i = int(np.nanargmax(np.abs(np.nan_to_num(state, nan=np.inf))))
        raise DivergenceError(f"{circuit.species[i].name} exceeded overflow guard {limit:g}",
                              None, state, stage)


def initial_state(circuit: Circuit, theta=None) -> np.ndarray:
    state = circuit.zeros()
    th = circuit.config.initial_theta() if theta is None else np.asarray(theta, float)
    circuit.load(state, circuit.logical["P"], th.ravel())
    return state


def inject(circuit: Circuit, state: np.ndarray, x, y: float | None = None) -> np.ndarray:
    """Load a new input (and target) onto a state, overwriting X, Y and, for copy-x, Z."""
    cfg = circuit.config
    state = state.copy()
    xa = cfg.augment(x)
    circuit.load(state, circuit.logical["X"], xa)
    if cfg.resolved_z_init == "copy-x":
        circuit.load(state, circuit.logical["Z"], xa)
    if y is not None and "Y" in circuit.index:
        if y < 0:
            raise ValueError(f"target must be nonnegative to load into Y, got {y}")
        state[circuit.index["Y"]] = float(y)
    return state


def _read_theta(circuit: Circuit, state) -> np.ndarray:
    return circuit.read(state, circuit.logical["P"]).reshape(circuit.config.theta_shape)


def _run_analog(circuit, state, stages, gate, duration, solver, label):
    traj = simulate(circuit.crn(stages), state, duration, gate, solver, stage=label)
    return traj.final


def _scale_gradient(circuit: Circuit, state: np.ndarray) -> np.ndarray:
    # eta != 1 is applied as a rescaling of G before the eta = 1 subtraction network
    eta = circuit.config.eta
    if eta != 1.0:
        state = state.copy()
        for ln in circuit.logical["G"]:
            for s in circuit.rails[ln]:
                if s:
                    state[circuit.index[s]] *= eta
    return state


def _reset(circuit: Circuit, state: np.ndarray, role: str) -> np.ndarray:
    state = state.copy()
    for ln in circuit.logical.get(role, ()):
        for s in circuit.rails[ln]:
            if s:
                state[circuit.index[s]] = 0.0
    return state


def run_stages(circuit: Circuit, state: np.ndarray, solver: SolverConfig = SolverConfig()) -> dict:
    """Run N1..N4 from a loaded state; returns the state at the end of each stage."""
    cfg = circuit.config
    sv = _stage_solver(circuit, solver)
    snaps = {}
    state = _reset(circuit, state, "G")
    if cfg.mode == "idealized":
        s = circuit.annihilate(_run_analog(circuit, state, ["N1"], C1, cfg.T, sv, "N1"))
        _guard(s, circuit, "N1", sv.overflow)
        snaps["N1"] = s
        s = circuit.annihilate(apply_discrete_map(circuit.crn(["N2"], annihilation=False), s))
        _guard(s, circuit, "N2", sv.overflow)
        snaps["N2"] = s
        if circuit.stages["N3"]:
            s = _run_analog(circuit, s, ["N3"], C2, cfg.T, sv, "N3")
        s = circuit.annihilate(s)
        _guard(s, circuit, "N3", sv.overflow)
        snaps["N3"] = s
        s = _scale_gradient(circuit, s)
        s = circuit.annihilate(apply_discrete_map(circuit.crn(["N4"], annihilation=False), s))
        snaps["N4"] = s
        return snaps
    s = _run_analog(circuit, state, ["N1"], C1, cfg.T, sv, "N1")
    snaps["N1"] = s
    s = _run_analog(circuit, s, ["N2", "N3"], C2, cfg.T, sv, "N2/N3")
    snaps["N2"] = snaps["N3"] = s
    s = _run_analog(circuit, s, ["N4"], C1, cfg.eps, sv, "N4")
    snaps["N4"] = s
    return snaps


def run_iteration(circuit: Circuit, x, y: float, theta=None, state: np.ndarray | None = None,
                  solver: SolverConfig = SolverConfig(), index: int = 0) -> IterationTrace:
    """One learning iteration on sample (x, y).

    Parameters come from ``state`` if given (chained from a previous
    iteration), else from ``theta``, else from the config's initial values.
    """
    if circuit.config.inference:
        raise ValueError("inference-build circuits cannot train")
    if state is None:
        state = initial_state(circuit, theta)
    start = inject(circuit, state, x, y)
    snaps = run_stages(circuit, start, solver)
    y_hat = float(circuit.read(snaps["N2"], circuit.logical["Yhat"])[0])
    g = circuit.read(snaps["N3"], circuit.logical["G"]).reshape(circuit.config.theta_shape)
    return IterationTrace(index, np.asarray(x, float), float(y), y_hat, 0.5 * (y_hat - float(y)) ** 2,
                          g, _read_theta(circuit, snaps["N4"]), {"start": start, **snaps})


def _pairs(dataset) -> list[tuple[np.ndarray, float]]:
    if isinstance(dataset, tuple) and len(dataset) == 2 and not hasattr(dataset[0], "x"):
        X, y = dataset
        return [(np.asarray(a, float), float(b)) for a, b in zip(X, y)]
    return [(np.asarray(s[0], float), float(s[1])) if isinstance(s, tuple) else (np.asarray(s.x, float), float(s.y))
            for s in dataset]


def train(circuit: Circuit, dataset, passes: int, seed=None, theta=None,
          solver: SolverConfig = SolverConfig(), validation=None, keep_snapshots: bool = False) -> TrainReport:
    """SGD over seeded per-pass shuffles, chaining the circuit state between iterations."""
    pairs = _pairs(dataset)
    if not pairs:
        raise ValueError("dataset is empty")
    val = _pairs(validation) if validation is not None else None
    th0 = circuit.config.initial_theta() if theta is None else np.asarray(theta, float).reshape(circuit.config.theta_shape)
    report = TrainReport([], _config_echo(circuit), seed, 0.0, th0.copy())
    t0 = time.perf_counter()
    state = initial_state(circuit, th0)
    order = shuffled_order(len(pairs), passes, seed)
    per_pass = len(pairs)
    try:
        for k, idx in enumerate(order):
            x, y = pairs[idx]
            tr = run_iteration(circuit, x, y, state=state, solver=solver, index=k)
            state = tr.snapshots["N4"]
            if not keep_snapshots:
                tr = replace(tr, snapshots={})
            report.traces.append(tr)
            if val is not None and (k + 1) % per_pass == 0:
                report.val_losses.append(mean_loss(circuit, val, tr.theta, solver))
    except DivergenceError as exc:
        report.wall_time = time.perf_counter() - t0
        raise TrainingDiverged(exc, report) from exc
    except SimulationError as exc:
        report.wall_time = time.perf_counter() - t0
        exc.report = report
        raise
    report.wall_time = time.perf_counter() - t0
    return report


def _config_echo(circuit: Circuit) -> dict:
    cfg = circuit.config
    out = {}
    for k in cfg.__dataclass_fields__:
        v = getattr(cfg, k)
        out[k] = v.tolist() if isinstance(v, np.ndarray) else v
    return out


def predict(circuit: Circuit, x, theta=None, solver: SolverConfig = SolverConfig()) -> float:
    """Forward pass only: N1, then readout of Z into Yhat."""
    cfg = circuit.config
    sv = _stage_solver(circuit, solver)
    state = inject(circuit, initial_state(circuit, theta), x)
    s = _run_analog(circuit, state, ["N1"], C1, cfg.T, sv, "N1")
    readout = circuit.crn(["N2"], annihilation=False)
    readout = readout.with_reactions([r for r in readout.reactions if "Y" not in dict(r.reactants)])
    if cfg.mode == "idealized":
        s = apply_discrete_map(readout, circuit.annihilate(s))
    else:
        s = simulate(readout.with_reactions(readout.reactions + tuple(circuit.annihilation)), s, cfg.eps,
                     C2, sv, stage="readout").final
    _guard(s, circuit, "readout", sv.overflow)
    return float(circuit.read(s, circuit.logical["Yhat"])[0])


def predict_many(circuit: Circuit, X, theta=None, solver: SolverConfig = SolverConfig()) -> np.ndarray:
    return np.array([predict(circuit, x, theta, solver) for x in np.atleast_2d(np.asarray(X, float))])


def mean_loss(circuit: Circuit, data: Iterable, theta, solver: SolverConfig = SolverConfig()) -> float:
    pairs = _pairs(data)
    return float(np.mean([0.5 * (predict(circuit, x, theta, solver) - y) ** 2 for x, y in pairs]))


def classify(circuit: Circuit, x, spec: ClassSpec, theta=None, solver: SolverConfig = SolverConfig()) -> str:
    return ON if predict(circuit, x, theta, solver) > spec.phi else OFF
