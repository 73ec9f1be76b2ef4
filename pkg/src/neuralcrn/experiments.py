"""Bundled experiments: dataset, circuit, training, evaluation and artifacts."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import datasets as ds
from . import oracle
from .compiler import CircuitConfig, ConfigError, build_circuit
from .crn import SolverConfig
from .learning import TrainReport, predict_many, shuffled_order, train
from .plots import grid_plot, line_plot, scatter_plot


@dataclass(frozen=True)
class Experiment:
    dataset: str
    config: dict
    size: int
    passes: int
    init_scale: float = 0.0  # > 0: theta drawn from N(0, init_scale) with the run seed
    resolution: int = 41
    oracle: bool = False
    note: str = ""


_NLC = dict(f_theta="nlcls", T=1.0, eta=0.3, p=2, pad_value=1.0, beta=0.1)
_NLC2 = dict(f_theta="nlclsV2", T=1.0, eta=0.03, p=2, pad_value=1.0)
_NLR = dict(f_theta="nlreg", T=0.2, eta=1.0, p=1, pad_value=1.0, signed_params=True)

EXPERIMENTS: dict[str, Experiment] = {
    "linreg2d": Experiment("LinReg2D", dict(f_theta="linreg", T=0.1, beta=5.0, eta=1.0), 500, 1,
                           note="LR-NCRN"),
    "linreg2d_minimal": Experiment("LinReg2D", dict(f_theta="linreg", T=0.1, eta=1.0, merge_adjoints=True),
                                   500, 1, note="LR-NCRN without bias, merged adjoints"),
    "nonlinreg2d": Experiment("NonLinReg2D", _NLR, 500, 2, note="NLR-NCRN"),
    "nonlinreg2d_approx": Experiment("NonLinReg2D", {**_NLR, "approx_gradients": True}, 500, 2,
                                     note="NLR-NCRN with first-order gradients"),
    "linear2d": Experiment("Linear2D", dict(f_theta="lincls", T=0.5, eta=0.004, beta=0.02), 3125, 4,
                           note="LC-NCRN"),
    "rings2d": Experiment("Rings2D", _NLC, 1000, 3, init_scale=0.5, oracle=True, note="NLC-NCRN"),
    "xor2d": Experiment("XOR2D", _NLC, 1000, 3, init_scale=0.5, oracle=True, note="NLC-NCRN"),
    "rings2d_v2": Experiment("Rings2D", _NLC2, 1000, 5, init_scale=0.5, oracle=True, note="NLC-NCRN-V2"),
    "xor2d_v2": Experiment("XOR2D", _NLC2, 1000, 5, init_scale=0.5, oracle=True, note="NLC-NCRN-V2"),
}

RUN_KEYS = {"size": int, "passes": int, "init_scale": float, "resolution": int, "oracle": bool}


def coerce(key: str, value):
    if not isinstance(value, str):
        return value
    v = value.strip()
    if key in RUN_KEYS:
        kind = RUN_KEYS[key]
    else:
        fields = {f.name: f for f in dataclasses.fields(CircuitConfig)}
        if key not in fields:
            raise ConfigError(f"unknown setting {key!r}")
        default = fields[key].default
        kind = type(default) if default is not None else None
    if kind is bool or v.lower() in ("true", "false"):
        if v.lower() not in ("true", "false", "1", "0"):
            raise ConfigError(f"{key} expects true/false, got {v!r}")
        return v.lower() in ("true", "1")
    if v.lower() == "none":
        return None
    try:
        if kind is int:
            return int(v)
        if kind is float:
            return float(v)
        if kind is None:
            # untyped optional fields: numbers where possible, else strings
            try:
                return float(v)
            except ValueError:
                return v
    except ValueError as exc:
        raise ConfigError(f"{key} expects {kind.__name__}, got {v!r}") from exc
    return v


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def resolve(name: str, overrides: dict | None = None) -> tuple[Experiment, CircuitConfig]:
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    exp = EXPERIMENTS[name]
    cfg_kw = dict(exp.config)
    run_kw = {}
    for k, v in (overrides or {}).items():
        v = coerce(k, v)
        if k in RUN_KEYS:
            run_kw[k] = v
        else:
            cfg_kw[k] = v
    exp = replace(exp, **run_kw)
    if cfg_kw.get("mode") == "full_kinetics" and "eta" not in (overrides or {}):
        cfg_kw["eta"] = 1.0
    try:
        cfg = CircuitConfig(**cfg_kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if exp.passes < 0 or exp.size < 2:
        raise ConfigError("passes must be >= 0 and size >= 2")
    return exp, cfg


@dataclass
class ExperimentResult:
    name: str
    metrics: dict
    report: TrainReport
    theta: np.ndarray
    grid: list[tuple] | None = None  # (x1, x2, y_hat, label) rows for classifiers
    files: list[str] = field(default_factory=list)


def _metric(spec: ds.DatasetSpec, preds, samples) -> dict:
    y = np.array([s.y for s in samples])
    preds = np.asarray(preds, float)
    if spec.is_classification:
        phi = spec.resolved["phi"]
        truth = np.array([s.label == ds.ON for s in samples])
        return {"accuracy": float(np.mean((preds > phi) == truth))}
    return {"rmse": float(np.sqrt(np.mean((preds - y) ** 2)))}


def run_experiment(name: str, overrides: dict | None = None, out_dir=None, seed: int = 0,
                   solver: SolverConfig = SolverConfig()) -> ExperimentResult:
    """Train and evaluate one bundled experiment; writes artifacts into ``out_dir`` if given."""
    exp, cfg = resolve(name, overrides)
    if exp.init_scale > 0 and cfg.theta_init is None:
        init = np.random.default_rng([seed, 1]).normal(0.0, exp.init_scale, cfg.theta_shape)
        if not cfg.resolved_signed_params:
            init = np.abs(init)
        cfg = replace(cfg, theta_init=init)
    spec = ds.DatasetSpec(exp.dataset, exp.size, seed)
    data = ds.generate(spec)
    train_set, test_set = ds.split(data, 0.2, seed)
    circuit = build_circuit(cfg)
    theta0 = cfg.initial_theta()
    X_test = np.array([s.x for s in test_set])

    before = predict_many(circuit, X_test, theta0, solver)
    report = train(circuit, train_set, exp.passes, seed=seed, theta=theta0, solver=solver,
                   validation=test_set if exp.passes else None)
    theta = report.theta
    after = predict_many(circuit, X_test, theta, solver) if exp.passes else before
    metrics = {"experiment": name, "dataset": exp.dataset, "seed": seed, "mode": cfg.mode,
               "iterations": len(report.traces), "wall_time": report.wall_time,
               "before": _metric(spec, before, test_set), "after": _metric(spec, after, test_set)}
    losses = report.losses
    if len(losses) >= 100:
        metrics["loss_first50"] = float(losses[:50].mean())
        metrics["loss_last50"] = float(losses[-50:].mean())

    oracle_theta = None
    if exp.oracle and exp.passes:
        order = shuffled_order(len(train_set), exp.passes, seed)
        oracle_theta, _ = oracle.train(cfg, train_set, order, theta0)
        metrics["oracle"] = _metric(spec, oracle.predict(cfg, X_test, oracle_theta), test_set)

    rows = None
    if spec.is_classification:
        rows = ds.boundary_grid(circuit, spec, exp.resolution, theta, solver)

    result = ExperimentResult(name, metrics, report, theta, rows)
    if out_dir is not None:
        result.files = _write(Path(out_dir), exp, cfg, spec, data, test_set, report, before, after, rows,
                              oracle_theta, metrics)
    return result


def _write(out: Path, exp, cfg, spec, data, test_set, report, before, after, rows, oracle_theta, metrics):
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    files["dataset.csv"] = ds.to_csv(data)
    files["loss.csv"] = report.to_csv()
    lines = ["x1,x2,target,before,after"]
    lines += [f"{s.x[0]!r},{s.x[1]!r},{s.y!r},{b!r},{a!r}"
              for s, b, a in zip(test_set, before.tolist(), after.tolist())]
    files["predictions.csv"] = "\n".join(lines) + "\n"
    params = {"experiment": metrics["experiment"], "config": report.config, "seed": report.seed,
              "passes": exp.passes, "size": exp.size, "theta_init": report.theta_init.tolist(),
              "theta": report.theta.tolist()}
    if oracle_theta is not None:
        params["oracle_theta"] = oracle_theta.tolist()
    files["params.json"] = json.dumps(params, indent=2, default=_jsonable) + "\n"
    files["summary.json"] = json.dumps(metrics, indent=2, default=_jsonable) + "\n"

    it = np.arange(len(report.traces))
    series = {"train (per iteration)": (it, report.losses)}
    if report.val_losses:
        per = len(report.traces) // len(report.val_losses)
        series["validation (per pass)"] = (np.arange(1, len(report.val_losses) + 1) * per - 1, report.val_losses)
    files["loss.svg"] = line_plot(series, f"{metrics['experiment']}: loss")
    y = np.array([s.y for s in test_set])
    sc = {"before training": (y, before)}
    if exp.passes:
        sc["after training"] = (y, after)
    files["scatter.svg"] = scatter_plot(sc, f"{metrics['experiment']}: predicted vs target")
    if rows is not None:
        files["grid.csv"] = ds.grid_csv(rows)
        files["boundary.svg"] = grid_plot(rows, [(s.x, s.label) for s in test_set],
                                          f"{metrics['experiment']}: decision regions")
    for name, text in files.items():
        (out / name).write_text(text)
    return sorted(str(out / n) for n in files)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return str(v)


def load_params(path) -> tuple[str, CircuitConfig, np.ndarray]:
    """Read back a run's params.json as (experiment, config, trained theta)."""
    p = json.loads(Path(path).read_text())
    cfg_kw = dict(p["config"])
    if cfg_kw.get("theta_init") is not None and not np.isscalar(cfg_kw["theta_init"]):
        cfg_kw["theta_init"] = np.array(cfg_kw["theta_init"])
    cfg = CircuitConfig(**cfg_kw)
    return p["experiment"], cfg, np.array(p["theta"], float).reshape(cfg.theta_shape)
