"""Command line entry point: ``neuralcrn {gen,run,grid,verify,dump}``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import datasets as ds
from .compiler import VARIANTS, CircuitConfig, ConfigError, build_circuit
from .crn import DivergenceError
from .experiments import EXPERIMENTS, coerce, load_params, read_config_file, resolve, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CHECK = 0, 2, 3, 4


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "config", None):
        out.update(read_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if getattr(args, "mode", None):
        out["mode"] = args.mode
    if getattr(args, "passes", None) is not None:
        out["passes"] = str(args.passes)
    return out


def cmd_gen(args) -> int:
    params = {}
    for item in args.param or []:
        k, v = item.split("=", 1)
        params[k] = v.lower() == "true" if v.lower() in ("true", "false") else float(v)
    try:
        spec = ds.DatasetSpec(args.dataset, args.size, args.seed, params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    text = ds.to_csv(ds.generate(spec))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_run(args) -> int:
    out = args.out or f"runs/{args.experiment}-seed{args.seed}"
    try:
        result = run_experiment(args.experiment, _overrides(args), out, seed=args.seed)
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        report = getattr(exc, "report", None)
        if report is not None:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "loss.csv").write_text(report.to_csv())
        return EXIT_DIVERGED
    print(json.dumps(result.metrics, indent=2))
    print(f"artifacts in {out}", file=sys.stderr)
    return EXIT_OK


def cmd_grid(args) -> int:
    if args.params:
        name, cfg, theta = load_params(args.params)
    else:
        name = args.experiment
        if name is None:
            raise ConfigError("grid needs an experiment name or --params")
        _, cfg = resolve(name, _overrides(args))
        theta = cfg.initial_theta()
    exp = EXPERIMENTS[name]
    spec = ds.DatasetSpec(exp.dataset, 2)
    if not spec.is_classification:
        raise ConfigError(f"{name} is not a classification experiment")
    rows = ds.boundary_grid(build_circuit(cfg), spec, args.resolution, theta)
    text = ds.grid_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    """Circuit vs oracle gradients on every variant; exit 4 on any failure."""
    from .verification import gradient_check

    failed = 0
    for variant in VARIANTS:
        chk = gradient_check(variant, args.seeds)
        failed += not chk.ok()
        print(f"{'PASS' if chk.ok() else 'FAIL'} {variant:8s} circuit-vs-adjoint {chk.circuit_vs_adjoint:.2e}"
              f"  adjoint-vs-fd {chk.adjoint_vs_fd:.2e}")
    return EXIT_OK if not failed else EXIT_CHECK


def cmd_dump(args) -> int:
    kw = {}
    for item in args.set or []:
        k, v = item.split("=", 1)
        kw[k.strip()] = coerce(k.strip(), v)
    try:
        circuit = build_circuit(CircuitConfig(args.variant, **kw))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    sys.stdout.write(circuit.dump())
    s, r = circuit.counts()
    print(f"# {s} species, {r} reactions (bias source, readout, flush and annihilation not counted)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="neuralcrn", description="Compile, train and check Neural CRN circuits.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic dataset as CSV")
    g.add_argument("dataset", choices=sorted(ds.DEFAULTS))
    g.add_argument("--size", type=int, default=200)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--param", action="append", metavar="KEY=VALUE", help="dataset parameter override")
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="train and evaluate a bundled experiment")
    r.add_argument("experiment", choices=sorted(EXPERIMENTS))
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--mode", choices=("idealized", "full_kinetics"))
    r.add_argument("--passes", type=int)
    r.add_argument("--out")
    r.add_argument("--config", help="key=value file overriding circuit and run settings")
    r.add_argument("--set", action="append", metavar="KEY=VALUE")
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("grid", help="decision grid CSV for a classifier")
    d.add_argument("experiment", nargs="?", choices=sorted(EXPERIMENTS))
    d.add_argument("--params", help="params.json from a previous run")
    d.add_argument("--resolution", type=int, default=41)
    d.add_argument("--mode", choices=("idealized", "full_kinetics"))
    d.add_argument("--config")
    d.add_argument("--set", action="append", metavar="KEY=VALUE")
    d.add_argument("--out")
    d.set_defaults(func=cmd_grid)

    v = sub.add_parser("verify", help="check circuit gradients against the reference Neural ODE")
    v.add_argument("--seeds", type=int, default=20)
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("dump", help="print the compiled circuit of a variant")
    c.add_argument("variant", choices=VARIANTS)
    c.add_argument("--set", action="append", metavar="KEY=VALUE")
    c.set_defaults(func=cmd_dump)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
