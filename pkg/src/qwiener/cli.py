"""Command-line front end: ``qwiener {check,simulate,kernel,bench}``.

Exit codes: 0 on success, 1 for configuration errors, 2 for numerical
failures.  The seed defaults to 0.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import bench, kalman, plotting
from .kernels import KERNEL_KINDS, KernelFunction, kernel_table, kernel_table_csv
from .qss import (build_quadrature_system, check_physical_realizability, is_completely_passive,
                  spec_from_quadrature)
from .reservoirs import (PADE_INPUT, PADE_OUTPUT_ROW, HqWConfig, LqWConfig, PadeConfig,
                         channel_rng, config_from_dict, hqw_spec, hqw_system, lqw_spec,
                         padeqw_blocks, sample_hqw_params)


class ConfigError(Exception):
    """Bad user input; reported with exit code 1."""


class NumericalFailure(Exception):
    """A numerical stage failed; reported with exit code 2."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage


def _read_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return doc


def _reservoir_config(args):
    doc = _read_json(args.config) if args.config else {"kind": args.model or "hqw"}
    if args.nc is not None:
        key = {"hqw": "n_c", "lqw": "n", "padeqw": "n_blocks"}.get(doc.get("kind"))
        if key:
            doc[key] = args.nc
    if args.d is not None and doc.get("kind") in ("hqw", "lqw"):
        doc["d"] = args.d
    if args.kappa is not None and doc.get("kind") == "hqw":
        doc["kappa"] = args.kappa
    doc.setdefault("seed", args.seed)
    try:
        return config_from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"reservoir config: {exc}") from exc


def _systems(config):
    """``(label, system, hamiltonian_spec)`` for every network of a config."""
    rng = np.random.default_rng(config.seed)
    if isinstance(config, HqWConfig):
        banks = sample_hqw_params(config, rng)
        return [(f"channel {i}", hqw_system(b), hqw_spec(b)) for i, b in enumerate(banks)]
    if isinstance(config, LqWConfig):
        specs = [lqw_spec(config, r) for r in rng.spawn(config.d)]
        return [(f"replica {i}", build_quadrature_system(s), s) for i, s in enumerate(specs)]
    return [(f"block {k + 1}", b, spec_from_quadrature(b))
            for k, b in enumerate(padeqw_blocks(config))]


def cmd_check(args) -> int:
    config = _reservoir_config(args)
    try:
        systems = _systems(config)
    except (np.linalg.LinAlgError, RuntimeError, FloatingPointError) as exc:
        raise NumericalFailure("reservoir construction", exc) from exc
    worst = 0.0
    lines = []
    for label, sys_, spec in systems:
        r = check_physical_realizability(sys_)
        worst = max(worst, *r)
        lines.append(f"{label}: residuals {r[0]:.3e} {r[1]:.3e} {r[2]:.3e} "
                     f"passive={is_completely_passive(spec)}")
    kind = type(config).__name__
    print(f"{kind} ({len(systems)} networks)")
    print("\n".join(lines))
    ok = worst < 1e-9
    print(f"max residual {worst:.3e}: {'realizable' if ok else 'NOT realizable'}")
    return 0 if ok else 2


def cmd_simulate(args) -> int:
    config = _reservoir_config(args)
    systems = _systems(config)
    if not 0 <= args.channel < len(systems):
        raise ConfigError(f"--channel must lie in [0, {len(systems) - 1}]")
    label, sys_, _ = systems[args.channel]
    task = _task(args.task or "delay", args.tau, args.length)
    u = bench.generate_input(task, np.random.default_rng(args.seed)) * args.gain
    direction = PADE_INPUT if isinstance(config, PadeConfig) else None
    try:
        traj = kalman.simulate_measured(sys_, u, args.dt, input_direction=direction,
                                        noise=args.noise == "on",
                                        rng=channel_rng(args.seed, 1))
    except (np.linalg.LinAlgError, RuntimeError, FloatingPointError) as exc:
        raise NumericalFailure("filter simulation", exc) from exc
    out = _out_dir(args)
    fmt = args.format or "csv"
    if fmt == "csv":
        path = out / "trajectory.csv"
        path.write_text(traj.to_csv())
    elif fmt == "json":
        path = out / "trajectory.json"
        path.write_text(json.dumps({"network": label, "dt": args.dt, "noise": traj.noise,
                                    "columns": traj.to_csv().split("\n", 1)[0].split(","),
                                    "rows": traj._table().tolist()}))
    else:
        path = out / "trajectory.svg"
        row = PADE_OUTPUT_ROW if isinstance(config, PadeConfig) else 0
        plotting.emit_plot({"output": traj.outputs[:, row]}, None, path, title=label,
                           x=traj.times)
    print(f"wrote {path}")
    return 0


def _parse_grid(text: str) -> np.ndarray:
    try:
        a, b, step = (float(x) for x in text.split(":"))
    except ValueError as exc:
        raise ConfigError(f"--grid expects start:stop:step, got {text!r}") from exc
    if step <= 0 or b < a:
        raise ConfigError("--grid needs step > 0 and stop >= start")
    n = int(round((b - a) / step)) + 1
    return a + step * np.arange(n)


def cmd_kernel(args) -> int:
    params = {}
    for item in args.param or []:
        key, _, val = item.partition("=")
        try:
            params[key] = float(val)
        except ValueError as exc:
            raise ConfigError(f"--param {item!r}: value is not a number") from exc
    if args.am is not None:
        params["a_m"] = args.am
    if args.aM is not None:
        params["a_M"] = args.aM
    if args.kappa is not None:
        params["kappa"] = args.kappa
    if args.kind in ("deep-poly", "deep-se"):
        raise ConfigError("deep kernels need an input path; use the library API")
    try:
        k = KernelFunction(args.kind, params)
    except ValueError as exc:
        raise ConfigError(f"kernel: {exc}") from exc
    t = _parse_grid(args.grid)
    # pairing (t_i, t_{N-1-i}) so row i and row N-1-i are mirror images
    t2 = t[::-1] if args.tprime is None else np.full_like(t, args.tprime)
    try:
        table = kernel_table(k, t, t2)
    except (FloatingPointError, ValueError) as exc:
        raise NumericalFailure("kernel evaluation", exc) from exc
    if not np.all(np.isfinite(table)):
        raise NumericalFailure("kernel evaluation", ValueError("non-finite kernel value"))
    out = _out_dir(args)
    fmt = args.format or "csv"
    if fmt == "csv":
        path = out / "kernel.csv"
        path.write_text(kernel_table_csv(table))
    elif fmt == "json":
        path = out / "kernel.json"
        path.write_text(json.dumps({"kind": k.kind, "params": k.params,
                                    "rows": table.tolist()}))
    else:
        path = out / "kernel.svg"
        plotting.emit_plot({f"{k.kind}(t, t')": table[:, 2]}, None, path, x=table[:, 0])
    print(f"wrote {path} ({table.shape[0]} rows)")
    return 0


def _task(kind: str, tau, length: int = 1000) -> bench.TaskSpec:
    """Task with the training split at four fifths of ``length``."""
    if tau is None:
        tau = 2 if kind in ("parity", "delay") else 0
    try:
        return bench.TaskSpec(kind, tau, length=length, split=max(1, length * 4 // 5))
    except ValueError as exc:
        raise ConfigError(f"task: {exc}") from exc


def _bench_plan(args):
    """Models, tasks and repetition count from the config file plus overrides."""
    doc = _read_json(args.config) if args.config else {}
    unknown = set(doc) - {"models", "tasks", "reps", "seed"}
    if unknown:
        raise ConfigError(f"bench config: unknown field(s) {sorted(unknown)}")
    model_docs = doc.get("models", [{}])
    task_docs = doc.get("tasks")
    over = {}
    if args.model:
        over["kind"] = args.model
    if args.nc is not None:
        over["size"] = args.nc
    if args.d is not None:
        over["d"] = args.d
    if args.kappa is not None:
        over["kappa"] = args.kappa
    if args.noise is not None:
        over["noise"] = args.noise == "on"
    if args.readout:
        over["readout"] = args.readout
    allowed = {f.name for f in fields(bench.ModelSpec)}
    models = []
    for i, m in enumerate(model_docs):
        m = {"kind": "hqw", **m, **over}
        bad = set(m) - allowed
        if bad:
            raise ConfigError(f"bench config: models[{i}]: unknown field(s) {sorted(bad)}")
        try:
            models.append(bench.ModelSpec(**m))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bench config: models[{i}]: {exc}") from exc
    if args.task:
        tasks = [_task(args.task, args.tau)]
    elif task_docs is not None:
        tasks = []
        for i, t in enumerate(task_docs):
            try:
                tasks.append(bench.TaskSpec(**t))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bench config: tasks[{i}]: {exc}") from exc
    else:
        tasks = list(bench.TABLE_TASKS)
    reps = args.reps if args.reps is not None else doc.get("reps", 10)
    if not isinstance(reps, int) or reps < 1:
        raise ConfigError("reps must be a positive integer")
    seed = args.seed if args.seed_given else doc.get("seed", args.seed)
    return models, tasks, reps, seed


def cmd_bench(args) -> int:
    models, tasks, reps, seed = _bench_plan(args)
    results = []
    for model in models:
        for task in tasks:
            try:
                res = bench.run_experiment(model, task, reps, seed)
            except (np.linalg.LinAlgError, RuntimeError, FloatingPointError) as exc:
                raise NumericalFailure(f"experiment {model.label} {task.label}", exc) from exc
            if all(f == "failed" for f in res.flags):
                raise NumericalFailure(f"experiment {model.label} {task.label}",
                                       RuntimeError("every repetition failed"))
            results.append(res)
            print(f"{model.label:>12s} {task.label:>14s} median RMSE {res.median:.4g}")
    out = _out_dir(args)
    formats = set((args.format or "csv,json").split(","))
    if "csv" in formats:
        (out / "results.csv").write_text(bench.results_csv(results))
    if "json" in formats:
        (out / "results.json").write_text(bench.results_json(results) + "\n")
    if "svg" in formats:
        for res in results:
            try:
                rep = bench.run_rep(res.model, res.task, bench.rep_seed(seed, 0), keep=True)
            except (np.linalg.LinAlgError, RuntimeError, FloatingPointError) as exc:
                raise NumericalFailure("plot repetition", exc) from exc
            name = f"{res.model.kind}{res.model.size}_{res.task.kind}{res.task.tau}.svg"
            bands = {} if rep.lower is None else {"prediction": (rep.lower, rep.upper)}
            plotting.emit_plot({"truth": rep.truth, "prediction": rep.prediction}, bands,
                               out / name, title=f"{res.model.label} {res.task.label}")
    print(f"wrote results to {out}")
    return 0


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"--out {out}: {exc.strerror}") from exc
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qwiener", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--format", help="csv, json or svg (bench: comma-separated list)")
    common.add_argument("--model", choices=bench.MODEL_KINDS)
    common.add_argument("--nc", type=int, help="oscillators per network (size)")
    common.add_argument("--d", type=int, help="number of parallel networks")
    common.add_argument("--kappa", type=float)
    common.add_argument("--task", choices=("parity", "narma10", "delay", "zero"))
    common.add_argument("--tau", type=int)
    common.add_argument("--noise", choices=("on", "off"))
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("check", parents=[common], help="realizability and passivity report")

    sim = sub.add_parser("simulate", parents=[common], help="write a measured trajectory")
    sim.add_argument("--channel", type=int, default=0, help="network index to simulate")
    sim.add_argument("--length", type=int, default=1000)
    sim.add_argument("--dt", type=float, default=0.01)
    sim.add_argument("--gain", type=float, default=500.0)

    ker = sub.add_parser("kernel", parents=[common], help="tabulate a kernel on a grid")
    ker.add_argument("--kind", choices=KERNEL_KINDS, default="quantum-tc")
    ker.add_argument("--am", type=float)
    ker.add_argument("--aM", type=float)
    ker.add_argument("--grid", default="0:10:0.01", help="start:stop:step")
    ker.add_argument("--tprime", type=float, help="fixed second argument (default: reversed grid)")
    ker.add_argument("--param", action="append", help="extra kernel parameter key=value")

    bch = sub.add_parser("bench", parents=[common], help="run benchmark experiments")
    bch.add_argument("--reps", type=int)
    bch.add_argument("--readout", choices=("se", "poly3"))
    return p


_COMMANDS = {"check": cmd_check, "simulate": cmd_simulate, "kernel": cmd_kernel,
             "bench": cmd_bench}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    if args.format and args.command != "bench" and args.format not in ("csv", "json", "svg"):
        print("error: --format must be csv, json or svg", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        print(f"numerical failure in {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
