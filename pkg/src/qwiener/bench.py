"""Benchmark tasks, feature pipelines and the Monte Carlo RMSE harness.

A model turns an input sequence into a feature matrix (one row per sample,
one column per channel); a GP readout is trained on the first ``split``
rows and scored on the rest.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import gp
from .kalman import discretize
from .kernels import normalize_features
from .qss import QuadratureSystem
from .reservoirs import (PADE_INPUT, PADE_OUTPUT_ROW, HqWConfig, LqWConfig, OscillatorParams,
                         PadeConfig, build_lqw, channel_rng, padeqw_blocks, sample_hqw_params)

TASK_KINDS = ("parity", "narma10", "delay", "zero")


@dataclass(frozen=True)
class TaskSpec:
    """``parity`` and ``delay`` use the lag ``tau``; ``zero`` is a diagnostic constant target."""

    kind: str
    tau: int = 0
    length: int = 1000
    split: int = 800

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task {self.kind!r}; choose from {TASK_KINDS}")
        if self.tau < 0 or self.tau >= self.split:
            raise ValueError(f"lag {self.tau} must lie in [0, split)")
        if self.length <= self.split:
            raise ValueError("length must exceed the training split")

    @property
    def label(self) -> str:
        return f"{self.kind}(tau={self.tau})" if self.kind in ("parity", "delay") else self.kind


def generate_input(task: TaskSpec, rng: np.random.Generator) -> np.ndarray:
    """PRBS for parity/delay, ``Unif[0, 0.5]`` for NARMA10."""
    if task.kind == "narma10":
        return rng.uniform(0.0, 0.5, task.length)
    return rng.integers(0, 2, task.length).astype(float)


def target(task: TaskSpec, u) -> np.ndarray:
    """Target sequence; entries that are undefined (not enough history) are NaN."""
    u = np.asarray(u, dtype=float)
    T = u.size
    y = np.full(T, np.nan)
    tau = task.tau
    if task.kind == "parity":
        c = np.concatenate([[0.0], np.cumsum(u)])
        idx = np.arange(tau, T)
        y[tau:] = np.mod(c[idx + 1] - c[idx - tau], 2.0)
    elif task.kind == "delay":
        y[tau:] = u[: T - tau]
    elif task.kind == "zero":
        y[:] = 0.0
    else:
        z = np.zeros(T)
        for t in range(10, T):
            z[t] = (0.3 * z[t - 1] + 0.05 * z[t - 1] * np.sum(z[t - 10:t])
                    + 1.5 * u[t - 10] * u[t - 1] + 0.1)
        y[10:] = z[10:]
    return y


def make_continuous_input(u, dt: float = 0.01, gain: float = 500.0) -> Callable:
    """Zero-order hold ``u(t) = gain * u_k`` on ``[k dt, (k+1) dt)``; zero outside."""
    if gain <= 0 or dt <= 0:
        raise ValueError("gain and step must be positive")
    u = np.asarray(u, dtype=float)

    def f(t):
        k = np.floor(np.asarray(t, dtype=float) / dt).astype(int)
        ok = (k >= 0) & (k < u.size)
        return np.where(ok, gain * u[np.clip(k, 0, u.size - 1)], 0.0)

    return f


def rmse(pred, truth) -> float:
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


# ---------------------------------------------------------------- feature maps

def hqw_features(banks: list[OscillatorParams], u, dt: float = 0.01, gain: float = 500.0,
                 offset: float = 1.0, noise: bool = False,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Channel outputs of concatenated oscillator banks, shape ``(T, d)``.

    Each oscillator is a damped rotation, so its held-input response is
    propagated exactly in complex form ``w = q + i p``.  A channel output is
    the average of its ``n_c`` measured first quadratures, sampled
    ``offset * dt`` into each hold interval.
    """
    u = gain * np.asarray(u, dtype=float)
    a2 = np.stack([b.alpha_sq for b in banks])
    om = np.stack([b.omega for b in banks])
    z = np.stack([b.s1 + 1j * b.s2 for b in banks])
    alpha = np.sqrt(a2)
    mu = -a2 / 2 + 1j * om
    drive = -alpha * z

    def phi1(h):
        return np.where(np.abs(mu * h) > 1e-8, np.expm1(mu * h) / mu, h)

    E = np.exp(mu * dt)
    B = phi1(dt) * drive
    Eo = np.exp(mu * offset * dt)
    Bo = phi1(offset * dt) * drive
    T = u.size
    out = np.empty((T, len(banks)))
    w = np.zeros_like(mu)
    for k in range(T):
        out[k] = np.mean(alpha * (Eo * w + Bo * u[k]).real, axis=1)
        w = E * w + B * u[k]
    if noise:
        if rng is None:
            raise ValueError("noise=True requires an rng")
        n_c = a2.shape[1]
        out = out + rng.standard_normal(out.shape) / math.sqrt(n_c * dt)
    return out


def system_bank_features(systems: list[QuadratureSystem], u, input_direction, output_row: int,
                         dt: float = 0.01, gain: float = 500.0, offset: float = 1.0,
                         noise: bool = False, rng: np.random.Generator | None = None,
                         internal_means: bool = False) -> np.ndarray:
    """Measured output ``C[output_row] pi`` of each system in a bank, ``(T, len)``.

    With ``internal_means`` every conditional mean is returned instead.
    Noise adds innovation increments to the measured channel only, which is
    exact for passive systems and omits back-action otherwise.
    """
    u = gain * np.asarray(u, dtype=float)
    b = np.asarray(input_direction, dtype=float)
    Ad, Bd, Ao, Bo, rows = [], [], [], [], []
    for sys in systems:
        full = discretize(sys, dt=dt)
        part = full if offset == 1.0 else discretize(sys, dt=offset * dt)
        Ad.append(full.A_d)
        Bd.append(full.B_d @ b)
        Ao.append(part.A_d)
        Bo.append(part.B_d @ b)
        rows.append(sys.C[output_row])
    Ad, Bd, Ao, Bo, rows = map(np.stack, (Ad, Bd, Ao, Bo, rows))
    T = u.size
    x = np.zeros(Bd.shape)
    states = np.empty((T,) + x.shape)
    for k in range(T):
        states[k] = np.einsum("bij,bj->bi", Ao, x) + Bo * u[k]
        x = np.einsum("bij,bj->bi", Ad, x) + Bd * u[k]
    if internal_means:
        return states.reshape(T, -1)
    out = np.einsum("tbi,bi->tb", states, rows)
    if noise:
        if rng is None:
            raise ValueError("noise=True requires an rng")
        out = out + rng.standard_normal(out.shape) / math.sqrt(dt)
    return out


@dataclass(frozen=True)
class ESNConfig:
    units: int = 200
    spectral_radius: float = 0.95
    input_scale: float = 1.0
    leak: float = 1.0
    ridge: tuple = (1e-8, 1e-6, 1e-4, 1e-2, 1.0)
    seed: int = 0


def esn_weights(config: ESNConfig, rng: np.random.Generator):
    W = rng.standard_normal((config.units, config.units))
    rho = np.max(np.abs(np.linalg.eigvals(W)))
    W *= config.spectral_radius / rho
    W_in = config.input_scale * rng.uniform(-1, 1, config.units)
    return W, W_in


def esn_reservoir(config: ESNConfig, u, rng: np.random.Generator | None = None) -> np.ndarray:
    """Echo-state features ``x_{k+1} = (1 - a) x_k + a tanh(W x_k + W_in u_k)``.

    Row ``k`` is the state after consuming ``u_k``.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    W, W_in = esn_weights(config, rng)
    u = np.asarray(u, dtype=float)
    x = np.zeros(config.units)
    out = np.empty((u.size, config.units))
    for k in range(u.size):
        x = (1 - config.leak) * x + config.leak * np.tanh(W @ x + W_in * u[k])
        out[k] = x
    return out


def ridge_readout(X_train, y_train, X_test, penalties=(1e-8, 1e-6, 1e-4, 1e-2, 1.0),
                  holdout: float = 0.2):
    """Linear readout with intercept; penalty chosen on a trailing hold-out block."""
    X_train, X_test = np.asarray(X_train), np.asarray(X_test)
    n = X_train.shape[0]
    cut = int(round(n * (1 - holdout)))

    def solve(X, y, lam):
        Xa = np.column_stack([X, np.ones(len(X))])
        reg = lam * np.eye(Xa.shape[1])
        reg[-1, -1] = 0.0
        return np.linalg.solve(Xa.T @ Xa + reg, Xa.T @ y)

    def apply(w, X):
        return X @ w[:-1] + w[-1]

    scores = [rmse(apply(solve(X_train[:cut], y_train[:cut], lam), X_train[cut:]), y_train[cut:])
              for lam in penalties]
    lam = penalties[int(np.argmin(scores))]
    return apply(solve(X_train, y_train, lam), X_test), lam


# ---------------------------------------------------------------- experiments

MODEL_KINDS = ("hqw", "lqw", "padeqw", "esn")


@dataclass(frozen=True)
class ModelSpec:
    """Reservoir kind with its configuration and pipeline options.

    ``size`` is ``n_c`` for HqW, ``n`` for LqW, the block count for PadeqW and
    the unit count for the ESN.
    """

    kind: str
    size: int = 24
    d: int = 64
    kappa: float = 1.0
    a_m: float = 0.01
    a_M: float = 20.0
    readout: str = "se"
    noise: bool = False
    dt: float = 0.01
    hold: int = 10
    gain: float = 500.0
    offset: float = 1.0
    lqw_internal_means: bool = False
    washout: int = 0
    restarts: int = 2

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model {self.kind!r}; choose from {MODEL_KINDS}")
        if self.readout not in ("se", "poly3"):
            raise ValueError("readout must be 'se' or 'poly3'")
        if self.size < 1 or self.d < 1 or self.hold < 1 or not 0 < self.offset <= 1:
            raise ValueError("size, d and hold must be positive and offset in (0, 1]")

    @property
    def period(self) -> float:
        """Duration for which each task sample is held."""
        return self.dt * self.hold

    @property
    def label(self) -> str:
        name = {"hqw": "HqW", "lqw": "LqW", "padeqw": "PadeqW", "esn": "ESN"}[self.kind]
        return f"{name}({self.size})"


def model_features(model: ModelSpec, u, seed: int) -> np.ndarray:
    """Feature matrix ``(T, channels)`` for a freshly sampled reservoir.

    Each task sample drives the reservoir for ``hold`` steps of ``dt``; the
    held-input propagation is exact, so one step of length ``period`` is used.
    """
    rng = np.random.default_rng(seed)
    h = model.period
    noise_rng = channel_rng(seed, 10 ** 6)
    if model.kind == "hqw":
        cfg = HqWConfig(n_c=model.size, d=model.d, a_m=model.a_m, a_M=model.a_M,
                        kappa=model.kappa, seed=seed)
        banks = sample_hqw_params(cfg, rng)
        raw = hqw_features(banks, u, h, model.gain, model.offset, model.noise, noise_rng)
        return normalize_features(raw.T, model.size).T
    if model.kind == "lqw":
        cfg = LqWConfig(n=model.size, d=model.d, seed=seed)
        systems = [build_lqw(cfg, r) for r in rng.spawn(model.d)]
        return system_bank_features(systems, u, [1.0, 0.0], 0, h, model.gain,
                                    model.offset, model.noise, noise_rng,
                                    model.lqw_internal_means)
    if model.kind == "padeqw":
        blocks = padeqw_blocks(PadeConfig(n_blocks=model.size, step=h, offset=0.5))
        return system_bank_features(blocks, u, PADE_INPUT, PADE_OUTPUT_ROW, h,
                                    model.gain, model.offset, model.noise, noise_rng)
    return esn_reservoir(ESNConfig(units=model.size, seed=seed), u, rng)


@dataclass
class RepOutcome:
    rmse: float
    ok: bool = True
    retried: bool = False
    message: str = ""
    prediction: np.ndarray | None = field(default=None, repr=False)
    lower: np.ndarray | None = field(default=None, repr=False)
    upper: np.ndarray | None = field(default=None, repr=False)
    truth: np.ndarray | None = field(default=None, repr=False)


def gp_readout_predict(X, y, train, test, readout: str = "se", restarts: int = 2, seed: int = 0):
    """Fit the GP readout on ``train`` rows and predict ``test`` rows.

    Targets are centred by their training mean and features divided by their
    training RMS; both are undone for the returned predictions.
    """
    Xtr, ytr = X[train], y[train]
    scale = float(np.sqrt(np.mean(Xtr ** 2))) or 1.0
    ymean = float(np.mean(ytr))
    kind = "se" if readout == "se" else "poly"
    model = gp.optimize_hyperparams(Xtr / scale, ytr - ymean, kind, restarts=restarts,
                                    seed=seed, deg=3)
    mean, lo, hi = gp.credible_interval(model, X[test] / scale)
    return mean + ymean, lo + ymean, hi + ymean, model


def run_rep(model: ModelSpec, task: TaskSpec, seed: int, keep: bool = False) -> RepOutcome:
    """One Monte Carlo repetition: input, reservoir, features, readout, score."""
    rng = np.random.default_rng(seed)
    u = generate_input(task, rng)
    y = target(task, u)
    fseed = int(rng.integers(2 ** 63))
    X = model_features(model, u, fseed)
    idx = np.arange(task.length)
    defined = np.isfinite(y)
    train = idx[(idx >= model.washout) & (idx < task.split) & defined]
    test = idx[(idx >= task.split) & defined]
    if model.kind == "esn":
        pred, _ = ridge_readout(X[train], y[train], X[test])
        out = RepOutcome(rmse(pred, y[test]))
        if keep:
            out.prediction, out.truth = pred, y[test]
        return out
    mean, lo, hi, fitted = gp_readout_predict(X, y, train, test, model.readout,
                                              model.restarts, seed)
    out = RepOutcome(rmse(mean, y[test]), ok=fitted.converged)
    if keep:
        out.prediction, out.lower, out.upper, out.truth = mean, lo, hi, y[test]
    return out


@dataclass
class RunResult:
    """Per-repetition RMSEs of one (model, task) cell and their median."""

    model: ModelSpec
    task: TaskSpec
    seed: int
    rmses: list[float]
    flags: list[str]

    @property
    def median(self) -> float:
        ok = [r for r, f in zip(self.rmses, self.flags) if f != "failed"]
        return float(np.median(ok)) if ok else float("nan")

    def rows(self) -> list[dict]:
        return [{"model": self.model.label, "task": self.task.kind, "tau": self.task.tau,
                 "n_c": self.model.size, "d": self.model.d if self.model.kind in ("hqw", "lqw")
                 else 1, "rep": i, "rmse": r} for i, r in enumerate(self.rmses)]

    def summary(self) -> dict:
        return {"model": self.model.label, "task": self.task.label, "median_rmse": self.median,
                "rmses": self.rmses, "flags": self.flags, "seed": self.seed,
                "config": {"model": asdict(self.model), "task": asdict(self.task)}}


def rep_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(rep,)).generate_state(1, np.uint64)[0])


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("QWIENER_THREADS", "1")))
    except ValueError:
        return 1


def run_experiment(model: ModelSpec, task: TaskSpec, reps: int = 10, seed: int = 0) -> RunResult:
    """Median test RMSE over ``reps`` independent repetitions.

    A repetition that raises, or whose optimizer does not converge, is rerun
    once with a derived sub-seed; if it still fails its RMSE is kept but
    flagged, and raising repetitions are excluded from the median.
    """
    def one(rep):
        s = rep_seed(seed, rep)
        try:
            out = run_rep(model, task, s)
            if out.ok:
                return out.rmse, "ok"
        except (np.linalg.LinAlgError, FloatingPointError, RuntimeError, ValueError):
            pass
        try:
            out = run_rep(model, task, rep_seed(s, 1))
            return out.rmse, "retried" if out.ok else "unconverged"
        except (np.linalg.LinAlgError, FloatingPointError, RuntimeError, ValueError):
            return float("nan"), "failed"

    workers = min(_threads(), reps)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(one, range(reps)))
    else:
        results = [one(r) for r in range(reps)]
    return RunResult(model, task, seed, [r for r, _ in results], [f for _, f in results])


TABLE_TASKS = (TaskSpec("parity", 2), TaskSpec("parity", 4), TaskSpec("narma10"),
               TaskSpec("delay", 2), TaskSpec("delay", 4))


def results_csv(results: list[RunResult]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, ["model", "task", "tau", "n_c", "d", "rep", "rmse"],
                       lineterminator="\n")
    w.writeheader()
    for res in results:
        for row in res.rows():
            w.writerow({**row, "rmse": format(row["rmse"], ".17g")})
    return buf.getvalue()


def results_table(results: list[RunResult]) -> dict:
    """Nested ``{task: {model: median}}`` medians plus the per-run summaries."""
    table: dict = {}
    for res in results:
        table.setdefault(res.task.label, {})[res.model.label] = res.median
    return {"table": table, "runs": [r.summary() for r in results]}


def results_json(results: list[RunResult]) -> str:
    return json.dumps(results_table(results), indent=2, sort_keys=True)
