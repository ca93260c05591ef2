"""Gaussian-process regression readout.

Exact posterior under a Gaussian likelihood with a static readout kernel on
reservoir features.  Hyperparameters (signal scale, length scale or offset,
noise level) are fitted by maximizing the log marginal likelihood with
analytic gradients.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.linalg import lapack

from .kernels import KernelFunction

log = logging.getLogger(__name__)

_LOG2PI = math.log(2 * math.pi)


class GPFitError(np.linalg.LinAlgError):
    """Cholesky factorization of the Gram-plus-noise matrix failed."""


def _cholesky(K: np.ndarray, jitter_ok: bool = True) -> tuple[np.ndarray, bool]:
    """Lower Cholesky factor, retrying once with diagonal jitter."""
    m = K.shape[0]
    c, info = lapack.dpotrf(K, lower=1, clean=1)
    if info == 0:
        return c, False
    if not jitter_ok:
        raise GPFitError(f"Gram matrix not positive definite (failed at pivot {info})")
    jitter = 1e-8 * np.trace(K) / m
    log.warning("Cholesky failed at pivot %d; adding jitter %.3e", info, jitter)
    c, info2 = lapack.dpotrf(K + jitter * np.eye(m), lower=1, clean=1)
    if info2 == 0:
        return c, True
    piv = float(np.diag(K)[info2 - 1]) if info2 > 0 else float("nan")
    raise GPFitError(f"Gram matrix not positive definite: factorization failed at pivot "
                     f"{info2} (diagonal entry {piv:.3e}) even after jitter {jitter:.3e}")


@dataclass(frozen=True)
class GPReadout:
    """A fitted GP readout; immutable and safe to share for prediction."""

    kernel: KernelFunction
    noise_var: float
    features: np.ndarray
    targets: np.ndarray
    factor: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jittered: bool = False
    converged: bool = True

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def summary(self) -> dict:
        return {"kernel": self.kernel.kind, "hyperparams": dict(self.kernel.params),
                "noise_var": self.noise_var, "lml": log_marginal_likelihood(self),
                "m": self.m, "d": self.d, "jittered": self.jittered,
                "converged": self.converged}

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def fit(features, targets, kernel: KernelFunction, noise_var: float) -> GPReadout:
    """Condition the GP prior on ``(features, targets)``."""
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    if kernel.kind not in ("se-readout", "poly-readout"):
        raise ValueError(f"readout needs a feature-space kernel, got {kernel.kind!r}")
    X = _as_matrix(features)
    y = np.asarray(targets, dtype=float).ravel()
    if X.shape[0] != y.size or y.size == 0:
        raise ValueError(f"{X.shape[0]} feature rows but {y.size} targets")
    K = kernel.gram(X) + noise_var * np.eye(y.size)
    Lc, jit = _cholesky(K)
    alpha = scipy.linalg.cho_solve((Lc, True), y)
    for a in (X, y, Lc, alpha):
        a.setflags(write=False)
    return GPReadout(kernel, float(noise_var), X, y, Lc, alpha, jit)


def predict(model: GPReadout, query) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent variance at the query rows."""
    Q = _as_matrix(query)
    if Q.shape[1] != model.d:
        raise ValueError(f"query has {Q.shape[1]} features, model expects {model.d}")
    Ks = model.kernel.gram(Q, model.features)
    mean = Ks @ model.alpha
    v = scipy.linalg.solve_triangular(model.factor, Ks.T, lower=True)
    prior = np.array([float(model.kernel(q, q)) for q in Q]) if model.kernel.kind == "poly-readout" \
        else np.full(Q.shape[0], model.kernel.params["sigma_f"] ** 2)
    var = prior - np.sum(v * v, axis=0)
    if np.any(var < -1e-10):
        warnings.warn(f"negative predictive variance {var.min():.3e} clamped to zero")
    return mean, np.maximum(var, 0.0)


def credible_interval(model: GPReadout, query, z: float = 1.96):
    """Mean with a ``z``-sigma band of the noisy predictive distribution."""
    mean, var = predict(model, query)
    half = z * np.sqrt(var + model.noise_var)
    return mean, mean - half, mean + half


def log_marginal_likelihood(model: GPReadout) -> float:
    y = model.targets
    logdet = 2.0 * np.sum(np.log(np.diag(model.factor)))
    return float(-0.5 * y @ model.alpha - 0.5 * logdet - 0.5 * y.size * _LOG2PI)


# Hyperparameters are optimized as log(sigma_f), log(ell) or log(c), log(sigma_n).

def _unpack(kind: str, theta, deg: int) -> tuple[KernelFunction, float]:
    sf, sh, sn = np.exp(theta)
    if kind == "se":
        k = KernelFunction("se-readout", {"sigma_f": sf, "ell": sh})
    else:
        k = KernelFunction("poly-readout", {"sigma_f": sf, "c": sh, "deg": deg})
    return k, sn * sn


def _geometry(X: np.ndarray, kind: str) -> np.ndarray:
    """Squared distances (``se``) or inner products (``poly``) between rows."""
    G = X @ X.T
    if kind == "se":
        sq = np.diag(G)
        return np.maximum(sq[:, None] + sq[None, :] - 2 * G, 0.0)
    if kind == "poly":
        return G
    raise ValueError(f"unknown readout kind {kind!r}")


def _lml_core(S: np.ndarray, y: np.ndarray, kind: str, theta, deg: int):
    m = y.size
    sf, sh, sn = np.exp(np.asarray(theta, dtype=float))
    if kind == "se":
        K0 = sf * sf * np.exp(-S / (2 * sh * sh))
        dK_shape = K0 * S / (sh * sh)
    else:
        base = S + sh
        K0 = sf * sf * base ** deg
        dK_shape = sf * sf * deg * base ** (deg - 1) * sh
    K = K0 + sn * sn * np.eye(m)
    Lc, _ = _cholesky(K, jitter_ok=False)
    alpha = scipy.linalg.cho_solve((Lc, True), y)
    lml = -0.5 * y @ alpha - np.sum(np.log(np.diag(Lc))) - 0.5 * m * _LOG2PI
    Kinv, info = lapack.dpotri(Lc, lower=1)
    if info != 0:
        raise GPFitError(f"inverse from Cholesky factor failed (info {info})")
    # dpotri fills the lower triangle; the upper one is zero from the clean factor
    Kinv = Kinv + Kinv.T - np.diag(np.diag(Kinv))
    W = np.outer(alpha, alpha) - Kinv
    grad = 0.5 * np.array([np.sum(W * (2 * K0)), np.sum(W * dK_shape),
                           2 * sn * sn * np.trace(W)])
    return float(lml), grad


def lml_and_grad(features, targets, kind: str, theta, deg: int = 3) -> tuple[float, np.ndarray]:
    """Log marginal likelihood and its gradient in log-hyperparameter space.

    Uses ``dL/dtheta_i = 0.5 tr((a a^T - K^{-1}) dK/dtheta_i)``.
    """
    X = _as_matrix(features)
    y = np.asarray(targets, dtype=float).ravel()
    return _lml_core(_geometry(X, kind), y, kind, theta, deg)


def _kkt_satisfied(x, grad, fun, lo, hi, rtol: float = 1e-3) -> bool:
    """Projected gradient of a bound-constrained minimum is small."""
    g = np.array(grad, dtype=float)
    g[(x <= lo + 1e-10) & (g > 0)] = 0.0
    g[(x >= hi - 1e-10) & (g < 0)] = 0.0
    return bool(np.max(np.abs(g)) <= rtol * (1.0 + abs(fun)))


def _scales(X, y, kind, deg):
    """Data-driven reference values for the three log-hyperparameters."""
    sy = max(float(np.std(y)), 1e-12)
    if kind == "se":
        sq = np.sum(X * X, 1)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0)
        pos = d2[d2 > 0]
        shape = float(np.sqrt(np.median(pos))) if pos.size else 1.0
        sf = sy
    else:
        shape = max(float(np.mean(np.sum(X * X, 1))), 1e-12)
        sf = sy / (2 * shape) ** (deg / 2)
    return sf, shape, sy


def _nn_distance(X) -> float:
    """Median nearest-neighbour distance over distinct training rows."""
    sq = np.sum(X * X, 1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0)
    d2[d2 <= 0] = np.inf
    nn = np.sqrt(d2.min(axis=1))
    nn = nn[np.isfinite(nn)]
    return float(np.median(nn)) if nn.size else 0.0


def _default_bounds(X, y, kind, deg=3):
    sf, shape, sy = _scales(X, y, kind, deg)
    if kind == "se":
        # below the point spacing an SE kernel is indistinguishable from white noise
        lo, hi = max(1e-2 * shape, 0.5 * _nn_distance(X)), 1e3 * shape
    else:
        lo, hi = 1e-6 * shape, 1e6 * shape
    return [(math.log(1e-3 * sf), math.log(1e3 * sf)),
            (math.log(lo), math.log(hi)),
            (math.log(1e-5 * sy), math.log(10 * sy))]


def _starts(X, y, kind, deg, restarts, rng):
    """Deterministic data-driven starts first, then log-uniform draws near them."""
    sf, shape, sy = _scales(X, y, kind, deg)
    fixed = [(1.0, 0.2, 0.1), (1.0, 1.0, 0.1), (1.0, 0.05, 0.01)] if kind == "se" \
        else [(1.0, 1.0, 0.1), (1.0, 0.1, 0.1), (1.0, 10.0, 0.01)]
    out = [np.log([sf * a, shape * b, sy * c]) for a, b, c in fixed[:restarts]]
    lo = np.log([0.1 * sf, 0.02 * shape, 1e-3 * sy])
    hi = np.log([10 * sf, (5 if kind == "se" else 100) * shape, 0.5 * sy])
    out += [rng.uniform(lo, hi) for _ in range(restarts - len(out))]
    return out


def optimize_hyperparams(features, targets, kind: str = "se", init=None, restarts: int = 5,
                         seed: int = 0, deg: int = 3, bounds=None, max_iter: int = 200
                         ) -> GPReadout:
    """Maximize the log marginal likelihood over hyperparameters.

    Starts are data-driven (signal scale from the targets, length scale or
    offset from the feature geometry) with further restarts drawn
    log-uniformly around them; ``init`` (a log-space triple) replaces the
    first start when given.  Returns the best fitted model; ``converged`` is
    False unless the best restart reported success or ended at a point whose
    projected gradient is negligible.
    """
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    X = _as_matrix(features)
    y = np.asarray(targets, dtype=float).ravel()
    bounds = _default_bounds(X, y, kind, deg) if bounds is None else bounds
    lo, hi = np.array(bounds).T
    rng = np.random.default_rng(seed)
    starts = _starts(X, y, kind, deg, restarts, rng)
    if init is not None:
        starts = [np.asarray(init, dtype=float)] + starts[:-1]

    S = _geometry(X, kind)

    def obj(theta):
        try:
            f, g = _lml_core(S, y, kind, theta, deg)
        except np.linalg.LinAlgError:
            return 1e300, np.zeros_like(theta)
        return -f, -g

    best, best_ok = None, False
    for x0 in starts:
        res = scipy.optimize.minimize(obj, np.clip(x0, lo, hi), jac=True, method="L-BFGS-B",
                                      bounds=bounds, options={"maxiter": max_iter})
        if not np.isfinite(res.fun) or res.fun >= 1e300:
            continue
        if best is None or res.fun < best.fun:
            best = res
            best_ok = bool(res.success) or _kkt_satisfied(res.x, res.jac, res.fun, lo, hi)
    if best is None:
        warnings.warn("all hyperparameter restarts failed; returning initial guess")
        k, nv = _unpack(kind, np.clip(starts[0], lo, hi), deg)
        model = fit(X, y, k, nv)
        return replace(model, converged=False)
    k, nv = _unpack(kind, best.x, deg)
    model = fit(X, y, k, nv)
    if not best_ok:
        model = replace(model, converged=False)
    return model
