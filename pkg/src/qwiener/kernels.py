"""Reservoir-induced covariance functions and readout kernels.

Random banks of damped oscillators induce Gaussian-process priors over
impulse responses.  This module evaluates the limiting covariances (classical
tuned-correlated and the quantum oscillator kernel), the readout kernels
applied to measured features and their deep compositions with an input
signal.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

SMALL_TAU = 1e-4
_TAYLOR_TERMS = 6


def _check_support(a_m, a_M):
    if not (0 < a_m < a_M):
        raise ValueError(f"need 0 < a_m < a_M, got a_m={a_m}, a_M={a_M}")


def uniform_exp_moment(p: int, tau, a: float, b: float) -> np.ndarray:
    """``E[x^p exp(-x tau)]`` for ``x ~ Unif(a, b)``, vectorized over ``tau >= 0``.

    Small ``tau`` uses a truncated Taylor series; otherwise the integral is
    written with regularized incomplete gamma functions, taking whichever
    tail avoids cancellation.
    """
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("tau must be nonnegative")
    out = np.empty_like(tau)
    small = tau < SMALL_TAU
    if np.any(small):
        ts = tau[small]
        acc = np.zeros_like(ts)
        for k in range(_TAYLOR_TERMS):
            j = p + k
            mom = (b ** (j + 1) - a ** (j + 1)) / ((j + 1) * (b - a))
            acc += (-ts) ** k / math.factorial(k) * mom
        out[small] = acc
    big = ~small
    if np.any(big):
        tb = tau[big]
        s = p + 1
        lo_a, lo_b = special.gammainc(s, a * tb), special.gammainc(s, b * tb)
        up_a, up_b = special.gammaincc(s, a * tb), special.gammaincc(s, b * tb)
        diff = np.where(lo_b < 0.5, lo_b - lo_a, up_a - up_b)
        out[big] = math.gamma(s) * diff / (tb ** s * (b - a))
    return out


def tc_kernel(t, s, a_m: float, a_M: float):
    """Integrated tuned-correlated kernel.

    ``(exp(-a_m tau) - exp(-a_M tau)) / (tau (a_M - a_m))`` with
    ``tau = max(t, s)``; equal to 1 at the origin.  This is the exact limit of
    the finite-bank covariance with decay rates uniform on ``[a_m/2, a_M/2]``
    and Cauchy frequencies.
    """
    _check_support(a_m, a_M)
    tau = np.maximum(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
    return uniform_exp_moment(0, tau, a_m, a_M)


def finite_reservoir_cov(alpha, omega, t, s):
    """``(1/n_c) sum_i exp(-alpha_i (t + s)) cos(omega_i (t - s))``."""
    alpha = np.asarray(alpha, dtype=float)[:, None]
    omega = np.asarray(omega, dtype=float)[:, None]
    t = np.atleast_1d(np.asarray(t, dtype=float))[None, :]
    s = np.atleast_1d(np.asarray(s, dtype=float))[None, :]
    out = np.mean(np.exp(-alpha * (t + s)) * np.cos(omega * (t - s)), axis=0)
    return out if out.size > 1 else float(out[0])


def sample_tc_bank(n_c: int, a_m: float, a_M: float, rng: np.random.Generator):
    """Decay rates and frequencies whose bank covariance tends to :func:`tc_kernel`."""
    _check_support(a_m, a_M)
    alpha = rng.uniform(a_m / 2, a_M / 2, n_c)
    omega = alpha * np.tan(np.pi * (rng.random(n_c) - 0.5))
    return alpha, omega


def se_time_kernel(t, s, ell: float, omega0: float = 0.0):
    """``exp(-(t - s)^2 / (2 ell^2)) cos(omega0 (t - s))``."""
    if ell <= 0:
        raise ValueError("length scale must be positive")
    r = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
    return np.exp(-r * r / (2 * ell * ell)) * np.cos(omega0 * r)


@dataclass(frozen=True)
class VonMisesMoments:
    """Bessel ratios of a circular Von Mises law with mean direction pi/4."""

    kappa: float
    r1: float
    r2: float

    @property
    def direction(self) -> np.ndarray:
        return np.array([1.0, 1.0]) / math.sqrt(2.0)

    def mean(self) -> np.ndarray:
        return self.r1 * self.direction

    def second_moment(self) -> np.ndarray:
        m = self.direction
        return 0.5 * (1 - self.r2) * np.eye(2) + self.r2 * np.outer(m, m)


def von_mises_moments(kappa: float) -> VonMisesMoments:
    """``r_n = I_n(kappa) / I_0(kappa)`` from exponentially scaled Bessel functions."""
    if not kappa >= 0:
        raise ValueError(f"kappa must be nonnegative, got {kappa}")
    i0 = special.ive(0, kappa)
    return VonMisesMoments(float(kappa), float(special.ive(1, kappa) / i0),
                           float(special.ive(2, kappa) / i0))


def quantum_limit_mean(t, a_m: float, a_M: float, kappa: float):
    """Limit mean of the per-oscillator impulse response.

    ``-(r1 / sqrt 2) E[alpha^2 exp(-alpha^2 t)]`` with ``alpha^2 ~ Unif(a_m, a_M)``.
    """
    _check_support(a_m, a_M)
    r1 = von_mises_moments(kappa).r1
    return -r1 / math.sqrt(2.0) * uniform_exp_moment(1, np.asarray(t, dtype=float), a_m, a_M)


def quantum_second_moment(t, t2, a_m: float, a_M: float):
    """``E[g(t) g(t')] = 0.5 E[alpha^4 exp(-alpha^2 max(t, t'))]``, independent of kappa."""
    _check_support(a_m, a_M)
    tau = np.maximum(np.asarray(t, dtype=float), np.asarray(t2, dtype=float))
    return 0.5 * uniform_exp_moment(2, tau, a_m, a_M)


def quantum_limit_kernel(t, t2, a_m: float, a_M: float, kappa: float):
    """Limit covariance of ``h(t) / sqrt(n_c)`` for the oscillator bank."""
    return (quantum_second_moment(t, t2, a_m, a_M)
            - quantum_limit_mean(t, a_m, a_M, kappa) * quantum_limit_mean(t2, a_m, a_M, kappa))


def readout_kernel(y, y2, kind: str = "se", sigma_f: float = 1.0, ell: float = 1.0,
                   c: float = 1.0, deg: int = 3):
    """Static readout kernel on feature vectors.

    ``poly``: ``sigma_f^2 (y.y' + c)^deg``; ``se``: ``sigma_f^2 exp(-|y - y'|^2 / (2 ell^2))``.
    """
    y, y2 = np.asarray(y, dtype=float), np.asarray(y2, dtype=float)
    if y.shape[-1] != y2.shape[-1]:
        raise ValueError(f"feature dimension mismatch: {y.shape[-1]} vs {y2.shape[-1]}")
    if kind == "poly":
        return sigma_f ** 2 * (np.sum(y * y2, axis=-1) + c) ** deg
    if kind == "se":
        d2 = np.sum((y - y2) ** 2, axis=-1)
        return sigma_f ** 2 * np.exp(-d2 / (2 * ell ** 2))
    raise ValueError(f"unknown readout kind {kind!r}")


def readout_gram(Y, Y2, kind: str = "se", sigma_f: float = 1.0, ell: float = 1.0,
                 c: float = 1.0, deg: int = 3) -> np.ndarray:
    """Gram matrix of :func:`readout_kernel` between the rows of ``Y`` and ``Y2``."""
    Y, Y2 = np.atleast_2d(Y), np.atleast_2d(Y2)
    if Y.shape[1] != Y2.shape[1]:
        raise ValueError(f"feature dimension mismatch: {Y.shape[1]} vs {Y2.shape[1]}")
    G = Y @ Y2.T
    if kind == "poly":
        return sigma_f ** 2 * (G + c) ** deg
    if kind == "se":
        d2 = np.sum(Y * Y, 1)[:, None] + np.sum(Y2 * Y2, 1)[None, :] - 2 * G
        return sigma_f ** 2 * np.exp(-np.maximum(d2, 0.0) / (2 * ell ** 2))
    raise ValueError(f"unknown readout kind {kind!r}")


def _zoh_grid(u, dt: float, t: float, refine: int):
    """Quadrature nodes ``tau`` and trapezoid weights times ``u(tau)`` on ``[0, t]``."""
    k = int(round(t / dt))
    if abs(k * dt - t) > 1e-9 * max(1.0, t):
        raise ValueError(f"time {t} is not on the sampling grid")
    if k > len(u):
        raise ValueError(f"input horizon too short: need {k} samples, have {len(u)}")
    h = dt / refine
    w = np.full(refine + 1, h)
    w[0] = w[-1] = h / 2
    nodes = (np.arange(k)[:, None] * dt + np.arange(refine + 1)[None, :] * h).ravel()
    weights = (np.asarray(u[:k], dtype=float)[:, None] * w[None, :]).ravel()
    return nodes, weights


def double_convolution(kernel, u, t: float, t2: float, dt: float, refine: int = 1) -> float:
    """``int_0^t int_0^t' K(t - a, t' - b) u(a) u(b) da db`` for a held input.

    Each hold interval is integrated by the trapezoid rule on ``refine``
    sub-intervals, so the error is ``O((dt/refine)^2)`` per interval.
    """
    a, wa = _zoh_grid(u, dt, t, refine)
    b, wb = _zoh_grid(u, dt, t2, refine)
    if a.size == 0 or b.size == 0:
        return 0.0
    K = kernel((t - a)[:, None], (t2 - b)[None, :])
    return float(wa @ K @ wb)


def _base_callable(base: "KernelFunction"):
    return lambda x, x2: base(x, x2)


def deep_kernel_reference(u, t: float, t2: float, base: "KernelFunction",
                          readout: str = "se", dt: float = 0.01, sigma_f: float = 1.0,
                          ell: float = 1.0, c: float = 1.0, deg: int = 3,
                          refine: int = 1) -> float:
    """Readout kernel composed with the reservoir covariance of an input path.

    The inner products of normalized features converge to the double
    convolution ``I(t, t')``; the polynomial readout becomes
    ``sigma_f^2 (I(t, t') + c)^deg`` and the squared exponential
    ``sigma_f^2 exp(-(I(t,t) + I(t',t') - 2 I(t,t')) / (2 ell^2))``.
    """
    f = _base_callable(base)
    I12 = double_convolution(f, u, t, t2, dt, refine)
    if readout == "poly":
        return sigma_f ** 2 * (I12 + c) ** deg
    if readout == "se":
        I11 = double_convolution(f, u, t, t, dt, refine)
        I22 = double_convolution(f, u, t2, t2, dt, refine)
        return sigma_f ** 2 * math.exp(-(I11 + I22 - 2 * I12) / (2 * ell ** 2))
    raise ValueError(f"unknown readout kind {readout!r}")


def normalize_features(raw, n_c: int, mu_y=None) -> np.ndarray:
    """``(sqrt(n_c) / sqrt(d)) (y_j(t) - mu_y(t))`` for a ``d x T`` channel matrix.

    ``mu_y`` defaults to the cross-channel empirical mean.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    d = raw.shape[0]
    if mu_y is None:
        if d < 2:
            raise ValueError("empirical mean needs at least two channels")
        mu_y = raw.mean(axis=0)
    return math.sqrt(n_c / d) * (raw - np.asarray(mu_y, dtype=float)[None, :])


_TIME_KINDS = ("se-time", "tc", "quantum-tc-mean", "quantum-tc")
_READOUT_KINDS = ("poly-readout", "se-readout")
_DEEP_KINDS = ("deep-poly", "deep-se")
KERNEL_KINDS = _TIME_KINDS + _READOUT_KINDS + _DEEP_KINDS

_DEFAULTS = {
    "se-time": {"ell": 1.0, "omega0": 0.0},
    "tc": {"a_m": 0.01, "a_M": 20.0},
    "quantum-tc-mean": {"a_m": 0.01, "a_M": 20.0, "kappa": 1.0},
    "quantum-tc": {"a_m": 0.01, "a_M": 20.0, "kappa": 1.0},
    "poly-readout": {"sigma_f": 1.0, "c": 1.0, "deg": 3},
    "se-readout": {"sigma_f": 1.0, "ell": 1.0},
    "deep-poly": {"sigma_f": 1.0, "c": 1.0, "deg": 3, "a_m": 0.01, "a_M": 20.0,
                  "kappa": 1.0, "dt": 0.01},
    "deep-se": {"sigma_f": 1.0, "ell": 1.0, "a_m": 0.01, "a_M": 20.0, "kappa": 1.0,
                "dt": 0.01},
}


@dataclass(frozen=True)
class KernelFunction:
    """A named covariance function with its hyperparameters.

    Time kernels take scalar or array times; readout kernels take feature
    vectors (last axis).  ``quantum-tc-mean`` is the rank-one mean term
    ``mu_h(t) mu_h(t')``.  Deep kernels evaluate on times of an input path
    ``u`` sampled at ``dt``.
    """

    kind: str
    params: dict = field(default_factory=dict)
    u: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; choose from {KERNEL_KINDS}")
        merged = dict(_DEFAULTS[self.kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ValueError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        merged.update(self.params)
        p = merged
        if p.get("sigma_f", 1.0) <= 0 or p.get("ell", 1.0) <= 0:
            raise ValueError("sigma_f and ell must be positive")
        if "a_m" in p:
            _check_support(p["a_m"], p["a_M"])
        if "kappa" in p and p["kappa"] < 0:
            raise ValueError("kappa must be nonnegative")
        if "deg" in p and (int(p["deg"]) != p["deg"] or p["deg"] < 1):
            raise ValueError("deg must be a positive integer")
        if self.kind in _DEEP_KINDS and self.u is None:
            raise ValueError("deep kernels need an input path u")
        object.__setattr__(self, "params", p)

    def base(self) -> "KernelFunction":
        p = self.params
        return KernelFunction("quantum-tc", {k: p[k] for k in ("a_m", "a_M", "kappa")})

    def __call__(self, x, x2):
        p, kind = self.params, self.kind
        if kind == "se-time":
            return se_time_kernel(x, x2, p["ell"], p["omega0"])
        if kind == "tc":
            return tc_kernel(x, x2, p["a_m"], p["a_M"])
        if kind == "quantum-tc":
            return quantum_limit_kernel(x, x2, p["a_m"], p["a_M"], p["kappa"])
        if kind == "quantum-tc-mean":
            mu = quantum_limit_mean
            return mu(x, p["a_m"], p["a_M"], p["kappa"]) * mu(x2, p["a_m"], p["a_M"], p["kappa"])
        if kind == "poly-readout":
            return readout_kernel(x, x2, "poly", p["sigma_f"], c=p["c"], deg=int(p["deg"]))
        if kind == "se-readout":
            return readout_kernel(x, x2, "se", p["sigma_f"], ell=p["ell"])
        readout = "poly" if kind == "deep-poly" else "se"
        x, x2 = np.broadcast_arrays(np.asarray(x, float), np.asarray(x2, float))
        vals = [deep_kernel_reference(self.u, float(a), float(b), self.base(), readout,
                                      p["dt"], p["sigma_f"], p.get("ell", 1.0),
                                      p.get("c", 1.0), int(p.get("deg", 3)))
                for a, b in zip(x.ravel(), x2.ravel())]
        out = np.array(vals).reshape(x.shape)
        return out if out.ndim else float(out)

    def gram(self, X, X2=None) -> np.ndarray:
        X2 = X if X2 is None else X2
        if self.kind in _READOUT_KINDS:
            p = self.params
            if self.kind == "poly-readout":
                return readout_gram(X, X2, "poly", p["sigma_f"], c=p["c"], deg=int(p["deg"]))
            return readout_gram(X, X2, "se", p["sigma_f"], ell=p["ell"])
        X, X2 = np.asarray(X, dtype=float), np.asarray(X2, dtype=float)
        return np.asarray(self(X[:, None], X2[None, :]), dtype=float)


def kernel_table(kernel: KernelFunction, t, t2) -> np.ndarray:
    """Rows ``(t, t', K(t, t'))`` for paired evaluation points."""
    t, t2 = np.broadcast_arrays(np.asarray(t, float), np.asarray(t2, float))
    return np.column_stack([t.ravel(), t2.ravel(), np.ravel(kernel(t.ravel(), t2.ravel()))])


def kernel_table_csv(table: np.ndarray) -> str:
    buf = io.StringIO()
    buf.write("t,t_prime,K\n")
    for a, b, k in table:
        buf.write(f"{a:.17g},{b:.17g},{k:.17g}\n")
    return buf.getvalue()
