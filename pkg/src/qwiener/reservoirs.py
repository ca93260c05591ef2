"""Reservoir families: concatenated oscillators, Laplacian networks and
embedded Pade delay lines.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np
import scipy.linalg

from .qss import (HamiltonianSpec, QuadratureSystem, build_quadrature_system,
                  check_physical_realizability, matrix_exponential, symplectic_form)
from .kalman import controllability_rank


def channel_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for stream ``index`` of a run seeded by ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


# --------------------------------------------------------------------------
# configuration records


@dataclass(frozen=True)
class HqWConfig:
    n_c: int = 24
    d: int = 64
    a_m: float = 0.01
    a_M: float = 20.0
    kappa: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.a_m < self.a_M:
            raise ValueError(f"need 0 < a_m < a_M, got {self.a_m}, {self.a_M}")
        if self.n_c < 1 or self.d < 1:
            raise ValueError("n_c and d must be at least 1")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")


@dataclass(frozen=True)
class LqWConfig:
    n: int = 24
    omega0: float = 0.25
    g_lo: float = 0.01
    g_hi: float = 0.19
    a1: float = 5.0
    d: int = 64
    seed: int = 0

    def __post_init__(self):
        if not self.g_lo < self.g_hi:
            raise ValueError("need g_lo < g_hi")
        if self.a1 <= 0:
            raise ValueError("input coupling a1 must be positive")
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be at least 1")


@dataclass(frozen=True)
class PadeConfig:
    n_blocks: int = 14
    m: int = 7
    order: int = 8
    step: float = 0.01
    margin: float = 0.1
    seed: int = 0
    offset: float = 0.0

    def __post_init__(self):
        if self.n_blocks < 1 or self.step <= 0:
            raise ValueError("need n_blocks >= 1 and step > 0")
        if self.m > self.order:
            raise ValueError("numerator degree exceeds denominator degree")
        if not 0 <= self.offset < 1:
            raise ValueError("offset must lie in [0, 1)")


_KINDS = {"hqw": HqWConfig, "lqw": LqWConfig, "padeqw": PadeConfig}


def config_to_dict(config) -> dict:
    kind = {v: k for k, v in _KINDS.items()}[type(config)]
    return {"kind": kind, **asdict(config)}


def config_from_dict(doc: dict):
    doc = dict(doc)
    kind = doc.pop("kind", None)
    if kind not in _KINDS:
        raise ValueError(f"unknown reservoir kind {kind!r}; expected one of {sorted(_KINDS)}")
    cls = _KINDS[kind]
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown field(s) for {kind}: {sorted(unknown)}")
    return cls(**doc)


def load_config(text: str):
    return config_from_dict(json.loads(text))


# --------------------------------------------------------------------------
# harmonic-oscillator reservoirs


@dataclass(frozen=True)
class OscillatorParams:
    """Parameters of ``n_c`` concatenated one-mode oscillators."""

    alpha_sq: np.ndarray
    omega: np.ndarray
    s1: np.ndarray
    s2: np.ndarray

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(getattr(self, f.name), dtype=float))
                for f in fields(self)]
        if len({a.shape for a in arrs}) != 1:
            raise ValueError("oscillator parameter arrays must share a shape")
        if np.any(arrs[0] <= 0):
            raise ValueError("alpha_sq must be positive")
        if np.max(np.abs(arrs[2] ** 2 + arrs[3] ** 2 - 1.0)) > 1e-12:
            raise ValueError("(s1, s2) must have unit norm")
        for f, a in zip(fields(self), arrs):
            a.setflags(write=False)
            object.__setattr__(self, f.name, a)

    @property
    def n_c(self) -> int:
        return self.alpha_sq.size

    @property
    def feedthrough(self) -> float:
        """Weight of the Dirac term in the summed-output impulse response."""
        return float(np.sum(self.s1))


def sample_hqw_params(config: HqWConfig, rng: np.random.Generator | None = None
                      ) -> list[OscillatorParams]:
    """Draw ``d`` independent oscillator banks.

    ``alpha^2`` is uniform on ``[a_m, a_M]``; given ``alpha^2`` the frequency is
    Cauchy with scale ``alpha^2 / 2``; the scattering phase is von Mises with
    mean ``pi/4`` and concentration ``kappa``.  Each channel uses its own stream
    derived from ``config.seed`` (or spawned from ``rng`` when given).
    """
    if rng is not None:
        streams = rng.spawn(config.d)
    else:
        streams = [channel_rng(config.seed, j) for j in range(config.d)]
    banks = []
    for g in streams:
        a2 = g.uniform(config.a_m, config.a_M, config.n_c)
        omega = 0.5 * a2 * np.tan(np.pi * (g.uniform(size=config.n_c) - 0.5))
        theta = g.vonmises(np.pi / 4, config.kappa, config.n_c)
        banks.append(OscillatorParams(a2, omega, np.cos(theta), np.sin(theta)))
    return banks


def params_to_csv(banks: Sequence[OscillatorParams]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["channel", "index", "alpha_sq", "omega", "s1", "s2"])
    for j, p in enumerate(banks):
        for i in range(p.n_c):
            w.writerow([j, i] + [repr(float(x[i])) for x in (p.alpha_sq, p.omega, p.s1, p.s2)])
    return buf.getvalue()


def params_from_csv(text: str) -> list[OscillatorParams]:
    rows = list(csv.DictReader(io.StringIO(text)))
    banks: dict[int, list] = {}
    for r in rows:
        banks.setdefault(int(r["channel"]), []).append(r)
    out = []
    for j in sorted(banks):
        rs = sorted(banks[j], key=lambda r: int(r["index"]))
        out.append(OscillatorParams(*[np.array([float(r[k]) for r in rs])
                                      for k in ("alpha_sq", "omega", "s1", "s2")]))
    return out


def harmonic_oscillator_spec(alpha, beta, omega, s1, s2) -> HamiltonianSpec:
    if abs(s1 * s1 + s2 * s2 - 1.0) > 1e-12:
        raise ValueError(f"(s1, s2) must have unit norm, got {s1}, {s2}")
    return HamiltonianSpec(M1=[[-omega]], M2=[[0.0]], N1=[[alpha + 1j * beta]],
                           N2=[[0.0]], S=[[s1 + 1j * s2]])


def build_harmonic_oscillator(alpha, beta, omega, s1, s2) -> QuadratureSystem:
    """One-mode oscillator coupled to a single field.

    Produces ``A = [[-lam, -omega], [omega, -lam]]`` with
    ``lam = (alpha^2 + beta^2) / 2``, ``C = [[alpha, -beta], [beta, alpha]]`` and
    ``D`` the rotation by the scattering phase ``(s1, s2)``.
    """
    return build_quadrature_system(harmonic_oscillator_spec(alpha, beta, omega, s1, s2))


def _split(X, rows, cols):
    return X[:rows, :cols], X[:rows, cols:], X[rows:, :cols], X[rows:, cols:]


def concatenate(systems: Sequence[QuadratureSystem]) -> QuadratureSystem:
    """Side-by-side assembly of uncoupled systems.

    Each q/p quadrant is assembled block-diagonally so that the result keeps
    the all-q-then-all-p ordering for modes and fields.
    """
    systems = list(systems)
    if not systems:
        raise ValueError("nothing to concatenate")
    if len(systems) == 1:
        return systems[0]
    for k, sys in enumerate(systems):
        res = max(check_physical_realizability(sys))
        if res > 1e-9:
            raise ValueError(f"system {k} is not physically realizable (residual {res:.3e})")

    def assemble(name, row_dim, col_dim):
        quads = [_split(getattr(sys, name), row_dim(sys), col_dim(sys)) for sys in systems]
        blocks = [scipy.linalg.block_diag(*[q[i] for q in quads]) for i in range(4)]
        return np.block([[blocks[0], blocks[1]], [blocks[2], blocks[3]]])

    nn = lambda sys: sys.n
    ss = lambda sys: sys.s
    return QuadratureSystem(A=assemble("A", nn, nn), L=assemble("L", nn, ss),
                            C=assemble("C", ss, nn), D=assemble("D", ss, ss))


def hqw_system(params: OscillatorParams) -> QuadratureSystem:
    """Concatenation of the oscillators in ``params`` (``beta = 0``)."""
    return concatenate([
        build_harmonic_oscillator(math.sqrt(a2), 0.0, w, c, s)
        for a2, w, c, s in zip(params.alpha_sq, params.omega, params.s1, params.s2)])


def hqw_spec(params: OscillatorParams) -> HamiltonianSpec:
    n = params.n_c
    return HamiltonianSpec(M1=np.diag(-params.omega), M2=np.zeros((n, n)),
                           N1=np.diag(np.sqrt(params.alpha_sq)), N2=np.zeros((n, n)),
                           S=np.diag(params.s1 + 1j * params.s2))


def hqw_impulse_response(params: OscillatorParams, t) -> np.ndarray:
    """Smooth part of the summed-output impulse response.

    ``sum_i a_i exp(-a_i t / 2) (-s1_i cos(w_i t) + s2_i sin(w_i t))`` with
    ``a_i = alpha_i^2``; the Dirac weight is :attr:`OscillatorParams.feedthrough`.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("impulse response requested at negative time")
    tt = t[..., None]
    a2, w = params.alpha_sq, params.omega
    terms = a2 * np.exp(-0.5 * a2 * tt) * (-params.s1 * np.cos(w * tt) + params.s2 * np.sin(w * tt))
    return terms.sum(axis=-1)


def hqw_io_vectors(n_c: int) -> tuple[np.ndarray, np.ndarray]:
    """Input direction ``(1_nc, 0)`` and the summing output row ``1_nc``.

    The output row acts on the ``n_c`` measured (first-quadrature) outputs.
    """
    b = np.concatenate([np.ones(n_c), np.zeros(n_c)])
    return b, np.ones(n_c)


# --------------------------------------------------------------------------
# Laplacian network baseline


def laplacian(g: np.ndarray) -> np.ndarray:
    """``V_ij = delta_ij sum_k g_ik - (1 - delta_ij) g_ij`` for symmetric ``g``."""
    g = np.asarray(g, dtype=float).copy()
    np.fill_diagonal(g, 0.0)
    return np.diag(g.sum(axis=1)) - g


def lqw_spec(config: LqWConfig, rng: np.random.Generator, s1: float = 1.0,
             s2: float = 0.0) -> HamiltonianSpec:
    n = config.n
    g = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    g[iu] = rng.uniform(config.g_lo, config.g_hi, len(iu[0]))
    g = g + g.T
    V = laplacian(g)
    G = config.omega0 * np.eye(n)
    N1 = np.zeros((1, n))
    N1[0, 0] = config.a1
    return HamiltonianSpec(M1=0.5 * (G + np.eye(n) + V), M2=0.5 * (G - np.eye(n) + V),
                           N1=N1, N2=np.zeros((1, n)), S=[[s1 + 1j * s2]])


def build_lqw(config: LqWConfig, rng: np.random.Generator | None = None) -> QuadratureSystem:
    """One replica of the spring-coupled oscillator network.

    Oscillator 1 is coupled to the single input field with strength ``a1``.
    The drift is ``[[-a1^2/2 e1 e1^T, I], [-G - V, -a1^2/2 e1 e1^T]]``.
    """
    if rng is None:
        rng = channel_rng(config.seed, 0)
    return build_quadrature_system(lqw_spec(config, rng))


# --------------------------------------------------------------------------
# classical SISO systems, Pade delays and their quantum embedding


@dataclass(frozen=True)
class ClassicalSISO:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float = 0.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        B = np.asarray(self.B, dtype=float).reshape(n, 1)
        C = np.asarray(self.C, dtype=float).reshape(1, n)
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B)) and np.all(np.isfinite(C))):
            raise ValueError("non-finite state-space entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", float(self.D))

    @property
    def order(self) -> int:
        return self.A.shape[0]

    def is_stable(self) -> bool:
        return bool(np.all(np.linalg.eigvals(self.A).real < 0))

    def transfer(self, s) -> complex:
        n = self.order
        return complex((self.C @ np.linalg.solve(s * np.eye(n) - self.A, self.B))[0, 0] + self.D)

    def impulse_response(self, t) -> float:
        return float((self.C @ matrix_exponential(self.A, t) @ self.B)[0, 0])


def pade_coefficients(tau: float, m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Numerator and denominator of the ``(m, n)`` Pade approximant of ``exp(-s tau)``.

    Coefficients are in ascending powers of ``s``; the constant terms are 1.
    """
    if m > n:
        raise ValueError(f"numerator degree {m} exceeds denominator degree {n}")
    if tau <= 0:
        raise ValueError("delay must be positive")
    f = math.factorial
    num = np.array([f(m + n - k) * f(m) / (f(m + n) * f(k) * f(m - k)) * (-tau) ** k
                    for k in range(m + 1)])
    den = np.array([f(m + n - k) * f(n) / (f(m + n) * f(k) * f(n - k)) * tau ** k
                    for k in range(n + 1)])
    return num, den


def pade_delay_realization(tau: float, m: int = 7, n: int = 8) -> ClassicalSISO:
    """Controllable canonical form of the ``(m, n)`` Pade delay approximant."""
    num, den = pade_coefficients(tau, m, n)
    a = den[:n] / den[n]
    b = np.zeros(n + 1)
    b[: m + 1] = num / den[n]
    D = b[n]
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -a
    B = np.zeros(n)
    B[-1] = 1.0
    C = b[:n] - D * a
    return ClassicalSISO(A, B, C, D)


def balance_siso(sys: ClassicalSISO) -> ClassicalSISO:
    """Diagonal similarity that equalizes row and column norms of ``A``.

    The transfer function is unchanged; companion forms of high-order delay
    approximants are badly scaled without it.
    """
    _, (scale, perm) = scipy.linalg.matrix_balance(sys.A, permute=False, separate=True)
    T = np.diag(scale)
    Ti = np.diag(1.0 / scale)
    return ClassicalSISO(Ti @ sys.A @ T, Ti @ sys.B, sys.C @ T, sys.D)


def stabilizing_gain(A, B, margin: float = 0.1) -> np.ndarray:
    """Gain ``R`` (``1 x n``) with ``Re eig(-A - B R) <= -margin``.

    Solves the continuous algebraic Riccati equation of the pair
    ``(-A + margin I, B)`` with identity weights, in balanced coordinates.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, 1)
    rank = controllability_rank(A, B)
    if rank < n:
        raise np.linalg.LinAlgError(
            f"controllability matrix is rank deficient (numerical rank {rank} < {n})")
    _, (scale, _) = scipy.linalg.matrix_balance(A, permute=False, separate=True)
    Ab = A * scale[None, :] / scale[:, None]
    Bb = B / scale[:, None]
    # Rescale time so the spectrum is O(1); the gain maps back exactly.
    rho = max(np.max(np.abs(np.linalg.eigvals(Ab))), margin, 1.0)
    a = (-Ab + margin * np.eye(n)) / rho
    X = scipy.linalg.solve_continuous_are(a, Bb / rho, np.eye(n), np.eye(1))
    Rb = (Bb / rho).T @ X
    R = Rb / scale[None, :]
    closed = np.linalg.eigvals(-A - B @ R)
    if np.max(closed.real) > -margin * (1 - 1e-6):
        raise np.linalg.LinAlgError(
            f"stabilizing gain failed: max Re eig = {np.max(closed.real):.3e}")
    return R


def embed_classical_siso(sys: ClassicalSISO, R) -> QuadratureSystem:
    """Physically realizable two-field system reproducing ``C exp(At) B``.

    The drift is ``diag(A, Z)`` with ``Z = (-A - B R)^T``; the response from
    input field 1 (q quadrature) to output field 2 (q quadrature) equals the
    classical impulse response plus a unit feedthrough.
    """
    n = sys.order
    R = np.asarray(R, dtype=float).reshape(1, n)
    Z = (-sys.A - sys.B @ R).T
    if np.max(np.linalg.eigvals(Z).real) >= 0:
        raise ValueError("gain R does not stabilize the auxiliary block")
    C1 = np.vstack([R, -sys.C])
    C2 = np.vstack([sys.B.T, np.zeros((1, n))])
    zero = np.zeros((2, n))
    Cr = np.block([[C1, zero], [zero, C2]])
    Ar = scipy.linalg.block_diag(sys.A, Z)
    Lr = symplectic_form(n) @ Cr.T @ symplectic_form(2)
    return QuadratureSystem(Ar, Lr, Cr, np.eye(4))


PADE_INPUT = np.array([1.0, 0.0, 0.0, 0.0])
PADE_OUTPUT_ROW = 1  # q quadrature of output field 2


def padeqw_blocks(config: PadeConfig) -> list[QuadratureSystem]:
    """Embedded Pade delay lines for delays ``(k - offset) * step``, ``k = 1..n_blocks``."""
    blocks = []
    for k in range(1, config.n_blocks + 1):
        tau = (k - config.offset) * config.step
        siso = balance_siso(pade_delay_realization(tau, config.m, config.order))
        R = stabilizing_gain(siso.A, siso.B, config.margin)
        blocks.append(embed_classical_siso(siso, R))
    return blocks
