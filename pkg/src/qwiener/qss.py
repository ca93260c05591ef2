"""Linear quantum state-space systems in real quadrature coordinates.

A network of ``n`` bosonic modes coupled to ``s`` external fields is specified
at the Hamiltonian level by complex matrices ``(M1, M2, N1, N2, S)`` and mapped
to a real state-space model ``(A, L, C, D)`` acting on the quadrature vector
``(q_1..q_n, p_1..p_n)``.  The helpers here build that model and check the
algebraic constraints a genuine quantum system must satisfy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

DEFAULT_TOL = 1e-9


class QuantumConstraintError(ValueError):
    """Raised when a matrix violates a structural quantum constraint."""


def symplectic_form(n: int) -> np.ndarray:
    """Return the ``2n x 2n`` matrix ``[[0, I], [-I, 0]]``."""
    if n < 1:
        raise ValueError(f"mode count must be positive, got {n}")
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [-eye, zero]])


def _max_abs(x) -> float:
    x = np.asarray(x)
    return float(np.max(np.abs(x))) if x.size else 0.0


@dataclass(frozen=True)
class HamiltonianSpec:
    """Hamiltonian and coupling data of a quantum linear network.

    Validated on construction: the block matrix ``[[M1, M2], [M2*, M1*]]`` must
    be Hermitian and ``S`` unitary, both to ``tol`` in max norm.
    """

    M1: np.ndarray
    M2: np.ndarray
    N1: np.ndarray
    N2: np.ndarray
    S: np.ndarray
    tol: float = field(default=1e-10, repr=False)

    def __post_init__(self):
        M1 = np.atleast_2d(np.asarray(self.M1, dtype=complex))
        n = M1.shape[0]
        M2 = np.asarray(self.M2, dtype=complex).reshape(n, n)
        N1 = np.asarray(self.N1, dtype=complex)
        if N1.ndim < 2:
            N1 = N1.reshape(-1, n)
        s = N1.shape[0]
        N2 = np.asarray(self.N2, dtype=complex).reshape(s, n)
        S = np.asarray(self.S, dtype=complex).reshape(s, s)
        if M1.shape != (n, n) or N1.shape != (s, n):
            raise ValueError(f"inconsistent shapes M1={M1.shape} N1={N1.shape}")
        for name, val in (("M1", M1), ("M2", M2), ("N1", N1), ("N2", N2), ("S", S)):
            if not np.all(np.isfinite(val)):
                raise ValueError(f"{name} has non-finite entries")
            val.setflags(write=False)
            object.__setattr__(self, name, val)

        M = np.block([[M1, M2], [M2.conj(), M1.conj()]])
        herm = _max_abs(M - M.conj().T)
        if herm > self.tol:
            raise QuantumConstraintError(
                f"Hamiltonian matrix is not Hermitian (max residual {herm:.3e})")
        unit = _max_abs(S @ S.conj().T - np.eye(s))
        if unit > self.tol:
            raise QuantumConstraintError(
                f"scattering matrix is not unitary (max residual {unit:.3e})")

    @property
    def n(self) -> int:
        return self.M1.shape[0]

    @property
    def s(self) -> int:
        return self.N1.shape[0]

    def to_dict(self) -> dict:
        def enc(x):
            return [[[float(v.real), float(v.imag)] for v in row] for row in x]

        return {"n": self.n, "s": self.s, "M1": enc(self.M1), "M2": enc(self.M2),
                "N1": enc(self.N1), "N2": enc(self.N2), "S": enc(self.S)}

    @classmethod
    def from_dict(cls, doc: dict) -> "HamiltonianSpec":
        def dec(x):
            arr = np.asarray(x, dtype=float)
            return arr[..., 0] + 1j * arr[..., 1]

        spec = cls(dec(doc["M1"]), dec(doc["M2"]), dec(doc["N1"]),
                   dec(doc["N2"]), dec(doc["S"]))
        if "n" in doc and doc["n"] != spec.n or "s" in doc and doc["s"] != spec.s:
            raise ValueError("declared n/s do not match matrix shapes")
        return spec

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "HamiltonianSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class QuadratureSystem:
    """Real state-space model ``dz = A z dt + L dW``, ``dy = C z dt + D dW``.

    ``A`` is ``2n x 2n``, ``L`` is ``2n x 2s``, ``C`` is ``2s x 2n`` and ``D`` is
    ``2s x 2s``.  Quadratures are ordered all-q then all-p, for both modes
    and fields.
    """

    A: np.ndarray
    L: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n2 = A.shape[0]
        if A.shape != (n2, n2) or n2 % 2:
            raise ValueError(f"A must be square with even size, got {A.shape}")
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        s2 = D.shape[0]
        if D.shape != (s2, s2) or s2 % 2:
            raise ValueError(f"D must be square with even size, got {D.shape}")
        L = np.asarray(self.L, dtype=float).reshape(n2, s2)
        C = np.asarray(self.C, dtype=float).reshape(s2, n2)
        for name, val in (("A", A), ("L", L), ("C", C), ("D", D)):
            if not np.all(np.isfinite(val)):
                raise ValueError(f"{name} has non-finite entries")
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.A.shape[0] // 2

    @property
    def s(self) -> int:
        return self.D.shape[0] // 2

    def impulse_response(self, t) -> np.ndarray:
        """Smooth part ``C exp(A t) L`` of the impulse response (``2s x 2s``).

        The Dirac feedthrough ``D delta(t)`` is not included.
        """
        return self.C @ matrix_exponential(self.A, t) @ self.L


def sharp_adjoint(X, n: int, s: int) -> np.ndarray:
    """Return ``-J_n X^T J_s`` for a real ``2s x 2n`` matrix ``X``."""
    X = np.asarray(X)
    if np.iscomplexobj(X):
        raise TypeError("sharp adjoint is defined here for real matrices only")
    if X.shape != (2 * s, 2 * n):
        raise ValueError(f"expected shape {(2 * s, 2 * n)}, got {X.shape}")
    return -symplectic_form(n) @ X.T @ symplectic_form(s)


def build_quadrature_system(spec: HamiltonianSpec) -> QuadratureSystem:
    """Map Hamiltonian-level data to the real quadrature model."""
    n, s = spec.n, spec.s
    M1, M2, N1, N2, S = spec.M1, spec.M2, spec.N1, spec.N2, spec.S
    D = np.block([[S.real, -S.imag], [S.imag, S.real]])
    C = np.block([[(N1 + N2).real, (-N1 + N2).imag],
                  [(N1 + N2).imag, (N1 - N2).real]])
    C_sharp = sharp_adjoint(C, n, s)
    L = -C_sharp @ D
    A = np.block([[(M1 + M2).imag, (M1 - M2).real],
                  [-(M1 + M2).real, -(-M1 + M2).imag]]) - 0.5 * C_sharp @ C
    return QuadratureSystem(A, L, C, D)


def check_physical_realizability(sys: QuadratureSystem) -> tuple[float, float, float]:
    """Max-norm residuals of the three realizability identities.

    Returns the residuals of ``A J + J A^T + L J_s L^T``,
    ``J L + C^T J_s D`` and ``D J_s D^T - J_s``, in that order.
    """
    Jn, Js = symplectic_form(sys.n), symplectic_form(sys.s)
    A, L, C, D = sys.A, sys.L, sys.C, sys.D
    r1 = _max_abs(A @ Jn + Jn @ A.T + L @ Js @ L.T)
    r2 = _max_abs(Jn @ L + C.T @ Js @ D)
    r3 = _max_abs(D @ Js @ D.T - Js)
    return r1, r2, r3


def is_physically_realizable(sys: QuadratureSystem, tol: float = DEFAULT_TOL) -> bool:
    return max(check_physical_realizability(sys)) <= tol


def is_completely_passive(spec: HamiltonianSpec, tol: float = 1e-10) -> bool:
    """True when the network needs no active (energy-injecting) components."""
    re, im = spec.M1.real, spec.M1.imag
    return (_max_abs(spec.M2) <= tol and _max_abs(spec.N2) <= tol
            and _max_abs(re - re.T) <= tol and _max_abs(im + im.T) <= tol)


def matrix_exponential(M, t: float = 1.0) -> np.ndarray:
    """``exp(M t)`` by scaling and squaring with a degree-13 Pade approximant."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix must be square, got {M.shape}")
    if not (np.all(np.isfinite(M)) and np.isfinite(t)):
        raise ValueError("matrix exponential of non-finite input")
    return scipy.linalg.expm(M * t)


def is_valid_quantum_covariance(Q, n: int | None = None, tol: float = 1e-10) -> bool:
    """Uncertainty-principle test: ``Q + (i/2) J`` must be positive semidefinite."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if n is None:
        n = Q.shape[0] // 2
    if Q.shape != (2 * n, 2 * n):
        raise ValueError(f"expected {(2 * n, 2 * n)} covariance, got {Q.shape}")
    if _max_abs(Q - Q.T) > tol:
        raise ValueError("covariance matrix is not symmetric")
    H = Q + 0.5j * symplectic_form(n)
    return bool(np.linalg.eigvalsh(H).min() >= -tol)


def spec_from_quadrature(sys: QuadratureSystem) -> HamiltonianSpec:
    """Recover ``(M1, M2, N1, N2, S)`` from a realizable quadrature model.

    Inverts the block formulas of :func:`build_quadrature_system`; useful for
    passivity tests of systems constructed directly in quadrature form.
    """
    n, s = sys.n, sys.s
    C, D = sys.C, sys.D
    S = D[:s, :s] + 1j * D[s:, :s]
    # C = [[Re(N1+N2), Im(N2-N1)], [Im(N1+N2), Re(N1-N2)]]
    re_plus, im_minus = C[:s, :n], C[:s, n:]
    im_plus, re_minus = C[s:, :n], C[s:, n:]
    N1 = 0.5 * (re_plus + re_minus) + 0.5j * (im_plus - im_minus)
    N2 = 0.5 * (re_plus - re_minus) + 0.5j * (im_plus + im_minus)
    H = sys.A + 0.5 * sharp_adjoint(C, n, s) @ C
    im_p, re_m = H[:n, :n], H[:n, n:]
    re_p, im_m = -H[n:, :n], H[n:, n:]
    M1 = 0.5 * (re_p + re_m) + 0.5j * (im_p + im_m)
    M2 = 0.5 * (re_p - re_m) + 0.5j * (im_p - im_m)
    return HamiltonianSpec(M1, M2, N1, N2, S, tol=1e-8)
