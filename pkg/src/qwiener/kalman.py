"""Continuously measured linear quantum systems.

Homodyne detection of the first quadrature of every output field turns the
quantum network into a classical Gaussian filtering problem: the conditional
mean obeys a linear SDE driven by the innovation and the conditional
covariance follows a Riccati equation.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .qss import QuadratureSystem, is_valid_quantum_covariance, matrix_exponential

TRAJ_MAGIC = b"QWTRAJ01"


def vacuum(dim: int) -> np.ndarray:
    return 0.5 * np.eye(dim)


def measurement_restriction(sys: QuadratureSystem) -> tuple[np.ndarray, np.ndarray]:
    """Rows of ``C`` and ``D`` seen by homodyne detection of the q quadratures.

    Returns ``C_q = [I_s 0] C`` (``s x 2n``) and ``D_q = [I_s 0] D`` (``s x 2s``).
    """
    s = sys.s
    Cq, Dq = sys.C[:s], sys.D[:s]
    R = Dq @ Dq.T
    if np.linalg.cond(R) > 1e12:
        raise np.linalg.LinAlgError("innovation covariance D_q D_q^T is singular")
    return Cq, Dq


def _gain_terms(sys, Q):
    Cq, Dq = measurement_restriction(sys)
    Q = vacuum(2 * sys.s) if Q is None else np.asarray(Q, dtype=float)
    return Cq, Dq, Q, Dq @ Dq.T, sys.L @ Q @ Dq.T


def kalman_gain(V, sys: QuadratureSystem, Q=None) -> np.ndarray:
    """``G = V C_q^T + L Q D_q^T``."""
    Cq, _, _, _, S = _gain_terms(sys, Q)
    return V @ Cq.T + S


def riccati_derivative(V, sys: QuadratureSystem, Q=None) -> np.ndarray:
    """Right-hand side of the conditional covariance equation."""
    V = np.asarray(V, dtype=float)
    Cq, Dq, Q, R, S = _gain_terms(sys, Q)
    G = V @ Cq.T + S
    A, L = sys.A, sys.L
    return A @ V + V @ A.T + L @ Q @ L.T - G @ np.linalg.solve(R, G.T)


def _standard_form(sys, Q):
    """Rewrite the filter Riccati equation without the cross term.

    ``dV/dt = At V + V At^T - V H V + Qt`` with ``H = C_q^T R^{-1} C_q``.
    """
    Cq, Dq, Q, R, S = _gain_terms(sys, Q)
    Ri = np.linalg.inv(R)
    At = sys.A - S @ Ri @ Cq
    Qt = sys.L @ Q @ sys.L.T - S @ Ri @ S.T
    H = Cq.T @ Ri @ Cq
    return At, 0.5 * (Qt + Qt.T), 0.5 * (H + H.T)


class RiccatiPropagator:
    """Exact propagation of the Riccati flow over a fixed step ``h``.

    Uses the linear Hamiltonian system whose ratio ``Y X^{-1}`` solves the
    Riccati equation; one matrix exponential is computed up front.
    """

    def __init__(self, sys: QuadratureSystem, Q=None, h: float = 0.01):
        At, Qt, H = _standard_form(sys, Q)
        m = At.shape[0]
        Ham = np.block([[-At.T, H], [Qt, At]])
        Phi = matrix_exponential(Ham, h)
        self.h = h
        self._blocks = Phi[:m, :m], Phi[:m, m:], Phi[m:, :m], Phi[m:, m:]

    def step(self, V: np.ndarray) -> np.ndarray:
        P11, P12, P21, P22 = self._blocks
        X = P11 + P12 @ V
        Y = P21 + P22 @ V
        Vn = np.linalg.solve(X.T, Y.T)  # (Y X^{-1})^T = X^{-T} Y^T
        return 0.5 * (Vn + Vn.T)


def riccati_flow(sys: QuadratureSystem, Q=None, V0=None, h: float = 0.01,
                 steps: int = 100, every: int = 1) -> list[np.ndarray]:
    """Covariance trajectory ``V(k h)`` sampled every ``every`` steps."""
    V = vacuum(2 * sys.n) if V0 is None else np.asarray(V0, dtype=float)
    prop = RiccatiPropagator(sys, Q, h)
    out = [V]
    for k in range(1, steps + 1):
        V = prop.step(V)
        if k % every == 0:
            out.append(V)
    return out


def _pbh_ok(A, M, unstable_only: bool = True, tol: float = 1e-9) -> bool:
    """Popov-Belevitch-Hautus rank test of ``[lam I - A, M]`` on the closed RHP."""
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if unstable_only and lam.real < -tol:
            continue
        P = np.hstack([lam * np.eye(n) - A, M])
        sv = np.linalg.svd(P, compute_uv=False)
        if sv[-1] <= tol * max(sv[0], 1.0):
            return False
    return True


def is_detectable(A, C) -> bool:
    return _pbh_ok(np.asarray(A).T, np.asarray(C).T)


def is_stabilizable(A, B) -> bool:
    return _pbh_ok(np.asarray(A), np.asarray(B))


def steady_state(sys: QuadratureSystem, Q=None, V0=None, tol: float = 1e-12,
                 max_iter: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Stationary conditional covariance ``V_inf`` and gain ``G_inf``.

    The Riccati flow is integrated from ``V0`` (vacuum by default) with
    step doubling until ``|dV/dt|_max < tol``; Newton-Kleinman iterations
    refine the result when the flow stalls above that level.
    """
    Cq, Dq, Qm, R, S = _gain_terms(sys, Q)
    n2 = 2 * sys.n
    if not is_detectable(sys.A, Cq):
        raise ValueError("pair (A, C_q) is not detectable")
    w, U = np.linalg.eigh(0.5 * (Qm + Qm.T))
    if not is_stabilizable(sys.A, sys.L @ U @ np.diag(np.sqrt(np.clip(w, 0, None)))):
        raise ValueError("pair (A, L Q^1/2) is not stabilizable")

    V = vacuum(n2) if V0 is None else np.asarray(V0, dtype=float)
    scale = max(1.0, np.max(np.abs(sys.A)), np.max(np.abs(sys.L)) ** 2)

    def resid(V):
        return np.max(np.abs(riccati_derivative(V, sys, Qm)))

    r = resid(V)
    At, Qt, H = _standard_form(sys, Qm)
    # Exponential propagation loses accuracy once h * |spectrum| grows large.
    h_max = 4.0 / max(np.max(np.abs(np.linalg.eigvals(At))), 1e-3)
    h = min(1e-3 / scale, h_max)
    it = 0
    while r > tol * scale and it < max_iter:
        try:
            prop = RiccatiPropagator(sys, Qm, h)
            Vn = V
            for _ in range(8):
                Vn = prop.step(Vn)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(Vn)):
            break
        V = Vn
        r_new = resid(V)
        h = min(h * 2.0, h_max) if r_new < r else h
        r = r_new
        it += 1

    if not (r <= tol * scale):
        if not np.all(np.isfinite(V)):
            V = vacuum(n2)
        for _ in range(50):
            Ak = At - V @ H
            Vn = scipy.linalg.solve_continuous_lyapunov(Ak, -(Qt + V @ H @ V))
            Vn = 0.5 * (Vn + Vn.T)
            if not np.all(np.isfinite(Vn)):
                break
            V = Vn
            r_new = resid(V)
            if r_new <= tol * scale or abs(r_new - r) <= 1e-3 * tol * scale:
                r = r_new
                break
            r = r_new
    if not np.isfinite(r) or r > 1e3 * tol * scale:
        raise RuntimeError(f"Riccati steady state did not converge (residual {r:.3e})")
    G = V @ Cq.T + S
    return V, G


@dataclass(frozen=True)
class Discretization:
    A_d: np.ndarray
    B_d: np.ndarray
    C_q: np.ndarray
    D_q: np.ndarray
    W_d: np.ndarray
    dt: float


def discretize(sys: QuadratureSystem, Q=None, dt: float = 0.01) -> Discretization:
    """Exact sampling of the linear SDE at step ``dt`` with held inputs.

    ``B_d = (int_0^dt e^{As} ds) L`` and ``W_d = int_0^dt e^{As} L Q L^T e^{A^T s} ds``
    are both read off augmented matrix exponentials.
    """
    if dt <= 0:
        raise ValueError("step must be positive")
    Cq, Dq = sys.C[: sys.s], sys.D[: sys.s]
    Q = vacuum(2 * sys.s) if Q is None else np.asarray(Q, dtype=float)
    A, L = sys.A, sys.L
    n2, s2 = L.shape
    aug = np.zeros((n2 + s2, n2 + s2))
    aug[:n2, :n2] = A
    aug[:n2, n2:] = L
    E = matrix_exponential(aug, dt)
    Ad, Bd = E[:n2, :n2], E[:n2, n2:]
    van = np.zeros((2 * n2, 2 * n2))
    van[:n2, :n2] = -A
    van[:n2, n2:] = L @ Q @ L.T
    van[n2:, n2:] = A.T
    F = matrix_exponential(van, dt)
    Wd = F[n2:, n2:].T @ F[:n2, n2:]
    return Discretization(Ad, Bd, Cq, Dq, 0.5 * (Wd + Wd.T), dt)


@dataclass(frozen=True)
class MeasuredTrajectory:
    """Sampled output of a continuously measured system.

    Row ``k`` refers to time ``times[k] = (k + 1) dt``, the end of the hold
    interval of input sample ``k``.  ``outputs`` are measured-quadrature rates
    (``C_q pi`` plus feedthrough/noise as configured) and ``increments`` the
    raw measurement record over each step.
    """

    times: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    increments: np.ndarray
    means: np.ndarray
    noise: bool

    @property
    def features(self) -> np.ndarray:
        return self.outputs

    @property
    def noise_flag(self) -> bool:
        return self.noise

    def to_csv(self) -> str:
        s, n2 = self.outputs.shape[1], self.means.shape[1]
        head = ["t", "u"] + [f"y_{i + 1}" for i in range(s)] + [f"pi_{i + 1}" for i in range(n2)]
        buf = io.StringIO()
        buf.write(",".join(head) + "\n")
        for row in self._table():
            buf.write(",".join(format(v, ".17g") for v in row) + "\n")
        return buf.getvalue()

    def _table(self) -> np.ndarray:
        u = self.inputs if self.inputs.ndim == 1 else self.inputs[:, 0]
        return np.column_stack([self.times, u, self.outputs, self.means])

    def to_bytes(self) -> bytes:
        """Magic ``QWTRAJ01``, row and column counts (uint64 LE), then float64 LE rows."""
        tab = np.ascontiguousarray(self._table(), dtype="<f8")
        return TRAJ_MAGIC + struct.pack("<QQ", *tab.shape) + tab.tobytes()

    @staticmethod
    def table_from_bytes(blob: bytes) -> np.ndarray:
        if blob[:8] != TRAJ_MAGIC:
            raise ValueError("not a trajectory file (bad magic)")
        rows, cols = struct.unpack("<QQ", blob[8:24])
        return np.frombuffer(blob[24:], dtype="<f8").reshape(rows, cols).copy()

    @staticmethod
    def table_from_csv(text: str) -> np.ndarray:
        return np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)


def simulate_measured(sys: QuadratureSystem, u, dt: float = 0.01, Q=None, *,
                      input_direction=None, noise: bool = False,
                      rng: np.random.Generator | None = None, pi0=None, V0=None,
                      feedthrough: bool = False, check_every: int = 100
                      ) -> MeasuredTrajectory:
    """Run the discretized quantum Kalman filter over a held input sequence.

    ``u`` is either a scalar sequence (mapped onto the fields through
    ``input_direction``, default the first q field) or a ``(T, 2s)`` array.
    Without noise the mean follows the deterministic dynamics and the
    outputs equal the convolution of the impulse response with the input.
    With noise, innovation increments drive both the output record and,
    through the Kalman gain, the conditional mean.
    """
    u = np.asarray(u, dtype=float)
    s2 = 2 * sys.s
    if u.ndim == 1:
        b = np.zeros(s2)
        if input_direction is None:
            b[0] = 1.0
        else:
            b[:] = np.asarray(input_direction, dtype=float)
        U = u[:, None] * b[None, :]
    else:
        U = u.reshape(len(u), s2)
    T = U.shape[0]
    disc = discretize(sys, Q, dt)
    Cq, Dq = disc.C_q, disc.D_q
    Rm = Dq @ Dq.T
    pi = np.zeros(2 * sys.n) if pi0 is None else np.asarray(pi0, dtype=float).copy()

    means = np.empty((T, 2 * sys.n))
    outputs = np.empty((T, sys.s))
    incs = np.empty((T, sys.s))

    if noise:
        if rng is None:
            raise ValueError("noise=True requires an rng")
        V = vacuum(2 * sys.n) if V0 is None else np.asarray(V0, dtype=float)
        prop = RiccatiPropagator(sys, Q, dt)
        Qm = vacuum(s2) if Q is None else np.asarray(Q, dtype=float)
        S = sys.L @ Qm @ Dq.T
        dnu = rng.standard_normal((T, sys.s)) * np.sqrt(dt)
        for k in range(T):
            G = V @ Cq.T + S
            y_det = Cq @ pi + Dq @ U[k]
            pi = disc.A_d @ pi + disc.B_d @ U[k] + G @ dnu[k]
            V = prop.step(V)
            noise_k = Rm @ dnu[k]
            incs[k] = dt * y_det + noise_k
            out = Cq @ pi + noise_k / dt
            if feedthrough:
                out = out + Dq @ U[k]
            outputs[k] = out
            means[k] = pi
            if not np.all(np.isfinite(pi)):
                raise FloatingPointError(f"non-finite state at step {k}")
            if check_every and (k + 1) % check_every == 0 and not is_valid_quantum_covariance(
                    V, sys.n, tol=1e-8):
                raise FloatingPointError(f"covariance lost validity at step {k}")
    else:
        for k in range(T):
            y_det = Cq @ pi + Dq @ U[k]
            pi = disc.A_d @ pi + disc.B_d @ U[k]
            incs[k] = dt * y_det
            outputs[k] = Cq @ pi + (Dq @ U[k] if feedthrough else 0.0)
            means[k] = pi
            if not np.all(np.isfinite(pi)):
                raise FloatingPointError(f"non-finite state at step {k}")
    times = dt * np.arange(1, T + 1)
    return MeasuredTrajectory(times, u.copy(), outputs, incs, means, noise)


def controllability_rank(A, B) -> int:
    """Numerical rank of ``[B, AB, ..., A^{n-1} B]``.

    The pair is balanced by a diagonal similarity and each Krylov column is
    normalized before the singular value test; neither step changes the exact
    rank, but both keep the test meaningful for badly scaled realizations.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    _, (scale, _) = scipy.linalg.matrix_balance(A, permute=False, separate=True)
    A = A * scale[None, :] / scale[:, None]
    B = B / scale[:, None]
    cols = [B]
    for _ in range(n - 1):
        cols.append(A @ cols[-1])
    K = np.hstack(cols)
    norms = np.linalg.norm(K, axis=0)
    keep = norms > 0
    if not np.any(keep):
        return 0
    K = K[:, keep] / norms[keep]
    sv = np.linalg.svd(K, compute_uv=False)
    return int(np.sum(sv > n * np.finfo(float).eps * sv[0]))
