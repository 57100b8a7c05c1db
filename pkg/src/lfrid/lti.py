"""Discrete-time LTI state-space models and best-linear-approximation estimation.

The BLA is found in two stages: a PO-MOESP subspace step gives (A, C) from
the column space of a projected block-Hankel matrix, (B, D, x0) then follow
from linear least squares.  The result is refined by minimising the
simulation error with :func:`lfrid.lm.lm_minimize`.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numba
import numpy as np

from .errors import DimMismatch, InsufficientData, InvalidSpec
from .lm import FitReport, LmOptions, lm_minimize
from .signals import SignalRecord


@dataclass(frozen=True)
class LtiStateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        mats = [np.atleast_2d(np.array(m, dtype=float)) for m in (self.A, self.B, self.C, self.D)]
        A, B, C, D = mats
        n_x = A.shape[0]
        if A.shape != (n_x, n_x) or B.shape[0] != n_x or C.shape[1] != n_x \
                or D.shape != (C.shape[0], B.shape[1]):
            raise DimMismatch(f"inconsistent shapes A{A.shape} B{B.shape} C{C.shape} D{D.shape}")
        for name, m in zip("ABCD", mats):
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @classmethod
    def static(cls, D) -> "LtiStateSpace":
        D = np.atleast_2d(np.asarray(D, dtype=float))
        return cls(np.zeros((0, 0)), np.zeros((0, D.shape[1])), np.zeros((D.shape[0], 0)), D)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    def transform(self, T) -> "LtiStateSpace":
        """Similarity transform x_new = T x."""
        Ti = np.linalg.inv(T)
        return LtiStateSpace(T @ self.A @ Ti, T @ self.B, self.C @ Ti, self.D)

    def markov(self, n: int) -> np.ndarray:
        """First ``n`` Markov parameters D, CB, CAB, ... stacked as n x n_y x n_u."""
        out = np.empty((n, self.n_y, self.n_u))
        out[0] = self.D
        AkB = self.B
        for k in range(1, n):
            out[k] = self.C @ AkB
            AkB = self.A @ AkB
        return out

    def to_dict(self) -> dict:
        d = {"type": "LtiStateSpace", "version": 1,
             "dims": {"n_x": self.n_x, "n_u": self.n_u, "n_y": self.n_y}}
        for name in "ABCD":
            m = getattr(self, name)
            d[name] = {"shape": list(m.shape), "data": m.ravel().tolist()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LtiStateSpace":
        mats = [np.array(d[k]["data"], dtype=float).reshape(d[k]["shape"]) for k in "ABCD"]
        return cls(*mats)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "LtiStateSpace":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class BlaOptions:
    n_x: int = 3
    max_iter: int = 100
    detrend: bool = True
    horizon: Optional[int] = None

    def __post_init__(self):
        # n_x = 0 is admitted: a pure feedthrough (static gain) fit
        if self.n_x < 0 or self.max_iter < 0:
            raise InvalidSpec("n_x and max_iter must be non-negative")


@numba.njit(cache=True, nogil=True)
def _lti_kernel(A, B, C, D, u, x0):
    n = u.shape[0]
    x = np.empty((n, A.shape[0]))
    y = np.empty((n, C.shape[0]))
    xk = x0.copy()
    for k in range(n):
        x[k] = xk
        y[k] = C @ xk + D @ u[k]
        xk = A @ xk + B @ u[k]
    return y, x


def _check_u(u, n_u):
    u = np.ascontiguousarray(np.asarray(u, dtype=float))
    if u.ndim == 1:
        u = u[:, None]
    if u.ndim != 2 or u.shape[1] != n_u:
        raise DimMismatch(f"input has shape {u.shape}, model expects {n_u} channels")
    return u


def simulate_lti(ss: LtiStateSpace, u, x0=None):
    """Simulate ``x(k+1) = A x + B u``, ``y = C x + D u``; returns (y, x)."""
    u = _check_u(u, ss.n_u)
    x0 = np.zeros(ss.n_x) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (ss.n_x,):
        raise DimMismatch(f"x0 must have length {ss.n_x}")
    if ss.n_x == 0:
        return u @ ss.D.T, np.zeros((u.shape[0], 0))
    A, B, C, D = (np.ascontiguousarray(m) for m in (ss.A, ss.B, ss.C, ss.D))
    return _lti_kernel(A, B, C, D, u, x0)


def is_stable(ss: LtiStateSpace, eps: float = 1e-9) -> bool:
    if ss.n_x == 0:
        return True
    return bool(np.max(np.abs(np.linalg.eigvals(ss.A))) < 1.0 - eps)


# -- parameter vector for the output-error refinement ------------------------

def _lti_pack(ss: LtiStateSpace, x0) -> np.ndarray:
    return np.concatenate([ss.A.ravel(), ss.B.ravel(), ss.C.ravel(), ss.D.ravel(),
                           np.asarray(x0, dtype=float).ravel()])


def _lti_unpack(theta, n_x, n_u, n_y):
    sizes = [n_x * n_x, n_x * n_u, n_y * n_x, n_y * n_u, n_x]
    parts = np.split(np.asarray(theta, dtype=float), np.cumsum(sizes)[:-1])
    A, B, C, D = (p.reshape(s) for p, s in zip(parts[:4], [(n_x, n_x), (n_x, n_u),
                                                         (n_y, n_x), (n_y, n_u)]))
    return LtiStateSpace(A, B, C, D), parts[4]


def lti_sensitivity(ss: LtiStateSpace, u, x0=None) -> np.ndarray:
    """d y(k) / d theta for theta = (vec A, vec B, vec C, vec D, x0), row-major.

    Each state-sensitivity column obeys ``s(k+1) = A s(k) + f(k)`` with a
    forcing ``f`` that depends on which entry is perturbed: ``e_i x_j(k)``
    for A_ij, ``e_i u_j(k)`` for B_ij, and an initial value ``e_i`` for x0_i.
    Returns an (N * n_y) x n_theta matrix with rows ordered sample-major.
    """
    u = _check_u(u, ss.n_u)
    y, x = simulate_lti(ss, u, x0)
    n, n_x, n_u, n_y = u.shape[0], ss.n_x, ss.n_u, ss.n_y
    pA, pB, pC, pD = n_x * n_x, n_x * n_u, n_y * n_x, n_y * n_u
    p = pA + pB + pC + pD + n_x
    forcing = np.zeros((n, n_x, p))
    for i in range(n_x):
        forcing[:, i, i * n_x:(i + 1) * n_x] = x
        forcing[:, i, pA + i * n_u:pA + (i + 1) * n_u] = u
    S = np.zeros((n_x, p))
    S[:, p - n_x:] = np.eye(n_x)
    dy = np.zeros((n, n_y, p))
    Cm, Am = ss.C, ss.A
    for k in range(n):
        dy[k] = Cm @ S
        S = Am @ S + forcing[k]
    o = pA + pB
    for i in range(n_y):
        dy[:, i, o + i * n_x:o + (i + 1) * n_x] = x
        dy[:, i, o + pC + i * n_u:o + pC + (i + 1) * n_u] = u
    return dy.reshape(n * n_y, p)


# -- subspace initialisation -------------------------------------------------

def _block_hankel(w: np.ndarray, start: int, rows: int, cols: int) -> np.ndarray:
    return np.vstack([w[start + i:start + i + cols].T for i in range(rows)])


def default_horizon(n_x: int) -> int:
    return 2 * n_x + 5


def moesp(u, y, n_x: int, horizon: Optional[int] = None):
    """PO-MOESP estimate of an order-``n_x`` model.

    Returns ``(ss, x0, singular_values)``; (B, D, x0) are the least-squares
    fit of the simulated output given (A, C).
    """
    u = np.atleast_2d(np.asarray(u, dtype=float).T).T
    y = np.atleast_2d(np.asarray(y, dtype=float).T).T
    n, n_u = u.shape
    n_y = y.shape[1]
    s = horizon or default_horizon(n_x)
    if s <= n_x:
        raise InvalidSpec("subspace horizon must exceed the model order")
    cols = n - 2 * s + 1
    if cols < 2 * s * (n_u + n_y):
        raise InsufficientData(
            f"{n} samples too few for order {n_x} with horizon {s} "
            f"(need at least {2 * s * (n_u + n_y) + 2 * s - 1})")
    Up, Uf = _block_hankel(u, 0, s, cols), _block_hankel(u, s, s, cols)
    Yp, Yf = _block_hankel(y, 0, s, cols), _block_hankel(y, s, s, cols)
    M = np.vstack([Uf, Up, Yp, Yf]) / np.sqrt(cols)
    L = np.linalg.qr(M.T, mode="r").T
    r1, r2 = s * n_u, s * n_u + s * (n_u + n_y)
    L32 = L[r2:, r1:r2]
    Us, sv, _ = np.linalg.svd(L32)
    gamma = Us[:, :n_x]
    C = gamma[:n_y]
    A = np.linalg.lstsq(gamma[:-n_y], gamma[n_y:], rcond=None)[0]
    # y is linear in (B, D, x0) once A, C are fixed: their regressors are the
    # sensitivities of the model with B = D = 0
    probe = LtiStateSpace(A, np.zeros((n_x, n_u)), C, np.zeros((n_y, n_u)))
    Jfull = lti_sensitivity(probe, u)
    pA, pC = n_x * n_x, n_y * n_x
    idx = np.r_[pA:pA + n_x * n_u, pA + n_x * n_u + pC:Jfull.shape[1]]
    sol = np.linalg.lstsq(Jfull[:, idx], y.reshape(-1), rcond=None)[0]
    B = sol[:n_x * n_u].reshape(n_x, n_u)
    D = sol[n_x * n_u:n_x * n_u + n_y * n_u].reshape(n_y, n_u)
    x0 = sol[n_x * n_u + n_y * n_u:]
    return LtiStateSpace(A, B, C, D), x0, sv


def refine_lti(ss: LtiStateSpace, u, y, x0=None, opts: LmOptions = LmOptions()):
    """Output-error refinement of all entries of (A, B, C, D) plus x0."""
    u = _check_u(u, ss.n_u)
    y = np.asarray(y, dtype=float).reshape(u.shape[0], -1)
    x0 = np.zeros(ss.n_x) if x0 is None else x0
    dims = ss.n_x, ss.n_u, ss.n_y

    def residual(theta):
        m, x0_ = _lti_unpack(theta, *dims)
        return (y - simulate_lti(m, u, x0_)[0]).reshape(-1)

    def residual_jac(theta):
        m, x0_ = _lti_unpack(theta, *dims)
        return residual(theta), -lti_sensitivity(m, u, x0_)

    theta, rep = lm_minimize(residual_jac, _lti_pack(ss, x0), opts, residual_only=residual)
    m, x0 = _lti_unpack(theta, *dims)
    return m, x0, rep


def estimate_bla(data: SignalRecord, opts: BlaOptions = BlaOptions(),
                 return_report: bool = False):
    """Order-``n_x`` best linear approximation of the record.

    Sample means are removed first when ``opts.detrend`` is set.  If the
    refinement runs into trouble the best iterate is returned and a
    ``RuntimeWarning`` is issued (``report.warning`` is set).
    """
    if data.y is None:
        raise InvalidSpec("BLA estimation needs an output record")
    u, y = np.array(data.u), np.array(data.y)
    if opts.detrend:
        u = u - u.mean(axis=0)
        y = y - y.mean(axis=0)
    if opts.n_x == 0:
        D = np.linalg.lstsq(u, y, rcond=None)[0].T
        ss = LtiStateSpace.static(D)
        return (ss, FitReport(termination="static")) if return_report else ss
    ss, x0, _ = moesp(u, y, opts.n_x, opts.horizon)
    rep = FitReport(termination="subspace_only")
    if opts.max_iter > 0:
        lm_opts = LmOptions(max_iter=opts.max_iter)
        ss, x0, rep = refine_lti(ss, u, y, x0, lm_opts)
        if rep.termination in ("lambda_max", "zero_jacobian"):
            rep.warning = True
            warnings.warn(f"BLA refinement stopped on {rep.termination}; "
                          "returning the best iterate", RuntimeWarning)
    return (ss, rep) if return_report else ss
