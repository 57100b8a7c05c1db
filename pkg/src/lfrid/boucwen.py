"""Bouc-Wen hysteretic mass-spring-damper simulator.

    m y'' + c y' + k y + h = u(t)
    h' = alpha y' - beta (gamma |y'| |h|^(nu-1) h + delta y' |h|^nu)

integrated with fixed-step RK4 at ``fs * oversample``; the input is held
constant over each output sample (zero-order hold).  The absolute values make
the vector field non-smooth where y' or h change sign, which would cut RK4
to second order; substeps are therefore split at those zero crossings and
each piece is integrated with the signs frozen.  The default physical
coefficients are the ones published with the hysteretic benchmark.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numba
import numpy as np

from .errors import DivergedAt, InvalidSpec
from .signals import MultisineSpec, SignalRecord, SweepSpec, gen_multisine, gen_sweep


@dataclass(frozen=True)
class BoucWenParams:
    m_L: float = 2.0
    c_L: float = 10.0
    k_L: float = 5e4
    alpha: float = 5e4
    beta: float = 1e3
    gamma: float = 0.8
    delta: float = -1.1
    nu: float = 1.0
    fs: float = 750.0
    oversample: int = 20

    def __post_init__(self):
        if not (self.m_L > 0 and self.k_L > 0 and self.fs > 0 and self.oversample > 0):
            raise InvalidSpec("m_L, k_L, fs and oversample must be positive")
        if self.nu < 1:
            raise InvalidSpec("hysteresis exponent nu must be >= 1")

    def as_dict(self) -> dict:
        return asdict(self)


@numba.njit(cache=True, nogil=True)
def _rhs(y, v, h, u, sv, sh, m, c, k, alpha, beta, gamma, delta, nu):
    # |v| and |h| are replaced by sv*v and sh*h so the field is smooth
    ah = sh * h
    if ah < 0.0:
        ah = 0.0
    dh = alpha * v - beta * (gamma * sv * v * ah ** (nu - 1.0) * h + delta * v * ah**nu)
    return v, (u - c * v - k * y - h) / m, dh


@numba.njit(cache=True, nogil=True)
def _rk4(y, v, h, u, dt, sv, sh, m, c, k, alpha, beta, gamma, delta, nu):
    a1, b1, c1 = _rhs(y, v, h, u, sv, sh, m, c, k, alpha, beta, gamma, delta, nu)
    a2, b2, c2 = _rhs(y + 0.5 * dt * a1, v + 0.5 * dt * b1, h + 0.5 * dt * c1, u, sv, sh,
                      m, c, k, alpha, beta, gamma, delta, nu)
    a3, b3, c3 = _rhs(y + 0.5 * dt * a2, v + 0.5 * dt * b2, h + 0.5 * dt * c2, u, sv, sh,
                      m, c, k, alpha, beta, gamma, delta, nu)
    a4, b4, c4 = _rhs(y + dt * a3, v + dt * b3, h + dt * c3, u, sv, sh,
                      m, c, k, alpha, beta, gamma, delta, nu)
    w = dt / 6.0
    return (y + w * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
            v + w * (b1 + 2.0 * b2 + 2.0 * b3 + b4),
            h + w * (c1 + 2.0 * c2 + 2.0 * c3 + c4))


@numba.njit(cache=True, nogil=True)
def _sign(x, dx):
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 1.0 if dx >= 0.0 else -1.0


@numba.njit(cache=True, nogil=True)
def _substep(y, v, h, u, dt, m, c, k, alpha, beta, gamma, delta, nu):
    """One RK4 substep, split at zero crossings of v and h."""
    left = dt
    for _ in range(16):
        sv = _sign(v, (u - c * v - k * y - h) / m)
        sh = _sign(h, alpha * v)
        y1, v1, h1 = _rk4(y, v, h, u, left, sv, sh, m, c, k, alpha, beta, gamma, delta, nu)
        cross_v = sv * v1 < 0.0
        cross_h = sh * h1 < 0.0
        if not (cross_v or cross_h):
            return y1, v1, h1
        # bisect for the earliest crossing of the frozen-sign solution
        lo, hi = 0.0, left
        while hi - lo > 1e-13 * dt:
            mid = 0.5 * (lo + hi)
            ym, vm, hm = _rk4(y, v, h, u, mid, sv, sh, m, c, k, alpha, beta, gamma, delta, nu)
            if (cross_v and sv * vm < 0.0) or (cross_h and sh * hm < 0.0):
                hi = mid
            else:
                lo = mid
        y2, v2, h2 = _rk4(y, v, h, u, hi, sv, sh, m, c, k, alpha, beta, gamma, delta, nu)
        if sv * v2 <= 0.0:
            v2 = 0.0
        if sh * h2 <= 0.0:
            h2 = 0.0
        y, v, h = y2, v2, h2
        left -= hi
        if left <= 0.0:
            break
    if left > 0.0:
        sv = _sign(v, (u - c * v - k * y - h) / m)
        sh = _sign(h, alpha * v)
        y, v, h = _rk4(y, v, h, u, left, sv, sh, m, c, k, alpha, beta, gamma, delta, nu)
    return y, v, h


@numba.njit(cache=True, nogil=True)
def _integrate(u, s0, dt, oversample, m, c, k, alpha, beta, gamma, delta, nu):
    n = u.shape[0]
    out = np.empty((n, 3))
    y, v, h = s0[0], s0[1], s0[2]
    hs = dt / oversample
    for i in range(n):
        out[i, 0] = y
        out[i, 1] = v
        out[i, 2] = h
        for _ in range(oversample):
            y, v, h = _substep(y, v, h, u[i], hs, m, c, k, alpha, beta, gamma, delta, nu)
        if not (np.isfinite(y) and np.isfinite(v) and np.isfinite(h)):
            return out, np.array([y, v, h]), i + 1
    return out, np.array([y, v, h]), -1


def simulate_states(p: BoucWenParams, u, s0=None):
    """Return the (displacement, velocity, hysteretic force) trajectory, N x 3,
    and the state after the last sample.

    Row k holds the state at t = k / fs, before input sample k is applied.
    """
    u = np.ascontiguousarray(np.asarray(u, dtype=float).reshape(-1))
    s0 = np.zeros(3) if s0 is None else np.asarray(s0, dtype=float)
    states, s_end, bad = _integrate(u, s0, 1.0 / p.fs, int(p.oversample), p.m_L, p.c_L,
                                    p.k_L, p.alpha, p.beta, p.gamma, p.delta, p.nu)
    if bad >= 0:
        raise DivergedAt(bad, partial=states[:bad])
    return states, s_end


def simulate_boucwen(p: BoucWenParams, force: SignalRecord, settle_periods: int = 0,
                     noise_std: float = 0.0, noise_seed: Optional[int] = None,
                     return_states: bool = False):
    """Simulate the displacement response to a single-channel force record.

    For periodic records ``settle_periods`` extra periods are run first and
    discarded so the returned output is the steady-state response.
    """
    if force.n_u != 1:
        raise InvalidSpec("Bouc-Wen force must be a single channel")
    if not np.isclose(force.fs, p.fs):
        raise InvalidSpec(f"force sampled at {force.fs} Hz, simulator runs at {p.fs} Hz")
    u = force.u[:, 0]
    s0 = None
    if settle_periods > 0:
        period = u[: force.period_length]
        _, s0 = simulate_states(p, np.tile(period, settle_periods))
    states, _ = simulate_states(p, u, s0=s0)
    y = states[:, :1].copy()
    if noise_std > 0:
        y = y + np.random.default_rng(noise_seed).normal(0.0, noise_std, size=y.shape)
    rec = force.with_output(y)
    return (rec, states) if return_states else rec


ESTIMATION_BAND = (5.0, 150.0)
N_PERIOD = 8192
SWEEP_BAND = (20.0, 50.0)
SWEEP_RATE = 10.0  # Hz/min


def make_boucwen_dataset(seed: int, amplitude_rms: float, kind: str = "multisine",
                         params: Optional[BoucWenParams] = None, settle_periods: int = 2,
                         noise_std: float = 0.0) -> SignalRecord:
    """Benchmark-style dataset: a steady-state multisine period or a sweep
    from rest (20 -> 50 Hz at 10 Hz/min)."""
    p = params or BoucWenParams()
    if kind == "multisine":
        force = gen_multisine(MultisineSpec(N_PERIOD, p.fs, *ESTIMATION_BAND,
                                            amplitude_rms, seed))
        return simulate_boucwen(p, force, settle_periods, noise_std, seed + 1)
    if kind == "sweep":
        force = gen_sweep(SweepSpec(*SWEEP_BAND, SWEEP_RATE, amplitude_rms, p.fs))
        return simulate_boucwen(p, force, 0, noise_std, seed + 1)
    raise InvalidSpec(f"unknown dataset kind {kind!r}")
