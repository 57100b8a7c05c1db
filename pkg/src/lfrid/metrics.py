"""Simulation-error metrics and plot-data tables.

Models are always scored in free-run simulation from the zero state.  Two
test protocols are supported:

steady-state
    The record holds one period of a periodic input.  Two periods are
    simulated and only the second is scored, so start-up transients drop out.
transient
    The record is simulated once and the first ``discard_n`` samples are
    left out of the score.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DimMismatch, DivergedAt, EmptyEvaluation, InvalidSpec
from .lti import LtiStateSpace, simulate_lti
from .nllfr import NlLfrModel, simulate
from .signals import SignalRecord

MODES = ("steady-state", "transient")
Model = Union[LtiStateSpace, NlLfrModel]


def rmse(y, y_hat) -> np.ndarray:
    """Root-mean-square error per output channel."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise DimMismatch(f"shapes {y.shape} and {y_hat.shape} differ")
    y = y.reshape(len(y), -1)
    y_hat = y_hat.reshape(len(y_hat), -1)
    return np.sqrt(np.mean((y - y_hat) ** 2, axis=0))


def simulate_any(model: Model, u) -> np.ndarray:
    """Free-run output of an LTI or NL-LFR model from the zero state."""
    if not isinstance(model, LtiStateSpace):
        return simulate(model, u)[0]
    y = simulate_lti(model, u)[0]
    bad = np.flatnonzero(~np.all(np.isfinite(y), axis=1))
    if bad.size:
        raise DivergedAt(int(bad[0]), partial=(y[:bad[0]],))
    return y


@dataclass
class Evaluation:
    """Scored simulation of one model on one test record.

    ``y`` and ``y_hat`` hold the scored window only.  ``valid`` is False when
    the simulation diverged; the RMSE then covers the finite prefix.
    """

    rmse: np.ndarray
    y: np.ndarray
    y_hat: np.ndarray
    fs: float
    valid: bool = True

    @property
    def total_rmse(self) -> float:
        """RMSE over all channels together (equals ``rmse`` for one output)."""
        return float(np.sqrt(np.mean(self.rmse**2)))


def evaluate_model(model: Model, test: SignalRecord, mode: str = "steady-state",
                   discard_n: int = 2000) -> Evaluation:
    """Score ``model`` on ``test`` with one of the two protocols.

    Raises
    ------
    EmptyEvaluation
        If nothing is left to score.
    DivergedAt
        If the simulation blows up.  ``err.partial`` is then an
        :class:`Evaluation` with ``valid=False`` scored on the finite prefix
        (or None when the prefix lies inside the discarded part).
    """
    if test.y is None:
        raise InvalidSpec("test record has no output")
    if mode not in MODES:
        raise InvalidSpec(f"unknown evaluation mode {mode!r}")
    if mode == "steady-state":
        period = test.period_length
        u = np.vstack([test.u[:period]] * 2)
        y = test.y[:period]
        start = period
    else:
        if discard_n >= test.n_samples:
            raise EmptyEvaluation(f"discard_n={discard_n} leaves no samples of {test.n_samples}")
        u, y, start = test.u, test.y[discard_n:], discard_n
    try:
        y_sim = simulate_any(model, u)
    except DivergedAt as err:
        partial = None
        y_part = np.asarray(err.partial[0] if isinstance(err.partial, tuple) else err.partial)
        n_ok = min(len(y_part), start + len(y)) - start
        if n_ok > 0:
            with np.errstate(over="ignore"):
                partial = Evaluation(rmse(y[:n_ok], y_part[start:start + n_ok]), y[:n_ok],
                                     y_part[start:start + n_ok], test.fs, valid=False)
        raise DivergedAt(err.k, partial=partial) from err
    y_hat = y_sim[start:start + len(y)]
    return Evaluation(rmse(y, y_hat), np.array(y), y_hat, test.fs)


def residual_trace(ev: Evaluation) -> tuple[list[str], np.ndarray]:
    """Time-domain table: time, then measured, simulated and error per channel."""
    n, n_y = ev.y.shape
    t = np.arange(n) / ev.fs
    e = ev.y - ev.y_hat
    header = ["t"]
    cols = [t[:, None]]
    for i in range(n_y):
        header += [f"y{i}", f"y_hat{i}", f"e{i}"]
        cols += [ev.y[:, i:i + 1], ev.y_hat[:, i:i + 1], e[:, i:i + 1]]
    return header, np.hstack(cols)


def residual_spectrum(ev: Evaluation) -> tuple[list[str], np.ndarray]:
    """One-sided DFT magnitudes (dB, normalised by N) of output and error."""
    n, n_y = ev.y.shape
    k = np.arange(n // 2 + 1)
    tiny = np.finfo(float).tiny
    header = ["f_hz"]
    cols = [(k * ev.fs / n)[:, None]]
    for i in range(n_y):
        Y = np.abs(np.fft.rfft(ev.y[:, i])) / n
        E = np.abs(np.fft.rfft(ev.y[:, i] - ev.y_hat[:, i])) / n
        header += [f"output_db{i}", f"error_db{i}"]
        cols += [20 * np.log10(np.maximum(Y, tiny))[:, None],
                 20 * np.log10(np.maximum(E, tiny))[:, None]]
    return header, np.hstack(cols)
