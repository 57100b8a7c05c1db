"""Levenberg-Marquardt with SVD-truncated steps.

Each step is taken in the column space of the Jacobian: with
``J = U S V^T`` only directions with ``s_i > svd_rel_tol * s_max`` are kept,
so parameter redundancies (state-space similarity, neuron permutations,
gain exchange between blocks) never enter the update.
"""
from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import DivergedAt, InvalidSpec, InvalidStart, LfrIdError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LmOptions:
    max_iter: int = 300
    lambda_init: float = 1.0
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    svd_rel_tol: float = 1e-9
    cost_rel_tol: float = 1e-12
    step_tol: float = 1e-12
    lambda_max: float = 1e16
    scale_columns: bool = False

    def __post_init__(self):
        vals = (self.max_iter, self.lambda_init, self.lambda_up, self.lambda_down,
                self.svd_rel_tol, self.cost_rel_tol, self.step_tol)
        if any(not v > 0 for v in vals):
            raise InvalidSpec("all LM options must be positive")
        if not self.lambda_up > 1 > self.lambda_down:
            raise InvalidSpec("need lambda_up > 1 > lambda_down")


@dataclass
class FitReport:
    """Trace of one LM run.

    ``cost[0]`` is the cost at the start point; every later entry is one
    trial step, flagged in ``accepted``.  Rejected trials that failed to
    evaluate are stored with cost ``inf``.
    """

    cost: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    damping: list = field(default_factory=list)
    rank: list = field(default_factory=list)
    theta: Optional[np.ndarray] = None
    termination: str = ""
    seeds: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    theta_trace: list = field(default_factory=list)
    warning: bool = False
    x0: Optional[np.ndarray] = None

    @property
    def n_iter(self) -> int:
        return len(self.cost) - 1

    @property
    def initial_cost(self) -> float:
        return self.cost[0]

    @property
    def final_cost(self) -> float:
        return min(c for c, a in zip(self.cost, self.accepted) if a)

    def accepted_costs(self) -> np.ndarray:
        return np.array([c for c, a in zip(self.cost, self.accepted) if a])

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "theta_trace"}
        d["theta"] = None if self.theta is None else np.asarray(self.theta).tolist()
        d["x0"] = None if self.x0 is None else np.asarray(self.x0).tolist()
        d["cost"] = [float(c) if np.isfinite(c) else None for c in self.cost]
        d["n_iter"] = self.n_iter
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def save_cost_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "cost", "accepted", "damping", "rank"])
            for i, row in enumerate(zip(self.cost, self.accepted, self.damping, self.rank)):
                w.writerow([i, *row])


_FAILURES = (LfrIdError, FloatingPointError, np.linalg.LinAlgError, OverflowError)


def _mean_sq(r: np.ndarray) -> float:
    return float(np.mean(np.square(r)))


def lm_minimize(residual_fn: Callable, theta0, opts: LmOptions = LmOptions(),
                residual_only: Optional[Callable] = None, keep_trace: bool = False):
    """Minimise ``mean(r(theta)**2)``.

    Parameters
    ----------
    residual_fn : callable
        ``theta -> (r, J)`` with ``J = dr/dtheta``.
    theta0 : array_like
        Start point.
    residual_only : callable, optional
        ``theta -> r``; used for trial points so the Jacobian is only built
        after a step is accepted.
    keep_trace : bool
        Store every accepted iterate in ``FitReport.theta_trace``.

    Returns
    -------
    theta, FitReport
    """
    theta = np.array(theta0, dtype=float)
    if residual_only is None:
        def residual_only(th):
            return residual_fn(th)[0]
    try:
        r, J = residual_fn(theta)
    except _FAILURES as exc:
        raise InvalidStart(f"residual evaluation failed at the start point: {exc}") from exc
    cost = _mean_sq(r)
    if not np.isfinite(cost) or not np.all(np.isfinite(J)):
        raise InvalidStart("non-finite residual or Jacobian at the start point")

    rep = FitReport(cost=[cost], accepted=[True], damping=[np.nan], rank=[0],
                    options=asdict(opts))
    if keep_trace:
        rep.theta_trace.append(theta.copy())
    lam = opts.lambda_init
    need_svd = True
    for _ in range(opts.max_iter):
        if cost == 0.0:
            rep.termination = "zero_cost"
            break
        if need_svd:
            if opts.scale_columns:
                scale = np.linalg.norm(J, axis=0)
                scale[scale == 0] = 1.0
            else:
                scale = np.ones(J.shape[1])
            U, s, Vt = np.linalg.svd(J / scale, full_matrices=False)
            keep = s > opts.svd_rel_tol * s[0] if s.size and s[0] > 0 else np.zeros(s.size, bool)
            rank = int(keep.sum())
            if rank == 0:
                rep.termination = "zero_jacobian"
                break
            s_r = s[keep]
            g = U[:, keep].T @ r
            V_r = Vt[keep].T / scale[:, None]
            need_svd = False
        damp = lam * s_r[0] ** 2
        step = -V_r @ (s_r / (s_r**2 + damp) * g)
        trial = theta + step
        try:
            r_t = residual_only(trial)
            cost_t = _mean_sq(r_t)
        except _FAILURES:
            cost_t = np.inf
        if not np.isfinite(cost_t):
            cost_t = np.inf
        accept = cost_t < cost
        rep.cost.append(cost_t)
        rep.accepted.append(bool(accept))
        rep.damping.append(damp)
        rep.rank.append(rank)
        small_step = np.linalg.norm(step) <= opts.step_tol * (np.linalg.norm(theta) + opts.step_tol)
        if accept:
            try:
                r_new, J_new = residual_fn(trial)
            except _FAILURES:
                # residual evaluated but the Jacobian failed; treat as a rejection
                rep.accepted[-1] = False
                lam *= opts.lambda_up
                continue
            rel_drop = (cost - cost_t) / cost
            theta, r, J, cost = trial, r_new, J_new, cost_t
            if keep_trace:
                rep.theta_trace.append(theta.copy())
            lam *= opts.lambda_down
            need_svd = True
            if rel_drop <= opts.cost_rel_tol:
                rep.termination = "cost_rel_tol"
                break
            if small_step:
                rep.termination = "step_tol"
                break
        else:
            lam *= opts.lambda_up
            if small_step:
                rep.termination = "step_tol"
                break
            if lam > opts.lambda_max:
                rep.termination = "lambda_max"
                break
    else:
        rep.termination = "max_iter"
    if not rep.termination:
        rep.termination = "max_iter"
    rep.theta = theta
    return theta, rep


def _scale_io(model, su, sy):
    """Model acting on u / su and producing y / sy."""
    return model.replace(B_u=model.B_u * su, D_zu=model.D_zu * su,
                         C_y=model.C_y / sy, D_yu=model.D_yu * su / sy, D_yw=model.D_yw / sy)


def fit_nllfr(init, data, opts: LmOptions = LmOptions(), estimate_x0: bool = False,
              x0=None, keep_trace: bool = False, normalize: bool = True):
    """Fit an NL-LFR model to ``data`` by minimising the simulation error.

    With ``estimate_x0`` the start state is optimised jointly (starting from
    ``x0``, zero by default) and returned in ``report.x0``.  A trial point
    whose simulation diverges is simply rejected.

    With ``normalize`` the optimisation runs on inputs scaled to unit std
    and outputs scaled by their overall std, so parameters affecting u and
    y are on the same footing as the (already normalised) internal signals.
    Costs in the report are always in the units of ``data.y``.
    """
    from .nllfr import output_jacobian, pack, simulate, unpack

    if data.y is None:
        raise InvalidSpec("fitting needs an output record")
    u, y = np.asarray(data.u), np.asarray(data.y)
    su, sy = np.ones(u.shape[1]), 1.0
    if normalize:
        su = np.std(u, axis=0)
        su[su == 0] = 1.0
        sy = float(np.std(y)) or 1.0
        u, y = u / su, y / sy
        init = _scale_io(init, su, sy)
    n_x = init.A.shape[0]
    x0 = np.zeros(n_x) if x0 is None else np.asarray(x0, dtype=float)
    pv = pack(init, x0 if estimate_x0 else None)

    def model_of(theta):
        m, x0_ = unpack(pv.with_theta(theta))
        return m, (x0_ if estimate_x0 else x0)

    def residual(theta):
        m, x0_ = model_of(theta)
        return (y - simulate(m, u, x0_)[0]).ravel()

    def residual_jac(theta):
        m, x0_ = model_of(theta)
        return residual(theta), -output_jacobian(m, u, x0_, estimate_x0)

    theta, rep = lm_minimize(residual_jac, pv.theta, opts, residual_only=residual,
                             keep_trace=keep_trace)
    model, x0_fit = model_of(theta)
    if normalize:
        model = _scale_io(model, 1.0 / su, 1.0 / sy)
        rep.cost = [c * sy**2 for c in rep.cost]
    rep.x0 = np.asarray(x0_fit)
    log.info("fit finished: %s after %d iterations, cost %.3e -> %.3e", rep.termination,
             rep.n_iter, rep.initial_cost, rep.final_cost)
    return model, rep
