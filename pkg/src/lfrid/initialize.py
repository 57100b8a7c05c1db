"""Initial NL-LFR parameters from a single state-space BLA.

The BLA is put in coordinates where every state has unit sample standard
deviation on the estimation input.  Its matrices become the linear part of
the NL-LFR, the feedback path is opened (B_w = 0, D_yw = 0, b_w = 0) and the
network weights are drawn uniformly.  C_z and D_zu are random too, but
rescaled so that every z channel has unit standard deviation on the
estimation record.  The initial model therefore reproduces the BLA output
exactly, whatever the draws.

Standard deviations use the 1/N convention.  Draw order from
``numpy.random.default_rng(seed)``: W_w, W_z, b_z, C_*, D_+.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateChannel, DegenerateState, InvalidSpec, UnstableBla
from .lti import LtiStateSpace, is_stable, simulate_lti
from .nllfr import ACTIVATIONS, NeuralNet, NlLfrModel

EPS_STD = 1e-12


@dataclass(frozen=True)
class InitSpec:
    n_z: int = 1
    n_w: int = 1
    n_n: int = 15
    activation: str = "tanh"
    seed: int = 0
    bound: float = 1.0

    def __post_init__(self):
        if min(self.n_z, self.n_w, self.n_n) < 1:
            raise InvalidSpec("n_z, n_w and n_n must be at least 1")
        if self.activation not in ACTIVATIONS:
            raise InvalidSpec(f"unknown activation {self.activation!r}")
        if not self.bound > 0:
            raise InvalidSpec("uniform bound must be positive")


@dataclass(frozen=True)
class NormalizingTransforms:
    """Diagonal scalings (inverse standard deviations) used by the init.

    ``x0`` is the simulation start state expressed in the normalised
    coordinates.
    """

    T: np.ndarray
    T_u: np.ndarray
    T_z: np.ndarray
    x0: np.ndarray


def periodic_x0(ss: LtiStateSpace, u) -> np.ndarray:
    """Start state that makes the response to a periodic ``u`` (one period
    given) periodic: x0 = A^N x0 + sum_j A^(N-1-j) B u(j)."""
    u = np.asarray(u, dtype=float).reshape(len(u), -1)
    _, x = simulate_lti(ss, np.vstack([u, np.zeros((1, ss.n_u))]))
    x_end = x[-1]
    AN = np.linalg.matrix_power(ss.A, u.shape[0])
    return np.linalg.solve(np.eye(ss.n_x) - AN, x_end)


def _std(a: np.ndarray) -> np.ndarray:
    return np.std(a, axis=0)


def normalize_bla(bla: LtiStateSpace, u, x0=None, eps_std: float = EPS_STD):
    """Similarity-transform the BLA so each simulated state has unit std.

    Returns ``(normalised_bla, T)`` with ``T = diag(1 / std(x))``; the
    state of the new model is ``T x``.
    """
    if not is_stable(bla):
        raise UnstableBla("BLA has poles on or outside the unit circle")
    _, x = simulate_lti(bla, u, x0)
    sd = _std(x)
    if np.any(sd < eps_std):
        raise DegenerateState(f"state standard deviations {sd} fall below {eps_std}")
    T = np.diag(1.0 / sd)
    return bla.transform(T), T


def init_nllfr(bla: LtiStateSpace, u, spec: InitSpec, x0=None,
               return_transforms: bool = False, eps_std: float = EPS_STD):
    """Embed the BLA in an NL-LFR with an open feedback loop.

    ``x0`` is the BLA start state for the simulations used to measure the
    standard deviations (zero by default).
    """
    u = np.asarray(u, dtype=float)
    u = u.reshape(len(u), -1)
    bla_n, T = normalize_bla(bla, u, x0, eps_std)
    x0_n = np.zeros(bla.n_x) if x0 is None else T @ np.asarray(x0, dtype=float)
    _, x = simulate_lti(bla_n, u, x0_n)

    n_x, n_u, n_y = bla.n_x, bla.n_u, bla.n_y
    rng = np.random.default_rng(spec.seed)
    b = spec.bound
    W_w = rng.uniform(-b, b, size=(spec.n_w, spec.n_n))
    W_z = rng.uniform(-b, b, size=(spec.n_n, spec.n_z))
    b_z = rng.uniform(-b, b, size=spec.n_n)
    C_s = rng.uniform(-b, b, size=(spec.n_z, n_x))
    D_p = rng.uniform(-b, b, size=(spec.n_z, n_u))

    su = _std(u)
    if np.any(su < eps_std):
        raise DegenerateChannel("an input channel has (near) zero variance")
    T_u = np.diag(1.0 / su)
    D_s = D_p @ T_u
    z_s = x @ C_s.T + u @ D_s.T
    sz = _std(z_s)
    if np.any(sz < eps_std):
        raise DegenerateChannel(f"z channel std {sz} below {eps_std}; redraw with another seed")
    T_z = np.diag(1.0 / sz)

    net = NeuralNet(W_z, b_z, W_w, np.zeros(spec.n_w), spec.activation)
    model = NlLfrModel(A=bla_n.A, B_u=bla_n.B, B_w=np.zeros((n_x, spec.n_w)),
                       C_z=T_z @ C_s, C_y=bla_n.C, D_zu=T_z @ D_s, D_yu=bla_n.D,
                       D_yw=np.zeros((n_y, spec.n_w)), net=net)
    if return_transforms:
        return model, NormalizingTransforms(T, T_u, T_z, x0_n)
    return model
