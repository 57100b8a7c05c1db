"""Nonlinear LFR model: an LTI block whose auxiliary output z is fed back
through a one-hidden-layer network into the auxiliary input w.

    x(k+1) = A x + B_u u + B_w w
    z(k)   = C_z x + D_zu u
    y(k)   = C_y x + D_yu u + D_yw w
    w(k)   = W_w act(W_z z + b_z) + b_w

There is no z <- w feedthrough, so every sample is computed explicitly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numba
import numpy as np

from .errors import DimMismatch, DivergedAt, InvalidSpec, LayoutError

ACTIVATIONS = {"tanh": 0, "rbf": 1, "linear": 2}
FORMAT_VERSION = 1


def _frozen(a, ndim):
    a = np.array(a, dtype=float)
    if ndim == 2:
        a = np.atleast_2d(a)
    else:
        a = a.reshape(-1)
    a.setflags(write=False)
    return a


def activation(a, kind: str = "tanh"):
    """Return (act(a), act'(a))."""
    if kind == "tanh":
        t = np.tanh(a)
        return t, 1.0 - t * t
    if kind == "rbf":
        e = np.exp(-a * a)
        return e, -2.0 * a * e
    if kind == "linear":
        return a, np.ones_like(a)
    raise InvalidSpec(f"unknown activation {kind!r}")


@dataclass(frozen=True)
class NeuralNet:
    W_z: np.ndarray  # n_n x n_z
    b_z: np.ndarray  # n_n
    W_w: np.ndarray  # n_w x n_n
    b_w: np.ndarray  # n_w
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "W_z", _frozen(self.W_z, 2))
        object.__setattr__(self, "b_z", _frozen(self.b_z, 1))
        object.__setattr__(self, "W_w", _frozen(self.W_w, 2))
        object.__setattr__(self, "b_w", _frozen(self.b_w, 1))
        n_n = self.W_z.shape[0]
        if n_n < 1 or self.b_z.shape != (n_n,) or self.W_w.shape[1] != n_n \
                or self.b_w.shape != (self.W_w.shape[0],):
            raise DimMismatch("inconsistent network dimensions")
        if self.activation not in ACTIVATIONS:
            raise InvalidSpec(f"unknown activation {self.activation!r}")

    @property
    def n_n(self):
        return self.W_z.shape[0]

    @property
    def n_z(self):
        return self.W_z.shape[1]

    @property
    def n_w(self):
        return self.W_w.shape[0]


def eval_nn(net: NeuralNet, z):
    """Network output w and its Jacobian dw/dz at a single point z."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape != (net.n_z,):
        raise DimMismatch(f"z must have length {net.n_z}")
    s, ds = activation(net.W_z @ z + net.b_z, net.activation)
    return net.W_w @ s + net.b_w, (net.W_w * ds) @ net.W_z


_MATS = ("A", "B_u", "B_w", "C_z", "C_y", "D_zu", "D_yu", "D_yw")
_NET = ("W_z", "b_z", "W_w", "b_w")


@dataclass(frozen=True)
class NlLfrModel:
    A: np.ndarray
    B_u: np.ndarray
    B_w: np.ndarray
    C_z: np.ndarray
    C_y: np.ndarray
    D_zu: np.ndarray
    D_yu: np.ndarray
    D_yw: np.ndarray
    net: NeuralNet

    def __post_init__(self):
        for name in _MATS:
            object.__setattr__(self, name, _frozen(getattr(self, name), 2))
        n_x, n_u, n_w = self.A.shape[0], self.B_u.shape[1], self.B_w.shape[1]
        n_z, n_y = self.C_z.shape[0], self.C_y.shape[0]
        expected = {"A": (n_x, n_x), "B_u": (n_x, n_u), "B_w": (n_x, n_w),
                    "C_z": (n_z, n_x), "C_y": (n_y, n_x), "D_zu": (n_z, n_u),
                    "D_yu": (n_y, n_u), "D_yw": (n_y, n_w)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimMismatch(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.net.n_z != n_z or self.net.n_w != n_w:
            raise DimMismatch("network dimensions do not match the LTI block")

    @property
    def dims(self) -> dict:
        return {"n_x": self.A.shape[0], "n_u": self.B_u.shape[1], "n_y": self.C_y.shape[0],
                "n_z": self.C_z.shape[0], "n_w": self.B_w.shape[1], "n_n": self.net.n_n}

    def replace(self, **kw) -> "NlLfrModel":
        fields = {name: getattr(self, name) for name in _MATS}
        fields["net"] = self.net
        net_kw = {k: kw.pop(k) for k in list(kw) if k in _NET or k == "activation"}
        if net_kw:
            base = {k: getattr(self.net, k) for k in _NET + ("activation",)}
            base.update(net_kw)
            fields["net"] = NeuralNet(**base)
        fields.update(kw)
        return NlLfrModel(**fields)

    def to_dict(self) -> dict:
        d = {"type": "NlLfrModel", "version": FORMAT_VERSION, "dims": self.dims,
             "activation": self.net.activation}
        for name in _MATS:
            m = getattr(self, name)
            d[name] = {"shape": list(m.shape), "data": m.ravel().tolist()}
        for name in _NET:
            m = getattr(self.net, name)
            d[name] = {"shape": list(m.shape), "data": m.ravel().tolist()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NlLfrModel":
        if d.get("version") != FORMAT_VERSION:
            raise LayoutError(f"unsupported model format version {d.get('version')}")

        def arr(k):
            return np.array(d[k]["data"], dtype=float).reshape(d[k]["shape"])

        net = NeuralNet(*(arr(k) for k in _NET), activation=d["activation"])
        return cls(*(arr(k) for k in _MATS), net=net)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "NlLfrModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- parameter vector ----------------------------------------------------------

@dataclass(frozen=True)
class ParamVector:
    """Flat parameters plus the (name, shape) layout they unpack to.

    Order: A, B_u, B_w, C_z, C_y, D_zu, D_yu, D_yw, W_z, b_z, W_w, b_w and,
    when present, x0.  Matrices are stored row-major.
    """

    theta: np.ndarray
    layout: tuple
    activation: str = "tanh"

    @property
    def has_x0(self) -> bool:
        return self.layout[-1][0] == "x0"

    def slices(self) -> dict:
        out, start = {}, 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            out[name] = slice(start, start + size)
            start += size
        return out

    def with_theta(self, theta) -> "ParamVector":
        return ParamVector(np.asarray(theta, dtype=float), self.layout, self.activation)


def layout_of(model: NlLfrModel, with_x0: bool = False) -> tuple:
    lay = [(n, getattr(model, n).shape) for n in _MATS]
    lay += [(n, getattr(model.net, n).shape) for n in _NET]
    if with_x0:
        lay.append(("x0", (model.A.shape[0],)))
    return tuple(lay)


def n_params(dims: dict, with_x0: bool = False) -> int:
    n_x, n_u, n_y, n_z, n_w, n_n = (dims[k] for k in ("n_x", "n_u", "n_y", "n_z", "n_w", "n_n"))
    n = (n_x * n_x + n_x * n_u + n_x * n_w + n_z * n_x + n_y * n_x + n_z * n_u
         + n_y * n_u + n_y * n_w + n_n * n_z + n_n + n_w * n_n + n_w)
    return n + (n_x if with_x0 else 0)


def pack(model: NlLfrModel, x0=None) -> ParamVector:
    parts = [getattr(model, n).ravel() for n in _MATS] + [getattr(model.net, n).ravel() for n in _NET]
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        if x0.shape != (model.A.shape[0],):
            raise LayoutError("x0 length does not match the state dimension")
        parts.append(x0)
    return ParamVector(np.concatenate(parts), layout_of(model, x0 is not None),
                       model.net.activation)


def unpack(pv: ParamVector):
    """Inverse of :func:`pack`; returns (model, x0 or None)."""
    theta = np.asarray(pv.theta, dtype=float).reshape(-1)
    sl = pv.slices()
    total = max(s.stop for s in sl.values())
    if theta.size != total:
        raise LayoutError(f"parameter vector has {theta.size} entries, layout needs {total}")
    shape = dict(pv.layout)
    get = {n: theta[s].reshape(shape[n]) for n, s in sl.items()}
    net = NeuralNet(*(get[n] for n in _NET), activation=pv.activation)
    model = NlLfrModel(*(get[n] for n in _MATS), net=net)
    return model, (get["x0"].copy() if pv.has_x0 else None)


# -- simulation and sensitivities ---------------------------------------------

@numba.njit(cache=True, nogil=True)
def _act(a, kind):
    n = a.shape[0]
    s = np.empty(n)
    ds = np.empty(n)
    for i in range(n):
        if kind == 0:
            t = np.tanh(a[i])
            s[i] = t
            ds[i] = 1.0 - t * t
        elif kind == 1:
            e = np.exp(-a[i] * a[i])
            s[i] = e
            ds[i] = -2.0 * a[i] * e
        else:
            s[i] = a[i]
            ds[i] = 1.0
    return s, ds


@numba.njit(cache=True, nogil=True)
def _sim_kernel(A, Bu, Bw, Cz, Cy, Dzu, Dyu, Dyw, Wz, bz, Ww, bw, kind, u, x0):
    n = u.shape[0]
    X = np.zeros((n, A.shape[0]))
    Y = np.zeros((n, Cy.shape[0]))
    Z = np.zeros((n, Cz.shape[0]))
    W = np.zeros((n, Bw.shape[1]))
    x = x0.copy()
    for k in range(n):
        uk = u[k]
        z = Cz @ x + Dzu @ uk
        s, _ = _act(Wz @ z + bz, kind)
        w = Ww @ s + bw
        y = Cy @ x + Dyu @ uk + Dyw @ w
        X[k] = x
        Z[k] = z
        W[k] = w
        Y[k] = y
        ok = True
        for v in y:
            ok = ok and np.isfinite(v)
        if not ok:
            return Y, Z, W, X, k
        x = A @ x + Bu @ uk + Bw @ w
        for v in x:
            ok = ok and np.isfinite(v)
        if not ok:
            return Y, Z, W, X, k + 1
    return Y, Z, W, X, -1


@numba.njit(cache=True, nogil=True)
def _jac_kernel(A, Bu, Bw, Cz, Cy, Dzu, Dyu, Dyw, Wz, bz, Ww, bw, kind, u, x0, with_x0):
    n, n_u = u.shape
    n_x = A.shape[0]
    n_w = Bw.shape[1]
    n_z = Cz.shape[0]
    n_y = Cy.shape[0]
    n_n = Wz.shape[0]
    # column offsets, same order as the packed layout
    oA = 0
    oBu = oA + n_x * n_x
    oBw = oBu + n_x * n_u
    oCz = oBw + n_x * n_w
    oCy = oCz + n_z * n_x
    oDzu = oCy + n_y * n_x
    oDyu = oDzu + n_z * n_u
    oDyw = oDyu + n_y * n_u
    oWz = oDyw + n_y * n_w
    obz = oWz + n_n * n_z
    oWw = obz + n_n
    obw = oWw + n_w * n_n
    ox0 = obw + n_w
    p = ox0 + (n_x if with_x0 else 0)

    J = np.zeros((n * n_y, p))
    S = np.zeros((n_x, p))
    if with_x0:
        for i in range(n_x):
            S[i, ox0 + i] = 1.0
    x = x0.copy()
    for k in range(n):
        uk = u[k]
        z = Cz @ x + Dzu @ uk
        a = Wz @ z + bz
        s, ds = _act(a, kind)
        w = Ww @ s + bw

        dz = Cz @ S
        for i in range(n_z):
            for j in range(n_x):
                dz[i, oCz + i * n_x + j] += x[j]
            for j in range(n_u):
                dz[i, oDzu + i * n_u + j] += uk[j]
        da = Wz @ dz
        for i in range(n_n):
            for j in range(n_z):
                da[i, oWz + i * n_z + j] += z[j]
            da[i, obz + i] += 1.0
        for i in range(n_n):
            da[i] *= ds[i]
        dw = Ww @ da
        for i in range(n_w):
            for j in range(n_n):
                dw[i, oWw + i * n_n + j] += s[j]
            dw[i, obw + i] += 1.0

        dy = Cy @ S + Dyw @ dw
        for i in range(n_y):
            for j in range(n_x):
                dy[i, oCy + i * n_x + j] += x[j]
            for j in range(n_u):
                dy[i, oDyu + i * n_u + j] += uk[j]
            for j in range(n_w):
                dy[i, oDyw + i * n_w + j] += w[j]
        J[k * n_y:(k + 1) * n_y] = dy

        S_next = A @ S + Bw @ dw
        for i in range(n_x):
            for j in range(n_x):
                S_next[i, oA + i * n_x + j] += x[j]
            for j in range(n_u):
                S_next[i, oBu + i * n_u + j] += uk[j]
            for j in range(n_w):
                S_next[i, oBw + i * n_w + j] += w[j]
        S = S_next
        x = A @ x + Bu @ uk + Bw @ w
        ok = True
        for v in x:
            ok = ok and np.isfinite(v)
        if not ok:
            return J, k + 1
    return J, -1


def _kernel_args(model: NlLfrModel):
    c = np.ascontiguousarray
    net = model.net
    return tuple(c(getattr(model, n)) for n in _MATS) + (
        c(net.W_z), c(net.b_z), c(net.W_w), c(net.b_w), ACTIVATIONS[net.activation])


def _prep(model: NlLfrModel, u, x0):
    d = model.dims
    u = np.ascontiguousarray(np.asarray(u, dtype=float))
    if u.ndim == 1:
        u = u[:, None]
    if u.ndim != 2 or u.shape[1] != d["n_u"]:
        raise DimMismatch(f"input has shape {u.shape}, model expects {d['n_u']} channels")
    x0 = np.zeros(d["n_x"]) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (d["n_x"],):
        raise DimMismatch(f"x0 must have length {d['n_x']}")
    return u, x0


def simulate(model: NlLfrModel, u, x0=None):
    """Simulate the model; returns (y, z, w, x), each N x channels.

    Raises :class:`DivergedAt` with the partial trajectory when a
    non-finite value appears.
    """
    u, x0 = _prep(model, u, x0)
    Y, Z, W, X, bad = _sim_kernel(*_kernel_args(model), u, x0)
    if bad >= 0:
        raise DivergedAt(bad, partial=(Y[:bad], Z[:bad], W[:bad], X[:bad]))
    return Y, Z, W, X


def output_jacobian(model: NlLfrModel, u, x0=None, estimate_x0: bool = False) -> np.ndarray:
    """d y_hat / d theta by forward sensitivity propagation.

    Rows are ordered ``k * n_y + i``; columns follow :func:`pack`, with the
    x0 block appended when ``estimate_x0`` is set.
    """
    u, x0 = _prep(model, u, x0)
    J, bad = _jac_kernel(*_kernel_args(model), u, x0, bool(estimate_x0))
    if bad >= 0 or not np.all(np.isfinite(J)):
        raise DivergedAt(bad if bad >= 0 else u.shape[0])
    return J
