"""Shared fixtures-as-functions for the test suite."""
import numpy as np

from lfrid.nllfr import NeuralNet, NlLfrModel, pack, simulate, unpack


def random_model(rng, n_x=2, n_u=1, n_y=1, n_z=1, n_w=1, n_n=3, act="tanh", radius=0.7):
    """Random NL-LFR whose linear part has spectral radius ``radius``."""
    A = rng.normal(size=(n_x, n_x))
    A *= radius / max(np.abs(np.linalg.eigvals(A)).max(), 1e-12)

    def r(*shape):
        return 0.5 * rng.normal(size=shape)

    net = NeuralNet(r(n_n, n_z), r(n_n), r(n_w, n_n), r(n_w), act)
    return NlLfrModel(A, r(n_x, n_u), r(n_x, n_w), r(n_z, n_x), r(n_y, n_x), r(n_z, n_u),
                      r(n_y, n_u), r(n_y, n_w), net)


def fd_jacobian(model, u, x0, with_x0=False, h=None):
    """Central finite differences of the simulated output w.r.t. the packed parameters.

    The default step eps**(1/3) * max(1, |theta_j|) balances truncation and
    round-off error of the central difference.
    """
    pv = pack(model, x0 if with_x0 else None)
    cols = []
    for j in range(pv.theta.size):
        hj = np.cbrt(np.finfo(float).eps) * max(1.0, abs(pv.theta[j])) if h is None else h
        tp, tm = pv.theta.copy(), pv.theta.copy()
        tp[j] += hj
        tm[j] -= hj
        mp, xp = unpack(pv.with_theta(tp))
        mm, xm = unpack(pv.with_theta(tm))
        yp = simulate(mp, u, xp if with_x0 else x0)[0]
        ym = simulate(mm, u, xm if with_x0 else x0)[0]
        cols.append((yp - ym).ravel() / (2 * hj))
    return np.column_stack(cols)


def synthetic_truth():
    """Stable 2-state NL-LFR with one tanh neuron in the loop."""
    from lfrid.nllfr import NeuralNet

    A = np.array([[0.7, 0.3], [-0.3, 0.7]])
    return NlLfrModel(A, [[1.0], [0.5]], [[0.8], [-0.6]], [[1.0, 0.5]], [[1.0, -0.4]],
                      [[0.3]], [[0.1]], [[0.5]], NeuralNet([[1.5]], [0.2], [[1.0]], [0.0]))


def write_synthetic_csv(folder, n=4096, seeds=(0, 1), names=("est", "test")):
    """Steady-state multisine records of :func:`synthetic_truth` as CSV files."""
    from lfrid.signals import MultisineSpec, SignalRecord, gen_multisine, save_record

    truth = synthetic_truth()
    paths = []
    for name, seed in zip(names, seeds):
        f = gen_multisine(MultisineSpec(n, 1.0, 0.5 / n, 0.4, 1.0, seed))
        y = simulate(truth, np.vstack([f.u] * 3))[0][-n:]
        paths.append(save_record(SignalRecord(f.u, y, 1.0, 1, "multisine"), folder / name))
    return paths


def synthetic_config(folder, restarts=5, max_iter=200, n_n=10, **model):
    """Pipeline config (dict) for the CSV files written by :func:`write_synthetic_csv`."""
    return {"name": "synthetic",
            "data": {"source": "csv", "estimation_path": str(folder / "est.csv"),
                     "n_u": 1, "n_y": 1,
                     "tests": [{"name": "test", "mode": "steady-state",
                                "path": str(folder / "test.csv")}]},
            "bla": {"n_x": 2},
            "model": {"structures": [[1, 1]], "n_n": n_n, "restarts": restarts, **model},
            "lm": {"max_iter": max_iter}}
