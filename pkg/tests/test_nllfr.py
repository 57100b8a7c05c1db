import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lfrid.errors import DimMismatch, DivergedAt, LayoutError
from lfrid.lti import LtiStateSpace, lti_sensitivity, simulate_lti
from lfrid.nllfr import (NeuralNet, NlLfrModel, eval_nn, n_params, output_jacobian, pack,
                         simulate, unpack)

from helpers import fd_jacobian, random_model


def test_zero_outer_weights():
    net = NeuralNet(np.ones((4, 2)), np.ones(4), np.zeros((3, 4)), [1.0, -2.0, 0.5])
    for z in ([0.0, 0.0], [3.0, -1.0]):
        w, _ = eval_nn(net, z)
        assert np.array_equal(w, [1.0, -2.0, 0.5])


def test_scalar_tanh_at_origin():
    w, jac = eval_nn(NeuralNet([[1.0]], [0.0], [[1.0]], [0.0]), [0.0])
    assert w[0] == 0.0 and jac[0, 0] == 1.0


@pytest.mark.parametrize("act", ["tanh", "rbf"])
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), n_z=st.integers(1, 3), n_w=st.integers(1, 3),
       n_n=st.integers(1, 8))
def test_eval_nn_jacobian(act, seed, n_z, n_w, n_n):
    rng = np.random.default_rng(seed)
    net = NeuralNet(rng.normal(size=(n_n, n_z)), rng.normal(size=n_n),
                    rng.normal(size=(n_w, n_n)), rng.normal(size=n_w), act)
    z = rng.normal(size=n_z)
    _, jac = eval_nn(net, z)
    h = 1e-6
    fd = np.column_stack([(eval_nn(net, z + h * e)[0] - eval_nn(net, z - h * e)[0]) / (2 * h)
                          for e in np.eye(n_z)])
    assert np.linalg.norm(jac - fd) <= 1e-8 * max(np.linalg.norm(fd), 1.0)


def test_disconnected_path_equals_lti():
    m = random_model(np.random.default_rng(0), n_x=3, n_u=2, n_y=2, n_z=2, n_w=2)
    m = m.replace(B_w=np.zeros((3, 2)), D_yw=np.zeros((2, 2)))
    u = np.random.default_rng(1).normal(size=(200, 2))
    x0 = np.array([0.1, -0.2, 0.3])
    y, _, _, x = simulate(m, u, x0)
    y_lti, x_lti = simulate_lti(LtiStateSpace(m.A, m.B_u, m.C_y, m.D_yu), u, x0)
    assert np.array_equal(y, y_lti)
    assert np.array_equal(x, x_lti)


def test_identity_activation_closes_to_lti():
    rng = np.random.default_rng(2)
    m = random_model(rng, n_x=2, n_u=1, n_y=1, n_z=2, n_w=1, n_n=3).replace(activation="linear")
    net = m.net
    G = net.W_w @ net.W_z
    c = net.W_w @ net.b_z + net.b_w
    # constant term enters as a second input fixed at 1
    A = m.A + m.B_w @ G @ m.C_z
    B = np.hstack([m.B_u + m.B_w @ G @ m.D_zu, (m.B_w @ c)[:, None]])
    C = m.C_y + m.D_yw @ G @ m.C_z
    D = np.hstack([m.D_yu + m.D_yw @ G @ m.D_zu, (m.D_yw @ c)[:, None]])
    u = rng.normal(size=(300, 1))
    y = simulate(m, u)[0]
    y_lti = simulate_lti(LtiStateSpace(A, B, C, D), np.hstack([u, np.ones_like(u)]))[0]
    assert np.max(np.abs(y - y_lti)) < 1e-10


def test_one_state_hand_recursion():
    m = NlLfrModel(A=[[0.5]], B_u=[[1.0]], B_w=[[0.5]], C_z=[[1.0]], C_y=[[2.0]],
                   D_zu=[[0.5]], D_yu=[[0.1]], D_yw=[[1.0]],
                   net=NeuralNet([[1.0]], [0.0], [[1.0]], [0.0]))
    y, z, w, x = simulate(m, np.ones((2, 1)))
    # y0 = 0.1 + tanh(0.5); x1 = 1 + 0.5 tanh(0.5); y1 = 2 x1 + 0.1 + tanh(x1 + 0.5)
    assert y[0, 0] == pytest.approx(0.5621171572600098, abs=1e-15)
    assert x[1, 0] == pytest.approx(1.2310585786300048, abs=1e-15)
    assert y[1, 0] == pytest.approx(3.5012980628757924, abs=1e-15)


def test_divergence_reported():
    m = random_model(np.random.default_rng(3)).replace(A=[[3.0, 0.0], [0.0, 3.0]])
    with pytest.raises(DivergedAt) as err:
        simulate(m, np.ones((2000, 1)))
    assert 0 < err.value.k < 2000
    y_partial = err.value.partial[0]
    assert y_partial.shape[0] == err.value.k and np.all(np.isfinite(y_partial))


def test_jacobian_structural_zeros_at_init():
    m = random_model(np.random.default_rng(4), n_z=2, n_w=1, n_n=5)
    m = m.replace(B_w=np.zeros((2, 1)), D_yw=np.zeros((1, 1)), b_w=np.zeros(1))
    u = np.random.default_rng(5).normal(size=(80, 1))
    J = output_jacobian(m, u)
    sl = pack(m).slices()
    for name in ("W_z", "b_z", "W_w"):
        assert not J[:, sl[name]].any()
    assert np.all(np.linalg.norm(J[:, sl["B_w"]], axis=0) > 0)
    assert np.all(np.linalg.norm(J[:, sl["D_yw"]], axis=0) > 0)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("with_x0", [False, True])
def test_jacobian_matches_finite_differences(seed, with_x0):
    rng = np.random.default_rng(seed)
    m = random_model(rng)
    u = rng.normal(size=(50, 1))
    x0 = rng.normal(size=2) * 0.3
    J = output_jacobian(m, u, x0, with_x0)
    fd = fd_jacobian(m, u, x0, with_x0)
    col = np.linalg.norm(fd, axis=0)
    err = np.linalg.norm(J - fd, axis=0) / np.where(col > 0, col, 1.0)
    assert err.max() < 1e-6


def test_lti_columns_match_lti_sensitivity():
    rng = np.random.default_rng(6)
    m = random_model(rng, n_x=3, n_u=2, n_y=2, n_z=1, n_w=1)
    m = m.replace(B_w=np.zeros((3, 1)), D_yw=np.zeros((2, 1)))
    u = rng.normal(size=(70, 2))
    x0 = rng.normal(size=3)
    J = output_jacobian(m, u, x0, estimate_x0=True)
    ref = lti_sensitivity(LtiStateSpace(m.A, m.B_u, m.C_y, m.D_yu), u, x0)
    sl = pack(m, x0).slices()
    ours = np.hstack([J[:, sl[k]] for k in ("A", "B_u", "C_y", "D_yu", "x0")])
    assert np.allclose(ours, ref, rtol=1e-12, atol=1e-12)


def test_pack_roundtrip_and_layout():
    m = random_model(np.random.default_rng(7), n_x=3, n_u=2, n_y=1, n_z=2, n_w=2, n_n=4)
    pv = pack(m)
    back, x0 = unpack(pv)
    assert x0 is None
    for name in ("A", "B_u", "B_w", "C_z", "C_y", "D_zu", "D_yu", "D_yw"):
        assert np.array_equal(getattr(back, name), getattr(m, name))
    for name in ("W_z", "b_z", "W_w", "b_w"):
        assert np.array_equal(getattr(back.net, name), getattr(m.net, name))
    d = m.dims
    expected = (9 + 3 * 2 + 3 * 2 + 2 * 3 + 1 * 3 + 2 * 2 + 1 * 2 + 1 * 2
                + 4 * 2 + 4 + 2 * 4 + 2)
    assert pv.theta.size == expected == n_params(d)
    assert pack(m, np.zeros(3)).theta.size == expected + 3

    theta = pv.theta.copy()
    theta[pv.slices()["A"]] += 1.0
    moved, _ = unpack(pv.with_theta(theta))
    assert np.array_equal(moved.A, m.A + 1.0)
    assert np.array_equal(moved.B_u, m.B_u) and np.array_equal(moved.net.W_z, m.net.W_z)

    with pytest.raises(LayoutError):
        unpack(pv.with_theta(theta[:-1]))


def test_no_zw_feedthrough_field():
    assert "D_zw" not in NlLfrModel.__dataclass_fields__


def test_dims_checked():
    m = random_model(np.random.default_rng(8))
    with pytest.raises(DimMismatch):
        m.replace(C_z=np.ones((2, 2)))
    with pytest.raises(DimMismatch):
        simulate(m, np.ones((10, 3)))


def test_json_roundtrip(tmp_path):
    m = random_model(np.random.default_rng(9), n_z=2, act="rbf")
    m.save(tmp_path / "m.json")
    back = NlLfrModel.load(tmp_path / "m.json")
    u = np.random.default_rng(1).normal(size=(30, 1))
    assert np.array_equal(simulate(m, u)[0], simulate(back, u)[0])
    assert back.net.activation == "rbf"
