import numpy as np
import pytest
from scipy.signal import cont2discrete

from lfrid.boucwen import (BoucWenParams, make_boucwen_dataset, simulate_boucwen,
                           simulate_states)
from lfrid.errors import DivergedAt, InvalidSpec
from lfrid.signals import MultisineSpec, SignalRecord, excited_bins, gen_multisine

P = BoucWenParams()
N = 8192


def rms(a):
    return np.sqrt(np.mean(np.square(a)))


def _force(amp, seed=4, n=N):
    return gen_multisine(MultisineSpec(n, P.fs, 5.0, 150.0, amp, seed))


def linearized_frf(p, bins, n):
    """Small-signal FRF: h' ~ alpha y' near rest, discretized with the same hold."""
    Ac = np.array([[0.0, 1.0], [-(p.k_L + p.alpha) / p.m_L, -p.c_L / p.m_L]])
    Bc = np.array([[0.0], [1.0 / p.m_L]])
    Ad, Bd, *_ = cont2discrete((Ac, Bc, np.array([[1.0, 0.0]]), np.zeros((1, 1))),
                               1.0 / p.fs, "zoh")
    zs = np.exp(2j * np.pi * bins / n)
    return np.array([np.linalg.solve(z * np.eye(2) - Ad, Bd)[0, 0] for z in zs])


def measured_frf(amp):
    rec = simulate_boucwen(P, _force(amp), settle_periods=3)
    bins = excited_bins(N, P.fs, 5.0, 150.0)
    H = np.fft.fft(rec.y[:, 0])[bins] / np.fft.fft(rec.u[:, 0])[bins]
    return bins, H


def test_zero_force_stays_at_rest():
    rec = simulate_boucwen(P, SignalRecord(np.zeros((500, 1)), fs=P.fs))
    assert not rec.y.any()


def test_small_signal_frf_matches_linearization():
    bins, H = measured_frf(0.005)
    H_lin = linearized_frf(P, bins, N)
    assert np.max(np.abs(H - H_lin) / np.abs(H_lin)) < 0.01


def test_frf_deviation_is_a_nonlinear_distortion():
    # near the lightly damped resonance the hysteresis dominates the damping,
    # so the deviation from the linearization grows in proportion to the level
    errs = []
    for amp in (0.5, 0.05, 0.005):
        bins, H = measured_frf(amp)
        H_lin = linearized_frf(P, bins, N)
        errs.append(np.max(np.abs(H - H_lin) / np.abs(H_lin)))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 7) & (ratios < 13))


def test_hysteresis_loop_dissipates():
    t = np.arange(N) / P.fs
    u = 40.0 * np.sin(2 * np.pi * 20.0 * t)[:, None]
    rec, states = simulate_boucwen(P, SignalRecord(u, fs=P.fs), return_states=True)
    y, h = states[-750:, 0], states[-750:, 2]
    # closed-curve integral of h dy over whole cycles (trapezoid, wrapped)
    area = np.sum(0.5 * (h + np.roll(h, -1)) * (np.roll(y, -1) - y))
    assert area > 0


def test_oversampling_converges():
    f = _force(50.0)
    y20 = simulate_boucwen(P, f, settle_periods=1).y
    y40 = simulate_boucwen(BoucWenParams(oversample=40), f, settle_periods=1).y
    assert rms(y40 - y20) / rms(y40) < 1e-6


def test_settled_response_is_periodic():
    f = _force(50.0)
    two = SignalRecord(np.vstack([f.u, f.u]), fs=P.fs, n_periods=2)
    y = simulate_boucwen(P, two, settle_periods=2).y
    assert rms(y[N:] - y[:N]) < 1e-9 * rms(y)


def test_start_state_and_end_state_chain():
    u = _force(10.0, n=1024).u[:, 0]
    full, _ = simulate_states(P, u)
    a, s_mid = simulate_states(P, u[:500])
    b, _ = simulate_states(P, u[500:], s0=s_mid)
    assert np.array_equal(np.vstack([a, b]), full)


def test_divergence_and_validation():
    with pytest.raises(DivergedAt):
        simulate_states(BoucWenParams(c_L=-2e4), np.ones(200))
    with pytest.raises(InvalidSpec):
        BoucWenParams(nu=0.5)
    with pytest.raises(InvalidSpec):
        simulate_boucwen(P, SignalRecord(np.zeros((10, 2)), fs=P.fs))
    with pytest.raises(InvalidSpec):
        simulate_boucwen(P, SignalRecord(np.zeros((10, 1)), fs=1000.0))


def test_datasets():
    ms = make_boucwen_dataset(seed=3, amplitude_rms=50.0)
    assert ms.y.shape == (N, 1) and ms.u.shape == (N, 1)
    assert ms.fs == P.fs and np.isclose(rms(ms.u), 50.0)
    again = make_boucwen_dataset(seed=3, amplitude_rms=50.0)
    assert np.array_equal(ms.y, again.y)
    other = make_boucwen_dataset(seed=4, amplitude_rms=50.0)
    assert not np.allclose(ms.u, other.u)


@pytest.mark.slow
def test_sweep_dataset_length():
    sw = make_boucwen_dataset(seed=0, amplitude_rms=40 / np.sqrt(2), kind="sweep")
    assert sw.n_samples == 135000 and sw.excitation == "sweep"
