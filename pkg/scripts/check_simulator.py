"""Numerical health checks of the Bouc-Wen simulator.

    python3 scripts/check_simulator.py

Prints the output change when doubling the oversampling factor and the
deviation of the measured FRF from the linearised (k_L + alpha) model for a
range of excitation levels.
"""
import numpy as np
from scipy.signal import cont2discrete

from lfrid.boucwen import BoucWenParams, simulate_boucwen
from lfrid.signals import MultisineSpec, excited_bins, gen_multisine

N = 8192


def linear_frf(p, bins):
    Ac = np.array([[0.0, 1.0], [-(p.k_L + p.alpha) / p.m_L, -p.c_L / p.m_L]])
    Bc = np.array([[0.0], [1.0 / p.m_L]])
    Ad, Bd, *_ = cont2discrete((Ac, Bc, np.eye(2)[:1], np.zeros((1, 1))), 1 / p.fs, "zoh")
    return np.array([np.linalg.solve(z * np.eye(2) - Ad, Bd)[0, 0]
                     for z in np.exp(2j * np.pi * bins / N)])


def main():
    p = BoucWenParams()
    f = gen_multisine(MultisineSpec(N, p.fs, 5.0, 150.0, 50.0, 4))
    prev = None
    print("oversample  relative change")
    for os_ in (10, 20, 40, 80):
        y = simulate_boucwen(BoucWenParams(oversample=os_), f, settle_periods=1).y
        if prev is not None:
            print(f"{os_:>10}  {np.sqrt(np.mean((y - prev) ** 2) / np.mean(y ** 2)):.2e}")
        prev = y

    bins = excited_bins(N, p.fs, 5.0, 150.0)
    H_lin = linear_frf(p, bins)
    print("\nlevel [N rms]  max FRF deviation  at [Hz]  median deviation")
    for amp in (0.5, 0.05, 0.005):
        g = gen_multisine(MultisineSpec(N, p.fs, 5.0, 150.0, amp, 4))
        y = simulate_boucwen(p, g, settle_periods=3).y[:, 0]
        H = np.fft.fft(y)[bins] / np.fft.fft(g.u[:, 0])[bins]
        e = np.abs(H - H_lin) / np.abs(H_lin)
        print(f"{amp:>13}  {e.max():>17.2%}  {bins[e.argmax()] * p.fs / N:>8.1f}  "
              f"{np.median(e):>16.3%}")


if __name__ == "__main__":
    main()
