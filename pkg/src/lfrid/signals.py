"""Excitation signals and the sampled-data record shared by all modules.

Phases of random-phase multisines are drawn with ``numpy.random.default_rng``
(PCG64) seeded by the integer ``seed``, so a dataset is fully determined by
its spec.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import EmptyBand, InvalidSpec

EXCITATIONS = ("multisine", "sweep", "external")


def _as_2d(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise InvalidSpec(f"expected a 1-D or 2-D array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SignalRecord:
    """Sampled multichannel data, ``u`` is N x n_u and ``y`` is N x n_y."""

    u: np.ndarray
    y: Optional[np.ndarray] = None
    fs: float = 1.0
    n_periods: int = 1
    excitation: str = "external"

    def __post_init__(self):
        object.__setattr__(self, "u", _as_2d(self.u))
        if self.y is not None:
            object.__setattr__(self, "y", _as_2d(self.y))
            if self.y.shape[0] != self.u.shape[0]:
                raise InvalidSpec("u and y must have the same number of rows")
        if self.u.shape[0] < 1:
            raise InvalidSpec("a record needs at least one sample")
        if not self.fs > 0:
            raise InvalidSpec("fs must be positive")
        if int(self.n_periods) < 1 or self.u.shape[0] % int(self.n_periods):
            raise InvalidSpec("N must be divisible by a positive n_periods")
        object.__setattr__(self, "n_periods", int(self.n_periods))
        if self.excitation not in EXCITATIONS:
            raise InvalidSpec(f"unknown excitation tag {self.excitation!r}")

    @property
    def n_samples(self) -> int:
        return self.u.shape[0]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    @property
    def n_y(self) -> int:
        return 0 if self.y is None else self.y.shape[1]

    @property
    def period_length(self) -> int:
        return self.n_samples // self.n_periods

    def with_output(self, y) -> "SignalRecord":
        return SignalRecord(self.u, y, self.fs, self.n_periods, self.excitation)


@dataclass(frozen=True)
class MultisineSpec:
    n_samples_per_period: int
    fs: float
    f_min: float
    f_max: float
    amplitude_rms: float
    seed: int = 0

    def __post_init__(self):
        if self.n_samples_per_period < 2:
            raise InvalidSpec("a multisine period needs at least 2 samples")
        if not (0 <= self.f_min < self.f_max < self.fs / 2):
            raise InvalidSpec("need 0 <= f_min < f_max < fs/2")
        if not self.amplitude_rms > 0:
            raise InvalidSpec("amplitude_rms must be positive")


@dataclass(frozen=True)
class SweepSpec:
    f_start: float
    f_end: float
    sweep_rate: float  # Hz per minute
    amplitude_rms: float
    fs: float

    @property
    def duration(self) -> float:
        return (self.f_end - self.f_start) / (self.sweep_rate / 60.0)


def excited_bins(n: int, fs: float, f_min: float, f_max: float) -> np.ndarray:
    """DFT bins k with f_min <= k*fs/n <= f_max, DC and Nyquist excluded."""
    k = np.arange(1, (n - 1) // 2 + 1)
    f = k * fs / n
    tol = 1e-9 * fs / n
    return k[(f >= f_min - tol) & (f <= f_max + tol)]


def gen_multisine(spec: MultisineSpec) -> SignalRecord:
    """One period of a flat-spectrum random-phase multisine."""
    n = spec.n_samples_per_period
    bins = excited_bins(n, spec.fs, spec.f_min, spec.f_max)
    if bins.size == 0:
        raise EmptyBand(f"no DFT bin in [{spec.f_min}, {spec.f_max}] Hz")
    rng = np.random.default_rng(spec.seed)
    phases = rng.uniform(0.0, 2 * np.pi, size=bins.size)
    spectrum = np.zeros(n // 2 + 1, dtype=complex)
    spectrum[bins] = np.exp(1j * phases)
    u = np.fft.irfft(spectrum, n)
    u *= spec.amplitude_rms / np.sqrt(np.mean(u**2))
    return SignalRecord(u, None, spec.fs, 1, "multisine")


def sweep_phase(spec: SweepSpec, t: np.ndarray) -> np.ndarray:
    rate = spec.sweep_rate / 60.0
    return 2 * np.pi * (spec.f_start * t + 0.5 * rate * t**2)


def gen_sweep(spec: SweepSpec) -> SignalRecord:
    """Linear sine sweep from f_start to f_end at ``sweep_rate`` Hz/min."""
    if not spec.sweep_rate > 0 or not spec.amplitude_rms > 0 or not spec.fs > 0:
        raise InvalidSpec("sweep_rate, amplitude_rms and fs must be positive")
    if not spec.duration > 0:
        raise InvalidSpec("sweep has non-positive duration")
    n = int(round(spec.duration * spec.fs))
    if n < 2:
        raise InvalidSpec("sweep shorter than two samples")
    t = np.arange(n) / spec.fs
    u = np.sin(sweep_phase(spec, t))
    u *= spec.amplitude_rms / np.sqrt(np.mean(u**2))
    return SignalRecord(u, None, spec.fs, 1, "sweep")


# -- persistence -------------------------------------------------------------

def save_record(rec: SignalRecord, path, meta: Optional[dict] = None) -> Path:
    """Write ``<path>.csv`` (one column per channel) and a ``<path>.json`` side-car."""
    path = Path(path).with_suffix("")
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = [rec.u] + ([rec.y] if rec.y is not None else [])
    header = [f"u{i}" for i in range(rec.n_u)] + [f"y{i}" for i in range(rec.n_y)]
    np.savetxt(path.with_suffix(".csv"), np.hstack(cols), delimiter=",",
               header=",".join(header), comments="", fmt="%.17g")
    side = {"fs": rec.fs, "n_periods": rec.n_periods, "excitation": rec.excitation,
            "n_u": rec.n_u, "n_y": rec.n_y}
    if meta:
        side["meta"] = meta
    path.with_suffix(".json").write_text(json.dumps(side, indent=2))
    return path.with_suffix(".csv")


def load_record(path) -> SignalRecord:
    """Read a record written by :func:`save_record`.

    Without a side-car, columns are split by header prefix (``u*``/``y*``)
    and the record is treated as aperiodic at fs = 1.
    """
    path = Path(path)
    csv = path if path.suffix == ".csv" else path.with_suffix(".csv")
    with open(csv) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(csv, delimiter=",", skiprows=1, ndmin=2)
    side_path = csv.with_suffix(".json")
    side = json.loads(side_path.read_text()) if side_path.exists() else {}
    ucols = [i for i, h in enumerate(header) if h.strip().startswith("u")]
    ycols = [i for i, h in enumerate(header) if h.strip().startswith("y")]
    y = data[:, ycols] if ycols else None
    return SignalRecord(data[:, ucols], y, float(side.get("fs", 1.0)),
                        int(side.get("n_periods", 1)), side.get("excitation", "external"))
