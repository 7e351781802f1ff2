"""Windowed discrete Fourier analysis of uniformly sampled signals.

All transforms use the order-two Hann window ``h(i) = (2/3)(1 - cos(2 pi i/N))^2``
(mean one) and the convention

    F(f) = (1/N) sum_i q(t_i) h(i) exp(-1j f t_i),   t_i = dt * i,

with cosine and sine parts ``C_q(f) = 2 Re F`` and ``S_q(f) = -2 Im F``.
Bin frequencies are ``f_k = 2 pi k / T`` with ``T = N dt``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .propagation import SampledSignal

__all__ = [
    "hann2_window",
    "WindowedDft",
    "Peak",
    "DftValue",
    "BasisDft",
    "dft_at_bins",
    "dft_continuous",
    "dft_basis",
    "detect_peaks",
    "initial_guess",
    "EXCLUDE_BINS",
]

#: peaks this close (in bins) to DC or Nyquist are not refined
EXCLUDE_BINS = 2


@lru_cache(maxsize=16)
def _window(N: int) -> np.ndarray:
    w = (2.0 / 3.0) * (1.0 - np.cos(2.0 * np.pi * np.arange(N) / N)) ** 2
    w.flags.writeable = False
    return w


def hann2_window(N: int) -> np.ndarray:
    """Order-two Hann window with unit mean."""
    if N < 2:
        raise ValueError("window length must be at least 2")
    return _window(int(N)).copy()


def _check(signal: SampledSignal):
    if signal.N % 2:
        raise ValueError("the sample count must be even")


@dataclass(frozen=True)
class WindowedDft:
    """Windowed DFT at the standard bins ``k = 0..N/2``."""

    N: int
    dt: float
    F: np.ndarray

    @property
    def span(self) -> float:
        return self.N * self.dt

    @property
    def df(self) -> float:
        return 2.0 * math.pi / self.span

    @property
    def bins(self) -> np.ndarray:
        return self.df * np.arange(self.F.size)

    @property
    def amplitude(self) -> np.ndarray:
        """Amplitude estimate ``2|F|`` at each bin."""
        return 2.0 * np.abs(self.F)

    @property
    def C(self) -> np.ndarray:
        return 2.0 * self.F.real

    @property
    def S(self) -> np.ndarray:
        return -2.0 * self.F.imag


def dft_at_bins(signal: SampledSignal) -> WindowedDft:
    """FFT-based windowed DFT at ``f_k = 2 pi k/T``."""
    _check(signal)
    N = signal.N
    F = np.fft.rfft(signal.values * _window(N)) / N
    return WindowedDft(N, signal.dt, F)


@dataclass(frozen=True)
class DftValue:
    """``C_q``, ``S_q`` at one frequency with first and second f-derivatives."""

    f: float
    C: float
    S: float
    dC: float
    dS: float
    d2C: float
    d2S: float

    @property
    def magnitude(self) -> float:
        """``|F(f)| = sqrt(C^2 + S^2)/2``."""
        return 0.5 * math.hypot(self.C, self.S)


def _weighted(values: np.ndarray, N: int) -> np.ndarray:
    return values * _window(N) * (2.0 / N)


def dft_continuous(signal: SampledSignal, f: float) -> DftValue:
    """Direct-sum windowed DFT at an arbitrary frequency."""
    _check(signal)
    t = signal.times
    w = _weighted(signal.values, signal.N)
    c, s = np.cos(f * t), np.sin(f * t)
    wt = w * t
    wtt = wt * t
    return DftValue(
        float(f),
        float(np.sum(w * c)),
        float(np.sum(w * s)),
        float(-np.sum(wt * s)),
        float(np.sum(wt * c)),
        float(-np.sum(wtt * c)),
        float(-np.sum(wtt * s)),
    )


@dataclass(frozen=True)
class BasisDft:
    """DFTs of ``cos(nu t)`` and ``sin(nu t)`` at a frequency ``f``.

    ``Cc`` is the cosine part of the transform of ``cos(nu t)``, ``Cs`` the
    cosine part of ``sin(nu t)``, and likewise for the sine parts ``Sc``,
    ``Ss``. The ``d*`` fields are derivatives with respect to ``nu``: partial
    at fixed ``f``, or total along ``f = nu`` when built with ``total=True``.
    """

    nu: float
    f: float
    Cc: float
    Cs: float
    Sc: float
    Ss: float
    dCc: float
    dCs: float
    dSc: float
    dSs: float

    def model_parts(self, A: float, theta: float) -> tuple[float, float]:
        """``(C, S)`` of ``A cos(nu t + theta)`` at ``f``."""
        ca, sa = A * math.cos(theta), A * math.sin(theta)
        return ca * self.Cc - sa * self.Cs, ca * self.Sc - sa * self.Ss


def _basis_sums(t, h2n, nu, f, total):
    cn, sn = np.cos(nu * t), np.sin(nu * t)
    if f == nu:
        cf, sf = cn, sn
    else:
        cf, sf = np.cos(f * t), np.sin(f * t)
    a = h2n * cf
    b = h2n * sf
    ta = t * a
    tb = t * b
    Cc = np.sum(cn * a)
    Cs = np.sum(sn * a)
    Sc = np.sum(cn * b)
    Ss = np.sum(sn * b)
    dCc = -np.sum(sn * ta)
    dCs = np.sum(cn * ta)
    dSc = -np.sum(sn * tb)
    dSs = np.sum(cn * tb)
    if total:
        # add the f-derivative contributions along f = nu
        dCc += -np.sum(cn * sn * t * h2n)
        dCs += -np.sum(sn * sn * t * h2n)
        dSc += np.sum(cn * cn * t * h2n)
        dSs += np.sum(sn * cn * t * h2n)
    return tuple(float(v) for v in (Cc, Cs, Sc, Ss, dCc, dCs, dSc, dSs))


def dft_basis(N: int, dt: float, nu: float, f: float | None = None, total: bool = False) -> BasisDft:
    """Basis-function DFTs over an ``N``-sample grid with spacing ``dt``.

    With ``f=None`` the transform is taken at ``f = nu``.
    """
    if N % 2:
        raise ValueError("the sample count must be even")
    f = nu if f is None else f
    if total and f != nu:
        raise ValueError("total derivatives are defined along f = nu")
    t = dt * np.arange(N)
    h2n = _window(N) * (2.0 / N)
    return BasisDft(float(nu), float(f), *_basis_sums(t, h2n, nu, f, total))


@dataclass(frozen=True)
class Peak:
    """A local maximum of ``|F|`` at bin ``k``.

    ``neighbor`` is the adjacent bin with the larger amplitude (the lower one
    on ties); ``F`` holds the complex amplitudes at ``k - 1``, ``k``, ``k + 1``.
    """

    k: int
    frequency: float
    df: float
    F: tuple
    neighbor: int

    @property
    def amplitude(self) -> float:
        return 2.0 * abs(self.F[1])

    @property
    def adjacent(self) -> tuple[float, float]:
        return self.frequency - self.df, self.frequency + self.df

    @property
    def neighbor_frequency(self) -> float:
        return self.neighbor * self.df


def _neighbor(mag: np.ndarray, k: int) -> int:
    return k - 1 if mag[k - 1] >= mag[k + 1] else k + 1


def detect_peaks(dft: WindowedDft, max_count: int | None = None, exclude: int = EXCLUDE_BINS,
                 reference: WindowedDft | None = None) -> list[Peak]:
    """Local maxima of ``|F|`` sorted by decreasing amplitude.

    Bins within ``exclude`` of DC or Nyquist are skipped. The dominant
    neighbor of each peak is chosen from ``reference`` (default: ``dft``).
    """
    mag = np.abs(dft.F)
    nmax = mag.size - 1
    lo, hi = max(1, exclude + 1), min(nmax - 1, nmax - exclude - 1)
    if hi < lo:
        return []
    k = np.arange(lo, hi + 1)
    m = mag[k]
    is_peak = (m >= mag[k - 1]) & (m >= mag[k + 1]) & (m > 0)
    # plateaus: keep only the first bin of equal-height runs
    is_peak &= ~(m == mag[k - 1])
    ks = k[is_peak]
    order = np.argsort(-mag[ks], kind="stable")
    ks = ks[order]
    if max_count is not None:
        ks = ks[:max_count]
    ref = np.abs((reference or dft).F)
    return [Peak(int(kk), float(kk * dft.df), dft.df, (dft.F[kk - 1], dft.F[kk], dft.F[kk + 1]),
                 _neighbor(ref, int(kk))) for kk in ks]


def initial_guess(peak: Peak):
    """DFT-seeded triplet ``(nu, A, theta)`` from a peak bin."""
    from .refine import FrequencyComponent

    F = peak.F[1]
    C, S = 2.0 * F.real, -2.0 * F.imag
    return FrequencyComponent(peak.frequency, math.hypot(C, S), math.atan2(-S, C))
