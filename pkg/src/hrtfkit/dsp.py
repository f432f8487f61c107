"""Deterministic signal primitives shared by the rest of the package.

Everything here is a pure function of its inputs. Arrays handed in are never
modified; every operation returns a fresh ``ImpulseResponse`` or ``Spectrum``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import firwin

DEFAULT_FS = 48000.0
PROCESSED_LENGTH = 512

# samples whose magnitude is below this fraction of the buffer peak count as zero
ZERO_TOLERANCE = 1e-12

ITD_CUTOFF_HZ = 1500.0
ITD_LPF_TAPS = 255
UPSAMPLE_FACTOR = 4


@dataclass(frozen=True)
class ImpulseResponse:
    """Uniformly sampled real time series.

    ``t0_offset`` records where this buffer starts relative to the excitation
    (e.g. the window start sample after time windowing). It is provenance only.
    """

    samples: np.ndarray
    sample_rate: float = DEFAULT_FS
    t0_offset: int = 0

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim != 1:
            raise ValueError("impulse response must be one-dimensional")
        if x.size == 0:
            raise ValueError("impulse response must not be empty")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        x = x.copy()
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def replace(self, samples, sample_rate=None, t0_offset=None) -> "ImpulseResponse":
        return ImpulseResponse(
            samples,
            self.sample_rate if sample_rate is None else sample_rate,
            self.t0_offset if t0_offset is None else t0_offset,
        )


@dataclass(frozen=True)
class Spectrum:
    """Full (two-sided) DFT of a real sequence plus its bin spacing in Hz."""

    bins: np.ndarray
    bin_spacing: float
    flagged: tuple = field(default=())

    def __post_init__(self):
        b = np.asarray(self.bins, dtype=complex).copy()
        if b.ndim != 1 or b.size == 0:
            raise ValueError("spectrum must be a non-empty 1-D array")
        b.flags.writeable = False
        object.__setattr__(self, "bins", b)

    def __len__(self):
        return self.bins.size

    @property
    def sample_rate(self) -> float:
        return self.bin_spacing * len(self)

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(len(self)) * self.bin_spacing

    def magnitude_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 20.0 * np.log10(np.abs(self.bins))


def _samples(ir) -> np.ndarray:
    return ir.samples if isinstance(ir, ImpulseResponse) else np.asarray(ir, dtype=float)


def forward_transform(ir: ImpulseResponse) -> Spectrum:
    if len(ir.samples) == 0:
        raise ValueError("cannot transform an empty sequence")
    n = len(ir)
    return Spectrum(np.fft.fft(ir.samples), ir.sample_rate / n)


def inverse_transform(sp: Spectrum, t0_offset: int = 0) -> ImpulseResponse:
    y = np.fft.ifft(sp.bins)
    peak = np.max(np.abs(y))
    if peak > 0 and np.max(np.abs(y.imag)) > 1e-9 * peak:
        raise ValueError("spectrum is not conjugate-symmetric; inverse is not real")
    return ImpulseResponse(y.real, sp.sample_rate, t0_offset)


def circular_shift(ir: ImpulseResponse, m: int) -> ImpulseResponse:
    """out[n] = in[(n - m) mod N]."""
    n = len(ir)
    if int(m) != m or not 0 <= m < n:
        raise ValueError(f"shift {m} outside [0, {n})")
    return ir.replace(np.roll(ir.samples, int(m)))


def peak_index(ir) -> int:
    """Index of the largest |sample|; ties go to the smaller index."""
    x = _samples(ir)
    if x.size == 0:
        raise ValueError("empty impulse response")
    mag = np.abs(x)
    if not np.any(mag > 0):
        raise ValueError("impulse response is all zero; no peak")
    return int(np.argmax(mag))


def first_zero_crossing_after(ir, start_idx: int, min_gap: int) -> int:
    """First index i >= start_idx + min_gap where the sign flips or x[i] == 0.

    Samples within ``ZERO_TOLERANCE`` of the buffer peak are treated as exact
    zeros, so a sampled sine that should vanish at i counts as crossing there.
    """
    x = _samples(ir)
    lo = start_idx + min_gap
    if lo >= x.size:
        raise ValueError("search start lies beyond the end of the buffer")
    tol = ZERO_TOLERANCE * np.max(np.abs(x))
    s = np.where(np.abs(x) <= tol, 0, np.sign(x))
    lo = max(lo, 1)
    idx = np.arange(lo, x.size)
    hit = (s[idx] == 0) | (s[idx] != s[idx - 1])
    if not np.any(hit):
        raise ValueError(f"no zero crossing after sample {start_idx + min_gap}")
    return int(idx[np.argmax(hit)])


def hann_window_segment(ir: ImpulseResponse, center: int, length: int = 96) -> ImpulseResponse:
    """Cut ``length`` samples around ``center`` and apply a symmetric Hann taper.

    Samples that fall outside the buffer are taken as zero.
    """
    if length <= 0:
        raise ValueError("window length must be positive")
    x = ir.samples
    first = center - length // 2
    seg = np.zeros(length)
    lo, hi = max(first, 0), min(first + length, x.size)
    if hi > lo:
        seg[lo - first:hi - first] = x[lo:hi]
    return ImpulseResponse(seg * np.hanning(length), ir.sample_rate, ir.t0_offset + first)


def itd_lowpass_taps(sample_rate: float = DEFAULT_FS) -> np.ndarray:
    return firwin(ITD_LPF_TAPS, ITD_CUTOFF_HZ, window="hamming", fs=sample_rate)


def lowpass_for_itd(ir: ImpulseResponse) -> ImpulseResponse:
    # odd-length symmetric taps in "same" mode: zero net delay
    taps = itd_lowpass_taps(ir.sample_rate)
    return ir.replace(np.convolve(ir.samples, taps, mode="same"))


def upsample_4x(ir: ImpulseResponse) -> ImpulseResponse:
    """Band-limited interpolation by spectral zero padding."""
    x = ir.samples
    n = x.size
    out_n = UPSAMPLE_FACTOR * n
    X = np.fft.rfft(x)
    Y = np.zeros(out_n // 2 + 1, dtype=complex)
    Y[:X.size] = X
    if n % 2 == 0:
        # split the Nyquist term between +/- fs/2 so the result stays real and exact
        Y[n // 2] *= 0.5
    y = np.fft.irfft(Y, out_n) * UPSAMPLE_FACTOR
    return ImpulseResponse(y, ir.sample_rate * UPSAMPLE_FACTOR, ir.t0_offset * UPSAMPLE_FACTOR)


def xcorr_lags(a, b, max_lag_samples: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalized linear cross-correlation r[tau] = sum a[t] b[t + tau]."""
    xa, xb = _samples(a), _samples(b)
    if xa.size != xb.size:
        raise ValueError("correlation inputs must have equal length")
    ea, eb = np.dot(xa, xa), np.dot(xb, xb)
    if ea == 0 or eb == 0:
        raise ValueError("cannot correlate an all-zero signal")
    L = int(max_lag_samples)
    padded = np.concatenate([np.zeros(L), xb, np.zeros(L)])
    r = np.correlate(padded, xa, mode="valid") / np.sqrt(ea * eb)
    return np.arange(-L, L + 1), r


def normalized_xcorr_peak(a: ImpulseResponse, b: ImpulseResponse, max_lag: float = 1e-3) -> float:
    """Lag in seconds maximizing the normalized cross-correlation.

    Positive when ``b`` lags ``a``. Ties prefer the smaller |lag|, then the
    negative one.
    """
    if a.sample_rate != b.sample_rate:
        raise ValueError("sample rates differ")
    fs = a.sample_rate
    L = min(int(np.floor(max_lag * fs + 1e-9)), len(a) - 1)
    lags, r = xcorr_lags(a, b, L)
    best = np.flatnonzero(r == r.max())
    order = sorted(best, key=lambda i: (abs(lags[i]), lags[i]))
    return lags[order[0]] / fs
