"""Binaural cues from an HRIR database: ITD, ILD, spectral cues and HPD."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import peak_prominences

from . import dsp
from .dsp import ImpulseResponse, Spectrum
from .pipeline import AZIMUTHS, ELEVATIONS, Direction, HrirDatabase

MAX_ITD = 1e-3
CUE_FFT_LENGTH = 4800          # 10 Hz bins at 48 kHz
ILD_FLOOR = 1e-6
PRTF_WINDOW = 96               # 2 ms at 48 kHz
SC_BAND = (3000.0, 16000.0)
SC_SMOOTH_BINS = 5
SC_NEIGHBORHOOD = 50
SC_PROMINENCE_DB = 3.0
HPD_FREQUENCIES = (750.0, 1500.0, 3000.0, 6000.0, 12000.0)


# --- ITD -----------------------------------------------------------------------

def itd_resolution(sample_rate: float = dsp.DEFAULT_FS) -> float:
    return 1.0 / (sample_rate * dsp.UPSAMPLE_FACTOR)


def compute_itd(hL: ImpulseResponse, hR: ImpulseResponse, max_lag: float = MAX_ITD) -> float:
    """Interaural time difference in seconds; positive when the left ear lags."""
    left = dsp.upsample_4x(dsp.lowpass_for_itd(hL))
    right = dsp.upsample_4x(dsp.lowpass_for_itd(hR))
    return dsp.normalized_xcorr_peak(right, left, max_lag)


@dataclass
class ItdMap:
    values: dict
    resolution: float

    def at(self, az, el) -> float:
        return self.values[Direction(az, el)]

    def grid(self, azimuths=AZIMUTHS, elevations=ELEVATIONS) -> np.ndarray:
        return np.array([[self.values.get(Direction(a, e), np.nan) for a in azimuths] for e in elevations])

    def max_adjacent_jump(self, elevations=None) -> float:
        """Largest ITD change between neighbouring 5-degree azimuths (wrapping at 180)."""
        worst = 0.0
        els = sorted({d.elevation_deg for d in self.values}) if elevations is None else elevations
        for el in els:
            row = [self.values[Direction(a, el)] for a in AZIMUTHS if Direction(a, el) in self.values]
            if len(row) < 2:
                continue
            row = np.array(row + row[:1])
            worst = max(worst, float(np.max(np.abs(np.diff(row)))))
        return worst

    def to_csv(self, path) -> None:
        _write_grid_csv(path, self.grid() * 1e6)


def _pmap(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def itd_map(db: HrirDatabase, workers: int | None = None) -> ItdMap:
    dirs = sorted(db.hrir)
    vals = _pmap(lambda d: compute_itd(*db.hrir[d]), dirs, workers)
    fs = next(iter(db.hrir.values()))[0].sample_rate
    return ItdMap(dict(zip(dirs, vals)), itd_resolution(fs))


def _write_grid_csv(path, grid, azimuths=AZIMUTHS, elevations=ELEVATIONS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["elevation_deg"] + [str(a) for a in azimuths])
        for el, row in zip(elevations, grid):
            w.writerow([str(el)] + [f"{v:.6f}" for v in row])


# --- ILD -----------------------------------------------------------------------

def cue_spectrum(h: ImpulseResponse, n: int = CUE_FFT_LENGTH) -> np.ndarray:
    """One-sided spectrum after zero-padding to ``n`` samples."""
    if len(h) == 0:
        raise ValueError("empty impulse response")
    return np.fft.rfft(h.samples, n)


def cue_frequencies(sample_rate: float = dsp.DEFAULT_FS, n: int = CUE_FFT_LENGTH) -> np.ndarray:
    return np.fft.rfftfreq(n, 1 / sample_rate)


@dataclass(frozen=True)
class NarrowbandIld:
    frequencies: np.ndarray
    db: np.ndarray
    flagged: np.ndarray        # bool mask: either ear below ILD_FLOOR * its peak


def ild_narrowband(hL: ImpulseResponse, hR: ImpulseResponse) -> NarrowbandIld:
    HL, HR = cue_spectrum(hL), cue_spectrum(hR)
    aL, aR = np.abs(HL), np.abs(HR)
    flagged = (aL < ILD_FLOOR * aL.max()) | (aR < ILD_FLOOR * aR.max())
    with np.errstate(divide="ignore", invalid="ignore"):
        db = 20 * np.log10(aR / aL)
    db = np.where(flagged, np.nan, db)
    return NarrowbandIld(cue_frequencies(hL.sample_rate), db, flagged)


def _band_integral(freqs, power, f_lo, f_hi) -> float:
    inside = (freqs > f_lo) & (freqs < f_hi)
    x = np.concatenate([[f_lo], freqs[inside], [f_hi]])
    y = np.concatenate([[np.interp(f_lo, freqs, power)], power[inside], [np.interp(f_hi, freqs, power)]])
    integrate = getattr(np, "trapezoid", None) or np.trapz
    return float(integrate(y, x))


def ild_wideband(hL: ImpulseResponse, hR: ImpulseResponse, f_L: float = 20.0,
                 f_H: float = 20000.0) -> float:
    f = cue_frequencies(hL.sample_rate)
    pL = np.abs(cue_spectrum(hL)) ** 2
    pR = np.abs(cue_spectrum(hR)) ** 2
    den = _band_integral(f, pL, f_L, f_H)
    if den <= 0:
        raise ValueError("left-ear energy is zero in the integration band")
    return 10 * math.log10(_band_integral(f, pR, f_L, f_H) / den)


@dataclass
class IldMap:
    narrowband: dict
    wideband: dict
    band: tuple = (20.0, 20000.0)

    def to_csv(self, path) -> None:
        grid = np.array([[self.wideband.get(Direction(a, e), np.nan) for a in AZIMUTHS] for e in ELEVATIONS])
        _write_grid_csv(path, grid)


def ild_map(db: HrirDatabase, workers: int | None = None, keep_narrowband: bool = True) -> IldMap:
    dirs = sorted(db.hrir)

    def one(d):
        l, r = db.hrir[d]
        return (ild_narrowband(l, r) if keep_narrowband else None), ild_wideband(l, r)

    res = _pmap(one, dirs, workers)
    return IldMap({d: n for d, (n, _) in zip(dirs, res) if n is not None},
                  {d: w for d, (_, w) in zip(dirs, res)})


def write_narrowband_csv(path, ild: NarrowbandIld) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["freq_hz", "db"])
        for f, v in zip(ild.frequencies, ild.db):
            w.writerow([f"{f:g}", "nan" if np.isnan(v) else f"{v:.6f}"])


# --- spectral cues -------------------------------------------------------------

def extract_prtf(hrir: ImpulseResponse, window: int = PRTF_WINDOW,
                 n: int = CUE_FFT_LENGTH) -> Spectrum:
    """Pinna-related response: 2 ms Hann around the HRIR peak, padded to n."""
    seg = dsp.hann_window_segment(hrir, dsp.peak_index(hrir), window)
    buf = np.zeros(n)
    buf[:len(seg)] = seg.samples
    return Spectrum(np.fft.fft(buf), hrir.sample_rate / n)


def _smooth(db: np.ndarray, bins: int) -> np.ndarray:
    pad = bins // 2
    padded = np.pad(db, pad, mode="edge")
    return np.convolve(padded, np.ones(bins) / bins, mode="valid")


def smoothed_prtf_db(prtf: Spectrum, bins: int = SC_SMOOTH_BINS) -> tuple[np.ndarray, np.ndarray]:
    half = len(prtf) // 2 + 1
    db = 20 * np.log10(np.maximum(np.abs(prtf.bins[:half]), 1e-300))
    return prtf.frequencies[:half], _smooth(db, bins)


def feature_prominence(curve: np.ndarray, i: int, kind: str) -> float:
    """Topographic prominence of sample ``i`` (dB) within ``curve``."""
    x = curve if kind == "peak" else -curve
    return float(peak_prominences(x, [i])[0][0])


def find_spectral_features(prtf: Spectrum, band=SC_BAND, smooth: int = SC_SMOOTH_BINS,
                           neighborhood: int = SC_NEIGHBORHOOD,
                           prominence: float = SC_PROMINENCE_DB) -> tuple[list, list]:
    """Local maxima (peaks) and minima (notches) of the smoothed dB magnitude.

    A feature must be the extreme of its +/- ``neighborhood`` bins and have a
    topographic prominence of at least ``prominence`` dB within the band.
    Returns two lists of (frequency Hz, level dB), sorted by frequency.
    """
    freqs, curve = smoothed_prtf_db(prtf, smooth)
    in_band = np.flatnonzero((freqs >= band[0]) & (freqs <= band[1]))
    if in_band.size == 0:
        return [], []
    seg = curve[in_band]
    if not np.all(np.isfinite(seg)):
        raise ValueError("PRTF magnitude is not finite over the search band")
    peaks, notches = [], []
    for j, i in enumerate(in_band):
        lo, hi = max(i - neighborhood, 0), min(i + neighborhood + 1, curve.size)
        win = curve[lo:hi]
        if np.argmax(win) == i - lo and 0 < j < seg.size - 1:
            if feature_prominence(seg, j, "peak") >= prominence:
                peaks.append((float(freqs[i]), float(curve[i])))
        elif np.argmin(win) == i - lo and 0 < j < seg.size - 1:
            if feature_prominence(seg, j, "notch") >= prominence:
                notches.append((float(freqs[i]), float(curve[i])))
    return peaks, notches


def median_plane_extended_elevation(d: Direction) -> int:
    if d.azimuth_deg == 0:
        return d.elevation_deg
    if d.azimuth_deg == 180:
        return 180 - d.elevation_deg
    raise ValueError(f"{d} is not in the median plane")


@dataclass
class SpectralFeatureSet:
    ear: str
    entries: dict = field(default_factory=dict)   # extended elevation -> {"peaks": [...], "notches": [...]}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["extended_elevation_deg", "kind", "freq_hz", "level_db"])
            for ext in sorted(self.entries):
                for kind, key in (("peak", "peaks"), ("notch", "notches")):
                    for f, lv in self.entries[ext][key]:
                        w.writerow([ext, kind, f"{f:g}", f"{lv:.4f}"])


def sc_median(db: HrirDatabase, ear: str = "right", **kwargs) -> SpectralFeatureSet:
    idx = {"left": 0, "right": 1}[ear]
    out = SpectralFeatureSet(ear)
    for d in sorted(db.hrir, key=lambda d: (d.azimuth_deg != 0, d.elevation_deg)):
        if d.azimuth_deg not in (0, 180):
            continue
        ext = median_plane_extended_elevation(d)
        if ext in out.entries:
            continue
        peaks, notches = find_spectral_features(extract_prtf(db.hrir[d][idx]), **kwargs)
        out.entries[ext] = {"peaks": peaks, "notches": notches}
    return out


# --- horizontal-plane directivity ------------------------------------------------

@dataclass
class HpdPattern:
    ear: str
    levels: dict            # frequency Hz -> {azimuth deg: dB}

    def to_csv(self, out_dir) -> list:
        paths = []
        for f, row in self.levels.items():
            path = Path(out_dir) / f"hpd_{self.ear}_{f / 1000:g}khz.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["azimuth_deg", "db"])
                for az in sorted(row):
                    w.writerow([az, f"{row[az]:.6f}"])
            paths.append(path)
        return paths


def hpd(db: HrirDatabase, frequencies=HPD_FREQUENCIES) -> dict:
    """Horizontal-plane beam pattern per ear, normalized to the frontal HRTF."""
    front = Direction(0, 0)
    if front not in db.hrir:
        raise ValueError("HPD needs the frontal direction (0, 0)")
    horiz = sorted(d for d in db.hrir if d.elevation_deg == 0)
    fs = db.hrir[front][0].sample_rate
    grid = cue_frequencies(fs)
    bins = [int(np.argmin(np.abs(grid - f))) for f in frequencies]
    out = {}
    for idx, ear in enumerate(("left", "right")):
        ref = cue_spectrum(db.hrir[front][idx])[bins]
        levels = {f: {} for f in frequencies}
        for d in horiz:
            spec = cue_spectrum(db.hrir[d][idx])[bins]
            ratio = np.ones(len(bins)) if d == front else np.abs(spec / ref)
            for f, v in zip(frequencies, 20 * np.log10(ratio)):
                levels[f][d.azimuth_deg] = float(v)
        out[ear] = HpdPattern(ear, levels)
    return out
