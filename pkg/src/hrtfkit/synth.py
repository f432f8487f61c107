"""Synthetic BIR/OIR sets with known ground truth.

A rigid sphere stands in for the head: each ear hears a band-limited pulse at
the free-field arrival time plus a creeping-wave delay (Woodworth geometry).
Ears in the geometric shadow also get a zero-phase low-pass. An optional
pinna-like notch and a speaker colouration of the whole chain can be added on
top. Every filter is a finite FIR so that, once the raw
responses are windowed, the ratio BTF/OTF is exactly the head filter.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import i0

from . import dsp
from .dsp import ImpulseResponse
from .electroacoustics import REFERENCE_DRIVER, ThieleSmallParams, simulate_sealed_module
from .pipeline import (FULL_GRID, RAW_LENGTH, Direction, MeasurementGrid,
                       RawMeasurementSet, write_raw_set)

PULSE_HALF_WIDTH = 8
PULSE_BETA = 6.0
SHADOW_HALF_WIDTH = 18
NOTCH_HALF_WIDTH = 30
NOTCH_SIGMA = 10.0
COLORATION_TAPS = 48

EARS = ("left", "right")
_EAR_AXIS = {"left": np.array([-1.0, 0.0, 0.0]), "right": np.array([1.0, 0.0, 0.0])}


@dataclass(frozen=True)
class SphericalHeadModel:
    head_radius: float = 0.0875
    c: float = 343.0
    distance: float = 1.1
    sample_rate: float = dsp.DEFAULT_FS
    length: int = RAW_LENGTH
    shadow_strength: float = 0.9     # high-frequency loss fraction at the far pole
    notch: tuple | None = None       # (center Hz, depth dB)
    noise_db: float | None = None    # additive noise re. peak, seeded

    def __post_init__(self):
        if not 0 < self.head_radius < self.distance:
            raise ValueError("head radius must be positive and smaller than the source distance")
        if not 0 <= self.shadow_strength < 1:
            raise ValueError("shadow_strength must lie in [0, 1)")

    @property
    def arrival_sample(self) -> int:
        """Head-centre arrival, snapped to the grid by a sub-sample emission offset."""
        return int(round(self.distance / self.c * self.sample_rate))

    @property
    def max_itd(self) -> float:
        return self.head_radius / self.c * (1 + math.pi / 2)


@dataclass(frozen=True)
class SpeakerColoration:
    """Minimum-phase FIR standing in for the measurement chain."""

    taps: np.ndarray = field(default_factory=lambda: np.array([1.0]))

    def __post_init__(self):
        t = np.asarray(self.taps, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise ValueError("coloration taps must be a non-empty 1-D array")
        object.__setattr__(self, "taps", t)

    @property
    def is_flat(self) -> bool:
        return self.taps.size == 1 and self.taps[0] == 1.0

    def magnitude(self, freqs, sample_rate: float = dsp.DEFAULT_FS) -> np.ndarray:
        w = 2 * np.pi * np.asarray(freqs, dtype=float) / sample_rate
        n = np.arange(self.taps.size)
        return np.abs(np.exp(-1j * np.outer(w, n)) @ self.taps)

    @classmethod
    def flat(cls) -> "SpeakerColoration":
        return cls()

    @classmethod
    def from_magnitude(cls, freqs, magnitude, taps: int = COLORATION_TAPS,
                       sample_rate: float = dsp.DEFAULT_FS, floor_db: float = -40.0,
                       n_fft: int = 4096) -> "SpeakerColoration":
        """Minimum-phase FIR (real cepstrum) approximating a magnitude profile."""
        grid = np.fft.rfftfreq(n_fft, 1 / sample_rate)
        mag = np.interp(grid, freqs, magnitude)
        mag = mag / mag.max()
        mag = np.maximum(mag, 10 ** (floor_db / 20))
        full = np.concatenate([mag, mag[-2:0:-1]])
        cep = np.fft.ifft(np.log(full)).real
        fold = np.zeros(n_fft)
        fold[0] = cep[0]
        fold[1:n_fft // 2] = 2 * cep[1:n_fft // 2]
        fold[n_fft // 2] = cep[n_fft // 2]
        h = np.fft.ifft(np.exp(np.fft.fft(fold))).real[:taps]
        fade = taps // 3
        h[-fade:] *= np.cos(0.5 * np.pi * np.arange(1, fade + 1) / (fade + 1)) ** 2
        return cls(h / np.abs(h).max())

    @classmethod
    def sealed_module(cls, tsp: ThieleSmallParams = REFERENCE_DRIVER, V_box: float = 800e-6,
                      **kwargs) -> "SpeakerColoration":
        freqs = np.linspace(10.0, 24000.0, 2400)
        resp = simulate_sealed_module(tsp, V_box, freqs=freqs)
        return cls.from_magnitude(freqs, np.abs(resp.pressure), **kwargs)


def incidence_angle(direction: Direction, ear: str) -> float:
    """Angle between the source direction and the ear's radius vector."""
    cos_g = float(np.clip(direction.unit_vector() @ _EAR_AXIS[ear], -1.0, 1.0))
    return math.acos(cos_g)


def ear_delay(direction: Direction, ear: str, model: SphericalHeadModel = SphericalHeadModel()) -> float:
    """Arrival time at the ear relative to the head centre, in seconds."""
    g = incidence_angle(direction, ear)
    a_c = model.head_radius / model.c
    if g < math.pi / 2:
        return -a_c * math.cos(g)
    return a_c * (g - math.pi / 2)


def true_itd(direction: Direction, model: SphericalHeadModel = SphericalHeadModel()) -> float:
    """Left arrival minus right arrival (positive: source on the right)."""
    return ear_delay(direction, "left", model) - ear_delay(direction, "right", model)


def woodworth_itd(azimuth_deg: float, head_radius: float = 0.0875, c: float = 343.0) -> float:
    th = math.radians(azimuth_deg)
    return head_radius / c * (math.sin(th) + th)


def fractional_pulse(position: float, length: int, half_width: int = PULSE_HALF_WIDTH,
                     beta: float = PULSE_BETA) -> np.ndarray:
    """Kaiser-windowed sinc centred at a fractional sample position.

    At an integer position this is an exact unit impulse.
    """
    out = np.zeros(length)
    lo = max(int(math.ceil(position - half_width)), 0)
    hi = min(int(math.floor(position + half_width)), length - 1)
    n = np.arange(lo, hi + 1)
    x = n - position
    w = i0(beta * np.sqrt(np.clip(1 - (x / half_width) ** 2, 0, None))) / i0(beta)
    out[lo:hi + 1] = np.sinc(x) * w
    return out


def shadow_filter(gamma: float, model: SphericalHeadModel) -> np.ndarray:
    """Zero-phase low-pass for a shadowed ear (symmetric, odd length, unit DC)."""
    depth = model.shadow_strength * min(max((gamma - math.pi / 2) / (math.pi / 2), 0.0), 1.0)
    k = np.arange(-SHADOW_HALF_WIDTH, SHADOW_HALF_WIDTH + 1)
    h = np.zeros(k.size)
    h[SHADOW_HALF_WIDTH] = 1.0
    if depth == 0:
        return h
    # Gaussian with its -3 dB point at an angular frequency of 2c/a
    wc = 2 * model.c / model.head_radius / model.sample_rate
    sigma = math.sqrt(2 * math.log(10 ** 0.15)) / wc
    g = np.exp(-0.5 * (k / sigma) ** 2)
    g /= g.sum()
    return (1 - depth) * h + depth * g


def notch_filter(center_hz: float, depth_db: float, sample_rate: float = dsp.DEFAULT_FS) -> np.ndarray:
    """Linear-phase notch: unit impulse minus a Gaussian-windowed cosine band."""
    k = np.arange(-NOTCH_HALF_WIDTH, NOTCH_HALF_WIDTH + 1)
    wn = 2 * np.pi * center_hz / sample_rate
    band = np.exp(-0.5 * (k / NOTCH_SIGMA) ** 2) * np.cos(wn * k)
    band /= np.abs(np.sum(band * np.exp(-1j * wn * k)))
    h = -(1 - 10 ** (-depth_db / 20)) * band
    h[NOTCH_HALF_WIDTH] += 1.0
    return h


def _centered_convolve(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    return np.convolve(x, taps, mode="same")


def _ear_signal(position: float, gamma: float, model: SphericalHeadModel,
                coloration: SpeakerColoration) -> np.ndarray:
    x = fractional_pulse(position, model.length)
    if gamma > math.pi / 2:
        x = _centered_convolve(x, shadow_filter(gamma, model))
    if model.notch is not None:
        x = _centered_convolve(x, notch_filter(*model.notch, model.sample_rate))
    if not coloration.is_flat:
        x = np.convolve(x, coloration.taps)[:model.length]
    return x


def _add_reflections(x: np.ndarray, reflections, onset: int) -> np.ndarray:
    out = x.copy()
    for offset, gain in reflections:
        if onset + offset + 1 >= x.size or offset < 1:
            raise ValueError(f"reflection offset {offset} does not fit in the buffer")
        out[offset:] += gain * x[:x.size - offset]
    return out


def _add_noise(x: np.ndarray, model: SphericalHeadModel, rng) -> np.ndarray:
    if model.noise_db is None:
        return x
    return x + rng.standard_normal(x.size) * np.abs(x).max() * 10 ** (model.noise_db / 20)


def synth_bir(direction: Direction, model: SphericalHeadModel = SphericalHeadModel(),
              coloration: SpeakerColoration = SpeakerColoration(), reflections=(),
              rng=None) -> tuple[ImpulseResponse, ImpulseResponse]:
    """Left/right raw BIRs for one direction.

    ``reflections`` is a sequence of (offset samples, gain) pairs, each adding a
    delayed copy of the direct sound.
    """
    n0 = model.arrival_sample
    out = []
    for ear in EARS:
        pos = n0 + ear_delay(direction, ear, model) * model.sample_rate
        x = _ear_signal(pos, incidence_angle(direction, ear), model, coloration)
        x = _add_reflections(x, reflections, int(pos))
        if rng is not None:
            x = _add_noise(x, model, rng)
        out.append(ImpulseResponse(x, model.sample_rate))
    return out[0], out[1]


def synth_oir(elevation: int, model: SphericalHeadModel = SphericalHeadModel(),
              coloration: SpeakerColoration = SpeakerColoration(), reflections=(),
              rng=None) -> ImpulseResponse:
    """Head-absent response at the head centre: the measurement chain alone."""
    x = fractional_pulse(float(model.arrival_sample), model.length)
    if not coloration.is_flat:
        x = np.convolve(x, coloration.taps)[:model.length]
    x = _add_reflections(x, reflections, model.arrival_sample)
    if rng is not None:
        x = _add_noise(x, model, rng)
    return ImpulseResponse(x, model.sample_rate)


def reflections_from_ms(offset_ms: float, gain: float = 0.3,
                        sample_rate: float = dsp.DEFAULT_FS) -> tuple:
    if offset_ms < 5.0:
        raise ValueError("reflection offsets below 5 ms are not supported")
    return ((int(round(offset_ms * 1e-3 * sample_rate)), gain),)


def synth_set(model: SphericalHeadModel = SphericalHeadModel(),
              coloration: SpeakerColoration = SpeakerColoration(), reflections=(),
              grid: MeasurementGrid = FULL_GRID, seed: int = 0) -> RawMeasurementSet:
    rng = np.random.default_rng(seed) if model.noise_db is not None else None
    bir = {d: synth_bir(d, model, coloration, reflections, rng) for d in grid}
    oir = {el: synth_oir(el, model, coloration, reflections, rng) for el in grid.elevations}
    return RawMeasurementSet(bir, oir, model.sample_rate)


def write_truth(path, model: SphericalHeadModel, grid: MeasurementGrid = FULL_GRID,
                reflections=()) -> None:
    notch = "" if model.notch is None else f"{model.notch[0]:g}"
    first_offset = min((o for o, _ in reflections), default=None)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["azimuth_deg", "elevation_deg", "itd_true_s", "notch_hz", "reflection_sample"])
        for d in grid:
            early = model.arrival_sample + min(ear_delay(d, e, model) for e in EARS) * model.sample_rate
            refl = "" if first_offset is None else str(int(round(early)) + first_offset)
            w.writerow([d.azimuth_deg, d.elevation_deg, f"{true_itd(d, model):.12e}", notch, refl])


def read_truth(path) -> dict:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            d = Direction(int(row["azimuth_deg"]), int(row["elevation_deg"]))
            out[d] = {
                "itd": float(row["itd_true_s"]),
                "notch_hz": float(row["notch_hz"]) if row["notch_hz"] else None,
                "reflection_sample": int(row["reflection_sample"]) if row["reflection_sample"] else None,
            }
    return out


def write_synth_tree(out_dir, model: SphericalHeadModel = SphericalHeadModel(),
                     coloration: SpeakerColoration = SpeakerColoration(), reflections=(),
                     grid: MeasurementGrid = FULL_GRID, seed: int = 0) -> RawMeasurementSet:
    raw = synth_set(model, coloration, reflections, grid, seed)
    write_raw_set(raw, out_dir)
    write_truth(Path(out_dir) / "truth.csv", model, grid, reflections)
    return raw
