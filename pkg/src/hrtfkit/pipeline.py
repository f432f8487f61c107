"""Raw BIR/OIR measurements to a causal 512-sample HRIR database."""
from __future__ import annotations

import math
import re
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .dsp import ImpulseResponse, Spectrum

RAW_LENGTH = 4096
HRIR_LENGTH = dsp.PROCESSED_LENGTH
PRE_PEAK_SAMPLES = 48      # 1 ms at 48 kHz
MIN_TAIL_SAMPLES = 120     # 2.5 ms at 48 kHz
OTF_FLOOR = 1e-4
DEFAULT_SHIFT = 48
DEFAULT_HEAD_RADIUS = 0.0875
SPEED_OF_SOUND = 343.0
SOURCE_DISTANCE = 1.1

AZIMUTHS = tuple(range(-175, 181, 5))
ELEVATIONS = tuple(range(-40, 91, 5))


class WindowClampWarning(UserWarning):
    pass


class BuildError(ValueError):
    """Raised when one or more directions fail during a database build."""

    def __init__(self, failures):
        self.failures = dict(failures)
        lines = [f"  {d}: {msg}" for d, msg in sorted(self.failures.items())]
        super().__init__(f"{len(self.failures)} direction(s) failed:\n" + "\n".join(lines))


@dataclass(frozen=True, order=True)
class Direction:
    azimuth_deg: int
    elevation_deg: int

    def __post_init__(self):
        az, el = self.azimuth_deg, self.elevation_deg
        if az == -180:
            az = 180
        if not -180 < az <= 180:
            raise ValueError(f"azimuth {az} outside (-180, 180]")
        if not -40 <= el <= 90:
            raise ValueError(f"elevation {el} outside [-40, 90]")
        object.__setattr__(self, "azimuth_deg", az)
        object.__setattr__(self, "elevation_deg", el)

    def __str__(self):
        return f"(az {self.azimuth_deg:+d}, el {self.elevation_deg:+d})"

    @property
    def tag(self) -> str:
        return f"az{int(self.azimuth_deg):+04d}_el{int(self.elevation_deg):+03d}"

    def unit_vector(self) -> np.ndarray:
        """x toward the right ear, y to the front, z up."""
        th, ph = math.radians(self.azimuth_deg), math.radians(self.elevation_deg)
        return np.array([math.sin(th) * math.cos(ph), math.cos(th) * math.cos(ph), math.sin(ph)])

    def mirrored(self) -> "Direction":
        return Direction(-self.azimuth_deg if self.azimuth_deg != 180 else 180, self.elevation_deg)


@dataclass(frozen=True)
class MeasurementGrid:
    azimuths: tuple = AZIMUTHS
    elevations: tuple = ELEVATIONS

    def __iter__(self):
        for el in self.elevations:
            for az in self.azimuths:
                yield Direction(az, el)

    def __len__(self):
        return len(self.azimuths) * len(self.elevations)


FULL_GRID = MeasurementGrid()


@dataclass
class RawMeasurementSet:
    bir: dict          # Direction -> (left, right) ImpulseResponse
    oir: dict          # elevation -> ImpulseResponse
    sample_rate: float = dsp.DEFAULT_FS

    def missing(self, grid: MeasurementGrid = FULL_GRID) -> list:
        return [d for d in grid if d not in self.bir]


@dataclass
class HrirDatabase:
    hrir: dict                       # Direction -> (left, right) ImpulseResponse
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.hrir)

    def pair(self, az, el):
        return self.hrir[Direction(az, el)]

    def causal_flags(self) -> dict:
        half = HRIR_LENGTH // 2
        return {d: dsp.peak_index(l) < half and dsp.peak_index(r) < half
                for d, (l, r) in self.hrir.items()}

    def write(self, out_dir) -> list:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [write_hrir_file(out, d, pair) for d, pair in sorted(self.hrir.items())]
        write_meta(out / "db_meta", self.meta)
        return paths

    @classmethod
    def read(cls, in_dir) -> "HrirDatabase":
        src = Path(in_dir)
        hrir = {}
        for path in sorted(src.glob("*.txt")):
            d, pair = read_hrir_file(path)
            hrir[d] = pair
        if not hrir:
            raise ValueError(f"no HRIR files found in {src}")
        meta = read_meta(src / "db_meta") if (src / "db_meta").exists() else {}
        fs = float(meta.get("F_s", dsp.DEFAULT_FS))
        if fs != dsp.DEFAULT_FS:
            hrir = {d: (l.replace(l.samples, fs), r.replace(r.samples, fs)) for d, (l, r) in hrir.items()}
        return cls(hrir, meta)


# --- window selection ------------------------------------------------------

def compute_window_start(raw: RawMeasurementSet, pre_peak: int = PRE_PEAK_SAMPLES) -> int:
    """Common start: 1 ms before the earlier of the two ipsilateral 90-degree peaks."""
    try:
        left = raw.bir[Direction(-90, 0)][0]
        right = raw.bir[Direction(90, 0)][1]
    except KeyError:
        raise ValueError("window start needs BIRs at (-90, 0) and (+90, 0)") from None
    start = min(dsp.peak_index(left), dsp.peak_index(right)) - pre_peak
    if start < 0:
        warnings.warn(f"window start {start} clamped to 0", WindowClampWarning, stacklevel=2)
        start = 0
    return start


def window_bounds(ir: ImpulseResponse, start: int, min_tail: int = MIN_TAIL_SAMPLES) -> tuple[int, int]:
    end = dsp.first_zero_crossing_after(ir, dsp.peak_index(ir), min_tail)
    return start, end


def apply_time_window(ir: ImpulseResponse, start: int, length: int = HRIR_LENGTH,
                      min_tail: int = MIN_TAIL_SAMPLES) -> ImpulseResponse:
    """Keep ir[start:end] (end = first zero crossing past peak + min_tail), zero-pad."""
    if start < 0:
        raise ValueError("window start must be non-negative")
    _, end = window_bounds(ir, start, min_tail)
    if end <= start:
        raise ValueError(f"window end {end} does not follow start {start}")
    if end - start > length:
        raise ValueError(f"window [{start}, {end}) is longer than {length} samples")
    out = np.zeros(length)
    out[:end - start] = ir.samples[start:end]
    return ImpulseResponse(out, ir.sample_rate, start)


# --- transfer functions -----------------------------------------------------

def derive_hrtf(btf: Spectrum, otf: Spectrum, floor: float = OTF_FLOOR) -> Spectrum:
    """Per-bin BTF / OTF; bins where the OTF is below floor * max|OTF| become 0."""
    if len(btf) != len(otf) or not math.isclose(btf.bin_spacing, otf.bin_spacing):
        raise ValueError("BTF and OTF bin grids differ")
    mag = np.abs(otf.bins)
    bad = mag < floor * mag.max()
    safe = np.where(bad, 1.0, otf.bins)
    h = np.where(bad, 0.0, btf.bins / safe)
    return Spectrum(h, btf.bin_spacing, tuple(int(k) for k in np.flatnonzero(bad)))


def max_noncausal_delay(head_radius: float, c: float = SPEED_OF_SOUND) -> float:
    if head_radius < 0:
        raise ValueError("head radius must be non-negative")
    return head_radius / c


def check_shift(m: int, head_radius: float = DEFAULT_HEAD_RADIUS, c: float = SPEED_OF_SOUND,
                fs: float = dsp.DEFAULT_FS, length: int = HRIR_LENGTH) -> None:
    bound = max_noncausal_delay(head_radius, c) * fs
    if not m > bound:
        raise ValueError(
            f"shift m={m} must exceed tau_max*F_s = {bound:.2f} samples "
            f"(tau_max = l/c with l = {head_radius} m)")
    if m >= length // 2:
        raise ValueError(f"shift m={m} must stay below {length // 2}")


def compensate_noncausality(hrir: ImpulseResponse, m: int = DEFAULT_SHIFT,
                            head_radius: float = DEFAULT_HEAD_RADIUS,
                            c: float = SPEED_OF_SOUND) -> ImpulseResponse:
    check_shift(m, head_radius, c, hrir.sample_rate, len(hrir))
    return dsp.circular_shift(hrir, m)


# --- database build -----------------------------------------------------------

def _hrir_pair(raw: RawMeasurementSet, d: Direction, start: int, otf_cache: dict,
               m: int, compensate: bool, head_radius: float):
    otf = otf_cache[d.elevation_deg]
    out = []
    for ir in raw.bir[d]:
        btf = dsp.forward_transform(apply_time_window(ir, start))
        h = dsp.inverse_transform(derive_hrtf(btf, otf))
        if compensate:
            h = compensate_noncausality(h, m, head_radius)
        out.append(h)
    return tuple(out)


def build_database(raw: RawMeasurementSet, m: int = DEFAULT_SHIFT,
                   head_radius: float = DEFAULT_HEAD_RADIUS, *, compensate: bool = True,
                   grid: MeasurementGrid | None = FULL_GRID, workers: int | None = None,
                   subject: str = "") -> HrirDatabase:
    """Window, normalize by the origin response, invert and shift every direction.

    ``grid=None`` processes whatever directions ``raw`` contains. The result does
    not depend on ``workers``.
    """
    if compensate:
        check_shift(m, head_radius, fs=raw.sample_rate)
    directions = sorted(raw.bir) if grid is None else list(grid)
    missing = [d for d in directions if d not in raw.bir]
    if missing:
        raise BuildError({d: "missing from raw measurement set" for d in missing})

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", WindowClampWarning)
        start = compute_window_start(raw)
    clamped = any(issubclass(w.category, WindowClampWarning) for w in caught)

    otf_cache, failures = {}, {}
    for el in sorted({d.elevation_deg for d in directions}):
        if el not in raw.oir:
            failures.update({d: f"no OIR for elevation {el}" for d in directions if d.elevation_deg == el})
            continue
        try:
            otf_cache[el] = dsp.forward_transform(apply_time_window(raw.oir[el], start))
        except ValueError as exc:
            failures.update({d: f"OIR: {exc}" for d in directions if d.elevation_deg == el})
    todo = [d for d in directions if d not in failures]

    def job(d):
        try:
            return d, _hrir_pair(raw, d, start, otf_cache, m, compensate, head_radius), None
        except ValueError as exc:
            return d, None, str(exc)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, todo))
    else:
        results = [job(d) for d in todo]

    hrir = {}
    for d, pair, err in results:
        if err is not None:
            failures[d] = err
        else:
            hrir[d] = pair
    if failures:
        raise BuildError(failures)

    flagged = sorted({k for otf in otf_cache.values()
                      for k in np.flatnonzero(np.abs(otf.bins) < OTF_FLOOR * np.abs(otf.bins).max())})
    meta = {
        "F_s": raw.sample_rate,
        "m": m if compensate else 0,
        "window_start": start,
        "window_start_clamped": int(clamped),
        "l": head_radius,
        "subject": subject,
        "N": HRIR_LENGTH,
        "otf_flagged_bins": len(flagged),
    }
    return HrirDatabase(dict(sorted(hrir.items())), meta)


# --- file formats ------------------------------------------------------------

_HRIR_RE = re.compile(r"az([+-]?\d+)_el([+-]?\d+)")
_RAW_OIR_RE = re.compile(r"oir_el([+-]?\d+)")


def parse_direction(name: str) -> Direction:
    m = _HRIR_RE.search(name)
    if not m:
        raise ValueError(f"cannot parse a direction from file name {name!r}")
    return Direction(int(m.group(1)), int(m.group(2)))


def write_hrir_file(out_dir, d: Direction, pair) -> Path:
    left, right = (np.asarray(dsp._samples(x)) for x in pair)
    if left.size != HRIR_LENGTH or right.size != HRIR_LENGTH:
        raise ValueError(f"HRIRs must have {HRIR_LENGTH} samples")
    path = Path(out_dir) / f"hrir_{d.tag}.txt"
    text = "".join(f"{a:+.10e} {b:+.10e}\n" for a, b in zip(left.tolist(), right.tolist()))
    path.write_text(text)
    return path


def read_hrir_file(path, sample_rate: float = dsp.DEFAULT_FS):
    path = Path(path)
    d = parse_direction(path.name)
    rows = [ln.split() for ln in path.read_text().splitlines() if ln.strip()]
    if len(rows) != HRIR_LENGTH:
        raise ValueError(f"{path.name}: expected {HRIR_LENGTH} rows, found {len(rows)}")
    if any(len(r) != 2 for r in rows):
        raise ValueError(f"{path.name}: every row needs exactly two columns")
    try:
        data = np.array(rows, dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path.name}: {exc}") from None
    return d, (ImpulseResponse(data[:, 0], sample_rate), ImpulseResponse(data[:, 1], sample_rate))


def write_meta(path, meta: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in meta.items()))


def read_meta(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, _, v = line.partition("=")
            out[k.strip()] = _coerce(v.strip())
    return out


def _coerce(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def _fmt_column(x) -> str:
    return "\n".join(repr(v) for v in np.asarray(x, dtype=float).tolist())


def raw_bir_name(d: Direction) -> str:
    return f"bir_{d.tag}.csv"


def raw_oir_name(elevation: int) -> str:
    return f"oir_el{int(elevation):+03d}.csv"


def write_raw_set(raw: RawMeasurementSet, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for d, (l, r) in sorted(raw.bir.items()):
        lines = (f"{a!r},{b!r}" for a, b in zip(l.samples.tolist(), r.samples.tolist()))
        (out / raw_bir_name(d)).write_text("\n".join(lines) + "\n")
    for el, ir in sorted(raw.oir.items()):
        (out / raw_oir_name(el)).write_text(_fmt_column(ir.samples) + "\n")


def _read_numbers(path, columns: int) -> np.ndarray:
    values = np.array(Path(path).read_text().replace(",", " ").split(), dtype=float)
    if values.size % columns:
        raise ValueError(f"{Path(path).name}: ragged rows")
    return values.reshape(-1, columns)


def read_raw_set(in_dir, sample_rate: float = dsp.DEFAULT_FS) -> RawMeasurementSet:
    src = Path(in_dir)
    bir, oir = {}, {}
    for path in sorted(src.glob("bir_*.csv")):
        data = _read_numbers(path, 2)
        bir[parse_direction(path.name)] = (ImpulseResponse(data[:, 0], sample_rate),
                                           ImpulseResponse(data[:, 1], sample_rate))
    for path in sorted(src.glob("oir_*.csv")):
        m = _RAW_OIR_RE.search(path.name)
        oir[int(m.group(1))] = ImpulseResponse(_read_numbers(path, 1)[:, 0], sample_rate)
    if not bir:
        raise ValueError(f"no raw BIR files in {src}")
    lengths = {len(x) for pair in bir.values() for x in pair} | {len(x) for x in oir.values()}
    if len(lengths) != 1:
        raise ValueError(f"raw impulse responses have mixed lengths {sorted(lengths)}")
    return RawMeasurementSet(bir, oir, sample_rate)
