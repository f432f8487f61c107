"""Sealed-box loudspeaker simulation and delta-mass Thiele-Small identification.

Units are SI throughout (Ohm, Hz, m^2, m^3, kg, m/N, T*m). Acoustic impedances
are in acoustic ohms (Pa*s/m^3).
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .specfun import bessel_j1, struve_h1

RHO0 = 1.21
C_AIR = 343.0
P_REF = 20e-6


@dataclass(frozen=True)
class ThieleSmallParams:
    R_evc: float
    F_0: float
    S_d: float
    K_rm: float
    E_rm: float
    K_xm: float
    E_xm: float
    V_as: float
    C_ms: float
    M_md: float
    M_ms: float
    BL: float
    Q_ms: float
    Q_es: float
    Q_ts: float
    N_0: float = float("nan")
    SPL_0: float = float("nan")

    @property
    def R_ms(self) -> float:
        return 2 * math.pi * self.F_0 * self.M_ms / self.Q_ms

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("N_0", "SPL_0") and math.isnan(v):
                continue
            if f.name != "SPL_0" and not v > 0:
                raise ValueError(f"{f.name} must be positive, got {v}")
        for name in ("E_rm", "E_xm"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")


# Peerless PLS-P830986
REFERENCE_DRIVER = ThieleSmallParams(
    R_evc=6.291, F_0=101.221, S_d=0.002827, K_rm=0.010251, E_rm=0.503,
    K_xm=0.040639, E_xm=0.392, V_as=1.255e-3, C_ms=0.001106, M_md=2.150e-3,
    M_ms=2.236e-3, BL=3.265, Q_ms=4.531, Q_es=0.839, Q_ts=0.708,
    N_0=0.150e-2, SPL_0=83.778,
)

# key=value file: field -> (file key, unit label, scale from file value to SI)
_TSP_FILE_UNITS = {
    "R_evc": ("ohm", 1.0), "F_0": ("Hz", 1.0), "S_d": ("m^2", 1.0),
    "K_rm": ("ohm", 1.0), "E_rm": ("", 1.0), "K_xm": ("H", 1.0), "E_xm": ("", 1.0),
    "V_as": ("l", 1e-3), "C_ms": ("m/N", 1.0), "M_md": ("g", 1e-3),
    "M_ms": ("g", 1e-3), "BL": ("Tm", 1.0), "Q_ms": ("", 1.0), "Q_es": ("", 1.0),
    "Q_ts": ("", 1.0), "N_0": ("%", 1e-2), "SPL_0": ("dB", 1.0),
}


def write_tsp_file(tsp: ThieleSmallParams, path) -> None:
    lines = []
    for name, (unit, scale) in _TSP_FILE_UNITS.items():
        key = f"{name}_{unit.replace('^', '').replace('/', '_per_')}" if unit else name
        lines.append(f"{key}={getattr(tsp, name) / scale:.9g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_tsp_file(path) -> ThieleSmallParams:
    raw = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        raw[key.strip()] = float(value)
    values = {}
    for name, (unit, scale) in _TSP_FILE_UNITS.items():
        candidates = [k for k in raw if k == name or k.startswith(name + "_")]
        if not candidates:
            if name in ("N_0", "SPL_0"):
                continue
            raise ValueError(f"TSP file {path} lacks {name}")
        values[name] = raw[candidates[0]] * scale
    tsp = ThieleSmallParams(**values)
    tsp.validate()
    return tsp


@dataclass(frozen=True)
class ImpedanceCurve:
    frequencies: np.ndarray
    impedance: np.ndarray
    magnitude_only: bool = False

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        z = np.asarray(self.impedance, dtype=float if self.magnitude_only else complex)
        if f.ndim != 1 or f.shape != z.shape:
            raise ValueError("frequency and impedance arrays must be 1-D and equal length")
        if f.size < 50:
            raise ValueError("impedance curve needs at least 50 points")
        if np.any(np.diff(f) <= 0):
            raise ValueError("impedance curve frequencies must be strictly increasing")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "impedance", z)

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.impedance)


def read_impedance_csv(path, magnitude_only: bool = False) -> ImpedanceCurve:
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2,
                      skiprows=_header_rows(path))
    if magnitude_only:
        return ImpedanceCurve(data[:, 0], data[:, 1], magnitude_only=True)
    if data.shape[1] < 3:
        raise ValueError(f"{path}: expected freq_hz,re_ohm,im_ohm columns")
    return ImpedanceCurve(data[:, 0], data[:, 1] + 1j * data[:, 2])


def write_impedance_csv(curve: ImpedanceCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if curve.magnitude_only:
            w.writerow(["freq_hz", "mag_ohm"])
            for f, z in zip(curve.frequencies, curve.impedance):
                w.writerow([f"{f:.9g}", f"{z:.12g}"])
        else:
            w.writerow(["freq_hz", "re_ohm", "im_ohm"])
            for f, z in zip(curve.frequencies, curve.impedance):
                w.writerow([f"{f:.9g}", f"{z.real:.12g}", f"{z.imag:.12g}"])


def _header_rows(path) -> int:
    with open(path) as fh:
        first = fh.readline()
    try:
        float(first.split(",")[0])
        return 0
    except ValueError:
        return 1


def default_frequency_grid(f_lo=20.0, f_hi=20000.0, per_octave=48) -> np.ndarray:
    n = int(round(math.log2(f_hi / f_lo) * per_octave)) + 1
    return f_lo * 2.0 ** (np.arange(n) / per_octave)


# --- radiation and sealed-box simulation ----------------------------------

def radiation_impedance(ka, S_d: float, rho0_c: float = RHO0 * C_AIR, omega=None):
    """Piston radiation resistance and reactance (acoustic ohms).

    Returns ``(R_ar, X_ar, M_ar)``; ``M_ar`` needs ``omega`` and is ``None``
    otherwise. The ka -> 0 limits are used exactly at ka = 0.
    """
    ka = np.asarray(ka, dtype=float)
    if np.any(ka < 0):
        raise ValueError("ka must be non-negative")
    if S_d <= 0:
        raise ValueError("S_d must be positive")
    z0 = rho0_c / S_d
    safe = np.where(ka > 0, ka, 1.0)
    R = np.where(ka > 0, z0 * (1.0 - bessel_j1(2 * safe) / safe), 0.0)
    X = np.where(ka > 0, z0 * struve_h1(2 * safe) / safe, 0.0)
    M = None
    if omega is not None:
        omega = np.asarray(omega, dtype=float)
        # small-ka limit of X/omega: 8 rho0 a / (3 pi S_d) with a = ka / k
        a = math.sqrt(S_d / math.pi)
        M_lim = 8 * rho0_c / C_AIR * a / (3 * math.pi * S_d)
        M = np.where(omega > 0, X / np.where(omega > 0, omega, 1.0), M_lim)
    if R.ndim == 0:
        R, X = float(R), float(X)
        M = None if M is None else float(M)
    return R, X, M


@dataclass(frozen=True)
class SealedModuleResponse:
    frequencies: np.ndarray
    excursion: np.ndarray         # complex, m
    volume_velocity: np.ndarray   # complex, m^3/s
    pressure: np.ndarray          # Pa (rms), on-axis at distance r
    z_as: np.ndarray              # acoustic circuit impedance
    p_ag: float
    V_eg: float
    r: float
    V_box: float

    @property
    def spl(self) -> np.ndarray:
        return 20 * np.log10(np.abs(self.pressure) / P_REF)

    def peak_excursion(self) -> tuple[float, float]:
        k = int(np.argmax(np.abs(self.excursion)))
        return float(self.frequencies[k]), float(np.abs(self.excursion[k]))

    def peak_volume_velocity(self) -> tuple[float, float]:
        k = int(np.argmax(np.abs(self.volume_velocity)))
        return float(self.frequencies[k]), float(np.abs(self.volume_velocity[k]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["freq_hz", "excursion_mm", "volume_velocity_m3s", "spl_db"])
            for row in zip(self.frequencies, np.abs(self.excursion) * 1e3,
                           np.abs(self.volume_velocity), self.spl):
                w.writerow([f"{v:.9g}" for v in row])


def simulate_sealed_module(tsp: ThieleSmallParams, V_box: float, V_eg: float = 2.828,
                           r: float = 1.0, freqs=None, rho0: float = RHO0,
                           c: float = C_AIR) -> SealedModuleResponse:
    """Equivalent acoustic circuit of a driver in a closed box."""
    if not V_box > 0:
        raise ValueError("V_box must be positive")
    f = default_frequency_grid() if freqs is None else np.asarray(freqs, dtype=float)
    if np.any(f <= 0):
        raise ValueError("frequencies must be positive")
    S_d = tsp.S_d
    w = 2 * np.pi * f
    a = math.sqrt(S_d / math.pi)

    i = V_eg / tsp.R_evc
    P_ag = tsp.BL * i / S_d
    R_avc = (tsp.BL / S_d) ** 2 / tsp.R_evc
    R_as = tsp.R_ms / S_d ** 2
    C_as = tsp.C_ms * S_d ** 2
    M_ad = tsp.M_md / S_d ** 2
    R_ar, _, M_ar = radiation_impedance(w / c * a, S_d, rho0 * c, omega=w)
    k_box = rho0 * c ** 2 * S_d ** 2 / V_box
    C_ab = S_d ** 2 / k_box

    Z_as = (R_avc + R_as + R_ar) + 1j * w * (M_ad + M_ar) \
        + 1 / (1j * w * C_as) + 1 / (1j * w * C_ab)
    U_a = P_ag / Z_as
    X = U_a / (1j * w * S_d)
    p = U_a * 2 * rho0 * c / S_d * np.abs(np.sin(w / (2 * c) * (np.sqrt(r ** 2 + S_d / np.pi) - r)))
    return SealedModuleResponse(f, X, U_a, p, Z_as, P_ag, V_eg, r, V_box)


def closed_box_resonance(tsp: ThieleSmallParams, V_box: float) -> float:
    return tsp.F_0 * math.sqrt(1 + tsp.V_as / V_box)


def rolloff_frequency(resp_or_freqs, spl=None, drop_db: float = 6.0) -> float:
    """Lowest frequency at which the SPL first climbs to (max SPL - drop_db).

    Accepts a ``SealedModuleResponse`` or a ``(freqs, spl)`` pair. Linear
    interpolation between grid points.
    """
    if spl is None:
        f, level = resp_or_freqs.frequencies, resp_or_freqs.spl
    else:
        f, level = np.asarray(resp_or_freqs, float), np.asarray(spl, float)
    target = level.max() - drop_db
    above = np.flatnonzero(level >= target)
    k = int(above[0])
    if k == 0:
        raise ValueError("response never drops by %.1f dB below its maximum" % drop_db)
    f0, f1, l0, l1 = f[k - 1], f[k], level[k - 1], level[k]
    return float(f0 + (target - l0) * (f1 - f0) / (l1 - l0))


# --- impedance model and delta-mass identification -------------------------

def _motor_terms(f, R_evc, K_rm, E_rm, K_xm, E_xm):
    w = 2 * np.pi * np.asarray(f, dtype=float)
    return R_evc + K_rm * w ** E_rm + 1j * K_xm * w ** E_xm


def _impedance(f, R_evc, K_rm, E_rm, K_xm, E_xm, BL, M_ms, C_ms, R_ms):
    w = 2 * np.pi * np.asarray(f, dtype=float)
    z_mech = R_ms + 1j * w * M_ms + 1 / (1j * w * C_ms)
    return _motor_terms(f, R_evc, K_rm, E_rm, K_xm, E_xm) + BL ** 2 / z_mech


def motor_impedance(tsp: ThieleSmallParams, freqs, added_mass: float = 0.0,
                    motional: bool = True) -> np.ndarray:
    """Electrical input impedance: blocked motor model plus motional branch."""
    f = np.asarray(freqs, dtype=float)
    if np.any(f <= 0):
        raise ValueError("frequencies must be positive")
    z = _motor_terms(f, tsp.R_evc, tsp.K_rm, tsp.E_rm, tsp.K_xm, tsp.E_xm)
    if motional and tsp.BL != 0:
        w = 2 * np.pi * f
        z_mech = tsp.R_ms + 1j * w * (tsp.M_ms + added_mass) + 1 / (1j * w * tsp.C_ms)
        z = z + tsp.BL ** 2 / z_mech
    return z


def _peak_frequency(curve: ImpedanceCurve) -> tuple[float, float]:
    mag = curve.magnitude
    k = int(np.argmax(mag))
    if k == 0 or k == mag.size - 1:
        raise ValueError("impedance curve has no interior resonance peak")
    x = np.log(curve.frequencies[k - 1:k + 2])
    y = mag[k - 1:k + 2]
    # parabola through three points in log-frequency
    denom = (x[0] - x[1]) * (x[0] - x[2]) * (x[1] - x[2])
    A = (x[2] * (y[1] - y[0]) + x[1] * (y[0] - y[2]) + x[0] * (y[2] - y[1])) / denom
    B = (x[2] ** 2 * (y[0] - y[1]) + x[1] ** 2 * (y[2] - y[0]) + x[0] ** 2 * (y[1] - y[2])) / denom
    if A >= 0:
        return float(curve.frequencies[k]), float(mag[k])
    xv = -B / (2 * A)
    yv = A * xv ** 2 + B * xv + (y[0] - A * x[0] ** 2 - B * x[0])
    return float(np.exp(xv)), float(yv)


def _bracket(curve: ImpedanceCurve, level: float, f_peak: float) -> tuple[float, float]:
    f, mag = curve.frequencies, curve.magnitude
    k = int(np.searchsorted(f, f_peak))
    lo = np.flatnonzero(mag[:k] < level)
    hi = np.flatnonzero(mag[k:] < level)
    if lo.size == 0 or hi.size == 0:
        raise ValueError("impedance peak is not bracketed by the measured band")
    i = lo[-1]
    f1 = np.interp(level, [mag[i], mag[i + 1]], [f[i], f[i + 1]])
    j = k + hi[0]
    f2 = np.interp(level, [mag[j], mag[j - 1]], [f[j], f[j - 1]])
    return float(f1), float(f2)


def _fit_motor_tail(f, z_blocked) -> tuple[float, float, float, float]:
    """Power-law fit of the blocked impedance in the log domain."""
    w = 2 * np.pi * f
    re, im = z_blocked.real, z_blocked.imag
    ok = (re > 0) & (im > 0)
    if ok.sum() < 4:
        raise ValueError("high-frequency tail does not look like a lossy inductor")
    lw = np.log(w[ok])
    E_rm, lk_rm = np.polyfit(lw, np.log(re[ok]), 1)
    E_xm, lk_xm = np.polyfit(lw, np.log(im[ok]), 1)
    return float(np.exp(lk_rm)), float(E_rm), float(np.exp(lk_xm)), float(E_xm)


@dataclass(frozen=True)
class TspFit:
    params: ThieleSmallParams
    F_0_peak: float
    F_0_mass_peak: float
    rms_residual: float          # relative, over both curves
    initial: ThieleSmallParams


def derive_tsp(R_evc, K_rm, E_rm, K_xm, E_xm, BL, M_ms, C_ms, R_ms, S_d,
               rho0: float = RHO0, c: float = C_AIR) -> ThieleSmallParams:
    F_0 = 1 / (2 * math.pi * math.sqrt(M_ms * C_ms))
    w0 = 2 * math.pi * F_0
    Q_ms = w0 * M_ms / R_ms
    Q_es = w0 * M_ms * R_evc / BL ** 2
    Q_ts = Q_ms * Q_es / (Q_ms + Q_es)
    V_as = rho0 * c ** 2 * C_ms * S_d ** 2
    a = math.sqrt(S_d / math.pi)
    M_md = M_ms - 8 * rho0 * a ** 3 / 3
    N_0 = 4 * math.pi ** 2 / c ** 3 * F_0 ** 3 * V_as / Q_es
    # half-space radiation of 1 W acoustic * efficiency at 1 m
    SPL_0 = 10 * math.log10(N_0 * rho0 * c / (2 * math.pi) / P_REF ** 2)
    return ThieleSmallParams(
        R_evc=R_evc, F_0=F_0, S_d=S_d, K_rm=K_rm, E_rm=E_rm, K_xm=K_xm, E_xm=E_xm,
        V_as=V_as, C_ms=C_ms, M_md=M_md, M_ms=M_ms, BL=BL, Q_ms=Q_ms, Q_es=Q_es,
        Q_ts=Q_ts, N_0=N_0, SPL_0=SPL_0,
    )


def fit_tsp_delta_mass(curve_free: ImpedanceCurve, curve_mass: ImpedanceCurve,
                       delta_mass: float, S_d: float, R_evc: float | None = None) -> TspFit:
    """Identify Thiele-Small parameters from free and mass-loaded impedance curves.

    Closed-form added-mass relations give the starting point; a joint
    least-squares fit of the full impedance model to both curves refines it.
    ``R_evc`` is the DC voice-coil resistance if it was measured separately.
    """
    if not delta_mass > 0:
        raise ValueError("delta_mass must be positive")
    if not S_d > 0:
        raise ValueError("S_d must be positive")
    F0, z_max = _peak_frequency(curve_free)
    F0m, _ = _peak_frequency(curve_mass)
    if F0m >= F0:
        raise ValueError(
            f"added mass did not lower the resonance ({F0m:.2f} Hz >= {F0:.2f} Hz); "
            "are the curves swapped?")

    f = curve_free.frequencies
    if R_evc is None:
        low = f < F0
        R_evc_0 = float(np.min(curve_free.magnitude[low] if low.any() else curve_free.magnitude))
        if not curve_free.magnitude_only:
            R_evc_0 = float(np.min(curve_free.impedance.real))
    else:
        R_evc_0 = float(R_evc)

    M_ms = delta_mass / ((F0 / F0m) ** 2 - 1)
    C_ms = 1 / ((2 * math.pi * F0) ** 2 * M_ms)
    r0 = z_max / R_evc_0
    f1, f2 = _bracket(curve_free, math.sqrt(r0) * R_evc_0, F0)
    Q_ms = F0 * math.sqrt(r0) / (f2 - f1)
    R_ms = 2 * math.pi * F0 * M_ms / Q_ms
    BL = math.sqrt(max(z_max - R_evc_0, 1e-9) * R_ms)

    tail = f > 5 * F0
    if tail.sum() < 4:
        raise ValueError("impedance curve lacks a high-frequency tail above 5*F_0")
    if curve_free.magnitude_only:
        K_rm, E_rm, K_xm, E_xm = 0.01, 0.5, 0.04, 0.4
    else:
        w = 2 * np.pi * f[tail]
        z_mot = BL ** 2 / (R_ms + 1j * w * M_ms + 1 / (1j * w * C_ms))
        K_rm, E_rm, K_xm, E_xm = _fit_motor_tail(
            f[tail], curve_free.impedance[tail] - z_mot - R_evc_0)
    initial = derive_tsp(R_evc_0, K_rm, E_rm, K_xm, E_xm, BL, M_ms, C_ms, R_ms, S_d)

    # joint refinement; positive quantities in log space, exponents bounded to (0, 1)
    def unpack(p):
        R_e = R_evc if R_evc is not None else math.exp(p[0])
        return (R_e, math.exp(p[1]), p[2], math.exp(p[3]), p[4],
                math.exp(p[5]), math.exp(p[6]), math.exp(p[7]), math.exp(p[8]))

    def residual(p):
        R_e, k_r, e_r, k_x, e_x, bl, m, cm, rm = unpack(p)
        out = []
        for curve, dm in ((curve_free, 0.0), (curve_mass, delta_mass)):
            z = _impedance(curve.frequencies, R_e, k_r, e_r, k_x, e_x, bl, m + dm, cm, rm)
            if curve.magnitude_only:
                out.append(np.log(np.abs(z) / curve.impedance))
            else:
                d = (z - curve.impedance) / np.abs(curve.impedance)
                out.extend([d.real, d.imag])
        return np.concatenate(out)

    p0 = np.array([math.log(R_evc_0), math.log(K_rm), E_rm, math.log(K_xm), E_xm,
                   math.log(BL), math.log(M_ms), math.log(C_ms), math.log(R_ms)])
    lb = np.full(9, -np.inf)
    ub = np.full(9, np.inf)
    lb[[2, 4]], ub[[2, 4]] = 1e-3, 1 - 1e-3
    p0[[2, 4]] = np.clip(p0[[2, 4]], 0.01, 0.99)
    sol = least_squares(residual, p0, bounds=(lb, ub), x_scale="jac",
                        xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=2000)
    if not sol.success:
        raise ValueError(f"impedance model fit did not converge: {sol.message}")
    R_e, k_r, e_r, k_x, e_x, bl, m, cm, rm = (float(v) for v in unpack(sol.x))
    params = derive_tsp(R_e, k_r, e_r, k_x, e_x, bl, m, cm, rm, S_d)
    rms = float(np.sqrt(np.mean(sol.fun ** 2)))
    return TspFit(params, F0, F0m, rms, initial)


def synthetic_impedance_curves(tsp: ThieleSmallParams = REFERENCE_DRIVER, delta_mass: float = 1e-3,
                               freqs=None) -> tuple[ImpedanceCurve, ImpedanceCurve]:
    """Free-air and mass-loaded curves generated from the forward model."""
    f = default_frequency_grid(10.0, 20000.0, 48) if freqs is None else np.asarray(freqs)
    return (ImpedanceCurve(f, motor_impedance(tsp, f)),
            ImpedanceCurve(f, motor_impedance(tsp, f, added_mass=delta_mass)))


def tsp_relative_errors(fitted: ThieleSmallParams, reference: ThieleSmallParams,
                        names=("F_0", "M_ms", "C_ms", "Q_ms", "Q_es", "Q_ts", "BL")) -> dict:
    return {n: abs(getattr(fitted, n) / getattr(reference, n) - 1) for n in names}


def tsp_as_dict(tsp: ThieleSmallParams) -> dict:
    d = asdict(tsp)
    d["R_ms"] = tsp.R_ms
    return d

