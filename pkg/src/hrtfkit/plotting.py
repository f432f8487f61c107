"""PNG figures for the CLI reports.

Figures are built on bare ``matplotlib.figure.Figure`` objects, so nothing here
touches pyplot state or needs a display.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

from .electroacoustics import ImpedanceCurve, SealedModuleResponse, ThieleSmallParams, motor_impedance
from .pipeline import AZIMUTHS, ELEVATIONS

_PNG_META = {"Software": None}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    return path


def speaker_response(resp: SealedModuleResponse, path, rolloff_hz: float | None = None) -> Path:
    fig = Figure(figsize=(7, 8), layout="constrained")
    ax1, ax2, ax3 = fig.subplots(3, 1, sharex=True)
    f = resp.frequencies
    ax1.semilogx(f, np.abs(resp.excursion) * 1e3)
    ax1.set_ylabel("excursion [mm]")
    ax2.semilogx(f, np.abs(resp.volume_velocity))
    ax2.set_ylabel("volume velocity [m$^3$/s]")
    ax3.semilogx(f, resp.spl)
    ax3.set_ylabel("SPL [dB]")
    ax3.set_xlabel("frequency [Hz]")
    if rolloff_hz is not None:
        ax3.axvline(rolloff_hz, color="k", ls="--", lw=0.8)
        ax3.annotate(f"-6 dB at {rolloff_hz:.1f} Hz", (rolloff_hz, resp.spl.max() - 6),
                     xytext=(5, -15), textcoords="offset points")
    for ax in (ax1, ax2, ax3):
        ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def impedance_fit(free: ImpedanceCurve, mass: ImpedanceCurve, fitted: ThieleSmallParams,
                  delta_mass: float, path) -> Path:
    fig = Figure(figsize=(7, 4.5), layout="constrained")
    ax = fig.subplots()
    for curve, dm, label in ((free, 0.0, "free"), (mass, delta_mass, "added mass")):
        ax.semilogx(curve.frequencies, curve.magnitude, ".", ms=2, label=f"{label} (measured)")
        model = motor_impedance(fitted, curve.frequencies, added_mass=dm)
        ax.semilogx(curve.frequencies, np.abs(model), lw=1, label=f"{label} (fit)")
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel("|Z| [ohm]")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def _grid_contour(grid: np.ndarray, label: str, path, cmap="RdBu_r") -> Path:
    fig = Figure(figsize=(8, 4), layout="constrained")
    ax = fig.subplots()
    cs = ax.contourf(AZIMUTHS, ELEVATIONS, np.ma.masked_invalid(grid), levels=21, cmap=cmap)
    fig.colorbar(cs, ax=ax, label=label)
    ax.set_xlabel("azimuth [deg]")
    ax.set_ylabel("elevation [deg]")
    return _save(fig, path)


def itd_contour(itd, path) -> Path:
    return _grid_contour(itd.grid() * 1e6, "ITD [us]", path)


def ild_contour(ild, path) -> Path:
    from .pipeline import Direction
    grid = np.array([[ild.wideband.get(Direction(a, e), np.nan) for a in AZIMUTHS] for e in ELEVATIONS])
    return _grid_contour(grid, "ILD [dB]", path)


def ild_narrowband(curves: dict, path) -> Path:
    """``curves`` maps a label to a NarrowbandIld."""
    fig = Figure(figsize=(7, 4), layout="constrained")
    ax = fig.subplots()
    for label, nb in curves.items():
        keep = nb.frequencies > 0
        ax.semilogx(nb.frequencies[keep], nb.db[keep], lw=1, label=label)
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel("ILD [dB]")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def sc_scatter(features, path) -> Path:
    fig = Figure(figsize=(6, 5), layout="constrained")
    ax = fig.subplots()
    for kind, marker in (("peaks", "^"), ("notches", "v")):
        pts = [(f / 1e3, ext) for ext, e in features.entries.items() for f, _ in e[kind]]
        if pts:
            x, y = zip(*pts)
            ax.scatter(x, y, marker=marker, s=14, label=kind)
    ax.set_xlabel("frequency [kHz]")
    ax.set_ylabel("elevation, median plane [deg]")
    ax.grid(True, alpha=0.3)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=8)
    return _save(fig, path)


def hpd_polar(patterns: dict, path) -> Path:
    """``patterns`` maps an ear name to an HpdPattern."""
    fig = Figure(figsize=(9, 4.5), layout="constrained")
    axes = fig.subplots(1, len(patterns), subplot_kw={"projection": "polar"})
    for ax, (ear, pat) in zip(np.atleast_1d(axes), patterns.items()):
        for f, row in pat.levels.items():
            az = sorted(row)
            th = np.radians(az + az[:1])
            ax.plot(th, [row[a] for a in az + az[:1]], lw=1, label=f"{f / 1e3:g} kHz")
        ax.set_theta_zero_location("N")
        ax.set_theta_direction(-1)
        ax.set_title(ear)
    np.atleast_1d(axes)[-1].legend(fontsize=7, loc="lower right", bbox_to_anchor=(1.3, 0))
    return _save(fig, path)
