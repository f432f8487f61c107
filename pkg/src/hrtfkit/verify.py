"""Invariant suite run over a derived HRIR database."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from . import cues
from .pipeline import FULL_GRID, HRIR_LENGTH, HrirDatabase
from .synth import read_truth, woodworth_itd

ITD_ABS_LIMIT = 1e-3
WOODWORTH_TOL = 26e-6
TRUTH_TOL = 26e-6
CONTINUITY_LIMIT = 80e-6
NOTCH_TOL_HZ = 500.0


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class VerifyReport:
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, passed, detail):
        self.checks.append(Check(name, bool(passed), detail))

    def table(self) -> str:
        width = max(len(c.name) for c in self.checks) if self.checks else 10
        lines = [f"{'check':<{width}}  result  detail"]
        for c in self.checks:
            lines.append(f"{c.name:<{width}}  {'PASS' if c.passed else 'FAIL':<6}  {c.detail}")
        lines.extend(f"note: {n}" for n in self.notes)
        lines.append("overall: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def _horizontal_front(itd):
    return [d for d in itd.values if d.elevation_deg == 0 and abs(d.azimuth_deg) <= 90]


def verify_database(db_dir, truth_path=None, workers: int | None = None) -> VerifyReport:
    db_dir = Path(db_dir)
    rep = VerifyReport()

    files = sorted(db_dir.glob("*.txt"))
    db = HrirDatabase.read(db_dir)
    rows_ok = all(len(l) == HRIR_LENGTH and len(r) == HRIR_LENGTH for l, r in db.hrir.values())
    rep.add("format", len(files) == len(FULL_GRID) and rows_ok,
            f"{len(files)} files (expected {len(FULL_GRID)}), {HRIR_LENGTH} rows x 2 columns")

    flags = db.causal_flags()
    bad = [d for d, ok in flags.items() if not ok]
    rep.add("causality", not bad, f"{len(bad)} direction(s) with a peak in the second half")

    itd = cues.itd_map(db, workers)
    step = itd.resolution
    worst = max(abs(v) for v in itd.values.values())
    rep.add("itd_bound", worst <= ITD_ABS_LIMIT, f"max |ITD| = {worst * 1e6:.1f} us")

    jump = itd.max_adjacent_jump()
    rep.add("itd_continuity", jump < CONTINUITY_LIMIT,
            f"max adjacent jump {jump * 1e6:.1f} us (limit {CONTINUITY_LIMIT * 1e6:.0f})")

    median = [abs(v) for d, v in itd.values.items() if d.azimuth_deg in (0, 180)]
    m_err = max(median, default=0.0)
    rep.add("median_zero", m_err <= step + 1e-12, f"max |ITD| on the median plane {m_err * 1e6:.2f} us")

    anti = 0.0
    for d, v in itd.values.items():
        mirror = d.mirrored()
        if mirror in itd.values:
            anti = max(anti, abs(v + itd.values[mirror]))
    rep.add("antisymmetry", anti <= step + 1e-12, f"max |ITD(az) + ITD(-az)| {anti * 1e6:.2f} us")

    patterns = cues.hpd(db)
    front = max(abs(lv[0]) for p in patterns.values() for lv in p.levels.values())
    rep.add("hpd_front_zero", front == 0.0, f"max |HPD(0)| = {front:g} dB")

    if truth_path is None or not Path(truth_path).exists():
        rep.notes.append("no truth file: ground-truth checks skipped")
        return rep

    truth = read_truth(truth_path)
    errs = [abs(itd.values[d] - truth[d]["itd"]) for d in _horizontal_front(itd) if d in truth]
    t_err = max(errs, default=0.0)
    rep.add("itd_vs_truth", bool(errs) and t_err < TRUTH_TOL,
            f"max error {t_err * 1e6:.2f} us over {len(errs)} horizontal directions")

    l = float(db.meta.get("l", 0.0875))
    ww = [abs(itd.values[d] - woodworth_itd(d.azimuth_deg, l)) for d in _horizontal_front(itd)]
    w_err = max(ww, default=0.0)
    rep.add("woodworth", bool(ww) and w_err < WOODWORTH_TOL, f"max deviation {w_err * 1e6:.2f} us")

    notch = {t["notch_hz"] for t in truth.values()} - {None}
    if notch:
        target = notch.pop()
        sc = cues.sc_median(db)
        miss = [ext for ext, e in sc.entries.items()
                if not any(abs(f - target) <= NOTCH_TOL_HZ for f, _ in e["notches"])]
        rep.add("sc_notch", not miss,
                f"{len(sc.entries) - len(miss)}/{len(sc.entries)} median entries show a notch "
                f"within {NOTCH_TOL_HZ:g} Hz of {target:g} Hz")
    return rep
