"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data or validation failure.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import os
import shutil
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import cues, dsp, electroacoustics as ea, pipeline, plotting, synth
from .verify import verify_database

CONFIG_ENV = "HRTFKIT_CONFIG"
EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Settings snapshot written next to every output."""

    sample_rate: float = dsp.DEFAULT_FS
    azimuths: list = field(default_factory=lambda: list(pipeline.AZIMUTHS))
    elevations: list = field(default_factory=lambda: list(pipeline.ELEVATIONS))
    shift: int = pipeline.DEFAULT_SHIFT
    head_radius: float = pipeline.DEFAULT_HEAD_RADIUS
    rho0: float = ea.RHO0
    c: float = ea.C_AIR
    pre_peak_samples: int = pipeline.PRE_PEAK_SAMPLES
    min_tail_samples: int = pipeline.MIN_TAIL_SAMPLES
    sc_band: list = field(default_factory=lambda: list(cues.SC_BAND))
    sc_smooth_bins: int = cues.SC_SMOOTH_BINS
    sc_neighborhood: int = cues.SC_NEIGHBORHOOD
    sc_prominence_db: float = cues.SC_PROMINENCE_DB
    workers: int | None = None
    seed: int = 0
    paths: dict = field(default_factory=dict)

    # fields fixed by the processing chain; a config may restate but not change them
    _FIXED = ("sample_rate", "azimuths", "elevations", "rho0", "c",
              "pre_peak_samples", "min_tail_samples")

    @classmethod
    def load(cls, path=None) -> "RunConfig":
        path = path or os.environ.get(CONFIG_ENV)
        cfg = cls()
        if not path:
            return cfg
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for k, v in data.items():
            if k in cls._FIXED and v != getattr(cfg, k):
                raise UsageError(f"config key {k} cannot be changed from {getattr(cfg, k)!r}")
            setattr(cfg, k, v)
        return cfg

    def write(self, out_dir) -> None:
        Path(out_dir, "run_config.json").write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


@contextlib.contextmanager
def staged_output(out):
    """Yield a scratch directory whose files move to ``out`` only on success."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=out.parent))
    try:
        yield tmp
        out.mkdir(parents=True, exist_ok=True)
        for p in sorted(tmp.iterdir()):
            dest = out / p.name
            if dest.is_dir():
                shutil.rmtree(dest)
            os.replace(p, dest)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _require(*paths):
    for p in paths:
        if not Path(p).exists():
            raise FileNotFoundError(f"input not found: {p}")


# --- commands ------------------------------------------------------------------

def cmd_fit_tsp(args, cfg: RunConfig) -> int:
    if not args.delta_mass > 0:
        raise UsageError("--delta-mass must be positive")
    if not args.sd > 0:
        raise UsageError("--sd must be positive")
    _require(args.free, args.mass)
    free = ea.read_impedance_csv(args.free, magnitude_only=args.magnitude_only)
    mass = ea.read_impedance_csv(args.mass, magnitude_only=args.magnitude_only)
    dm = args.delta_mass * 1e-3
    fit = ea.fit_tsp_delta_mass(free, mass, dm, args.sd, R_evc=args.revc)
    cfg.paths = {"free": str(args.free), "mass": str(args.mass), "out": str(args.out)}
    lines = [f"resonance peaks: free {fit.F_0_peak:.3f} Hz, loaded {fit.F_0_mass_peak:.3f} Hz",
             f"rms relative residual: {fit.rms_residual:.3e}", "", "parameter  initial  fitted"]
    for name, v in ea.tsp_as_dict(fit.params).items():
        lines.append(f"{name:<6} {ea.tsp_as_dict(fit.initial)[name]:.6g}  {v:.6g}")
    report = "\n".join(lines) + "\n"
    with staged_output(args.out) as tmp:
        ea.write_tsp_file(fit.params, tmp / "tsp.txt")
        (tmp / "fit_report.txt").write_text(report)
        plotting.impedance_fit(free, mass, fit.params, dm, tmp / "impedance_fit.png")
        cfg.write(tmp)
    print(report, end="")
    return EXIT_OK


def cmd_simulate_speaker(args, cfg: RunConfig) -> int:
    if not args.vbox > 0:
        raise UsageError("--vbox must be positive")
    if not args.veg > 0 or not args.r > 0:
        raise UsageError("--veg and --r must be positive")
    if args.tsp:
        _require(args.tsp)
        tsp = ea.read_tsp_file(args.tsp)
    else:
        tsp = ea.REFERENCE_DRIVER
    resp = ea.simulate_sealed_module(tsp, args.vbox * 1e-6, args.veg, args.r, rho0=cfg.rho0, c=cfg.c)
    f3 = ea.rolloff_frequency(resp)
    fx, x = resp.peak_excursion()
    fu, u = resp.peak_volume_velocity()
    summary = (f"rolloff_6db_hz={f3:.3f}\n"
               f"peak_excursion_mm={x * 1e3:.6f}\npeak_excursion_hz={fx:.3f}\n"
               f"peak_volume_velocity_m3s={u:.6g}\npeak_volume_velocity_hz={fu:.3f}\n")
    cfg.paths = {"tsp": str(args.tsp or "builtin"), "out": str(args.out)}
    with staged_output(args.out) as tmp:
        resp.to_csv(tmp / "speaker_response.csv")
        (tmp / "summary.txt").write_text(summary)
        plotting.speaker_response(resp, tmp / "speaker_response.png", f3)
        cfg.write(tmp)
    print(summary, end="")
    return EXIT_OK


def _parse_notch(text):
    if text is None:
        return None
    freq, _, depth = text.partition(":")
    try:
        return float(freq), float(depth) if depth else 20.0
    except ValueError as exc:
        raise UsageError(f"bad --notch value {text!r}; expected HZ or HZ:DEPTH_DB") from exc


def cmd_synth(args, cfg: RunConfig) -> int:
    head_radius = args.head_radius if args.head_radius is not None else cfg.head_radius
    seed = args.seed if args.seed is not None else cfg.seed
    notch = _parse_notch(args.notch)
    try:
        model = synth.SphericalHeadModel(head_radius=head_radius, notch=notch, noise_db=args.noise_db)
        refl = synth.reflections_from_ms(args.reflections, args.reflection_gain) if args.reflections else ()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    col = synth.SpeakerColoration.sealed_module() if args.coloration else synth.SpeakerColoration()
    cfg.head_radius, cfg.seed = head_radius, seed
    cfg.paths = {"out": str(args.out)}
    with staged_output(args.out) as tmp:
        synth.write_synth_tree(tmp, model, col, refl, seed=seed)
        cfg.write(tmp)
    print(f"wrote {len(pipeline.FULL_GRID)} BIR pairs, {len(pipeline.ELEVATIONS)} OIRs and truth.csv to {args.out}")
    return EXIT_OK


def cmd_derive(args, cfg: RunConfig) -> int:
    shift = args.shift if args.shift is not None else cfg.shift
    head_radius = args.head_radius if args.head_radius is not None else cfg.head_radius
    compensate = not args.no_compensation
    if compensate:
        try:
            pipeline.check_shift(shift, head_radius, cfg.c, cfg.sample_rate)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    _require(args.input)
    raw = pipeline.read_raw_set(args.input, cfg.sample_rate)
    db = pipeline.build_database(raw, shift, head_radius, compensate=compensate,
                                 workers=args.workers or cfg.workers, subject=args.subject)
    cfg.shift, cfg.head_radius = shift, head_radius
    cfg.paths = {"in": str(args.input), "out": str(args.out)}
    truth = Path(args.input) / "truth.csv"
    with staged_output(args.out) as tmp:
        db.write(tmp)
        if truth.exists():
            shutil.copyfile(truth, tmp / "truth.csv")
        cfg.write(tmp)
    print(f"wrote {len(db)} HRIR files to {args.out} (shift {db.meta['m']}, window start {db.meta['window_start']})")
    return EXIT_OK


def cmd_cues(args, cfg: RunConfig) -> int:
    _require(args.db)
    db = pipeline.HrirDatabase.read(args.db)
    if not args.no_compensation_check:
        late = sum(not ok for ok in db.causal_flags().values())
        if late:
            raise ValueError(f"{late} HRIR pair(s) peak in the second half of the buffer; "
                             "derive with compensation or pass --no-compensation-check")
    workers = args.workers or cfg.workers
    cfg.paths = {"db": str(args.db), "out": str(args.out)}
    with staged_output(args.out) as tmp:
        if args.cue == "itd":
            itd = cues.itd_map(db, workers)
            itd.to_csv(tmp / "itd.csv")
            plotting.itd_contour(itd, tmp / "itd.png")
        elif args.cue == "ild":
            ild = cues.ild_map(db, workers)
            ild.to_csv(tmp / "ild_wideband.csv")
            plotting.ild_contour(ild, tmp / "ild_wideband.png")
            picks = {f"az {a:+d}": pipeline.Direction(a, 0) for a in (-90, -45, 45, 90)}
            picks = {k: ild.narrowband[d] for k, d in picks.items() if d in ild.narrowband}
            for label, nb in picks.items():
                cues.write_narrowband_csv(tmp / f"ild_narrowband_{label.replace(' ', '')}_el+00.csv", nb)
            if picks:
                plotting.ild_narrowband(picks, tmp / "ild_narrowband.png")
        elif args.cue == "sc":
            sc = cues.sc_median(db, ear=args.ear, band=tuple(cfg.sc_band), smooth=cfg.sc_smooth_bins,
                                neighborhood=cfg.sc_neighborhood, prominence=cfg.sc_prominence_db)
            sc.to_csv(tmp / "sc_median.csv")
            plotting.sc_scatter(sc, tmp / "sc_median.png")
        else:
            patterns = cues.hpd(db)
            for pat in patterns.values():
                pat.to_csv(tmp)
            plotting.hpd_polar(patterns, tmp / "hpd.png")
        cfg.write(tmp)
    print(f"wrote {args.cue} results to {args.out}")
    return EXIT_OK


def cmd_verify(args, cfg: RunConfig) -> int:
    _require(args.db)
    truth = args.truth
    if truth is None and (Path(args.db) / "truth.csv").exists():
        truth = Path(args.db) / "truth.csv"
    rep = verify_database(args.db, truth, workers=args.workers or cfg.workers)
    print(rep.table())
    return EXIT_OK if rep.passed else EXIT_DATA


# --- argument parsing ----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hrtfkit", description="HRIR database processing and cue analysis")
    p.add_argument("--config", help=f"JSON run configuration (default: ${CONFIG_ENV})")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("fit-tsp", help="Thiele-Small parameters from two impedance curves")
    s.add_argument("--free", required=True, help="free-air impedance CSV")
    s.add_argument("--mass", required=True, help="mass-loaded impedance CSV")
    s.add_argument("--delta-mass", type=float, required=True, help="added mass [g]")
    s.add_argument("--sd", type=float, required=True, help="effective diaphragm area [m^2]")
    s.add_argument("--revc", type=float, help="measured DC voice-coil resistance [ohm]")
    s.add_argument("--magnitude-only", action="store_true", help="CSVs hold |Z| only")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_tsp)

    s = sub.add_parser("simulate-speaker", help="sealed-box driver response")
    s.add_argument("--tsp", help="TSP key=value file (default: built-in reference driver)")
    s.add_argument("--vbox", type=float, default=800.0, help="box volume [cm^3]")
    s.add_argument("--veg", type=float, default=2.828, help="drive voltage [V rms]")
    s.add_argument("--r", type=float, default=1.0, help="listening distance [m]")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate_speaker)

    s = sub.add_parser("synth", help="synthetic raw measurement tree with ground truth")
    s.add_argument("--out", required=True)
    s.add_argument("--head-radius", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--reflections", type=float, help="floor reflection delay [ms], at least 5")
    s.add_argument("--reflection-gain", type=float, default=0.3)
    s.add_argument("--notch", help="pinna notch HZ or HZ:DEPTH_DB (depth default 20)")
    s.add_argument("--noise-db", type=float, help="additive noise level re. peak [dB]")
    s.add_argument("--coloration", action="store_true", help="colour with the sealed-box speaker")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("derive", help="raw BIR/OIR tree to HRIR database")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--shift", type=int, help="non-causality shift m [samples]")
    s.add_argument("--head-radius", type=float)
    s.add_argument("--no-compensation", action="store_true")
    s.add_argument("--subject", default="")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_derive)

    s = sub.add_parser("cues", help="localization cues from an HRIR database")
    s.add_argument("cue", choices=("itd", "ild", "sc", "hpd"))
    s.add_argument("--db", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ear", choices=("left", "right"), default="right", help="ear for sc")
    s.add_argument("--no-compensation-check", action="store_true",
                   help="accept a database whose HRIRs were not shifted into the first half")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_cues)

    s = sub.add_parser("verify", help="run the invariant suite on an HRIR database")
    s.add_argument("--db", required=True)
    s.add_argument("--truth", help="truth.csv from synth (default: DB/truth.csv if present)")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"hrtfkit: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"hrtfkit: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
