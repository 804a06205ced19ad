"""Command-line entry point: simulate | experiment | process | validate-config.

Exit codes: 0 success, 1 flagged fit failure under --strict, 2 invalid
configuration or input file, 3 numerical-integrity failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dsp import RawRecord, decompose, extract_trace, harmonic_spectrum
from .errors import ConfigError, IntegrityError, RecordFormatError
from .experiments import (EXPERIMENTS, ExperimentConfig, engine_trace, run_experiment, set_dotted,
                          write_artifacts)
from .io import dump_json, sha256_file, write_json, write_spectrum, write_trace

EXIT_OK, EXIT_STRICT, EXIT_CONFIG, EXIT_INTEGRITY = 0, 1, 2, 3

# Small grids that finish in well under a minute on a laptop.
PRESETS = {
    "quick": {
        "resonance-sweep": {"engine": "quantum",
                            "system": {"n_spins": 4, "median_coupling": 300.0, "n_configs": 2},
                            "pulse": {"n_pulses": 400},
                            "drive": {"kind": "square", "amplitude": 1e-6},
                            "sweep": {"frequencies": np.linspace(2400, 4400, 21).tolist()}},
        "fres-vs-tp": {"engine": "bloch",
                       "pulse": {"t_acq": 40e-6, "mode": "finite", "steps_per_period": 200},
                       "drive": {"kind": "chirp", "amplitude": 2e-6, "chirp": [2000.0, 2000.0, 2.0]},
                       "sweep": {"tp_grid": [2e-6, 10e-6, 20e-6]}},
        "harmonic-scaling": {"engine": "analytic",
                             "drive": {"kind": "sine", "frequency": 2760.0, "bias": 4.7e-6},
                             "processing": {"record_duration": 2.0}},
        "duty-cycle": {"engine": "bloch",
                       "pulse": {"t_acq": 30e-6, "steps_per_period": 200},
                       "drive": {"kind": "sine", "frequency": 2760.0, "amplitude": 4.7e-7,
                                 "bias": 4.7e-6},
                       "sweep": {"tp_grid": [14e-6, 27e-6, 39e-6]},
                       "processing": {"record_duration": 1.0}},
        "chirp-response": {"engine": "bloch", "pulse": {"theta": 1.0471975511965976},
                           "drive": {"kind": "chirp", "amplitude": 4.7e-7, "bias": 1.9e-6,
                                     "chirp": [1000.0, 2000.0, 5.0]}},
        "sensitivity": {"engine": "analytic",
                        "drive": {"kind": "sine", "frequency": 2760.0, "bias": 4.7e-6},
                        "processing": {"record_duration": 2.0},
                        "sensitivity": {"noise_rms": 1e-7, "duration": 2.0}},
    }
}


@dataclass
class RunManifest:
    tool_version: str
    config_hash: str
    seed: int
    started: str
    finished: str = ""
    files: list = field(default_factory=list)

    def add(self, path: Path, root: Path):
        self.files.append({"path": str(path.relative_to(root)), "sha256": sha256_file(path)})

    def verify(self, root) -> bool:
        root = Path(root)
        return all(sha256_file(root / f["path"]) == f["sha256"] for f in self.files)


def config_hash(data: dict) -> str:
    """sha256 of the canonical JSON form; independent of key order."""
    return hashlib.sha256(dump_json(data).encode("utf-8")).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path, overrides=(), base: dict | None = None) -> tuple[dict, ExperimentConfig]:
    """Read a JSON config, apply dotted overrides and NUCSENSE_SEED, then validate."""
    data = dict(base or {})
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError([f"config: cannot read {path}: {exc.strerror}"]) from exc
        try:
            loaded = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config: line {exc.lineno} column {exc.colno}: {exc.msg}"]) from exc
        if not isinstance(loaded, dict):
            raise ConfigError(["config: top level must be an object"])
        data = _merge(data, loaded)
    for item in overrides:
        if "=" not in item:
            raise ConfigError([f"--set {item!r}: expected key=value"])
        key, val = item.split("=", 1)
        data = set_dotted(data, key.strip(), _parse_value(val))
    env_seed = os.environ.get("NUCSENSE_SEED")
    if env_seed is not None:
        try:
            data["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError([f"NUCSENSE_SEED: expected an integer, got {env_seed!r}"]) from exc
    return data, ExperimentConfig.from_dict(data)


def _merge(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _finish(manifest: RunManifest, paths, outdir: Path):
    for p in paths:
        manifest.add(Path(p), outdir)
    manifest.finished = _now()
    write_json(outdir / "manifest.json", asdict(manifest))


# ------------------------------------------------------------------ commands

def cmd_simulate(args) -> int:
    data, cfg = load_config(args.config, args.set)
    if args.jobs:
        cfg.jobs = args.jobs
    outdir = Path(args.out or cfg.output_dir)
    manifest = RunManifest(__version__, config_hash(cfg.snapshot()), cfg.seed, _now())
    train = cfg.train(cfg.n_record())
    fld = cfg.field()
    trace = engine_trace(cfg, train, fld)
    if cfg.processing.normalize and len(trace.s):
        trace.s = trace.s / trace.s[0]
    paths = [write_json(outdir / "config.json", cfg.snapshot())]
    if len(trace.s) >= 3 and cfg.processing.window >= 3 * train.tau:
        decompose(trace, cfg.processing.window)
    paths.append(write_trace(outdir / "trace.csv", trace))
    if trace.s_o is not None and len(trace.s_o) >= 16:
        spec = harmonic_spectrum(trace.s_o, train.tau, pad=cfg.processing.pad,
                                 taper=cfg.processing.taper)
        paths.append(write_spectrum(outdir / "spectrum.csv", spec))
        peaks = [{"frequency_hz": p.freq, "magnitude": p.mag} for p in spec.top(5)]
        paths.append(write_json(outdir / "summary.json", {"top_peaks": peaks, "n_pulses": len(trace.s)}))
    _finish(manifest, paths, outdir)
    print(f"wrote {len(paths)} files to {outdir}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.name not in EXPERIMENTS:
        print(f"error: unknown experiment {args.name!r}; valid names: {', '.join(EXPERIMENTS)}",
              file=sys.stderr)
        return EXIT_CONFIG
    base = PRESETS[args.preset][args.name] if args.preset else None
    if args.config is None and base is None:
        print("error: give a config file or --preset", file=sys.stderr)
        return EXIT_CONFIG
    data, cfg = load_config(args.config, args.set, base)
    if args.jobs:
        cfg.jobs = args.jobs
    cfg.validate(args.name)
    outdir = Path(args.out or cfg.output_dir)
    manifest = RunManifest(__version__, config_hash(cfg.snapshot()), cfg.seed, _now())
    result = run_experiment(args.name, cfg)
    paths = write_artifacts(result, outdir)
    _finish(manifest, paths, outdir)
    for msg in result.flags:
        print(f"flagged: {msg}", file=sys.stderr)
    print(f"{args.name}: wrote {len(paths)} files to {outdir}")
    if args.strict and result.flagged:
        return EXIT_STRICT
    return EXIT_OK


def cmd_process(args) -> int:
    raw = RawRecord.load(args.raw)
    outdir = Path(args.out)
    cfg_snapshot = {"raw": str(args.raw), "window_s": args.window, "taper": args.taper,
                    "pad": args.pad}
    manifest = RunManifest(__version__, config_hash(cfg_snapshot), 0, _now())
    trace = extract_trace(raw, taper=args.taper)
    decompose(trace, args.window)
    paths = [write_json(outdir / "config.json", cfg_snapshot),
             write_trace(outdir / "trace.csv", trace)]
    if len(trace.s_o) >= 16:
        spec = harmonic_spectrum(trace.s_o, trace.dt, pad=args.pad)
        paths.append(write_spectrum(outdir / "spectrum.csv", spec))
    _finish(manifest, paths, outdir)
    print(f"processed {raw.n_windows} windows; wrote {len(paths)} files to {outdir}")
    return EXIT_OK


def cmd_validate(args) -> int:
    _, cfg = load_config(args.config, args.set)
    if args.experiment:
        cfg.validate(args.experiment)
    print("config OK")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nucsense", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"nucsense {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        if config_required:
            p.add_argument("config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a dotted config path, e.g. pulse.tau=7.3e-5 (repeatable)")

    def jobs(p):
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="worker processes (default: logical cores); results do not depend on it")

    p = sub.add_parser("simulate", help="run one engine and write trace/spectrum artifacts")
    common(p)
    jobs(p)
    p.add_argument("--out", help="output directory (default: config output_dir)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="run a named experiment recipe")
    p.add_argument("name", help=f"one of: {', '.join(EXPERIMENTS)}")
    p.add_argument("config", nargs="?", help="JSON config file (optional with --preset)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a dotted config path (repeatable)")
    p.add_argument("--preset", choices=sorted(PRESETS), help="start from a built-in preset")
    p.add_argument("--strict", action="store_true", help="exit nonzero on any flagged fit failure")
    p.add_argument("--out", help="output directory (default: config output_dir)")
    jobs(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("process", help="extract, decompose and transform a raw record file")
    p.add_argument("raw", help="raw record file written by RawRecord.save")
    p.add_argument("--out", default="nucsense_process", help="output directory")
    p.add_argument("--window", type=float, default=0.073,
                   help="moving-average window in seconds for the S_d/S_o split (default: 73ms)")
    p.add_argument("--taper", choices=("rect", "hann"), default="rect",
                   help="per-window DFT taper (default: rect)")
    p.add_argument("--pad", type=int, default=1, help="zero-padding factor of the spectrum")
    p.set_defaults(func=cmd_process)

    p = sub.add_parser("validate-config", help="check a config without running it")
    common(p)
    p.add_argument("--experiment", choices=EXPERIMENTS, help="also apply experiment-specific checks")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("invalid configuration:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except RecordFormatError as exc:
        print(f"malformed record: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrityError as exc:
        print(f"numerical integrity failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY


if __name__ == "__main__":
    sys.exit(main())
