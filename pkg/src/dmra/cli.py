"""Command line front end: ``dmra estimate|bench|oracle|gen``.

Exit codes: 0 success, 1 input/config error, 2 estimation or sampling failure
(and, for ``oracle``, a failed check).  ``DMRA_LOG`` sets the log level
(``DEBUG``, ``INFO``, ...; default ``WARNING``).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import bench, oracle
from .config import ConfigError, DmraConfig, dump_config, load_config
from .core import SignalFormatError, read_signal_csv, synthesize, write_signal_csv, add_noise
from .pipeline import dmra

__all__ = ["main", "build_parser", "parse_snr", "parse_sources", "load_scenario"]

log = logging.getLogger("dmra")

EXIT_OK, EXIT_INPUT, EXIT_FAIL = 0, 1, 2


class UsageError(ValueError):
    """Bad arguments or input files (exit code 1)."""


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _write_json(path, payload):
    # json writes floats with repr(), the shortest string that round-trips exactly
    text = json.dumps(_jsonable(payload), indent=2, allow_nan=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def parse_snr(text):
    """``"10,20,30"`` -> ``[10.0, 20.0, 30.0]``; ``"0:10:30"`` is start:step:stop inclusive."""
    try:
        if ":" in text:
            start, step, stop = (float(v) for v in text.split(":"))
            if step <= 0:
                raise ValueError
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [start + i * step for i in range(n)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse SNR list {text!r}") from None


def parse_sources(text):
    """``"4:2:16"`` -> ``[4, 6, ..., 16]``; a comma list is also accepted."""
    try:
        if ":" in text:
            start, step, stop = (int(v) for v in text.split(":"))
            if step <= 0:
                raise ValueError
            return list(range(start, stop + 1, step))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse source list {text!r}") from None


def load_scenario(name_or_path):
    """A built-in scenario name or a YAML file of :class:`ScenarioSpec` fields."""
    if name_or_path in bench.SCENARIOS:
        return bench.scenario(name_or_path)
    path = Path(name_or_path)
    if not path.is_file():
        raise UsageError(
            f"unknown scenario {name_or_path!r}; choose from {', '.join(bench.SCENARIOS)} "
            "or pass a YAML file"
        )
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise UsageError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected a mapping")
    known = {f.name for f in dataclasses.fields(bench.ScenarioSpec)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise UsageError(f"{path}: unknown scenario keys: {', '.join(unknown)}")
    data.setdefault("name", path.stem)
    try:
        return bench.ScenarioSpec(**data)
    except (TypeError, bench.ScenarioError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _config(args, sigma_sq=None):
    overrides = {}
    if sigma_sq is not None:
        overrides["sigma_sq"] = float(sigma_sq)
    try:
        if args.config:
            return load_config(args.config, **overrides)
        if "sigma_sq" not in overrides:
            raise UsageError("no config file given; pass --config or --sigma-sq")
        return DmraConfig.from_dict(overrides)
    except (ConfigError, OSError) as exc:
        raise UsageError(str(exc)) from None


def cmd_estimate(args):
    try:
        y = read_signal_csv(args.signal)
    except (SignalFormatError, OSError) as exc:
        raise UsageError(str(exc)) from None
    cfg = _config(args, args.sigma_sq)
    if args.dump_config:
        dump_config(cfg, args.dump_config)
    try:
        res = dmra(y, cfg)
    except Exception as exc:  # noqa: BLE001 - any estimator failure maps to exit 2
        log.error("estimation failed: %s", exc)
        print(f"error: estimation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    _write_json(args.out, res.to_dict())
    return EXIT_OK


def _bench_specs(args):
    base = load_scenario(args.scenario)
    if args.sources:
        if not base.name.startswith("scenario4"):
            raise UsageError("--sources applies to scenario4 only")
        try:
            return [bench.scenario4(s) for s in parse_sources(args.sources)]
        except bench.ScenarioError as exc:
            raise UsageError(str(exc)) from None
    return [base]


def cmd_bench(args):
    specs = _bench_specs(args)
    snrs = parse_snr(args.snr) if args.snr else [specs[0].snr_norm_db]
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    cfg = _config(args, 1.0)  # per-trial noise power replaces this
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for spec in specs:
        # each source count gets its own seed stream so adding counts never shifts others
        seed = np.random.SeedSequence([args.seed, spec.s_total])
        results += bench.run_trials(
            spec, snrs, args.trials, cfg, seed=seed, jobs=args.jobs,
            on_result=lambda r: log.info("%s snr=%g trial=%d success=%s", r.scenario, r.snr_db, r.trial, r.success),
        )
    summary = bench.summarize(results)
    if args.no_timing:
        for row in summary:
            row["wall_time_s"] = float("nan")
    bench.write_trials_csv(out / "trials.csv", results, timing=not args.no_timing)
    meta = {"seed": args.seed, "trials": args.trials, "snr_db": snrs,
            "scenarios": [dataclasses.asdict(s) for s in specs], "config": cfg.to_dict()}
    bench.write_summary_json(out / "summary.json", _jsonable(summary), _jsonable(meta))
    for row in summary:
        print(f"{row['scenario']} snr={row['snr_db']:g} success={row['success_rate']:.3f} "
              f"rsnr={row['rsnr_db']:.2f} nmse={row['nmse']:.3g}")
    return EXIT_OK


def cmd_oracle(args):
    if args.check not in oracle.CHECKS:
        raise UsageError(f"unknown check {args.check!r}; choose from {', '.join(oracle.CHECKS)}")
    kwargs = {}
    if args.check != "vandermonde":
        kwargs["seed"] = args.seed
        if args.trials is not None:
            kwargs["trials"] = args.trials
    report = oracle.CHECKS[args.check](**kwargs)
    print("\n".join(report.lines()))
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_gen(args):
    spec = load_scenario(args.scenario)
    if args.snr:
        snrs = parse_snr(args.snr)
        if len(snrs) != 1:
            raise UsageError("gen takes a single --snr value")
        spec = spec.with_snr(snrs[0])
    scen_seed, noise_seed = np.random.SeedSequence(args.seed).spawn(2)
    try:
        w, h, sigma_sq = bench.generate_scenario(spec, scen_seed)
    except bench.ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    y = add_noise(synthesize(w, h, spec.m_count), sigma_sq, noise_seed)
    out = Path(args.out)
    write_signal_csv(out, y)
    truth = {"omegas": w, "gains_re": h.real, "gains_im": h.imag, "sigma_sq": sigma_sq,
             "seed": args.seed, "scenario": dataclasses.asdict(spec)}
    _write_json(out.with_suffix(".truth.json"), truth)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="dmra", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="estimate atoms from a re,im signal CSV")
    e.add_argument("signal")
    e.add_argument("--config", help="YAML config (sigma_sq required unless --sigma-sq)")
    e.add_argument("--sigma-sq", type=float, help="noise power; overrides the config")
    e.add_argument("--out", default="-", help="result JSON path (default stdout)")
    e.add_argument("--dump-config", help="write the effective config here")
    e.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("bench", help="Monte-Carlo sweep over SNR levels")
    b.add_argument("scenario", help=f"one of {', '.join(bench.SCENARIOS)} or a YAML file")
    b.add_argument("--trials", type=int, default=20)
    b.add_argument("--snr", help="comma list or start:step:stop in dB")
    b.add_argument("--sources", help="scenario4 source counts, e.g. 4:2:16")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--config")
    b.add_argument("--out", default="bench_out", help="output directory")
    b.add_argument("--no-timing", action="store_true", help="write NaN wall times (byte-stable output)")
    b.set_defaults(func=cmd_bench)

    o = sub.add_parser("oracle", help="run a theory check suite")
    o.add_argument("check", help=f"one of {', '.join(oracle.CHECKS)}")
    o.add_argument("--trials", type=int)
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_oracle)

    g = sub.add_parser("gen", help="write a synthetic signal CSV and its truth JSON")
    g.add_argument("scenario", help=f"one of {', '.join(bench.SCENARIOS)} or a YAML file")
    g.add_argument("--snr", help="SNR_norm in dB")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="signal CSV path; truth goes to <stem>.truth.json")
    g.set_defaults(func=cmd_gen)
    return p


def main(argv=None):
    level = os.environ.get("DMRA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; keep 2 for estimation failures
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
