"""Command-line entry point: synth, window-size, forecast, compare.

Every command is deterministic given its flags plus the seed, and commands
that write files also serialize the effective run configuration next to the
outputs as flat ``key=value`` lines (the same format ``--config`` reads;
explicit flags override file values).

Exit codes: 0 success, 2 usage or parse error, 3 insufficient data,
4 internal numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .data import (
    CsvFormatError,
    DriftSpec,
    SynthConfig,
    generate_synthetic,
    load_csv_file,
    write_csv_file,
)
from .engine import (
    BASELINE_PROTOCOLS,
    EngineConfig,
    InsufficientDataError,
    NonFiniteForecastError,
    PROTOCOL_TRAIN_ONCE,
    run_baseline,
    run_swr,
    write_batches_csv,
    write_steps_csv,
)
from .metrics import compare_report, row_from_steps, MetricReport, write_report_csv
from .regressors import REGRESSOR_KINDS
from .spectral import SizingConfig, training_window_size

FORMAT_VERSION = "1"
DEFAULT_MODELS = "swr,linear,svr,tree,forest"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INSUFFICIENT_DATA = 3
EXIT_NUMERICAL = 4


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _train_window(text: str):
    if text == "auto":
        return None
    return _positive_int(text)


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--regressor", default="svr", choices=REGRESSOR_KINDS,
                   help="regressor driving the adaptive run")
    p.add_argument("--lags", type=_positive_int, default=12)
    p.add_argument("--train-window", type=_train_window, default=None,
                   metavar="{auto|N}",
                   help="training window in samples, or 'auto' for spectral sizing")
    p.add_argument("--h0", type=_positive_int, default=6,
                   help="initial prediction window (samples)")
    p.add_argument("--h-min", type=_positive_int, default=1)
    p.add_argument("--h-max", type=_positive_int, default=24)
    p.add_argument("--mape-upper", type=float, default=20.0)
    p.add_argument("--mape-lower", type=float, default=5.0)
    p.add_argument("--warmup", type=_positive_int, default=None,
                   help="first forecastable sample (default: derived)")
    p.add_argument("--resize-every", type=_positive_int, default=None,
                   help="re-run window sizing every N batches")


def _add_sizing_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--oversampling", type=float, default=4.0)
    p.add_argument("--alpha", type=float, default=0.01,
                   help="significance threshold on the peak false-alarm probability")
    p.add_argument("--multiplier", type=float, default=1.0,
                   help="training window as a multiple of the dominant period")
    p.add_argument("--fallback", type=_positive_int, default=288,
                   help="window (samples) when no significant peak exists")
    p.add_argument("--min-window", type=_positive_int, default=64)
    p.add_argument("--max-window", type=_positive_int, default=None)
    p.add_argument("--history-cap", type=_positive_int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swrcast",
        description="Sliding-window load forecasting with adaptive horizon",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="write a synthetic load CSV")
    p_synth.add_argument("--out", default="synth.csv", help="output CSV path")
    p_synth.add_argument("--length", type=int, default=3906)
    p_synth.add_argument("--step", type=float, default=300.0)
    p_synth.add_argument("--base", type=float, default=500.0)
    p_synth.add_argument("--period", type=float, action="append", default=None,
                         help="seasonal period in seconds (repeatable)")
    p_synth.add_argument("--amp", type=float, action="append", default=None,
                         help="amplitude in MW, one per --period")
    p_synth.add_argument("--phase", type=float, action="append", default=None,
                         help="phase in radians, one per --period (default 0)")
    p_synth.add_argument("--noise", type=float, default=0.0)
    p_synth.add_argument("--drift-onset", type=int, default=None)
    p_synth.add_argument("--drift-shift", type=float, default=0.0)
    p_synth.add_argument("--drift-scale", type=float, default=1.0)
    p_synth.add_argument("--zone-id", action="append", default=None,
                         help="zone label (repeatable; each gets seed+i)")
    p_synth.add_argument("--seed", type=int, default=42)
    p_synth.add_argument("--config", default=None, help="key=value defaults file")
    p_synth.set_defaults(func=cmd_synth)

    p_ws = sub.add_parser("window-size",
                          help="print the sized training window per zone")
    p_ws.add_argument("--input", required=True)
    p_ws.add_argument("--zone", action="append", default=None)
    p_ws.add_argument("--seed", type=int, default=42)
    p_ws.add_argument("--config", default=None)
    _add_sizing_flags(p_ws)
    p_ws.set_defaults(func=cmd_window_size)

    p_fc = sub.add_parser("forecast", help="adaptive forecast per zone")
    p_fc.add_argument("--input", required=True)
    p_fc.add_argument("--out-dir", required=True)
    p_fc.add_argument("--zone", action="append", default=None)
    p_fc.add_argument("--seed", type=int, default=42)
    p_fc.add_argument("--config", default=None)
    _add_engine_flags(p_fc)
    _add_sizing_flags(p_fc)
    p_fc.set_defaults(func=cmd_forecast)

    p_cmp = sub.add_parser("compare",
                           help="adaptive run vs baselines, plus a metrics report")
    p_cmp.add_argument("--input", required=True)
    p_cmp.add_argument("--out-dir", required=True)
    p_cmp.add_argument("--zone", action="append", default=None)
    p_cmp.add_argument("--seed", type=int, default=42)
    p_cmp.add_argument("--config", default=None)
    p_cmp.add_argument("--models", default=DEFAULT_MODELS,
                       help="comma list drawn from swr,linear,svr,tree,forest,persistence")
    p_cmp.add_argument("--protocol", default=PROTOCOL_TRAIN_ONCE,
                       choices=BASELINE_PROTOCOLS,
                       help="baseline training protocol")
    _add_engine_flags(p_cmp)
    _add_sizing_flags(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    return parser


def _read_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Fold --config file values in as parser defaults; flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return argv
    values = _read_config_file(known.config)
    allowed = set()
    for action in parser._subparsers._group_actions[0].choices.values():  # noqa: SLF001
        for a in action._actions:  # noqa: SLF001
            allowed.add(a.dest)
    unknown = set(values) - allowed
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for action in parser._subparsers._group_actions[0].choices.values():  # noqa: SLF001
        defaults = {}
        for a in action._actions:  # noqa: SLF001
            if a.dest in values:
                raw = values[a.dest]
                if a.dest == "train_window":
                    defaults[a.dest] = _train_window(raw)
                elif a.type is not None:
                    defaults[a.dest] = a.type(raw)
                elif a.dest in ("zone", "zone_id", "period", "amp", "phase"):
                    defaults[a.dest] = [a.type(v) if a.type else v
                                        for v in raw.split(";")]
                else:
                    defaults[a.dest] = raw
        action.set_defaults(**defaults)
    return argv


def _sizing_from_args(args) -> SizingConfig:
    return SizingConfig(
        oversampling=args.oversampling,
        alpha=args.alpha,
        multiplier=args.multiplier,
        fallback_samples=args.fallback,
        min_window=args.min_window,
        max_window=args.max_window,
        history_cap=args.history_cap,
    )


def _engine_from_args(args) -> EngineConfig:
    return EngineConfig(
        regressor=args.regressor,
        lags=args.lags,
        train_window=args.train_window,
        sizing=_sizing_from_args(args),
        h0=args.h0,
        h_min=args.h_min,
        h_max=args.h_max,
        mape_upper=args.mape_upper,
        mape_lower=args.mape_lower,
        warmup=args.warmup,
        seed=args.seed,
        resize_every=args.resize_every,
    )


def _select_zones(series_map, wanted):
    zones = sorted(series_map)
    if wanted:
        missing = [z for z in wanted if z not in series_map]
        if missing:
            raise CsvFormatError(f"zone(s) not in input: {', '.join(missing)}")
        zones = [z for z in zones if z in set(wanted)]
    return zones


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ";".join(_format_value(v) for v in value)
    return str(value)


def _write_run_config(path: Path, pairs: dict) -> None:
    pairs = dict(pairs)
    pairs["format_version"] = FORMAT_VERSION
    pairs.setdefault("seed", 42)
    lines = [f"{key}={_format_value(pairs[key])}" for key in sorted(pairs)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _run_config_pairs(args, keys) -> dict:
    return {key: getattr(args, key) for key in keys if hasattr(args, key)}


_ENGINE_KEYS = (
    "input", "zone", "seed", "regressor", "lags", "train_window", "h0",
    "h_min", "h_max", "mape_upper", "mape_lower", "warmup", "resize_every",
    "oversampling", "alpha", "multiplier", "fallback", "min_window",
    "max_window", "history_cap",
)


def cmd_synth(args) -> int:
    periods = args.period if args.period is not None else [86400.0]
    amps = args.amp if args.amp is not None else [50.0]
    phases = args.phase if args.phase is not None else [0.0] * len(periods)
    if len(amps) != len(periods) or len(phases) != len(periods):
        raise ValueError("--period, --amp, and --phase counts must match")
    drift = None
    if args.drift_onset is not None:
        drift = DriftSpec(args.drift_onset, args.drift_shift, args.drift_scale)
    zone_ids = args.zone_id if args.zone_id else ["SYNTH"]
    series = {}
    for i, zone in enumerate(zone_ids):
        cfg = SynthConfig(
            length=args.length,
            step=args.step,
            base_level=args.base,
            components=tuple(zip(periods, amps, phases)),
            noise_sigma=args.noise,
            drift=drift,
            seed=args.seed + i,
        )
        series[zone] = generate_synthetic(cfg, zone_id=zone)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    write_csv_file(out, series)
    keys = ("out", "length", "step", "base", "period", "amp", "phase", "noise",
            "drift_onset", "drift_shift", "drift_scale", "zone_id", "seed")
    _write_run_config(out.with_suffix(".cfg"),
                      _run_config_pairs(args, keys) | {"zone_id": zone_ids,
                                                       "period": periods,
                                                       "amp": amps,
                                                       "phase": phases})
    print(f"wrote {args.length * len(zone_ids)} rows to {out}")
    return EXIT_OK


def _sizing_row(sizing) -> str:
    period = "" if sizing.dominant_period_seconds is None else (
        f"{sizing.dominant_period_seconds:.6g}"
    )
    sig = "true" if sizing.significant else "false"
    return f"{period},{sizing.window_samples},{sig},{sizing.false_alarm_prob!r}"


def cmd_window_size(args) -> int:
    series_map = load_csv_file(args.input)
    zones = _select_zones(series_map, args.zone)
    cfg = _sizing_from_args(args)
    multi = len(zones) > 1
    for zone in zones:
        sizing = training_window_size(series_map[zone], cfg)
        row = _sizing_row(sizing)
        print(f"{zone},{row}" if multi else row)
    return EXIT_OK


def _safe_name(zone: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in zone)


def cmd_forecast(args) -> int:
    series_map = load_csv_file(args.input)
    zones = _select_zones(series_map, args.zone)
    cfg = _engine_from_args(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_run_config(out_dir / "run_config.cfg",
                      _run_config_pairs(args, _ENGINE_KEYS) | {"command": "forecast"})
    for zone in zones:
        trace = run_swr(series_map[zone], cfg)
        name = _safe_name(zone)
        write_steps_csv(trace, out_dir / f"{name}_steps.csv")
        write_batches_csv(trace, out_dir / f"{name}_batches.csv")
        print(f"zone={zone} steps={len(trace.steps)} "
              f"mape_pct={trace.overall_mape():.6f}")
    return EXIT_OK


def _run_models(series, cfg, models, protocol):
    traces = []
    for model in models:
        if model == "swr":
            traces.append(run_swr(series, cfg))
        else:
            traces.append(run_baseline(series, cfg, model, protocol))
    return traces


def cmd_compare(args) -> int:
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    if not models:
        raise ValueError("--models must name at least one model")
    for m in models:
        if m != "swr" and m not in REGRESSOR_KINDS:
            raise ValueError(f"unknown model {m!r}")
    series_map = load_csv_file(args.input)
    zones = _select_zones(series_map, args.zone)
    cfg = _engine_from_args(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_run_config(
        out_dir / "run_config.cfg",
        _run_config_pairs(args, _ENGINE_KEYS)
        | {"command": "compare", "models": models, "protocol": args.protocol},
    )
    all_steps: dict[str, list] = {m: [] for m in models}
    for zone in zones:
        traces = _run_models(series_map[zone], cfg, models, args.protocol)
        name = _safe_name(zone)
        for trace in traces:
            write_steps_csv(trace, out_dir / f"{name}_{trace.model}_steps.csv")
            write_batches_csv(trace, out_dir / f"{name}_{trace.model}_batches.csv")
            all_steps[trace.model].append(trace)
        report = compare_report(traces)
        write_report_csv(report, out_dir / f"{name}_report.csv")
    # Overall report: each model scored over its concatenated zone steps.
    rows = []
    for model in models:
        traces = all_steps[model]
        actual = np.concatenate([t.actuals() for t in traces])
        predicted = np.concatenate([t.predictions() for t in traces])
        rows.append(row_from_steps(model, traces[0].protocol, actual, predicted))
    rows.sort(key=lambda r: r.mape_pct)
    overall = MetricReport(tuple(rows), tau=5.0)
    write_report_csv(overall, out_dir / "report.csv")
    for r in overall.rows:
        print(f"model={r.model} protocol={r.protocol} mape_pct={r.mape_pct:.6f} "
              f"n={r.n}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except InsufficientDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT_DATA
    except (NonFiniteForecastError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CsvFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
