"""The sliding-window forecasting loop with an adaptive prediction horizon.

Each batch: fit on the most recent training window, forecast ``h`` steps
recursively, score the batch MAPE against the actuals, then move the horizon
one step up (MAPE below the lower threshold), down (above the upper
threshold), or keep it, clamped to its bounds. The cursor advances by the
batch just forecast, so every index from warmup to the end of the series is
evaluated exactly once.

Baselines share the same warmup/schedule so their traces are step-aligned
with the adaptive run: ``train-once`` fits a single model on everything
before warmup, ``sliding-fixed`` refits per batch but keeps the horizon at
``h0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .data import LoadSeries, _format_utc, _parse_utc, slice_window
from .metrics import mape
from .regressors import (
    REGRESSOR_KINDS,
    FittedRegressor,
    ForestParams,
    SvrParams,
    TreeParams,
    fit_regressor,
)
from .spectral import SizingConfig, WindowSizing, sizing_with_bounds, training_window_size

PROTOCOL_ADAPTIVE = "adaptive"
PROTOCOL_TRAIN_ONCE = "train-once"
PROTOCOL_SLIDING_FIXED = "sliding-fixed"
BASELINE_PROTOCOLS = (PROTOCOL_TRAIN_ONCE, PROTOCOL_SLIDING_FIXED)


class InsufficientDataError(ValueError):
    """The series is too short for the requested schedule."""


class NonFiniteForecastError(RuntimeError):
    """A model emitted a non-finite prediction; the batch was aborted."""


@dataclass(frozen=True)
class EngineConfig:
    """Everything a run needs; identical configs give bit-identical traces.

    ``train_window`` of None sizes the window spectrally on the pre-warmup
    history. ``warmup`` of None defaults to ``max(window, fallback) + lags``
    for a fixed window and ``fallback + lags`` for auto sizing, so the sizing
    stage never sees data it would later be asked to predict.
    """

    regressor: str = "svr"
    lags: int = 12
    train_window: int | None = None
    sizing: SizingConfig = field(default_factory=SizingConfig)
    h0: int = 6
    h_min: int = 1
    h_max: int = 24
    mape_upper: float = 20.0
    mape_lower: float = 5.0
    warmup: int | None = None
    seed: int = 42
    svr: SvrParams = field(default_factory=SvrParams)
    tree: TreeParams = field(default_factory=TreeParams)
    forest: ForestParams = field(default_factory=ForestParams)
    resize_every: int | None = None

    def __post_init__(self):
        if self.regressor not in REGRESSOR_KINDS:
            raise ValueError(f"unknown regressor {self.regressor!r}")
        if self.lags < 1:
            raise ValueError("lags must be >= 1")
        if not 1 <= self.h_min <= self.h0 <= self.h_max:
            raise ValueError("require 1 <= h_min <= h0 <= h_max")
        if not 0 < self.mape_lower < self.mape_upper:
            raise ValueError("require 0 < mape_lower < mape_upper")
        if self.train_window is not None and self.train_window < self.lags + 2:
            raise ValueError("train_window must be at least lags + 2")
        if self.warmup is not None and self.warmup < 2:
            raise ValueError("warmup must be >= 2")
        if self.resize_every is not None and self.resize_every < 1:
            raise ValueError("resize_every must be >= 1")


@dataclass
class EngineState:
    """Mutable loop state: current horizon, window, model, and cursor."""

    h: int
    window: int
    cursor: int
    fitted: FittedRegressor | None = None


@dataclass(frozen=True)
class StepRecord:
    index: int
    timestamp: datetime
    actual: float
    predicted: float
    batch: int


@dataclass(frozen=True)
class BatchRecord:
    batch: int
    h: int
    window_samples: int
    mape_pct: float
    converged: bool


@dataclass
class ForecastTrace:
    """Time-aligned actual/predicted pairs plus the per-batch history."""

    zone_id: str
    model: str
    protocol: str
    steps: list[StepRecord]
    batches: list[BatchRecord]
    sizing: WindowSizing | None
    config: dict

    def indices(self) -> np.ndarray:
        return np.array([s.index for s in self.steps], dtype=np.int64)

    def actuals(self) -> np.ndarray:
        return np.array([s.actual for s in self.steps])

    def predictions(self) -> np.ndarray:
        return np.array([s.predicted for s in self.steps])

    def overall_mape(self) -> float:
        return mape(self.actuals(), self.predictions())


def recursive_forecast(model: FittedRegressor, seed_lags, h: int) -> np.ndarray:
    """Forecast ``h`` steps by feeding each prediction back as the newest lag.

    ``seed_lags`` are the last k observed values in chronological order.
    Raises :class:`NonFiniteForecastError` if any prediction is non-finite.
    """
    if h < 1:
        raise ValueError("h must be >= 1")
    lags = np.asarray(seed_lags, dtype=np.float64)
    if lags.shape != (model.k,):
        raise ValueError(f"expected {model.k} seed lags, got shape {lags.shape}")
    buf = lags[::-1].copy()  # most recent first
    out = np.empty(h)
    for i in range(h):
        p = model.predict(buf)
        if not np.isfinite(p):
            raise NonFiniteForecastError(
                f"non-finite prediction at recursion step {i} ({model.kind})"
            )
        out[i] = p
        buf[1:] = buf[:-1]
        buf[0] = p
    return out


def update_prediction_window(actuals, preds, h: int, cfg: EngineConfig) -> int:
    """Adapt the horizon from one batch's MAPE: shrink above the upper
    threshold, grow below the lower one, else keep, clamped to the bounds."""
    batch_mape = mape(actuals, preds)
    if batch_mape > cfg.mape_upper:
        h = h - 1
    elif batch_mape < cfg.mape_lower:
        h = h + 1
    return min(max(h, cfg.h_min), cfg.h_max)


def _resolve_schedule(series: LoadSeries, cfg: EngineConfig):
    """Warmup index, initial training window, and the sizing record.

    Auto sizing runs on ``series[:warmup]`` only: nothing after the first
    forecastable sample can influence the schedule.
    """
    k = cfg.lags
    fallback = cfg.sizing.fallback_samples
    if cfg.train_window is not None:
        window = cfg.train_window
        warmup = cfg.warmup if cfg.warmup is not None else max(window, fallback) + k
        sizing = None
    else:
        warmup = cfg.warmup if cfg.warmup is not None else fallback + k
        if warmup > len(series):
            raise InsufficientDataError(
                f"zone {series.zone_id!r}: warmup {warmup} exceeds series "
                f"length {len(series)}"
            )
        scfg = sizing_with_bounds(cfg.sizing, max_window=warmup - k)
        sizing = training_window_size(series.head(warmup), scfg)
        window = sizing.window_samples
    if window < k + 2:
        raise InsufficientDataError(
            f"zone {series.zone_id!r}: training window {window} too small for "
            f"{k} lags (need >= {k + 2})"
        )
    if warmup < window + k:
        raise InsufficientDataError(
            f"zone {series.zone_id!r}: warmup {warmup} must cover window + lags "
            f"= {window + k}"
        )
    if len(series) < warmup + cfg.h0:
        raise InsufficientDataError(
            f"zone {series.zone_id!r}: series of {len(series)} samples cannot "
            f"cover warmup {warmup} plus initial horizon {cfg.h0}"
        )
    return warmup, window, sizing


def _config_echo(cfg: EngineConfig, warmup: int, protocol: str, model: str) -> dict:
    return {
        "model": model,
        "protocol": protocol,
        "regressor": cfg.regressor if model == "swr" else model,
        "lags": cfg.lags,
        "train_window": "auto" if cfg.train_window is None else cfg.train_window,
        "h0": cfg.h0,
        "h_min": cfg.h_min,
        "h_max": cfg.h_max,
        "mape_upper": cfg.mape_upper,
        "mape_lower": cfg.mape_lower,
        "warmup": warmup,
        "seed": cfg.seed,
    }


def _forecast_batch(series, cfg, kind, cursor, window, h_nominal, batch_id, fitted):
    """Fit (if needed), forecast, and score one batch; pure in the series."""
    n = len(series)
    h_used = min(h_nominal, n - cursor)
    if fitted is None:
        train = slice_window(series, cursor, window)
        fitted = fit_regressor(
            train,
            cfg.lags,
            kind,
            svr=cfg.svr,
            tree=cfg.tree,
            forest=cfg.forest,
            seed=cfg.seed + batch_id,
        )
    seed_lags = series.values[cursor - cfg.lags : cursor]
    preds = recursive_forecast(fitted, seed_lags, h_used)
    actuals = series.values[cursor : cursor + h_used]
    return fitted, h_used, preds, actuals


def run_swr(series: LoadSeries, cfg: EngineConfig) -> ForecastTrace:
    """Full adaptive run: spectral window sizing, per-batch retraining, and
    the adaptive horizon. The final partial batch is truncated and scored."""
    warmup, window, sizing = _resolve_schedule(series, cfg)
    state = EngineState(h=cfg.h0, window=window, cursor=warmup)
    steps: list[StepRecord] = []
    batches: list[BatchRecord] = []
    n = len(series)
    batch_id = 0
    while state.cursor < n:
        if (
            cfg.resize_every is not None
            and cfg.train_window is None
            and batch_id > 0
            and batch_id % cfg.resize_every == 0
        ):
            scfg = sizing_with_bounds(cfg.sizing, max_window=state.cursor - cfg.lags)
            sizing = training_window_size(series.head(state.cursor), scfg)
            state.window = sizing.window_samples
        fitted, h_used, preds, actuals = _forecast_batch(
            series, cfg, cfg.regressor, state.cursor, state.window, state.h, batch_id,
            fitted=None,
        )
        state.fitted = fitted
        for i in range(h_used):
            idx = state.cursor + i
            steps.append(
                StepRecord(idx, series.time_at(idx), float(actuals[i]),
                           float(preds[i]), batch_id)
            )
        batches.append(
            BatchRecord(batch_id, h_used, state.window, mape(actuals, preds),
                        fitted.converged)
        )
        state.h = update_prediction_window(actuals, preds, state.h, cfg)
        state.cursor += h_used
        batch_id += 1
    return ForecastTrace(
        zone_id=series.zone_id,
        model="swr",
        protocol=PROTOCOL_ADAPTIVE,
        steps=steps,
        batches=batches,
        sizing=sizing,
        config=_config_echo(cfg, warmup, PROTOCOL_ADAPTIVE, "swr"),
    )


def run_baseline(
    series: LoadSeries,
    cfg: EngineConfig,
    kind: str,
    protocol: str = PROTOCOL_TRAIN_ONCE,
) -> ForecastTrace:
    """Fixed-horizon comparison run, step-aligned with :func:`run_swr`.

    ``train-once`` fits a single model on all data before warmup and never
    refits; ``sliding-fixed`` refits each batch on the same training window
    the adaptive run starts with. Both keep the horizon at ``h0``.
    """
    if kind not in REGRESSOR_KINDS:
        raise ValueError(f"unknown regressor {kind!r}")
    if protocol not in BASELINE_PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    warmup, window, sizing = _resolve_schedule(series, cfg)
    steps: list[StepRecord] = []
    batches: list[BatchRecord] = []
    n = len(series)
    cursor = warmup
    batch_id = 0
    fitted_once: FittedRegressor | None = None
    if protocol == PROTOCOL_TRAIN_ONCE:
        fitted_once = fit_regressor(
            series.values[:warmup],
            cfg.lags,
            kind,
            svr=cfg.svr,
            tree=cfg.tree,
            forest=cfg.forest,
            seed=cfg.seed,
        )
    while cursor < n:
        window_used = warmup if protocol == PROTOCOL_TRAIN_ONCE else window
        fitted, h_used, preds, actuals = _forecast_batch(
            series, cfg, kind, cursor, window, cfg.h0, batch_id, fitted=fitted_once
        )
        for i in range(h_used):
            idx = cursor + i
            steps.append(
                StepRecord(idx, series.time_at(idx), float(actuals[i]),
                           float(preds[i]), batch_id)
            )
        batches.append(
            BatchRecord(batch_id, h_used, window_used, mape(actuals, preds),
                        fitted.converged)
        )
        cursor += h_used
        batch_id += 1
    return ForecastTrace(
        zone_id=series.zone_id,
        model=kind,
        protocol=protocol,
        steps=steps,
        batches=batches,
        sizing=sizing,
        config=_config_echo(cfg, warmup, protocol, kind),
    )


# ---------------------------------------------------------------------------
# trace serialization
# ---------------------------------------------------------------------------

STEPS_HEADER = "index,timestamp,actual_mw,predicted_mw,batch"
BATCHES_HEADER = "batch,h,window_samples,mape_pct,converged"


def serialize_steps(trace: ForecastTrace) -> str:
    lines = [STEPS_HEADER]
    for s in trace.steps:
        lines.append(
            f"{s.index},{_format_utc(s.timestamp)},{s.actual!r},{s.predicted!r},"
            f"{s.batch}"
        )
    return "\n".join(lines) + "\n"


def serialize_batches(trace: ForecastTrace) -> str:
    lines = [BATCHES_HEADER]
    for b in trace.batches:
        conv = "true" if b.converged else "false"
        lines.append(
            f"{b.batch},{b.h},{b.window_samples},{b.mape_pct!r},{conv}"
        )
    return "\n".join(lines) + "\n"


def write_steps_csv(trace: ForecastTrace, path) -> None:
    Path(path).write_text(serialize_steps(trace), encoding="utf-8", newline="\n")


def write_batches_csv(trace: ForecastTrace, path) -> None:
    Path(path).write_text(serialize_batches(trace), encoding="utf-8", newline="\n")


def read_steps_csv(path) -> list[StepRecord]:
    """Parse a steps CSV back into records (full float precision round-trips)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != STEPS_HEADER:
        raise ValueError(f"{path}: not a steps CSV")
    out = []
    for line in lines[1:]:
        if not line.strip():
            continue
        idx, ts, actual, predicted, batch = line.split(",")
        out.append(
            StepRecord(int(idx), _parse_utc(ts), float(actual), float(predicted),
                       int(batch))
        )
    return out
