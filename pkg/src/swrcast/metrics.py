"""Forecast loss functions and the cross-model comparison report.

MAPE drives the adaptive horizon; MAE, RMSE, RMSPE, and ACPER are reported
alongside it. All percentage metrics divide by the actual load, which the
ingest layer guarantees to be strictly positive; the guards here are defense
in depth.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

#: Relative-error tube (percent) for "almost correct" predictions.
DEFAULT_ACPER_TAU = 5.0


def _check_pair(actual, predicted, positive_actuals=True):
    a = np.asarray(actual, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if a.ndim != 1 or a.shape != p.shape:
        raise ValueError("actual and predicted must be 1-d arrays of equal length")
    if a.size == 0:
        raise ValueError("need at least one step to score")
    if positive_actuals and not np.all(a > 0):
        raise ValueError("actual loads must be strictly positive")
    return a, p


def mape(actual, predicted) -> float:
    """Mean absolute percentage error: ``100 * mean(|a - p| / a)``."""
    a, p = _check_pair(actual, predicted)
    return float(100.0 * np.mean(np.abs(a - p) / a))


def mae(actual, predicted) -> float:
    a, p = _check_pair(actual, predicted, positive_actuals=False)
    return float(np.mean(np.abs(a - p)))


def rmse(actual, predicted) -> float:
    a, p = _check_pair(actual, predicted, positive_actuals=False)
    return float(np.sqrt(np.mean((a - p) ** 2)))


def rmspe(actual, predicted) -> float:
    """Root mean square percentage error: ``100 * sqrt(mean((e/a)^2))``."""
    a, p = _check_pair(actual, predicted)
    return float(100.0 * np.sqrt(np.mean(((a - p) / a) ** 2)))


def acper(actual, predicted, tau: float = DEFAULT_ACPER_TAU) -> float:
    """Percent of steps whose relative error is within ``tau`` percent."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    a, p = _check_pair(actual, predicted)
    return float(100.0 * np.mean(np.abs(a - p) / a <= tau / 100.0))


@dataclass(frozen=True)
class MetricRow:
    model: str
    protocol: str
    mape_pct: float
    mae_mw: float
    rmse_mw: float
    rmspe_pct: float
    acper_pct: float
    n: int


@dataclass(frozen=True)
class MetricReport:
    rows: tuple[MetricRow, ...]
    tau: float


def row_from_steps(
    model: str, protocol: str, actual, predicted, tau: float = DEFAULT_ACPER_TAU
) -> MetricRow:
    a, p = _check_pair(actual, predicted)
    return MetricRow(
        model=model,
        protocol=protocol,
        mape_pct=mape(a, p),
        mae_mw=mae(a, p),
        rmse_mw=rmse(a, p),
        rmspe_pct=rmspe(a, p),
        acper_pct=acper(a, p, tau),
        n=int(a.size),
    )


def compare_report(traces, tau: float = DEFAULT_ACPER_TAU) -> MetricReport:
    """One metrics row per trace, sorted ascending by MAPE.

    All traces must be step-aligned: the same evaluated indices in the same
    order (they come from runs sharing one schedule).
    """
    traces = list(traces)
    if not traces:
        raise ValueError("no traces to report on")
    ref = traces[0].indices()
    for t in traces[1:]:
        if not np.array_equal(t.indices(), ref):
            raise ValueError(
                f"misaligned traces: {t.model!r} evaluates different steps "
                f"than {traces[0].model!r}"
            )
    rows = [
        row_from_steps(t.model, t.protocol, t.actuals(), t.predictions(), tau)
        for t in traces
    ]
    rows.sort(key=lambda r: r.mape_pct)
    return MetricReport(tuple(rows), tau)


REPORT_HEADER = "model,protocol,mape_pct,mae_mw,rmse_mw,rmspe_pct,acper_pct,n"


def serialize_report(report: MetricReport) -> str:
    lines = [REPORT_HEADER]
    for r in report.rows:
        lines.append(
            f"{r.model},{r.protocol},{r.mape_pct!r},{r.mae_mw!r},{r.rmse_mw!r},"
            f"{r.rmspe_pct!r},{r.acper_pct!r},{r.n}"
        )
    return "\n".join(lines) + "\n"


def write_report_csv(report: MetricReport, path) -> None:
    Path(path).write_text(serialize_report(report), encoding="utf-8", newline="\n")
