"""Load series data model: CSV ingestion, synthetic generation, windowing.

The canonical interchange format is a UTF-8 CSV with header
``timestamp,zone,load_mw``, ISO-8601 UTC timestamps, one row per reading.
Within a zone the readings must be uniformly spaced; the sampling step is
inferred from the first gap and then enforced for every later row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

CSV_HEADER = "timestamp,zone,load_mw"

#: Lowest value the synthetic generator will emit (loads must stay positive).
VALUE_FLOOR_MW = 1e-3

#: Default epoch for generated series when the caller does not care.
DEFAULT_START = datetime(2024, 1, 1, tzinfo=timezone.utc)


class CsvFormatError(ValueError):
    """Malformed or inconsistent load CSV. Carries the offending 1-based line."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def _parse_utc(text: str) -> datetime:
    """Parse an ISO-8601 timestamp into an aware UTC datetime.

    Accepts a trailing ``Z`` as well as numeric offsets; naive timestamps are
    taken to be UTC already.
    """
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        return dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def _format_utc(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class LoadSeries:
    """Uniformly sampled load readings (MW) for one zone.

    Values are strictly positive and finite; sample ``i`` is observed at
    ``start_time + i * step`` seconds. Instances are immutable and safe to
    share across concurrent runs.
    """

    zone_id: str
    start_time: datetime
    step: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.start_time.tzinfo is None:
            object.__setattr__(
                self, "start_time", self.start_time.replace(tzinfo=timezone.utc)
            )
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError(
                f"zone {self.zone_id!r}: need at least 2 samples, got {vals.size}"
            )
        if self.step <= 0:
            raise ValueError(f"zone {self.zone_id!r}: step must be positive seconds")
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"zone {self.zone_id!r}: non-finite load value")
        if not np.all(vals > 0):
            raise ValueError(
                f"zone {self.zone_id!r}: load values must be strictly positive MW"
            )

    def __len__(self) -> int:
        return int(self.values.size)

    def time_at(self, index: int) -> datetime:
        return self.start_time + timedelta(seconds=index * self.step)

    def head(self, n: int) -> "LoadSeries":
        """First ``n`` samples as a new series with the same zone/start/step."""
        if not 2 <= n <= len(self):
            raise ValueError(f"cannot take {n} samples from a series of {len(self)}")
        return LoadSeries(self.zone_id, self.start_time, self.step, self.values[:n])


@dataclass(frozen=True)
class DriftSpec:
    """Abrupt regime change: from ``onset_index`` onward the base level shifts
    by ``level_shift_mw`` and every seasonal amplitude is multiplied by
    ``amplitude_scale``."""

    onset_index: int
    level_shift_mw: float = 0.0
    amplitude_scale: float = 1.0

    def __post_init__(self):
        if self.onset_index < 0:
            raise ValueError("onset_index must be non-negative")
        if self.amplitude_scale < 0:
            raise ValueError("amplitude_scale must be non-negative")


@dataclass(frozen=True)
class SynthConfig:
    """Recipe for a deterministic synthetic load series.

    ``components`` is a sequence of ``(period_seconds, amplitude_mw,
    phase_radians)`` sinusoids added to ``base_level``. Gaussian noise comes
    from numpy's PCG64 generator seeded with ``seed``, so identical configs
    reproduce identical series on any platform.
    """

    length: int
    step: float = 300.0
    base_level: float = 500.0
    components: tuple[tuple[float, float, float], ...] = ((86400.0, 50.0, 0.0),)
    noise_sigma: float = 0.0
    drift: DriftSpec | None = None
    seed: int = 42

    def __post_init__(self):
        object.__setattr__(
            self,
            "components",
            tuple((float(p), float(a), float(ph)) for p, a, ph in self.components),
        )
        if self.length < 2:
            raise ValueError("length must be at least 2")
        if self.step <= 0:
            raise ValueError("step must be positive seconds")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        total_amp = 0.0
        for period, amp, _ in self.components:
            if period <= 0:
                raise ValueError("component period must be positive")
            if amp < 0:
                raise ValueError("component amplitude must be non-negative")
            total_amp += amp
        headroom = self.base_level - total_amp - 6.0 * self.noise_sigma
        if headroom <= 0:
            raise ValueError(
                "base_level must exceed total amplitude + 6*noise_sigma "
                f"(headroom {headroom:.3g} MW)"
            )


def generate_synthetic(
    config: SynthConfig,
    zone_id: str = "SYNTH",
    start_time: datetime = DEFAULT_START,
) -> LoadSeries:
    """Materialize a :class:`SynthConfig` into a :class:`LoadSeries`.

    ``values[i] = base + sum_j amp_j*sin(2*pi*(i*step)/period_j + phase_j)
    + noise_i``, with the drift applied from its onset index onward. Fully
    deterministic for a fixed seed; values are clamped at a small positive
    floor so the series always satisfies the load invariants.
    """
    t = np.arange(config.length, dtype=np.float64) * config.step
    seasonal = np.zeros(config.length)
    for period, amp, phase in config.components:
        seasonal += amp * np.sin(2.0 * np.pi * t / period + phase)
    values = config.base_level + seasonal
    if config.drift is not None and config.drift.onset_index < config.length:
        onset = config.drift.onset_index
        values[onset:] = (
            config.base_level
            + config.drift.level_shift_mw
            + config.drift.amplitude_scale * seasonal[onset:]
        )
    if config.noise_sigma > 0:
        rng = np.random.default_rng(config.seed)
        values = values + rng.normal(0.0, config.noise_sigma, config.length)
    np.maximum(values, VALUE_FLOOR_MW, out=values)
    return LoadSeries(zone_id, start_time, config.step, values)


def slice_window(series: LoadSeries, end_exclusive: int, length: int) -> np.ndarray:
    """The ``length`` most recent values ending just before ``end_exclusive``."""
    if not 0 < length <= end_exclusive <= len(series):
        raise IndexError(
            f"window [end={end_exclusive}, length={length}] out of range "
            f"for series of {len(series)} samples"
        )
    return series.values[end_exclusive - length : end_exclusive]


def parse_load_csv(text: str) -> dict[str, LoadSeries]:
    """Parse the canonical CSV document into one LoadSeries per zone.

    Rows may be interleaved across zones and unsorted within a zone; each
    zone is sorted by timestamp, checked for duplicates, and checked for
    uniform spacing (the step is inferred from the first gap). Any violation
    raises :class:`CsvFormatError` naming the offending line.
    """
    lines = text.split("\n")
    if not lines or lines[0].strip() != CSV_HEADER:
        raise CsvFormatError(f"expected header {CSV_HEADER!r}", line=1)
    rows: dict[str, list[tuple[datetime, float, int]]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise CsvFormatError(f"expected 3 fields, got {len(parts)}", line=lineno)
        ts_text, zone, load_text = parts
        zone = zone.strip()
        if not zone:
            raise CsvFormatError("empty zone id", line=lineno)
        try:
            ts = _parse_utc(ts_text)
        except ValueError:
            raise CsvFormatError(f"bad timestamp {ts_text.strip()!r}", line=lineno)
        try:
            load = float(load_text)
        except ValueError:
            raise CsvFormatError(f"bad load value {load_text.strip()!r}", line=lineno)
        if not math.isfinite(load) or load <= 0:
            raise CsvFormatError(
                f"load must be a positive finite MW value, got {load_text.strip()}",
                line=lineno,
            )
        rows.setdefault(zone, []).append((ts, load, lineno))

    out: dict[str, LoadSeries] = {}
    for zone, zone_rows in rows.items():
        zone_rows.sort(key=lambda r: r[0])
        if len(zone_rows) < 2:
            raise CsvFormatError(
                f"zone {zone!r} has fewer than 2 rows", line=zone_rows[0][2]
            )
        for (t_prev, _, _), (t_cur, _, line_cur) in zip(zone_rows, zone_rows[1:]):
            if t_cur == t_prev:
                raise CsvFormatError(
                    f"duplicate timestamp {_format_utc(t_cur)} in zone {zone!r}",
                    line=line_cur,
                )
        step = (zone_rows[1][0] - zone_rows[0][0]).total_seconds()
        for i, (t_cur, _, line_cur) in enumerate(zone_rows[1:], start=1):
            gap = (t_cur - zone_rows[i - 1][0]).total_seconds()
            if gap != step:
                raise CsvFormatError(
                    f"non-uniform spacing in zone {zone!r}: expected {step:g} s, "
                    f"got {gap:g} s",
                    line=line_cur,
                )
        values = np.array([r[1] for r in zone_rows])
        out[zone] = LoadSeries(zone, zone_rows[0][0], step, values)
    return out


def serialize_load_csv(series) -> str:
    """Render one or more LoadSeries as the canonical CSV document.

    Accepts a single series, a mapping, or an iterable. Loads are printed
    with 6 significant digits; lines end with ``\\n``.
    """
    if isinstance(series, LoadSeries):
        items = [series]
    elif isinstance(series, dict):
        items = list(series.values())
    else:
        items = list(series)
    lines = [CSV_HEADER]
    for s in items:
        for i in range(len(s)):
            lines.append(f"{_format_utc(s.time_at(i))},{s.zone_id},{s.values[i]:.6g}")
    return "\n".join(lines) + "\n"


def load_csv_file(path) -> dict[str, LoadSeries]:
    return parse_load_csv(Path(path).read_text(encoding="utf-8"))


def write_csv_file(path, series) -> None:
    Path(path).write_text(serialize_load_csv(series), encoding="utf-8", newline="\n")
