"""Unified performance indexing, group classification and control charts.

Raw transport measurements (loss, latency, optional jitter) collapse to a
single 1..5 index through an equivalency scale; 6 marks a measurement worse
than the scale's worst level so severe outliers stay visible. Device
populations are colored by the two-sigma rule and per-device series are
screened with the Western Electric run rules.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DegenerateBaseline, TooFewSamples
from .model import ElementId


@dataclass(frozen=True)
class MetricSample:
    """One per-device measurement of the fundamental transport metrics."""

    device: ElementId
    timestamp: float
    packet_loss_pct: float
    latency_ms: float
    jitter_ms: float | None = None
    utilization_pct: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.packet_loss_pct <= 100.0:
            raise ValueError(f"packet_loss_pct {self.packet_loss_pct} not in [0,100]")
        if self.latency_ms < 0.0:
            raise ValueError(f"latency_ms {self.latency_ms} must be >= 0")
        if self.jitter_ms is not None and self.jitter_ms < 0.0:
            raise ValueError(f"jitter_ms {self.jitter_ms} must be >= 0")


@dataclass(frozen=True)
class IndexLevel:
    index: int
    max_loss_pct: float
    max_latency_ms: float
    max_jitter_ms: float | None = None


@dataclass(frozen=True)
class IndexScale:
    """Ordered equivalency levels; thresholds strictly increase with index."""

    levels: tuple[IndexLevel, ...]

    def __post_init__(self):
        if not self.levels:
            raise ValueError("scale needs at least one level")
        expected = list(range(1, len(self.levels) + 1))
        if [l.index for l in self.levels] != expected:
            raise ValueError("level indices must run 1..n in order")
        for prev, cur in zip(self.levels, self.levels[1:]):
            if not (cur.max_loss_pct > prev.max_loss_pct
                    and cur.max_latency_ms > prev.max_latency_ms):
                raise ValueError("thresholds must strictly increase with index")
        jitter = [l.max_jitter_ms for l in self.levels]
        if any(j is not None for j in jitter):
            if any(j is None for j in jitter):
                raise ValueError("jitter thresholds must be set on all levels or none")
            for prev, cur in zip(jitter, jitter[1:]):
                if not cur > prev:
                    raise ValueError("jitter thresholds must strictly increase")

    @property
    def beyond_index(self) -> int:
        """Index reported for measurements worse than the worst level."""
        return self.levels[-1].index + 1

    @property
    def has_jitter(self) -> bool:
        return self.levels[0].max_jitter_ms is not None


# Default equivalency chart over loss percent and latency ms.
DEFAULT_SCALE = IndexScale(
    (
        IndexLevel(1, 0.01, 9.0),
        IndexLevel(2, 0.2, 10.0),
        IndexLevel(3, 0.5, 20.0),
        IndexLevel(4, 1.0, 40.0),
        IndexLevel(5, 2.0, 80.0),
    )
)


def _metric_level(value: float, thresholds: Sequence[float], beyond: int) -> int:
    for i, limit in enumerate(thresholds, start=1):
        if value <= limit:
            return i
    return beyond


def performance_index(sample: MetricSample, scale: IndexScale = DEFAULT_SCALE) -> int:
    """Collapse one sample to a single index; the worst metric governs."""
    beyond = scale.beyond_index
    loss_level = _metric_level(
        sample.packet_loss_pct, [l.max_loss_pct for l in scale.levels], beyond
    )
    latency_level = _metric_level(
        sample.latency_ms, [l.max_latency_ms for l in scale.levels], beyond
    )
    worst = max(loss_level, latency_level)
    if sample.jitter_ms is not None and scale.has_jitter:
        jitter_level = _metric_level(
            sample.jitter_ms, [l.max_jitter_ms for l in scale.levels], beyond
        )
        worst = max(worst, jitter_level)
    return worst


@dataclass(frozen=True)
class ServiceProfile:
    """A service and the worst index at which it still works."""

    service: str
    relevant_metrics: frozenset[str]
    required_index: int

    def __post_init__(self):
        if self.required_index < 1:
            raise ValueError("required_index must be >= 1")


# Transport-relevant metric sets for common services; required indices are
# an operator decision and ship unset.
DEFAULT_SERVICE_METRICS: dict[str, frozenset[str]] = {
    "Gaming": frozenset({"packet_loss", "latency"}),
    "VideoConferencing": frozenset({"latency", "jitter", "sustainable_rate"}),
    "VoD": frozenset({"packet_loss", "sustainable_rate", "available_content"}),
    "Telephony": frozenset({"latency", "jitter", "drop_call_pct"}),
    "BusinessServices": frozenset(
        {
            "instant_availability",
            "packet_loss",
            "latency",
            "jitter",
            "peak_rate",
            "sustainable_rate",
        }
    ),
}


def required_index(services: Iterable[ServiceProfile]) -> int:
    """Strictest requirement across a service bundle (minimum index)."""
    profiles = list(services)
    if not profiles:
        raise ValueError("service set must be nonempty")
    return min(p.required_index for p in profiles)


class GroupColor(str, Enum):
    GREEN = "Green"
    YELLOW = "Yellow"
    RED = "Red"


@dataclass(frozen=True)
class GroupStats:
    mean: float
    sigma: float
    n: int


def classify_group(
    samples: Sequence[MetricSample],
    scale: IndexScale = DEFAULT_SCALE,
    threshold_index: int = 4,
) -> tuple[GroupColor, GroupStats]:
    """Color a population against a threshold with the two-sigma rule.

    Lower index is better. Green when mean + 2 sigma <= threshold (closed
    boundary), Red when mean - 2 sigma > threshold, Yellow otherwise.
    Sigma is the population standard deviation.
    """
    n = len(samples)
    if n < 2:
        raise TooFewSamples(f"need >= 2 samples to estimate sigma, got {n}")
    indices = [performance_index(s, scale) for s in samples]
    mean = math.fsum(indices) / n
    sigma = math.sqrt(math.fsum((x - mean) ** 2 for x in indices) / n)
    stats = GroupStats(mean=mean, sigma=sigma, n=n)
    if mean + 2.0 * sigma <= threshold_index:
        return GroupColor.GREEN, stats
    if mean - 2.0 * sigma > threshold_index:
        return GroupColor.RED, stats
    return GroupColor.YELLOW, stats


class SpcRule(int, Enum):
    R1 = 1  # one point beyond 3 sigma
    R2 = 2  # 2 of 3 consecutive beyond 2 sigma, same side
    R3 = 3  # 4 of 5 consecutive beyond 1 sigma, same side
    R4 = 4  # 8 consecutive on the same side of the mean


@dataclass(frozen=True)
class SpcFlag:
    rule: SpcRule
    position: int  # 1-based index of the triggering point


# (rule, window length, required count, sigma multiple)
_RUN_RULES = (
    (SpcRule.R2, 3, 2, 2.0),
    (SpcRule.R3, 5, 4, 1.0),
    (SpcRule.R4, 8, 8, 0.0),
)


def spc_flags(
    series: Sequence[float],
    baseline_mean: float,
    baseline_sigma: float,
) -> list[SpcFlag]:
    """Western Electric run-rule hits over an ordered series.

    Windows trail the current point and are truncated at the start of the
    series, so a rule fires at the earliest position where its required
    count of qualifying points exists. Points exactly on the mean belong
    to neither side.
    """
    if baseline_sigma <= 0.0:
        raise DegenerateBaseline(f"baseline sigma {baseline_sigma} must be > 0")
    if not series:
        return []

    flags: list[SpcFlag] = []
    sides: list[int] = []
    zs: list[float] = []
    for pos, value in enumerate(series, start=1):
        z = (value - baseline_mean) / baseline_sigma
        zs.append(z)
        sides.append(1 if z > 0 else (-1 if z < 0 else 0))

        if abs(z) > 3.0:
            flags.append(SpcFlag(SpcRule.R1, pos))

        for rule, span, need, mult in _RUN_RULES:
            lo = max(0, pos - span)
            window = range(lo, pos)
            for side in (1, -1):
                hits = sum(
                    1
                    for i in window
                    if sides[i] == side and (mult == 0.0 or side * zs[i] > mult)
                )
                if hits >= need:
                    flags.append(SpcFlag(rule, pos))
                    break

    flags.sort(key=lambda f: (f.position, f.rule.value))
    return flags


# --------------------------------------------------------------------------
# Telemetry and config files
# --------------------------------------------------------------------------

def telemetry_lines(samples: Iterable[MetricSample]) -> list[str]:
    """Render samples as tab-separated rows: device, ts, loss, latency, jitter, util."""
    out = []
    for s in samples:
        jitter = "" if s.jitter_ms is None else repr(s.jitter_ms)
        util = "" if s.utilization_pct is None else repr(s.utilization_pct)
        out.append(
            "\t".join(
                (
                    s.device.token,
                    repr(s.timestamp),
                    repr(s.packet_loss_pct),
                    repr(s.latency_ms),
                    jitter,
                    util,
                )
            )
        )
    return out


def write_telemetry(samples: Iterable[MetricSample], path: str | Path) -> None:
    Path(path).write_text(
        "".join(line + "\n" for line in telemetry_lines(samples)), encoding="utf-8"
    )


def parse_telemetry(lines: Iterable[str]) -> list[MetricSample]:
    samples = []
    for lineno, line in enumerate(lines):
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 4:
            raise ValueError(
                f"telemetry line {lineno}: expected at least 4 fields, got {len(parts)}"
            )
        parts += [""] * (6 - len(parts))
        device, ts, loss, latency, jitter, util = parts[:6]
        samples.append(
            MetricSample(
                device=ElementId(device),
                timestamp=float(ts),
                packet_loss_pct=float(loss),
                latency_ms=float(latency),
                jitter_ms=float(jitter) if jitter else None,
                utilization_pct=float(util) if util else None,
            )
        )
    return samples


def read_telemetry(path: str | Path) -> list[MetricSample]:
    with open(path, encoding="utf-8") as fh:
        return parse_telemetry(fh)


def scale_from_config(doc: dict) -> IndexScale:
    """Build a scale from config JSON: {"scale": [[index, loss, latency, jitter?], ...]}."""
    rows = doc.get("scale")
    if rows is None:
        return DEFAULT_SCALE
    levels = []
    for row in rows:
        jitter = row[3] if len(row) > 3 and row[3] is not None else None
        levels.append(IndexLevel(int(row[0]), float(row[1]), float(row[2]), jitter))
    return IndexScale(tuple(levels))


def profiles_from_config(doc: dict) -> list[ServiceProfile]:
    profiles = []
    for row in doc.get("services", []):
        profiles.append(
            ServiceProfile(
                service=str(row["service"]),
                relevant_metrics=frozenset(
                    row.get(
                        "relevant_metrics",
                        DEFAULT_SERVICE_METRICS.get(str(row["service"]), frozenset()),
                    )
                ),
                required_index=int(row["required_index"]),
            )
        )
    return profiles


def load_config(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
