"""Metric collection and workload scenario replay.

Samples are kept in an append-only DuckDB table. Each (vm, metric) series
is strictly ordered by logical timestamp.

run_scenario replays a file-transfer workload as synthetic samples. Per
step and metric, with n samples (one per collection period):

- cpu rises linearly from the idle baseline over the first floor(0.2n)
  samples, holds the calibrated peak, and falls back to baseline over the
  last floor(0.1n) samples;
- memory rises the same way and holds the peak until the step ends;
- throughput follows the cpu shape between 0 and the step rate.

At least one sample is always held at the peak, so a series' maximum is
exactly the calibrated value. A zero-byte step yields one baseline sample.
"""
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, NamedTuple

from slicekit import config
from slicekit.db import get_db_connection, init_database, load_sql
from slicekit.descriptor import METRIC_NAMES, MetricSpec, parse_document
from slicekit.errors import (
    BadRange,
    EmptySeries,
    NonMonotonicTimestamp,
    OutOfRange,
    ScenarioError,
    UnknownVm,
)
from slicekit.nfvi import LogicalClock, VmRecord, VmState

logger = logging.getLogger(__name__)

CPU = "cpu_utilization_pct"
MEMORY = "memory_utilization_mb"
THROUGHPUT = "throughput_mbps"
ACTIONS = ("download", "transfer", "idle")

IDLE_CPU_PCT = 5.0
IDLE_MEM_MB = 1024.0
RISE_FRACTION = 0.2
FALL_FRACTION = 0.1

CSV_HEADER = "vm_id,metric,ts,value"


def format_number(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


class MetricSample(NamedTuple):
    vm_id: str
    metric_name: str
    logical_ts: float
    value: float

    def csv(self) -> str:
        return f"{self.vm_id},{self.metric_name},{format_number(self.logical_ts)},{format_number(self.value)}"


class SeriesSummary(NamedTuple):
    max: float
    mean: float
    sample_count: int


class MetricStore:
    def __init__(self, vm_lookup: Callable[[str], VmRecord | None] | None = None, db_path: str = ":memory:"):
        self.vm_lookup = vm_lookup
        self.conn = get_db_connection(db_path)
        init_database(self.conn)
        self._last_ts: dict[tuple[str, str], float] = {}
        self._seq = 0
        self._lock = threading.RLock()

    def _check(self, sample: MetricSample) -> None:
        if sample.metric_name not in METRIC_NAMES:
            raise OutOfRange(f"unknown metric {sample.metric_name!r}")
        if sample.value < 0 or math.isnan(sample.value):
            raise OutOfRange(f"{sample.metric_name}={sample.value} is negative")
        if sample.metric_name == CPU and sample.value > 100:
            raise OutOfRange(f"{CPU}={sample.value} above 100")
        record = self.vm_lookup(sample.vm_id) if self.vm_lookup else None
        if self.vm_lookup is not None and record is None:
            raise UnknownVm(sample.vm_id)
        if sample.metric_name == MEMORY and record is not None and sample.value > record.flavor.memory_mb:
            raise OutOfRange(f"{MEMORY}={sample.value} above flavor memory {record.flavor.memory_mb} of {sample.vm_id}")

    def record(self, sample: MetricSample) -> None:
        self.record_many([sample])

    def record_many(self, samples: Iterable[MetricSample]) -> int:
        """Validate every sample, then append them all; nothing is stored on error."""
        samples = list(samples)
        with self._lock:
            last = dict(self._last_ts)
            for sample in samples:
                self._check(sample)
                key = (sample.vm_id, sample.metric_name)
                if key in last and sample.logical_ts <= last[key]:
                    logger.warning(f"Rejected sample {sample.csv()}: not after ts {format_number(last[key])}")
                    raise NonMonotonicTimestamp(
                        f"{sample.vm_id}/{sample.metric_name} ts {format_number(sample.logical_ts)} ≤ {format_number(last[key])}"
                    )
                last[key] = sample.logical_ts
            rows = []
            for sample in samples:
                self._seq += 1
                rows.append([self._seq, sample.vm_id, sample.metric_name, float(sample.logical_ts), float(sample.value)])
            if rows:
                self.conn.executemany("INSERT INTO metric_samples VALUES (?, ?, ?, ?, ?)", rows)
            self._last_ts = last
            return len(rows)

    def query_range(self, vm_id: str, metric: str, t0: float, t1: float) -> list[MetricSample]:
        if t0 > t1:
            raise BadRange(f"t0={t0} > t1={t1}")
        with self._lock:
            rows = self.conn.execute(load_sql("query_range.sql"), [vm_id, metric, t0, t1]).fetchall()
        return [MetricSample(*row) for row in rows]

    def summarize(self, vm_id: str, metric: str) -> SeriesSummary:
        with self._lock:
            max_value, mean_value, count = self.conn.execute(load_sql("summarize.sql"), [vm_id, metric]).fetchone()
        if not count:
            raise EmptySeries(f"{vm_id}/{metric}")
        return SeriesSummary(max_value, mean_value, count)

    def samples(self) -> list[MetricSample]:
        with self._lock:
            rows = self.conn.execute(load_sql("export_series.sql")).fetchall()
        return [MetricSample(*row) for row in rows]

    def series_keys(self) -> list[tuple[str, str]]:
        return sorted(self._last_ts)

    def export_csv(self) -> str:
        return "\n".join([CSV_HEADER] + [s.csv() for s in self.samples()]) + "\n"

    def state_dict(self) -> list[list[Any]]:
        return [list(s) for s in self.samples()]

    def load_state(self, data: list[list[Any]]) -> None:
        with self._lock:
            self.conn.execute("DELETE FROM metric_samples")
            self._last_ts = {}
            self._seq = 0
            lookup, self.vm_lookup = self.vm_lookup, None
            try:
                self.record_many(MetricSample(*row) for row in data)
            finally:
                self.vm_lookup = lookup


# ---------------------------------------------------------------------------
# Workload scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Calibration:
    peak_cpu_pct: float
    peak_mem_mb: float


@dataclass(frozen=True)
class WorkloadStep:
    vm_id: str
    action: str
    bytes: int
    rate_mbps: float
    start_ts: float
    duration_s: float | None = None  # idle steps only
    calibration: Calibration | None = None

    @property
    def duration(self) -> float:
        if self.action == "idle":
            return float(self.duration_s or 0)
        return self.bytes * 8 / (self.rate_mbps * 1_000_000)


@dataclass(frozen=True)
class WorkloadScenario:
    id: str
    steps: tuple[WorkloadStep, ...]
    calibration: Mapping[str, Calibration] = field(default_factory=dict)
    period: int = config.COLLECTION_PERIOD
    idle_cpu_pct: float = IDLE_CPU_PCT
    idle_mem_mb: float = IDLE_MEM_MB

    def calibration_for(self, step: WorkloadStep) -> Calibration:
        if step.action == "idle":
            return Calibration(self.idle_cpu_pct, self.idle_mem_mb)
        if step.calibration is not None:
            return step.calibration
        try:
            return self.calibration[step.action]
        except KeyError:
            raise ScenarioError(f"no calibration for action {step.action!r}") from None


def sample_count(duration: float, period: float) -> int:
    return max(1, math.ceil(duration / period))


def _trapezoid(n: int, low: float, high: float, fall: bool = True) -> list[float]:
    rise = math.floor(RISE_FRACTION * n)
    drop = math.floor(FALL_FRACTION * n) if fall else 0
    values = []
    for i in range(n):
        if i < rise:
            values.append(low + (high - low) * i / rise)
        elif i >= n - drop:
            j = i - (n - drop)
            values.append(high - (high - low) * (j + 1) / drop)
        else:
            values.append(high)
    return values


def step_series(scenario: WorkloadScenario, step: WorkloadStep, metric: str, period: float) -> list[tuple[float, float]]:
    """(relative ts, value) pairs for one step and metric."""
    duration = step.duration
    if step.action != "idle" and step.bytes == 0:
        n = 1
    else:
        n = sample_count(duration, period)
    times = [step.start_ts + i * period for i in range(n)]
    if step.action == "idle" or duration == 0:
        idle = {CPU: scenario.idle_cpu_pct, MEMORY: scenario.idle_mem_mb, THROUGHPUT: 0.0}[metric]
        return [(t, idle) for t in times]
    peak = scenario.calibration_for(step)
    if metric == CPU:
        values = _trapezoid(n, scenario.idle_cpu_pct, peak.peak_cpu_pct)
    elif metric == MEMORY:
        values = _trapezoid(n, scenario.idle_mem_mb, peak.peak_mem_mb, fall=False)
    else:
        values = _trapezoid(n, 0.0, float(step.rate_mbps))
    return list(zip(times, values))


def validate_scenario(scenario: WorkloadScenario) -> None:
    if scenario.period < 1:
        raise ScenarioError("collection period must be positive")
    last: dict[str, tuple[float, float]] = {}
    for step in sorted(scenario.steps, key=lambda s: (s.vm_id, s.start_ts)):
        if step.action not in ACTIONS:
            raise ScenarioError(f"unknown action {step.action!r}")
        if step.action != "idle" and step.rate_mbps <= 0:
            raise ScenarioError(f"step on {step.vm_id} at {step.start_ts}: rate must be positive")
        if step.start_ts < 0:
            raise ScenarioError(f"step on {step.vm_id}: start must be non-negative")
        if step.action != "idle":
            peak = scenario.calibration_for(step)
            if peak.peak_cpu_pct < scenario.idle_cpu_pct or peak.peak_mem_mb < scenario.idle_mem_mb:
                raise ScenarioError(f"calibration for {step.vm_id} {step.action} is below the idle baseline")
            if peak.peak_cpu_pct > 100:
                raise ScenarioError(f"calibrated cpu {peak.peak_cpu_pct} above 100")
        if step.vm_id in last:
            prev_end, prev_last_sample = last[step.vm_id]
            if step.start_ts < prev_end or step.start_ts <= prev_last_sample:
                raise ScenarioError(f"steps overlap on {step.vm_id} at {step.start_ts}")
        n = sample_count(step.duration, scenario.period)
        last[step.vm_id] = (step.start_ts + step.duration, step.start_ts + (n - 1) * scenario.period)


def _float(value: Any, path: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ScenarioError(f"'{path}' must be a number") from None


def _calibration(record: Mapping[str, Any], path: str) -> Calibration:
    return Calibration(_float(record.get("cpu"), f"{path}.cpu"), _float(record.get("mem-mb"), f"{path}.mem-mb"))


def parse_scenario(text: str) -> WorkloadScenario:
    """Parse a `kind: scenario` document."""
    record = parse_document(text)
    if record.get("kind") != "scenario":
        raise ScenarioError(f"expected 'kind: scenario', got {record.get('kind')!r}")
    calibration = {
        action: _calibration(values or {}, f"calibration.{action}")
        for action, values in (record.get("calibration") or {}).items()
    }
    baseline = record.get("baseline") or {}
    steps = []
    for i, item in enumerate(record.get("steps") or []):
        path = f"steps[{i}]"
        if not isinstance(item, dict) or "vm" not in item or "action" not in item:
            raise ScenarioError(f"'{path}' needs vm and action")
        override = None
        if "peak-cpu" in item or "peak-mem-mb" in item:
            override = Calibration(
                _float(item.get("peak-cpu"), f"{path}.peak-cpu"),
                _float(item.get("peak-mem-mb"), f"{path}.peak-mem-mb"),
            )
        steps.append(WorkloadStep(
            vm_id=str(item["vm"]),
            action=str(item["action"]),
            bytes=int(item.get("bytes", 0)),
            rate_mbps=_float(item.get("rate-mbps", 1), f"{path}.rate-mbps"),
            start_ts=_float(item.get("start", 0), f"{path}.start"),
            duration_s=_float(item["duration-s"], f"{path}.duration-s") if "duration-s" in item else None,
            calibration=override,
        ))
    scenario = WorkloadScenario(
        id=str(record.get("id", "scenario")),
        steps=tuple(steps),
        calibration=calibration,
        period=int(record.get("period", config.COLLECTION_PERIOD)),
        idle_cpu_pct=_float(baseline.get("cpu", IDLE_CPU_PCT), "baseline.cpu"),
        idle_mem_mb=_float(baseline.get("mem-mb", IDLE_MEM_MB), "baseline.mem-mb"),
    )
    validate_scenario(scenario)
    return scenario


def run_scenario(
    store: MetricStore,
    scenario: WorkloadScenario,
    clock: LogicalClock,
    aliases: Mapping[str, str] | None = None,
    metric_specs: Callable[[str], list[MetricSpec]] | None = None,
) -> dict[str, dict[str, list[MetricSample]]]:
    """Generate and record samples for every step, offset by the clock.

    VMs whose VNFD declares metrics get only those metrics, at their
    collection periods; other VMs get all three at the scenario period.
    """
    aliases = aliases or {}
    validate_scenario(scenario)
    vm_ids = {step.vm_id: aliases.get(step.vm_id, step.vm_id) for step in scenario.steps}
    for name, vm_id in vm_ids.items():
        record = store.vm_lookup(vm_id) if store.vm_lookup else None
        if store.vm_lookup is not None and record is None:
            raise UnknownVm(f"{vm_id}" + (f" (bound to {name})" if name != vm_id else ""))
        if record is not None and record.state is not VmState.ACTIVE:
            raise UnknownVm(f"{vm_id} is {record.state.value}, not a live VM")

    base = clock.now
    series: dict[str, dict[str, list[MetricSample]]] = {}
    end = base
    for step in sorted(scenario.steps, key=lambda s: (s.start_ts, s.vm_id)):
        vm_id = vm_ids[step.vm_id]
        specs = metric_specs(vm_id) if metric_specs else []
        plan = [(s.name, s.collection_period_s) for s in specs] or [(m, scenario.period) for m in METRIC_NAMES]
        for metric, period in plan:
            points = step_series(scenario, step, metric, period)
            samples = [MetricSample(vm_id, metric, base + t, v) for t, v in points]
            series.setdefault(vm_id, {}).setdefault(metric, []).extend(samples)
            end = max(end, base + step.start_ts + max(step.duration, period * len(points)))
    # record per series in time order so one bad sample rejects the whole run
    store.record_many(s for metrics in series.values() for samples in metrics.values() for s in samples)
    clock.advance_to(math.ceil(end))
    logger.info(
        f"Scenario {scenario.id}: {sum(len(v) for m in series.values() for v in m.values())} samples "
        f"over {len(series)} VM(s), clock now {clock.now}"
    )
    return series
