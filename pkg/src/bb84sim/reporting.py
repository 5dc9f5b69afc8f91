"""Per-iteration records, run summaries and their CSV files."""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .detection import AttackSchedule, Confusion, DecisionRecord, RocCurve, confusion_counts


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    attacked: bool
    decided_attacked: Optional[bool]
    sifted_len: int
    shared_len: int
    qber_est: Optional[float]
    qber_remaining: Optional[float]
    t_source_s: Optional[float]
    t_dead_s: Optional[float]
    t_quantum_s: Optional[float]
    sifted_rate_bps: Optional[float]

    def decision(self) -> DecisionRecord:
        return DecisionRecord(self.iteration, self.qber_est, self.decided_attacked, self.attacked)


ITERATION_COLUMNS = tuple(f.name for f in dataclasses.fields(IterationRecord))
_INT = {"iteration", "sifted_len", "shared_len"}
_BOOL = {"attacked", "decided_attacked"}

SUMMARY_METRICS = ("qber_est", "qber_remaining", "sifted_len", "shared_len",
                   "t_source_s", "t_dead_s", "t_quantum_s", "sifted_rate_bps")


@dataclass(frozen=True)
class MetricStats:
    count: int
    nulls: int
    mean: Optional[float]
    std: Optional[float]  # sample (n-1) deviation


@dataclass(frozen=True)
class RunSummary:
    iterations: int
    metrics: dict
    confusion: Confusion
    config: object = None

    def mean(self, metric: str) -> Optional[float]:
        return self.metrics[metric].mean

    def std(self, metric: str) -> Optional[float]:
        return self.metrics[metric].std

    def row(self) -> dict:
        """Flat column -> value mapping used by summary.csv and sweep.csv."""
        out = {"iterations": self.iterations}
        for name, m in self.metrics.items():
            out[f"{name}_mean"] = m.mean
            out[f"{name}_std"] = m.std
            out[f"{name}_count"] = m.count
            out[f"{name}_nulls"] = m.nulls
        out.update(self.confusion._asdict())
        return out


def _stats(values: Sequence[Optional[float]]) -> MetricStats:
    present = [float(v) for v in values if v is not None]
    n = len(present)
    if n == 0:
        return MetricStats(0, len(values), None, None)
    mean = math.fsum(present) / n
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in present) / (n - 1)) if n > 1 else None
    return MetricStats(n, len(values) - n, mean, std)


def summarize(records: Sequence[IterationRecord], config=None) -> RunSummary:
    if not records:
        raise ValueError("cannot summarize an empty run")
    metrics = {m: _stats([getattr(r, m) for r in records]) for m in SUMMARY_METRICS}
    conf = confusion_counts(r.decision() for r in records)
    return RunSummary(len(records), metrics, conf, config)


# -- CSV -------------------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(name: str, text: str):
    if text == "":
        return None
    if name in _BOOL:
        return text == "1"
    if name in _INT:
        return int(text)
    return float(text)


def _open_for_write(path):
    path = Path(path)
    try:
        return path.open("w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_rows(path, columns: Sequence[str], rows: Iterable[dict]) -> Path:
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])
    return Path(path)


def write_iterations_csv(records: Iterable[IterationRecord], path) -> Path:
    return write_rows(path, ITERATION_COLUMNS, (dataclasses.asdict(r) for r in records))


def read_iterations_csv(path) -> list[IterationRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(ITERATION_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {', '.join(sorted(missing))}")
        return [IterationRecord(**{c: _parse(c, row[c]) for c in ITERATION_COLUMNS}) for row in reader]


def write_summary_csv(summary: RunSummary, path) -> Path:
    row = summary.row()
    return write_rows(path, list(row), [row])


def write_sweep_csv(axis: str, results: Sequence[tuple], path) -> Path:
    """results: (axis value, RunSummary) pairs, one row each."""
    rows = [{axis: value, **summary.row()} for value, summary in results]
    columns = [axis] + list(results[0][1].row()) if results else [axis]
    return write_rows(path, columns, rows)


def write_roc_csv(curve: RocCurve, path) -> Path:
    return write_rows(path, ("threshold", "fpr", "tpr"), (p._asdict() for p in curve.points))


def read_roc_csv(path) -> list[tuple]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [tuple(_parse("x", row[c]) for c in ("threshold", "fpr", "tpr"))
                for row in csv.DictReader(fh)]


def write_schedule_csv(schedule: AttackSchedule, path) -> Path:
    rows = ({"iteration": i, "attacked": schedule.is_attacked(i)}
            for i in range(schedule.total_iterations))
    return write_rows(path, ("iteration", "attacked"), rows)
