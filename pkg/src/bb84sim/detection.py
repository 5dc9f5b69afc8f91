"""Attack scheduling, threshold decisions, confusion counts and ROC curves."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

DEFAULT_THRESHOLD = 0.125
DEFAULT_ATTACK_RATE = 0.5


@dataclass(frozen=True)
class AttackSchedule:
    total_iterations: int
    attacked_indices: frozenset
    attack_rate: float

    def is_attacked(self, iteration: int) -> bool:
        return iteration in self.attacked_indices

    @classmethod
    def every(cls, total: int) -> "AttackSchedule":
        return cls(total, frozenset(range(total)), 1.0)

    @classmethod
    def none(cls, total: int) -> "AttackSchedule":
        return cls(total, frozenset(), 0.0)


@dataclass(frozen=True)
class DecisionRecord:
    iteration: int
    qber_est: Optional[float]
    decided_attacked: Optional[bool]
    truly_attacked: bool


class Confusion(NamedTuple):
    tp: int
    fp: int
    tn: int
    fn: int


class RocPoint(NamedTuple):
    threshold: float
    fpr: Optional[float]
    tpr: Optional[float]


@dataclass(frozen=True)
class RocCurve:
    points: list

    def auc(self) -> Optional[float]:
        """Trapezoidal area, closing the curve at (0,0) and (1,1)."""
        pts = [(p.fpr, p.tpr) for p in self.points]
        if any(x is None or y is None for x, y in pts):
            return None
        pts = sorted(set(pts + [(0.0, 0.0), (1.0, 1.0)]))
        xs, ys = zip(*pts)
        return float(np.trapezoid(ys, xs)) if hasattr(np, "trapezoid") else float(np.trapz(ys, xs))


def build_attack_schedule(total: int, attack_rate: float, rng: np.random.Generator) -> AttackSchedule:
    """Pick round(rate * total) distinct iterations uniformly at random."""
    if not 0.0 <= attack_rate <= 1.0:
        raise ValueError(f"attack rate must lie in [0, 1], got {attack_rate}")
    k = min(total, math.floor(attack_rate * total + 0.5))
    chosen = rng.permutation(total)[:k]
    return AttackSchedule(total, frozenset(int(i) for i in chosen), attack_rate)


def decide(qber_est: Optional[float], threshold: float) -> Optional[bool]:
    """Abort (flag an attack) iff the estimate strictly exceeds the threshold.

    A missing estimate gives no decision.
    """
    if qber_est is None:
        return None
    return qber_est > threshold


def confusion_counts(records: Iterable[DecisionRecord]) -> Confusion:
    tp = fp = tn = fn = 0
    for r in records:
        if r.decided_attacked is None:
            continue
        if r.truly_attacked:
            if r.decided_attacked:
                tp += 1
            else:
                fn += 1
        elif r.decided_attacked:
            fp += 1
        else:
            tn += 1
    return Confusion(tp, fp, tn, fn)


def default_thresholds(records: Sequence[DecisionRecord]) -> list[float]:
    """Every observed estimate, plus one below them all so the curve reaches (1,1)."""
    seen = sorted({r.qber_est for r in records if r.qber_est is not None})
    return [-math.inf] + seen


def roc_points(records: Sequence[DecisionRecord], thresholds: Optional[Sequence[float]] = None) -> RocCurve:
    if thresholds is None:
        thresholds = default_thresholds(records)
    thresholds = list(thresholds)
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    scored = [(r.qber_est, r.truly_attacked) for r in records if r.qber_est is not None]
    q = np.array([s for s, _ in scored], dtype=float)
    attacked = np.array([a for _, a in scored], dtype=bool)
    n_pos = int(attacked.sum())
    n_neg = int((~attacked).sum())
    points = []
    for t in thresholds:
        flagged = q > t
        tpr = float((flagged & attacked).sum() / n_pos) if n_pos else None
        fpr = float((flagged & ~attacked).sum() / n_neg) if n_neg else None
        points.append(RocPoint(float(t), fpr, tpr))
    return RocCurve(points)
