import numpy as np
import pytest

from bb84sim.config import SimConfig
from bb84sim.detection import (AttackSchedule, Confusion, DecisionRecord, build_attack_schedule,
                               confusion_counts, decide, roc_points)
from bb84sim.runner import run


def rec(i, q, attacked, threshold=0.125):
    return DecisionRecord(i, q, decide(q, threshold), attacked)


@pytest.mark.parametrize("rate,total,expected", [(0.5, 1000, 500), (0.0, 1000, 0), (1.0, 1000, 1000),
                                                 (0.1, 1000, 100), (0.5, 7, 4)])
def test_schedule_size(rate, total, expected):
    s = build_attack_schedule(total, rate, np.random.default_rng(1))
    assert len(s.attacked_indices) == expected
    assert all(0 <= i < total for i in s.attacked_indices)


def test_schedule_is_seeded_and_validated():
    a = build_attack_schedule(100, 0.5, np.random.default_rng(3))
    b = build_attack_schedule(100, 0.5, np.random.default_rng(3))
    assert a == b
    with pytest.raises(ValueError):
        build_attack_schedule(10, 1.5, np.random.default_rng(0))
    assert AttackSchedule.every(3).attacked_indices == {0, 1, 2}


def test_decide():
    assert decide(0.30, 0.125) is True
    assert decide(0.0, 0.01) is False
    assert decide(0.125, 0.125) is False
    assert decide(None, 0.125) is None


def test_confusion_counts():
    ok = [rec(0, 0.3, True), rec(1, 0.0, False)]
    assert confusion_counts(ok) == Confusion(1, 0, 1, 0)
    assert confusion_counts([rec(0, 0.05, True)]).fn == 1
    assert confusion_counts([rec(0, None, True)]) == Confusion(0, 0, 0, 0)
    assert confusion_counts([rec(0, 0.2, False)]).fp == 1


def test_roc_endpoints_and_monotonicity():
    records = [rec(i, q, a) for i, (q, a) in enumerate([(0.0, False), (0.05, False), (0.2, True),
                                                         (0.1, True), (0.3, True), (0.15, False)])]
    curve = roc_points(records, [-0.01, 0.0, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5])
    assert (curve.points[0].fpr, curve.points[0].tpr) == (1.0, 1.0)
    assert (curve.points[-1].fpr, curve.points[-1].tpr) == (0.0, 0.0)
    fprs = [p.fpr for p in curve.points]
    tprs = [p.tpr for p in curve.points]
    assert fprs == sorted(fprs, reverse=True) and tprs == sorted(tprs, reverse=True)
    default = roc_points(records)
    assert (default.points[0].fpr, default.points[0].tpr) == (1.0, 1.0)
    assert (default.points[-1].fpr, default.points[-1].tpr) == (0.0, 0.0)


def test_roc_undefined_rates_are_null():
    curve = roc_points([rec(0, 0.1, True), rec(1, 0.3, True)], [0.0, 0.2])
    assert all(p.fpr is None for p in curve.points)
    assert curve.auc() is None
    with pytest.raises(ValueError):
        roc_points([rec(0, 0.1, True)], [0.2, 0.1])


def test_auc_perfect_and_random():
    perfect = [rec(0, 0.0, False), rec(1, 0.3, True)]
    assert roc_points(perfect).auc() == 1.0
    tied = [rec(0, 0.1, False), rec(1, 0.1, True)]
    assert roc_points(tied).auc() == 0.5


def test_tpr_high_for_noisy_attack():
    cfg = SimConfig(photons=1000, iterations=200, eve=True, epsilon=1.0, p_depol=0.2,
                    random_attacks=True, seed=8)
    records, _ = run(cfg)
    curve = roc_points([r.decision() for r in records], [0.125])
    assert curve.points[0].tpr >= 0.99


def test_false_positives_grow_with_noise():
    fprs = []
    for p in (0.0, 0.1, 0.2):
        cfg = SimConfig(photons=10_000, iterations=1000, eve=True, epsilon=1.0, p_depol=p,
                        random_attacks=True, seed=17)
        records, _ = run(cfg)
        c = confusion_counts(r.decision() for r in records)
        fprs.append(c.fp / (c.fp + c.tn))
    assert fprs == sorted(fprs)
    assert fprs[0] == 0.0 and fprs[-1] > 0.5
