"""Single-process execution of runs and parameter sweeps."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence

from . import core, physics
from . import randomness as rnd
from .config import ConfigError, SimConfig
from .detection import AttackSchedule, build_attack_schedule, decide, roc_points
from .reporting import (IterationRecord, RunSummary, summarize, write_iterations_csv,
                        write_roc_csv, write_schedule_csv, write_summary_csv, write_sweep_csv)

log = logging.getLogger(__name__)

SWEEP_AXES = ("p_depol", "epsilon", "photons", "sharing_rate")


def attack_schedule(cfg: SimConfig) -> AttackSchedule:
    """Ground truth of which iterations Eve attacks."""
    if not cfg.eve:
        return AttackSchedule.none(cfg.iterations)
    if not cfg.random_attacks:
        return AttackSchedule.every(cfg.iterations)
    rng = rnd.generator(cfg.seed, "attack-schedule")
    return build_attack_schedule(cfg.iterations, cfg.attack_rate, rng)


def acquire(cfg: SimConfig, streams: rnd.StreamFactory, i: int) -> Optional[physics.AcquisitionResult]:
    if not cfg.physics_enabled:
        return None
    return physics.simulate_acquisition(
        cfg.photons, cfg.source_params(), cfg.link_params(), cfg.detector_params(),
        streams.get(rnd.DETECTION, i), method=cfg.acquisition_method, max_pulses=cfg.max_pulses)


def make_record(i: int, attacked: bool, sifted_len: int, shared_len: int,
                qber_est: Optional[float], qber_remaining: Optional[float],
                acq: Optional[physics.AcquisitionResult], threshold: float) -> IterationRecord:
    rate = physics.sifted_rate_from_iteration(sifted_len, acq) if acq else None
    return IterationRecord(
        iteration=i,
        attacked=attacked,
        decided_attacked=decide(qber_est, threshold),
        sifted_len=sifted_len,
        shared_len=shared_len,
        qber_est=qber_est,
        qber_remaining=qber_remaining,
        t_source_s=acq.t_source_s if acq else None,
        t_dead_s=acq.t_dead_s if acq else None,
        t_quantum_s=acq.t_quantum_s if acq else None,
        sifted_rate_bps=rate,
    )


def run_iteration(cfg: SimConfig, i: int, streams: rnd.StreamFactory, attacked: bool) -> IterationRecord:
    """One key distribution.  Each consumer label is drawn from exactly once."""
    n = cfg.photons
    data = streams.get(rnd.ALICE_DATA, i).next_bits(n)
    a_bases = streams.get(rnd.ALICE_BASES, i).next_bits(n)
    photons = core.prepare(data, a_bases)
    if attacked:
        photons = core.eve_intercept(photons, cfg.epsilon,
                                     streams.get(rnd.EVE_BASES, i), streams.get(rnd.EVE_COINS, i))
    photons = core.depolarize(photons, cfg.p_depol, streams.get(rnd.DEPOLARIZATION, i))

    b_bases = streams.get(rnd.BOB_BASES, i).next_bits(n)
    b_data = core.measure(photons, b_bases, streams.get(rnd.MEASUREMENT, i))

    sifted = core.sift(a_bases, b_bases, data, b_data)
    qber_est = qber_rem = None
    shared_len = 0
    if len(sifted):
        subset_rng = streams.get(rnd.SHARING, i) if cfg.shared_selection == "random" else None
        est = core.share_and_estimate(sifted, cfg.sharing_rate, subset_rng)
        qber_est, shared_len = est.qber_est, est.shared_count
        if cfg.research and len(est.usable_alice):
            qber_rem = core.remaining_key_qber(est)

    acq = acquire(cfg, streams, i)
    return make_record(i, attacked, len(sifted), shared_len, qber_est, qber_rem, acq, cfg.threshold)


def run(cfg: SimConfig, out_dir=None) -> tuple[list[IterationRecord], RunSummary]:
    cfg.validate()
    streams = cfg.streams()
    schedule = attack_schedule(cfg)
    records = [run_iteration(cfg, i, streams, schedule.is_attacked(i)) for i in range(cfg.iterations)]
    summary = summarize(records, cfg)
    if out_dir is not None:
        write_run_outputs(out_dir, cfg, records, summary, schedule)
    return records, summary


def write_run_outputs(out_dir, cfg: SimConfig, records, summary: RunSummary,
                      schedule: AttackSchedule) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(cfg.to_text(), encoding="utf-8")
    write_iterations_csv(records, out / "iterations.csv")
    write_summary_csv(summary, out / "summary.csv")
    write_schedule_csv(schedule, out / "schedule.csv")
    if cfg.eve and cfg.random_attacks:
        write_roc_csv(roc_points([r.decision() for r in records]), out / "roc.csv")
    return out


def sweep_seed(master_seed: int, index: int) -> int:
    return int(rnd.generator(master_seed, "sweep-point", index).integers(0, 2**63))


def sweep(base: SimConfig, axis: str, values: Sequence, out_dir=None) -> list[tuple]:
    """Run once per axis value; returns (value, RunSummary) pairs."""
    if axis not in SWEEP_AXES:
        raise ConfigError([f"axis: must be one of {', '.join(SWEEP_AXES)} (got {axis!r})"])
    if not values:
        raise ConfigError(["values: sweep needs at least one value"])
    configs = []
    problems = []
    for idx, value in enumerate(values):
        value = int(value) if axis == "photons" else float(value)
        cfg = base.replace(**{axis: value, "seed": sweep_seed(base.seed, idx)})
        problems.extend(f"values[{idx}]: {p}" for p in cfg.problems())
        configs.append((value, cfg))
    if problems:
        raise ConfigError(problems)
    results = []
    for idx, (value, cfg) in enumerate(configs):
        log.info("sweep %s=%s (%d/%d)", axis, value, idx + 1, len(configs))
        point_dir = None if out_dir is None else Path(out_dir) / f"{axis}_{idx:03d}"
        _, summary = run(cfg, point_dir)
        results.append((value, summary))
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "config.resolved").write_text(base.to_text(), encoding="utf-8")
        write_sweep_csv(axis, results, Path(out_dir) / "sweep.csv")
    return results
