"""Experiment orchestration: configs, replica fan-out, aggregation.

A config names a spec, a mode, and replica/horizon counts.  Replicas are
independent annealed draws: replica r gets its own environment seed and
its own walk/branching stream, both derived from the master seed, so a
report is reproducible bit-for-bit regardless of scheduling.  Rows are
sorted by replica before writing; CSV output contains no wall-clock data.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats as sp_stats

from .branching import (
    DEFAULT_CAP,
    coupled_environment_seed,
    coupled_run,
    run_backward_process,
    run_emigration_process,
    run_growth_collapse,
)
from .classify import INDETERMINATE, NEGATIVE, POSITIVE, Verdict, ZERO, classify_speed
from .environment import Environment, EnvironmentSpec, make_spec
from .errors import CookieWalkError, MalformedConfig
from .moments import MomentReport, moment_report
from .rng import KeyedStream
from .walk import (
    Censored,
    DEFAULT_SAFETY_MARGIN,
    gap_identity_residual,
    hitting_time,
    left_speed_reciprocal,
    run_walk,
)

MODES = (
    "walk",
    "regeneration",
    "branching-Z",
    "branching-W",
    "coupled-ZW",
    "x-tilde",
    "hitting",
    "left-speed",
)

_ENV_TAG = 0x65
_RUN_TAG = 0x72

PARALLELISM_ENV_VAR = "COOKIEWALK_PARALLELISM"


def default_parallelism() -> int:
    try:
        return max(int(os.environ.get(PARALLELISM_ENV_VAR, "1")), 1)
    except ValueError:
        return 1


@dataclass
class ExperimentConfig:
    spec: EnvironmentSpec
    mode: str
    replicas: int
    horizon: int  # steps for walk modes, generations for branching modes
    master_seed: int = 0
    out_dir: Optional[str] = None
    parallelism: int = 0  # 0 = use env var / serial
    record_path: bool = False
    safety_margin: int = DEFAULT_SAFETY_MARGIN
    cap: int = DEFAULT_CAP
    growth_factor: float = 2.0  # x-tilde only
    target: int = -1  # hitting only

    def __post_init__(self):
        if self.mode not in MODES:
            raise MalformedConfig(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.replicas < 1 or self.horizon < 1:
            raise MalformedConfig("replicas and horizon must be >= 1")

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "mode": self.mode,
            "replicas": self.replicas,
            "horizon": self.horizon,
            "master_seed": self.master_seed,
            "out_dir": self.out_dir,
            "parallelism": self.parallelism,
            "record_path": self.record_path,
            "safety_margin": self.safety_margin,
            "cap": self.cap,
            "growth_factor": self.growth_factor,
            "target": self.target,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise MalformedConfig("experiment config must be a mapping")
        known = {
            "spec",
            "mode",
            "replicas",
            "horizon",
            "master_seed",
            "out_dir",
            "parallelism",
            "record_path",
            "safety_margin",
            "cap",
            "growth_factor",
            "target",
        }
        extra = set(doc) - known
        if extra:
            raise MalformedConfig(f"unknown config keys {sorted(extra)}")
        for required in ("spec", "mode", "replicas", "horizon"):
            if required not in doc:
                raise MalformedConfig(f"config key {required!r} is required")
        spec = make_spec(doc["spec"])
        kwargs = {k: v for k, v in doc.items() if k != "spec"}
        return cls(spec=spec, **kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list
    fieldnames: list
    aggregates: dict
    moment: MomentReport
    verdict: Verdict
    agreement: str
    wall_seconds: float
    replicas_per_second: float

    def to_json_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "aggregates": self.aggregates,
            "moment_report": self.moment.to_json_dict(),
            "verdict": self.verdict.to_json_dict(),
            "agreement": self.agreement,
            "wall_seconds": self.wall_seconds,
            "replicas_per_second": self.replicas_per_second,
        }


# ---------------------------------------------------------------------------
# Per-replica work
# ---------------------------------------------------------------------------


def _replica_env(config: ExperimentConfig, replica: int) -> Environment:
    seed = KeyedStream(config.master_seed).child(_ENV_TAG, replica).key
    return Environment(config.spec, seed)


def _replica_stream(config: ExperimentConfig, replica: int) -> KeyedStream:
    return KeyedStream(config.master_seed).child(_RUN_TAG, replica)


def _walk_row(config: ExperimentConfig, replica: int) -> dict:
    env = _replica_env(config, replica)
    stream = _replica_stream(config, replica)
    record = run_walk(
        env,
        stream,
        config.horizon,
        record_path=config.record_path or config.mode == "regeneration",
        safety_margin=config.safety_margin,
    )
    row = {
        "replica": replica,
        "seed": env.master_seed,
        "n_steps": record.n_steps,
        "final_position": record.final_position,
        "speed": record.speed,
        "n_regenerations": len(record.regenerations),
        "mean_tau_gap": "",
        "mean_s_gap": "",
        "ratio_speed": "",
        "censored_candidates": record.censoring.discarded_unconfirmed,
        "gaps_checked": "",
        "identity_violations": "",
    }
    tau_gaps, s_gaps = record.gap_stats()
    if len(tau_gaps) > 0:
        row["mean_tau_gap"] = float(np.mean(tau_gaps))
        row["mean_s_gap"] = float(np.mean(s_gaps))
        row["ratio_speed"] = float(np.mean(s_gaps) / np.mean(tau_gaps))
    if config.mode == "regeneration":
        violations = 0
        regens = record.regenerations
        for a, b in zip(regens[:-1], regens[1:]):
            if gap_identity_residual(record, a.tau, b.tau) != 0:
                violations += 1
        row["identity_violations"] = violations
        row["gaps_checked"] = max(len(regens) - 1, 0)
    return row


_WALK_FIELDS = [
    "replica",
    "seed",
    "n_steps",
    "final_position",
    "speed",
    "n_regenerations",
    "mean_tau_gap",
    "mean_s_gap",
    "ratio_speed",
    "censored_candidates",
    "gaps_checked",
    "identity_violations",
]


def _branching_row(config: ExperimentConfig, replica: int) -> dict:
    env = _replica_env(config, replica)
    stream = _replica_stream(config, replica)
    runner = run_emigration_process if config.mode == "branching-Z" else run_backward_process
    traj = runner(env, stream, config.horizon, cap=config.cap)
    return {
        "replica": replica,
        "seed": env.master_seed,
        "kind": traj.kind,
        "t0": -1 if traj.extinction_time is None else traj.extinction_time,
        "total_progeny": traj.total_progeny,
        "saturated": int(traj.saturated),
        "horizon": traj.horizon,
    }


_BRANCHING_FIELDS = ["replica", "seed", "kind", "t0", "total_progeny", "saturated", "horizon"]


def _coupled_row(config: ExperimentConfig, replica: int) -> dict:
    seed = coupled_environment_seed(config.spec, config.master_seed, replica)
    env = Environment(config.spec, seed)
    stream = _replica_stream(config, replica)
    result = coupled_run(env, stream, config.horizon)
    return {
        "replica": replica,
        "seed": seed,
        "t0_z": -1 if result.z.extinction_time is None else result.z.extinction_time,
        "t0_w": -1 if result.w.extinction_time is None else result.w.extinction_time,
        "violations": len(result.violations),
        "checked_generations": result.checked_generations,
        "saturated": int(result.z.saturated),
    }


_COUPLED_FIELDS = [
    "replica",
    "seed",
    "t0_z",
    "t0_w",
    "violations",
    "checked_generations",
    "saturated",
]


def _x_tilde_row(config: ExperimentConfig, replica: int) -> dict:
    stream = _replica_stream(config, replica)
    traj = run_growth_collapse(
        config.growth_factor, config.spec.m_law, stream, config.horizon
    )
    return {
        "replica": replica,
        "seed": stream.key,
        "t0": -1 if traj.extinction_time is None else traj.extinction_time,
        "final_size": float(traj.sizes[-1]),
        "total": traj.total_progeny,
        "horizon": traj.horizon,
    }


_X_TILDE_FIELDS = ["replica", "seed", "t0", "final_size", "total", "horizon"]


def _hitting_row(config: ExperimentConfig, replica: int) -> dict:
    env = _replica_env(config, replica)
    stream = _replica_stream(config, replica)
    res = hitting_time(env, stream, config.target, config.horizon)
    censored = isinstance(res, Censored)
    return {
        "replica": replica,
        "seed": env.master_seed,
        "target": config.target,
        "time": config.horizon if censored else res,
        "censored": int(censored),
    }


_HITTING_FIELDS = ["replica", "seed", "target", "time", "censored"]

_ROW_RUNNERS = {
    "walk": (_walk_row, _WALK_FIELDS),
    "regeneration": (_walk_row, _WALK_FIELDS),
    "branching-Z": (_branching_row, _BRANCHING_FIELDS),
    "branching-W": (_branching_row, _BRANCHING_FIELDS),
    "coupled-ZW": (_coupled_row, _COUPLED_FIELDS),
    "x-tilde": (_x_tilde_row, _X_TILDE_FIELDS),
    "hitting": (_hitting_row, _HITTING_FIELDS),
}


def _run_one(args) -> dict:
    config, replica = args
    runner, _ = _ROW_RUNNERS[config.mode]
    try:
        return runner(config, replica)
    except CookieWalkError as exc:
        # per-replica failures are surfaced, not fatal for the batch
        return {"replica": replica, "error": f"{type(exc).__name__}: {exc}"}


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def t_interval(values: np.ndarray, confidence: float = 0.95):
    """(mean, halfwidth) of the replica-level t interval."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    mean = float(np.mean(values))
    if n < 2:
        return mean, math.inf
    se = float(np.std(values, ddof=1) / math.sqrt(n))
    tq = float(sp_stats.t.ppf(0.5 + confidence / 2.0, n - 1))
    return mean, tq * se


def _aggregate(config: ExperimentConfig, rows: list, verdict: Verdict) -> tuple:
    ok_rows = [r for r in rows if "error" not in r]
    agg: dict = {"replicas": len(rows), "failed_replicas": len(rows) - len(ok_rows)}
    agreement = INDETERMINATE
    if not ok_rows:
        return agg, agreement
    if config.mode in ("walk", "regeneration"):
        speeds = np.array([r["speed"] for r in ok_rows])
        mean, hw95 = t_interval(speeds, 0.95)
        _, hw99 = t_interval(speeds, 0.99)
        agg["speed"] = {"mean": mean, "ci95_halfwidth": hw95, "ci99_halfwidth": hw99}
        ratios = np.array([r["ratio_speed"] for r in ok_rows if r["ratio_speed"] != ""])
        if ratios.size >= 2:
            rmean, rhw = t_interval(ratios, 0.95)
            agg["ratio_speed"] = {"mean": rmean, "ci95_halfwidth": rhw}
        if config.mode == "regeneration":
            agg["identity_violations"] = int(
                sum(r["identity_violations"] or 0 for r in ok_rows)
            )
        agreement = _speed_agreement(verdict, mean, hw99)
    elif config.mode in ("branching-Z", "branching-W"):
        totals = np.array([r["total_progeny"] for r in ok_rows])
        sat = np.array([r["saturated"] for r in ok_rows], dtype=bool)
        extinct = np.array([r["t0"] != -1 for r in ok_rows])
        live = totals[~sat]
        agg["total_progeny_mean"] = float(np.mean(live)) if live.size else None
        agg["extinct_fraction"] = float(np.mean(extinct))
        agg["saturated_fraction"] = float(np.mean(sat))
    elif config.mode == "coupled-ZW":
        agg["violations"] = int(sum(r["violations"] for r in ok_rows))
        agg["order_violations"] = int(
            sum(
                1
                for r in ok_rows
                if r["t0_z"] != -1 and r["t0_w"] != -1 and r["t0_z"] > r["t0_w"]
            )
        )
        agreement = "consistent" if agg["violations"] == 0 else "inconsistent"
    elif config.mode == "x-tilde":
        horizon = config.horizon
        curve = {}
        t0s = np.array([r["t0"] for r in ok_rows])
        for m in range(1, min(horizon, 32) + 1):
            curve[m] = float(np.mean((t0s == -1) | (t0s > m)))
        agg["survival_curve"] = curve
        agreement = _x_tilde_agreement(config, curve, len(ok_rows))
    elif config.mode == "hitting":
        times = np.array([r["time"] for r in ok_rows], dtype=np.float64)
        cens = np.array([r["censored"] for r in ok_rows], dtype=bool)
        mean, hw = t_interval(times, 0.95)
        agg["time"] = {"mean": mean, "ci95_halfwidth": hw}
        agg["censored_fraction"] = float(np.mean(cens))
    return agg, agreement


def _speed_agreement(verdict: Verdict, mean: float, hw99: float) -> str:
    if verdict.speed_sign == INDETERMINATE:
        return INDETERMINATE
    if verdict.speed_sign == POSITIVE:
        return "consistent" if mean - hw99 > 0 else "inconsistent"
    if verdict.speed_sign == NEGATIVE:
        return "consistent" if mean + hw99 < 0 else "inconsistent"
    if verdict.speed_sign == ZERO:
        # a zero-speed walk at finite n drifts sublinearly; accept either a
        # CI that covers 0 or a small pooled magnitude
        covered = (mean - hw99) <= 0.0 <= (mean + hw99)
        return "consistent" if covered or abs(mean) < 0.01 else "inconsistent"
    return INDETERMINATE


def _x_tilde_agreement(config: ExperimentConfig, curve: dict, n: int) -> str:
    a = config.growth_factor
    product = 1.0
    for m in sorted(curve):
        product *= config.spec.m_law.cdf_strict(a**m)
        se = math.sqrt(max(product * (1.0 - product), 1e-12) / max(n, 1))
        if abs(curve[m] - product) > 4.0 * se + 1e-9:
            return "inconsistent"
    return "consistent"


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Run all replicas of one experiment and aggregate.

    Left-speed mode is replica-parallel internally and returns one row per
    sum term instead of per replica.
    """
    start = time.perf_counter()
    moment = moment_report(config.spec)
    verdict = classify_speed(moment)

    if config.mode == "left-speed":
        report = left_speed_reciprocal(
            config.spec, config.replicas, config.horizon, config.master_seed
        )
        rows = [
            {
                "j": int(j),
                "term": float(t),
                "term_se": float(se),
                "partial_sum": float(ps),
            }
            for j, t, se, ps in zip(
                report.j_values, report.terms, report.term_ses, report.partial_sums
            )
        ]
        fieldnames = ["j", "term", "term_se", "partial_sum"]
        agg = {
            "partial_sum": report.partial_sum,
            "censored_fraction": report.censored_fraction,
            "tail_increment_ratio": report.tail_increment_ratio,
        }
        plateaued = report.tail_increment_ratio < 0.05
        if verdict.speed_sign == NEGATIVE:
            agreement = "consistent" if plateaued else "inconsistent"
        elif verdict.speed_sign == ZERO:
            agreement = "consistent" if not plateaued else "inconsistent"
        else:
            agreement = INDETERMINATE
    else:
        runner_args = [(config, r) for r in range(config.replicas)]
        parallelism = config.parallelism or default_parallelism()
        if parallelism > 1:
            with ProcessPoolExecutor(max_workers=parallelism) as pool:
                rows = list(pool.map(_run_one, runner_args, chunksize=8))
        else:
            rows = [_run_one(a) for a in runner_args]
        rows.sort(key=lambda r: r["replica"])
        _, fieldnames = _ROW_RUNNERS[config.mode]
        agg, agreement = _aggregate(config, rows, verdict)

    wall = time.perf_counter() - start
    report = ExperimentReport(
        config=config,
        rows=rows,
        fieldnames=fieldnames,
        aggregates=agg,
        moment=moment,
        verdict=verdict,
        agreement=agreement,
        wall_seconds=wall,
        replicas_per_second=config.replicas / wall if wall > 0 else math.inf,
    )
    if config.out_dir:
        write_outputs(report, config.out_dir)
    return report


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------


def rows_to_csv_text(rows: list, fieldnames: list) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(
        buf, fieldnames=fieldnames, lineterminator="\n", extrasaction="ignore"
    )
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _csv_cell(row.get(k, "")) for k in fieldnames})
    return buf.getvalue()


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_outputs(report: ExperimentReport, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    stem = report.config.mode
    with open(os.path.join(out_dir, f"{stem}_rows.csv"), "w") as fh:
        fh.write(rows_to_csv_text(report.rows, report.fieldnames))
    with open(os.path.join(out_dir, f"{stem}_report.json"), "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if v == math.inf:
        return "inf"
    raise TypeError(f"not JSON serializable: {type(v)}")
