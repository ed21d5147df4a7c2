"""Acceptance battery: exact identities, desk-scale targets, sign tests.

Thirteen criteria cover the Solomon speed formulas, the regeneration
identity and estimator agreement, the backward-process/downcrossing
distributional match, the exact Z/W coupling, the sign and value
predictions in every classified regime, the beta root, critical
extinction, growth-collapse survival, and bit-level determinism.

Every criterion runs at its stated tolerance; ``scale`` shrinks replica
and step counts for smoke runs (tolerances never change).  Criterion
outputs are plain CSV rows so two runs with one seed are byte-identical.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import stats as sp_stats

from .branching import (
    progeny_tail_diagnostic,
    run_backward_process,
    run_emigration_process,
    run_growth_collapse,
)
from .environment import (
    ConstantM,
    ConstantP,
    Environment,
    EnvironmentSpec,
    GeometricM,
    TwoPointP,
    TwoPointWithInfinityM,
)
from .harness import ExperimentConfig, run_experiment, rows_to_csv_text, t_interval
from .moments import _mgf_slope, solve_beta
from .rng import KeyedStream
from .walk import downcrossings, run_walk

SUITE_SEED_DEFAULT = 42


@dataclass
class CriterionResult:
    number: int
    slug: str
    passed: bool
    detail: str
    rows: Optional[list] = None
    fieldnames: Optional[list] = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{self.number:2d}] {status}  {self.slug}: {self.detail}"


def _scaled(n: int, scale: float, floor: int) -> int:
    return max(floor, int(round(n * scale)))


def _crit_seed(master_seed: int, k: int) -> int:
    return KeyedStream(master_seed).child(0x5C, k).key


# Specs used by the battery ------------------------------------------------

def spec_solomon_fast() -> EnvironmentSpec:
    return EnvironmentSpec(ConstantP(0.8), ConstantM(0))


def spec_solomon_re() -> EnvironmentSpec:
    return EnvironmentSpec(TwoPointP(0.7, 0.9, 0.5), ConstantM(0))


def spec_left_geometric() -> EnvironmentSpec:
    return EnvironmentSpec(ConstantP(0.3), GeometricM(0.5))


def spec_infinite_stacks() -> EnvironmentSpec:
    return EnvironmentSpec(ConstantP(0.3), TwoPointWithInfinityM(0.1, 0.9))


def spec_zero_speed() -> EnvironmentSpec:
    return EnvironmentSpec(TwoPointP(0.25, 0.8, 0.5), GeometricM(0.5))


def spec_downcrossing_match() -> EnvironmentSpec:
    return EnvironmentSpec(TwoPointP(0.7, 0.9, 0.5), GeometricM(0.5))


def spec_critical_gw() -> EnvironmentSpec:
    # deliberately degenerate (rho = 1): diagnostic-only, bypasses make_spec
    return EnvironmentSpec(ConstantP(0.5), ConstantM(0))


SOLOMON_RE_SPEED = (1.0 - 17.0 / 63.0) / (1.0 + 17.0 / 63.0)  # 46/80
TILDE_SPEED = 23.0 / 37.0
BETA_CLOSED_FORM = math.log(math.log(4.0) / math.log(3.0)) / math.log(12.0)


def warmup() -> None:
    """Compile the walk kernels outside any timed window."""
    env = Environment(spec_solomon_fast(), 1)
    run_walk(env, KeyedStream(1), 64, record_path=True)
    run_walk(env, KeyedStream(2), 64, record_path=False)
    from .walk import hitting_time

    hitting_time(env, KeyedStream(3), -1, 64)


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------


def criterion_01_solomon_constant(seed: int, scale: float) -> CriterionResult:
    config = ExperimentConfig(
        spec=spec_solomon_fast(),
        mode="walk",
        replicas=_scaled(32, scale, 4),
        horizon=_scaled(1_000_000, scale, 20_000),
        master_seed=seed,
    )
    start = time.perf_counter()
    report = run_experiment(config)
    wall = time.perf_counter() - start
    pooled = report.aggregates["speed"]["mean"]
    passed = abs(pooled - 0.6) <= 0.005 and wall <= 30.0
    detail = (
        f"pooled speed {pooled:.5f} vs 0.6 +-0.005, "
        f"{config.replicas}x{config.horizon} steps in {wall:.1f}s (target <=30s)"
    )
    return CriterionResult(1, "solomon-constant-speed", passed, detail, report.rows, report.fieldnames)


def criterion_02_solomon_random(seed: int, scale: float, shared: dict) -> CriterionResult:
    config = ExperimentConfig(
        spec=spec_solomon_re(),
        mode="regeneration",
        replicas=_scaled(32, scale, 4),
        horizon=_scaled(1_000_000, scale, 20_000),
        master_seed=seed,
    )
    report = run_experiment(config)
    shared["solomon_re_report"] = report
    pooled = report.aggregates["speed"]["mean"]
    passed = abs(pooled - SOLOMON_RE_SPEED) <= 0.01
    detail = f"pooled speed {pooled:.5f} vs exact {SOLOMON_RE_SPEED:.5f} +-0.01"
    return CriterionResult(2, "solomon-random-env-speed", passed, detail, report.rows, report.fieldnames)


def criterion_03_regeneration_identity(seed: int, scale: float, shared: dict) -> CriterionResult:
    total_gaps = 0
    total_violations = 0
    rows = []
    report = shared["solomon_re_report"]
    for r in report.rows:
        total_gaps += r.get("gaps_checked") or 0
        total_violations += r.get("identity_violations") or 0
    rows.extend(report.rows)
    for k, spec in enumerate((spec_downcrossing_match(), spec_infinite_stacks())):
        config = ExperimentConfig(
            spec=spec,
            mode="regeneration",
            replicas=_scaled(8, scale, 2),
            horizon=_scaled(200_000, scale, 20_000),
            master_seed=_crit_seed(seed, 300 + k),
        )
        extra = run_experiment(config)
        for r in extra.rows:
            total_gaps += r.get("gaps_checked") or 0
            total_violations += r.get("identity_violations") or 0
        rows.extend(extra.rows)
    passed = total_violations == 0 and total_gaps > 0
    detail = f"{total_violations} violations over {total_gaps} confirmed gaps (exact integer identity)"
    return CriterionResult(3, "regeneration-gap-identity", passed, detail, rows, report.fieldnames)


def criterion_04_estimator_agreement(shared: dict) -> CriterionResult:
    report = shared["solomon_re_report"]
    speeds = np.array([r["speed"] for r in report.rows])
    ratios = np.array([r["ratio_speed"] for r in report.rows if r["ratio_speed"] != ""])
    m1, h1 = t_interval(speeds, 0.95)
    m2, h2 = t_interval(ratios, 0.95)
    passed = abs(m1 - m2) <= h1 + h2
    detail = (
        f"direct {m1:.5f}+-{h1:.5f} vs regeneration ratio {m2:.5f}+-{h2:.5f} (95% CIs overlap)"
    )
    return CriterionResult(4, "speed-estimator-agreement", passed, detail)


def criterion_05_backward_downcrossing_match(seed: int, scale: float) -> CriterionResult:
    spec = spec_downcrossing_match()
    n_samples = _scaled(10_000, scale, 500)
    base = KeyedStream(_crit_seed(seed, 5))
    d1: list = []
    attempts = 0
    while len(d1) < n_samples and attempts < 1000:
        env = Environment(spec, base.child(0x65, attempts).key)
        record = run_walk(
            env, base.child(0x77, attempts), 100_000, record_path=True
        )
        regens = record.regenerations
        pairs = list(zip(regens[:-1], regens[1:]))[1:]  # first gap has its own law
        for a, b in pairs:
            d = downcrossings(record, a.tau, b.tau)
            d1.append(int(d[1]) if d.size > 1 else 0)
            if len(d1) >= n_samples:
                break
        attempts += 1
    w1 = np.empty(n_samples, dtype=np.int64)
    for i in range(n_samples):
        env = Environment(spec, base.child(0x66, i).key)
        traj = run_backward_process(env, base.child(0x78, i), horizon=1)
        w1[i] = traj.sizes[-1]
    stat = sp_stats.ks_2samp(np.array(d1), w1)
    passed = stat.pvalue >= 0.01
    detail = (
        f"KS two-sample on D_1 vs W_1 ({n_samples} each): D={stat.statistic:.4f}, "
        f"p={stat.pvalue:.4f} (needs p >= 0.01)"
    )
    rows = [{"index": i, "d1": d1[i], "w1": int(w1[i])} for i in range(n_samples)]
    return CriterionResult(5, "backward-process-matches-downcrossings", passed, detail, rows, ["index", "d1", "w1"])


def criterion_06_coupling(seed: int, scale: float) -> CriterionResult:
    config = ExperimentConfig(
        spec=spec_zero_speed(),
        mode="coupled-ZW",
        replicas=_scaled(10_000, scale, 500),
        horizon=400,
        master_seed=_crit_seed(seed, 6),
    )
    report = run_experiment(config)
    violations = report.aggregates["violations"]
    order = report.aggregates["order_violations"]
    passed = violations == 0 and order == 0
    detail = (
        f"{violations} slack/containment violations, {order} extinction-order violations "
        f"over {config.replicas} coupled runs (exact integer inequalities)"
    )
    return CriterionResult(6, "emigration-backward-coupling", passed, detail, report.rows, report.fieldnames)


def criterion_07_negative_speed(seed: int, scale: float) -> CriterionResult:
    config = ExperimentConfig(
        spec=spec_left_geometric(),
        mode="walk",
        replicas=_scaled(32, scale, 4),
        horizon=_scaled(300_000, scale, 20_000),
        master_seed=_crit_seed(seed, 7),
    )
    report = run_experiment(config)
    mean = report.aggregates["speed"]["mean"]
    hw99 = report.aggregates["speed"]["ci99_halfwidth"]
    negative = mean + hw99 < 0.0
    slower = mean - hw99 > -0.4
    passed = negative and slower
    detail = (
        f"pooled speed {mean:.5f} +-{hw99:.5f} (99%): negative={negative}, "
        f"|speed|<0.4={slower} (cookies slow the cookie-free -0.4)"
    )
    return CriterionResult(7, "slowdown-with-negative-speed", passed, detail, report.rows, report.fieldnames)


def criterion_08_tilde_formula(seed: int, scale: float) -> CriterionResult:
    config = ExperimentConfig(
        spec=spec_infinite_stacks(),
        mode="walk",
        replicas=_scaled(16, scale, 4),
        horizon=_scaled(1_000_000, scale, 20_000),
        master_seed=_crit_seed(seed, 8),
    )
    report = run_experiment(config)
    pooled = report.aggregates["speed"]["mean"]
    passed = abs(pooled - TILDE_SPEED) <= 0.01
    detail = f"pooled speed {pooled:.5f} vs one-way-door reduction 23/37={TILDE_SPEED:.5f} +-0.01"
    return CriterionResult(8, "infinite-stack-speed-formula", passed, detail, report.rows, report.fieldnames)


def criterion_09_zero_speed(seed: int, scale: float) -> CriterionResult:
    config = ExperimentConfig(
        spec=spec_zero_speed(),
        mode="walk",
        replicas=_scaled(8, scale, 4),
        horizon=_scaled(10_000_000, scale, 100_000),
        master_seed=_crit_seed(seed, 9),
    )
    report = run_experiment(config)
    pooled = report.aggregates["speed"]["mean"]
    speed_ok = abs(pooled) <= 0.01
    diag = progeny_tail_diagnostic(
        spec_zero_speed(),
        replicas=_scaled(3000, scale, 400),
        horizon=2000,
        master_seed=_crit_seed(seed, 90),
        kind="W",
    )
    passed = speed_ok and diag.infinite_mean_consistent
    alpha = "None" if diag.hill_alpha is None else f"{diag.hill_alpha:.3f}"
    detail = (
        f"pooled |speed| {abs(pooled):.5f} <= 0.01 at n={config.horizon}; "
        f"W progeny flagged infinite-mean-consistent={diag.infinite_mean_consistent} "
        f"(hill alpha {alpha}, max share {diag.max_share:.2f}, saturated {diag.saturated_fraction:.3f})"
    )
    return CriterionResult(9, "zero-speed-regime", passed, detail, report.rows, report.fieldnames)


def criterion_10_beta_solver() -> CriterionResult:
    spec = spec_zero_speed()
    beta, gamma = solve_beta(spec, tol=1e-10)
    beta2, gamma2 = solve_beta(spec, tol=5e-11)
    residual = abs(_mgf_slope(spec, beta))
    stable = abs(beta - beta2) <= 1e-8 and abs(gamma - gamma2) <= 1e-8
    gamma_closed = 0.5 * (3.0**BETA_CLOSED_FORM + 0.25**BETA_CLOSED_FORM)
    close = abs(beta - BETA_CLOSED_FORM) <= 1e-9 and abs(gamma - gamma_closed) <= 1e-9
    passed = residual <= 1e-10 and stable and close
    detail = (
        f"beta={beta:.6f} gamma={gamma:.6f}, |E[rho^b log rho]|={residual:.2e} <= 1e-10, "
        f"stable under tol halving, matches closed form {BETA_CLOSED_FORM:.6f}"
    )
    return CriterionResult(10, "beta-root-solver", passed, detail)


def criterion_11_critical_extinction(seed: int, scale: float) -> CriterionResult:
    spec = spec_critical_gw()
    n = _scaled(10_000, scale, 2000)
    base = KeyedStream(_crit_seed(seed, 11))
    t0 = np.empty(n, dtype=np.int64)
    for i in range(n):
        env = Environment(spec, base.child(0x65, i).key)
        traj = run_emigration_process(env, base.child(0x74, i), horizon=50)
        t0[i] = -1 if traj.extinction_time is None else traj.extinction_time
    checks = []
    passed = True
    for gen in (10, 50):
        q = gen / (gen + 1.0)
        phat = float(np.mean((t0 != -1) & (t0 <= gen)))
        se = math.sqrt(q * (1.0 - q) / n)
        ok = abs(phat - q) <= 3.0 * se
        passed = passed and ok
        checks.append(f"gen {gen}: {phat:.4f} vs {q:.4f} +-{3*se:.4f}")
    detail = "extinction by " + "; ".join(checks)
    rows = [{"replica": i, "t0": int(t0[i])} for i in range(n)]
    return CriterionResult(11, "critical-extinction-curve", passed, detail, rows, ["replica", "t0"])


def criterion_12_growth_collapse_survival(seed: int, scale: float) -> CriterionResult:
    m_law = TwoPointWithInfinityM(0.9, 0.1)
    a = 2.0
    n = _scaled(10_000, scale, 2000)
    base = KeyedStream(_crit_seed(seed, 12))
    t0 = np.empty(n, dtype=np.int64)
    for i in range(n):
        traj = run_growth_collapse(a, m_law, base.child(0x78, i), horizon=10)
        t0[i] = -1 if traj.extinction_time is None else traj.extinction_time
    checks = []
    passed = True
    for m in (5, 10):
        target = 1.0
        for k in range(1, m + 1):
            target *= m_law.cdf_strict(a**k)
        phat = float(np.mean((t0 == -1) | (t0 > m)))
        se = math.sqrt(target * (1.0 - target) / n)
        ok = abs(phat - target) <= 3.0 * se
        passed = passed and ok
        checks.append(f"m={m}: {phat:.4f} vs {target:.4f} +-{3*se:.4f}")
    detail = "survival " + "; ".join(checks)
    rows = [{"replica": i, "t0": int(t0[i])} for i in range(n)]
    return CriterionResult(12, "growth-collapse-survival-product", passed, detail, rows, ["replica", "t0"])


def criterion_13_determinism(seed: int) -> CriterionResult:
    texts = []
    for mode, spec in (
        ("regeneration", spec_solomon_re()),
        ("branching-W", spec_zero_speed()),
    ):
        pair = []
        for _ in range(2):
            config = ExperimentConfig(
                spec=spec,
                mode=mode,
                replicas=4,
                horizon=20_000 if mode == "regeneration" else 500,
                master_seed=seed,
            )
            report = run_experiment(config)
            pair.append(rows_to_csv_text(report.rows, report.fieldnames))
        texts.append(pair)
    passed = all(a == b for a, b in texts)
    detail = "re-running with one seed reproduces byte-identical CSV rows"
    if not passed:
        detail = "CSV rows differ between reruns with identical seed"
    return CriterionResult(13, "bit-level-determinism", passed, detail)


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


def run_suite(
    master_seed: int = SUITE_SEED_DEFAULT,
    scale: float = 1.0,
    out_dir=None,
    echo: Optional[Callable[[str], None]] = None,
) -> list:
    """Run the full battery; returns CriterionResults in order."""
    warmup()
    shared: dict = {}
    results = []

    def push(res: CriterionResult):
        results.append(res)
        if echo is not None:
            echo(res.line())

    push(criterion_01_solomon_constant(_crit_seed(master_seed, 1), scale))
    push(criterion_02_solomon_random(_crit_seed(master_seed, 2), scale, shared))
    push(criterion_03_regeneration_identity(master_seed, scale, shared))
    push(criterion_04_estimator_agreement(shared))
    push(criterion_05_backward_downcrossing_match(master_seed, scale))
    push(criterion_06_coupling(master_seed, scale))
    push(criterion_07_negative_speed(master_seed, scale))
    push(criterion_08_tilde_formula(master_seed, scale))
    push(criterion_09_zero_speed(master_seed, scale))
    push(criterion_10_beta_solver())
    push(criterion_11_critical_extinction(master_seed, scale))
    push(criterion_12_growth_collapse_survival(master_seed, scale))
    push(criterion_13_determinism(master_seed))

    if out_dir is not None:
        import json
        import os

        os.makedirs(out_dir, exist_ok=True)
        for res in results:
            if res.rows is not None and res.fieldnames is not None:
                path = os.path.join(out_dir, f"{res.number:02d}_{res.slug}.csv")
                with open(path, "w") as fh:
                    fh.write(rows_to_csv_text(res.rows, res.fieldnames))
        summary = {
            "master_seed": master_seed,
            "scale": scale,
            "results": [
                {"number": r.number, "slug": r.slug, "passed": r.passed, "detail": r.detail}
                for r in results
            ],
        }
        with open(os.path.join(out_dir, "suite_summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    return results
