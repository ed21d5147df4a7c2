"""Branching processes tied to the walk: emigration, backward, companions.

Four process kinds share one trajectory container:

* ``Z`` (emigration): Z_0 = 1, Z_n = (sum of Z_{n-1} geometric(p_n)
  offspring - M_n)_+; zero is absorbing.  A ``shifted`` flag replaces M_n
  by M_{n+1}, the variant the exact coupling against W needs.
* ``W`` (backward): W_0 = 0, W_k = sum of (W_{k-1} + 1 - M_k)_+ offspring;
  frozen at zero after its first extinction time.  Distributed like the
  downcrossing counts of one walk regeneration gap.
* ``X`` (difference): X_n = (rho_n X_{n-1} - M_n)_+, deterministic in the
  environment, dominated by exp(sum log rho_i).
* ``growth_collapse``: geometric growth by a factor a until a cookie count
  reaches a * current size, then collapse to zero.

Offspring draws are keyed by (stream, generation, summand index): the i-th
summand of generation k is one fixed number, so the Z/W coupling compares
exactly shared sums and reruns are reproducible.  Sums over more than
``EXPLICIT_MAX`` summands switch to the Gamma-Poisson mixture form of the
negative binomial (one keyed Generator per generation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .environment import Environment, EnvironmentSpec, M_INF
from .errors import CouplingPreconditionFailed
from .rng import KeyedStream

EXPLICIT_MAX = 1024
DEFAULT_CAP = 10**12
_COUPLED_EXPLICIT_CAP = 1 << 21  # coupling needs per-summand sharing

_XI_TAG = 0x78  # summand uniforms
_GP_TAG = 0x67  # gamma-poisson generator


@dataclass
class BranchingTrajectory:
    kind: str  # "Z" | "W" | "X" | "growth_collapse"
    sizes: np.ndarray
    extinction_time: Optional[int]  # first n >= 1 at zero; None if censored
    total_progeny: float
    saturated: bool
    horizon: int

    def survived_to(self, n: int) -> bool:
        return self.extinction_time is None or self.extinction_time > n


def _geometric_counts(u: np.ndarray, p: float) -> np.ndarray:
    """Inverse-CDF geometric (failures before success) per uniform."""
    return np.floor(np.log(u) / math.log1p(-p)).astype(np.int64)


def offspring_sum(
    n: int,
    p: float,
    stream: KeyedStream,
    method: str = "auto",
    explicit_max: int = EXPLICIT_MAX,
) -> int:
    """One draw of the sum of n i.i.d. geometric(p) offspring counts.

    ``exact`` sums n inverse-CDF geometrics keyed by summand index;
    ``gamma_poisson`` draws the equal-in-law negative binomial as a
    Poisson with Gamma(n, (1-p)/p) mixing rate.  ``auto`` switches at
    ``explicit_max`` summands.
    """
    if n < 0:
        raise ValueError("summand count must be nonnegative")
    if n == 0:
        return 0
    if method == "auto":
        method = "exact" if n <= explicit_max else "gamma_poisson"
    if method == "exact":
        u = stream.child(_XI_TAG).uniforms(np.arange(1, n + 1, dtype=np.int64))
        return int(_geometric_counts(u, p).sum())
    if method == "gamma_poisson":
        gen = stream.generator(_GP_TAG)
        lam = gen.gamma(shape=n, scale=(1.0 - p) / p)
        return int(gen.poisson(lam))
    raise ValueError(f"unknown method {method!r}")


def _site_tables(env: Environment, horizon: int):
    xs = np.arange(1, horizon + 2, dtype=np.int64)  # +1 for shifted reads
    return env.sites(xs)


def _emigrate(total: int, m: int) -> int:
    """(total - m)_+ with m = -1 meaning an infinite cookie stack."""
    if m == M_INF:
        return 0
    return max(total - int(m), 0)


def run_emigration_process(
    env: Environment,
    stream: KeyedStream,
    horizon: int,
    cap: int = DEFAULT_CAP,
    shifted: bool = False,
    explicit_max: int = EXPLICIT_MAX,
) -> BranchingTrajectory:
    """The Z process; ``shifted`` subtracts M_{n+1} instead of M_n."""
    ps, ms = _site_tables(env, horizon)
    sizes = [1]
    z = 1
    extinction = None
    saturated = False
    for k in range(1, horizon + 1):
        total = offspring_sum(z, float(ps[k - 1]), stream.child(k), explicit_max=explicit_max)
        m = ms[k] if shifted else ms[k - 1]
        z = _emigrate(total, m)
        sizes.append(z)
        if z == 0:
            extinction = k
            break
        if z >= cap:
            saturated = True
            break
    return BranchingTrajectory(
        kind="Z",
        sizes=np.array(sizes, dtype=np.int64),
        extinction_time=extinction,
        total_progeny=float(sum(sizes)),
        saturated=saturated,
        horizon=horizon,
    )


def run_backward_process(
    env: Environment,
    stream: KeyedStream,
    horizon: int,
    cap: int = DEFAULT_CAP,
    explicit_max: int = EXPLICIT_MAX,
) -> BranchingTrajectory:
    """The W process: (W_{k-1} + 1 - M_k)_+ parents, zero absorbing."""
    ps, ms = _site_tables(env, horizon)
    sizes = [0]
    w = 0
    extinction = None
    saturated = False
    for k in range(1, horizon + 1):
        parents = _emigrate(w + 1, ms[k - 1])
        w = offspring_sum(parents, float(ps[k - 1]), stream.child(k), explicit_max=explicit_max)
        sizes.append(w)
        if w == 0:
            extinction = k
            break
        if w >= cap:
            saturated = True
            break
    return BranchingTrajectory(
        kind="W",
        sizes=np.array(sizes, dtype=np.int64),
        extinction_time=extinction,
        total_progeny=float(sum(sizes)),
        saturated=saturated,
        horizon=horizon,
    )


def run_difference_equation(env: Environment, horizon: int) -> BranchingTrajectory:
    """The deterministic companion X_n = (rho_n X_{n-1} - M_n)_+."""
    ps, ms = _site_tables(env, horizon)
    rho = (1.0 - ps) / ps
    sizes = np.zeros(horizon + 1, dtype=np.float64)
    sizes[0] = 1.0
    x = 1.0
    extinction = None
    for k in range(1, horizon + 1):
        if ms[k - 1] == M_INF:
            x = 0.0
        else:
            x = max(rho[k - 1] * x - float(ms[k - 1]), 0.0)
        sizes[k] = x
        if x == 0.0 and extinction is None:
            extinction = k
    return BranchingTrajectory(
        kind="X",
        sizes=sizes,
        extinction_time=extinction,
        total_progeny=float(sizes.sum()),
        saturated=False,
        horizon=horizon,
    )


def run_growth_collapse(
    a: float, m_law, stream: KeyedStream, horizon: int
) -> BranchingTrajectory:
    """Grow by factor a while M_n < a * size; collapse to zero otherwise."""
    if a <= 1.0:
        raise ValueError("growth factor a must exceed 1")
    u = stream.uniforms(np.arange(1, horizon + 1, dtype=np.int64))
    ms = m_law.inv_cdf(u)
    sizes = np.zeros(horizon + 1, dtype=np.float64)
    sizes[0] = 1.0
    x = 1.0
    extinction = None
    for k in range(1, horizon + 1):
        threshold = a * x
        if ms[k - 1] != M_INF and float(ms[k - 1]) < threshold:
            x = threshold
        else:
            x = 0.0
        sizes[k] = x
        if x == 0.0:
            extinction = k
            break
    last = extinction if extinction is not None else horizon
    return BranchingTrajectory(
        kind="growth_collapse",
        sizes=sizes[: last + 1],
        extinction_time=extinction,
        total_progeny=float(sizes[: last + 1].sum()),
        saturated=False,
        horizon=horizon,
    )


# ---------------------------------------------------------------------------
# Exact Z/W coupling
# ---------------------------------------------------------------------------


@dataclass
class CoupledRun:
    z: BranchingTrajectory
    w: BranchingTrajectory
    violations: list = field(default_factory=list)
    checked_generations: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def coupled_run(
    env: Environment,
    stream: KeyedStream,
    horizon: int,
    cap: int = _COUPLED_EXPLICIT_CAP,
) -> CoupledRun:
    """Run Z (shifted migration) and W on one shared offspring array.

    Requires M_1 = 0.  Both processes read the identical summands
    xi_i^{(k)}, under which (W_k - M_{k+1} + 1)_+ >= Z_k holds for every
    k <= T_0^W and Z_k <= W_k for 1 <= k <= T_0^W; any violation is
    reported.  ``cap`` bounds the per-generation summand count (the
    coupling needs explicit summation, so it is far below the uncoupled
    population cap).
    """
    first = env.site(1)
    if first.m != 0:
        raise CouplingPreconditionFailed(f"M_1 = {first.m}, need 0")
    ps, ms = _site_tables(env, horizon)
    z, w = 1, 0
    sizes_z, sizes_w = [1], [0]
    t0z = None
    t0w = None
    saturated = False
    violations = []
    checked = 0
    for k in range(1, horizon + 1):
        parents_w = _emigrate(w + 1, ms[k - 1])
        n_max = max(z, parents_w)
        if n_max > cap:
            saturated = True
            break
        if n_max > 0:
            u = stream.child(k).child(_XI_TAG).uniforms(
                np.arange(1, n_max + 1, dtype=np.int64)
            )
            xi = _geometric_counts(u, float(ps[k - 1]))
            sum_z = int(xi[:z].sum())
            sum_w = int(xi[:parents_w].sum())
        else:
            sum_z = sum_w = 0
        z = _emigrate(sum_z, ms[k])  # shifted migration M_{k+1}
        w = sum_w
        sizes_z.append(z)
        sizes_w.append(w)
        if t0z is None and z == 0:
            t0z = k
        checked = k
        shifted_slack = _emigrate(w + 1, ms[k])  # (W_k - M_{k+1} + 1)_+
        if shifted_slack < z:
            violations.append((k, "shifted-slack", z, w))
        if z > w:
            violations.append((k, "containment", z, w))
        if w == 0:
            t0w = k
            break
    if t0w is not None and t0z is not None and t0z > t0w:
        violations.append((t0w, "extinction-order", t0z, t0w))
    traj_z = BranchingTrajectory(
        kind="Z",
        sizes=np.array(sizes_z, dtype=np.int64),
        extinction_time=t0z,
        total_progeny=float(sum(sizes_z)),
        saturated=saturated,
        horizon=horizon,
    )
    traj_w = BranchingTrajectory(
        kind="W",
        sizes=np.array(sizes_w, dtype=np.int64),
        extinction_time=t0w,
        total_progeny=float(sum(sizes_w)),
        saturated=saturated,
        horizon=horizon,
    )
    return CoupledRun(z=traj_z, w=traj_w, violations=violations, checked_generations=checked)


def coupled_environment_seed(spec: EnvironmentSpec, master_seed: int, replica: int) -> int:
    """First derived seed whose environment has M_1 = 0 (resampling)."""
    base = KeyedStream(master_seed).child(0x43, replica)
    for attempt in range(10000):
        seed = base.child(attempt).key
        if Environment(spec, seed).site(1).m == 0:
            return seed
    raise CouplingPreconditionFailed("no M_1 = 0 environment found in 10000 resamples")


# ---------------------------------------------------------------------------
# Total-progeny tail diagnostic
# ---------------------------------------------------------------------------


STABLE_REL_CHANGE = 0.05
STABLE_MAX_SHARE = 0.05


@dataclass
class TailReport:
    """Heavy-tail diagnostics for total progeny; evidence, not proof."""

    kind: str
    replicas: int
    totals_mean: float
    running_mean_checkpoints: list  # (replica count, running mean) pairs
    mean_rel_change: float
    max_share: float
    hill_alpha: Optional[float]
    hill_se: Optional[float]
    hill_order_statistics: int
    saturated_fraction: float
    stabilized: bool
    infinite_mean_consistent: bool


def hill_tail_index(samples: np.ndarray, top_fraction: float = 0.05):
    """(alpha, se, k): Hill estimate over the top order statistics.

    alpha <= 1 is the infinite-mean region.  Returns (None, None, 0) when
    fewer than ~10 positive samples exist.
    """
    pos = np.sort(samples[samples > 0])[::-1]
    k = min(max(int(math.ceil(top_fraction * pos.size)), 10), pos.size - 1)
    if pos.size < 12 or k < 1:
        return None, None, 0
    logs = np.log(pos[:k]) - math.log(pos[k])
    g = float(np.mean(logs))
    if g <= 0.0:
        return None, None, k
    alpha = 1.0 / g
    return alpha, alpha / math.sqrt(k), k


def progeny_tail_diagnostic(
    spec: EnvironmentSpec,
    replicas: int,
    horizon: int,
    cap: int = DEFAULT_CAP,
    master_seed: int = 0,
    kind: str = "Z",
) -> TailReport:
    """Sample total progeny and flag infinite-mean-consistent behavior.

    The flag fires when the running mean fails to stabilize (relative
    drift or a dominant single sample) AND the Hill tail index is <= 1
    within one standard error.  Saturated runs are excluded from means
    and the Hill sample but reported as a fraction.
    """
    base = KeyedStream(master_seed)
    totals = np.empty(replicas, dtype=np.float64)
    saturated = np.zeros(replicas, dtype=bool)
    runner = run_emigration_process if kind == "Z" else run_backward_process
    for r in range(replicas):
        env = Environment(spec, base.child(0x65, r).key)
        traj = runner(env, base.child(0x74, r), horizon, cap=cap)
        totals[r] = traj.total_progeny
        saturated[r] = traj.saturated
    ok = totals[~saturated]
    if ok.size == 0 or float(np.sum(ok)) == 0.0:
        return TailReport(
            kind=kind,
            replicas=replicas,
            totals_mean=0.0,
            running_mean_checkpoints=[],
            mean_rel_change=0.0,
            max_share=0.0,
            hill_alpha=None,
            hill_se=None,
            hill_order_statistics=0,
            saturated_fraction=float(np.mean(saturated)),
            stabilized=True,
            infinite_mean_consistent=False,
        )
    mean_all = float(np.mean(ok))
    mean_half = float(np.mean(ok[: max(ok.size // 2, 1)]))
    rel_change = abs(mean_all - mean_half) / max(mean_all, 1e-300)
    max_share = float(np.max(ok) / np.sum(ok))
    checkpoints = []
    n = 8
    while n < ok.size:
        checkpoints.append((n, float(np.mean(ok[:n]))))
        n *= 2
    checkpoints.append((int(ok.size), mean_all))
    alpha, se, k = hill_tail_index(ok)
    stabilized = rel_change < STABLE_REL_CHANGE and max_share < STABLE_MAX_SHARE
    heavy = alpha is not None and se is not None and alpha <= 1.0 + se
    return TailReport(
        kind=kind,
        replicas=replicas,
        totals_mean=mean_all,
        running_mean_checkpoints=checkpoints,
        mean_rel_change=rel_change,
        max_share=max_share,
        hill_alpha=alpha,
        hill_se=se,
        hill_order_statistics=k,
        saturated_fraction=float(np.mean(saturated)),
        stabilized=stabilized,
        infinite_mean_consistent=(not stabilized) and heavy,
    )
