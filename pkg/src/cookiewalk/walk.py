"""Quenched walk simulation, regeneration structure, downcrossings.

The walk starts at 0.  On the c-th arrival at site x it steps right if
c <= M_x (a cookie is consumed), otherwise right with probability p_x.
The post-cookie Bernoulli draw is the keyed uniform at coordinates
(site, arrival index), so a trajectory is a pure function of
(environment, stream) and revisits are reproducible.

Regeneration times are strict running maxima never revisited from below.
Detection censors the horizon end: a surviving candidate at level L is
confirmed only when the final position exceeds L + safety_margin, and the
first confirmed gap is dropped from gap statistics (its law differs from
the stationary gaps).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import _kernels
from .environment import Environment, EnvironmentSpec
from .errors import InvalidGap, NotTransientEnough, RegimeMismatch
from .moments import moment_report
from .rng import KeyedStream, uniform_at

DEFAULT_SAFETY_MARGIN = 200
_INIT_HALF = 1 << 12
_INIT_CAND = 1 << 12


# ---------------------------------------------------------------------------
# Single-step contract (reference implementation; kernels must match it)
# ---------------------------------------------------------------------------


@dataclass
class WalkState:
    position: int = 0
    time: int = 0
    visit_counts: dict = field(default_factory=dict)
    running_max: int = 0
    running_min: int = 0


def step(state: WalkState, env: Environment, stream: KeyedStream) -> WalkState:
    """Advance one step in place; returns the same state object."""
    x = state.position
    c = state.visit_counts.get(x, 0) + 1
    state.visit_counts[x] = c
    site = env.site(x)
    if c <= site.m:  # site.m may be math.inf
        move = 1
    else:
        u = uniform_at(stream.key, x, c)
        move = 1 if u < site.p else -1
    state.position = x + move
    state.time += 1
    state.running_max = max(state.running_max, state.position)
    state.running_min = min(state.running_min, state.position)
    return state


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegenerationRecord:
    tau: int
    level: int
    confirmed: bool


@dataclass(frozen=True)
class CensoringInfo:
    horizon: int
    safety_margin: int
    discarded_unconfirmed: int


@dataclass(frozen=True)
class Censored:
    horizon: int


@dataclass
class WalkRecord:
    n_steps: int
    final_position: int
    speed: float
    running_max: int
    running_min: int
    regenerations: list  # confirmed RegenerationRecords, increasing tau
    censoring: CensoringInfo
    path: Optional[np.ndarray] = None  # int8 steps of +-1, length n_steps

    def positions(self) -> np.ndarray:
        if self.path is None:
            raise InvalidGap("positions need a recorded path")
        out = np.empty(self.n_steps + 1, dtype=np.int64)
        out[0] = 0
        np.cumsum(self.path, out=out[1:])
        return out

    def tau_gaps(self) -> np.ndarray:
        taus = np.array([r.tau for r in self.regenerations], dtype=np.int64)
        return np.diff(taus)

    def s_gaps(self) -> np.ndarray:
        levels = np.array([r.level for r in self.regenerations], dtype=np.int64)
        return np.diff(levels)

    def gap_stats(self):
        """(tau gaps, level gaps) with the first gap dropped."""
        return self.tau_gaps()[1:], self.s_gaps()[1:]

    def ratio_speed(self) -> float:
        """Regeneration-ratio speed estimate mean(S gaps) / mean(tau gaps)."""
        tg, sg = self.gap_stats()
        if len(tg) == 0:
            raise NotTransientEnough("no post-first confirmed gaps")
        return float(np.mean(sg) / np.mean(tg))


# ---------------------------------------------------------------------------
# Fast runs
# ---------------------------------------------------------------------------


class _Blocks:
    """Resizable (p, m, visits) arrays over a contiguous site window."""

    def __init__(self, env: Environment, half: int):
        self.env = env
        self.lo = -half
        xs = np.arange(self.lo, half + 1, dtype=np.int64)
        self.p, self.m = env.sites(xs)
        self.visits = np.zeros(xs.size, dtype=np.int64)

    def grow(self, left: bool) -> None:
        size = self.p.size
        if left:
            new_lo = self.lo - size
            xs = np.arange(new_lo, self.lo, dtype=np.int64)
            p_new, m_new = self.env.sites(xs)
            self.p = np.concatenate([p_new, self.p])
            self.m = np.concatenate([m_new, self.m])
            self.visits = np.concatenate([np.zeros(xs.size, np.int64), self.visits])
            self.lo = new_lo
        else:
            hi = self.lo + size
            xs = np.arange(hi, hi + size, dtype=np.int64)
            p_new, m_new = self.env.sites(xs)
            self.p = np.concatenate([self.p, p_new])
            self.m = np.concatenate([self.m, m_new])
            self.visits = np.concatenate([self.visits, np.zeros(xs.size, np.int64)])


def _drive(env, stream, n_steps, record_path, target=None, init_half=_INIT_HALF):
    """Run the kernel to completion, growing blocks on demand."""
    blocks = _Blocks(env, min(init_half, max(n_steps, 2) + 2))
    path = np.zeros(n_steps, dtype=np.int8) if record_path else np.zeros(0, dtype=np.int8)
    cand_t = np.zeros(_INIT_CAND, dtype=np.int64)
    cand_level = np.zeros(_INIT_CAND, dtype=np.int64)
    n_cand = 1  # time 0 at level 0 is vacuously a strict record
    pos, t, run_max, run_min = 0, 0, 0, 0
    use_target = target is not None
    target_val = target if use_target else 0
    status = _kernels.STATUS_DONE
    while True:
        status, pos, t, n_cand, run_max, run_min = _kernels.walk_kernel(
            np.uint64(stream.key),
            n_steps,
            t,
            pos,
            blocks.lo,
            blocks.p,
            blocks.m,
            blocks.visits,
            path,
            record_path,
            cand_t,
            cand_level,
            n_cand,
            run_max,
            run_min,
            target_val,
            use_target,
        )
        if status == _kernels.STATUS_GROW_LEFT:
            blocks.grow(left=True)
        elif status == _kernels.STATUS_GROW_RIGHT:
            blocks.grow(left=False)
        elif status == _kernels.STATUS_GROW_CAND:
            cand_t = np.concatenate([cand_t, np.zeros(cand_t.size, np.int64)])
            cand_level = np.concatenate([cand_level, np.zeros(cand_level.size, np.int64)])
        else:
            break
    return status, pos, t, cand_t[:n_cand], cand_level[:n_cand], run_max, run_min, path


def run_walk(
    env: Environment,
    stream: KeyedStream,
    n_steps: int,
    record_path: bool = False,
    safety_margin: int = DEFAULT_SAFETY_MARGIN,
) -> WalkRecord:
    """Simulate n_steps quenched steps and summarize the trajectory."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    _, pos, t, cand_t, cand_level, run_max, run_min, path = _drive(
        env, stream, n_steps, record_path
    )
    confirmed_mask = pos > cand_level + safety_margin
    regens = [
        RegenerationRecord(tau=int(ct), level=int(cl), confirmed=True)
        for ct, cl in zip(cand_t[confirmed_mask], cand_level[confirmed_mask])
    ]
    censoring = CensoringInfo(
        horizon=n_steps,
        safety_margin=safety_margin,
        discarded_unconfirmed=int(np.sum(~confirmed_mask)),
    )
    return WalkRecord(
        n_steps=n_steps,
        final_position=int(pos),
        speed=pos / n_steps,
        running_max=int(run_max),
        running_min=int(run_min),
        regenerations=regens,
        censoring=censoring,
        path=path if record_path else None,
    )


def hitting_time(
    env: Environment, stream: KeyedStream, target: int, horizon: int
) -> Union[int, Censored]:
    """First time the walk sits at ``target``, or Censored(horizon)."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if target == 0:
        return 0
    status, _, t, *_ = _drive(env, stream, horizon, record_path=False, target=target)
    if status == _kernels.STATUS_TARGET:
        return int(t)
    return Censored(horizon=horizon)


# ---------------------------------------------------------------------------
# Regenerations and downcrossings from a recorded path
# ---------------------------------------------------------------------------


def regenerations_from_positions(positions: np.ndarray, safety_margin: int) -> tuple:
    """(confirmed records, discarded surviving count) for a position path.

    A time j is a candidate when S_j strictly exceeds every earlier
    position; it survives when no later position drops below S_j; it is
    confirmed when additionally the final position clears S_j by more than
    the safety margin.
    """
    s = np.asarray(positions, dtype=np.int64)
    is_record = np.empty(s.size, dtype=bool)
    is_record[0] = True
    running_max = np.maximum.accumulate(s)
    is_record[1:] = s[1:] > running_max[:-1]
    suffix_min = np.minimum.accumulate(s[::-1])[::-1]
    surviving = is_record & (suffix_min == s)
    confirmed = surviving & (s[-1] > s + safety_margin)
    records = [
        RegenerationRecord(tau=int(j), level=int(s[j]), confirmed=True)
        for j in np.nonzero(confirmed)[0]
    ]
    discarded = int(np.sum(surviving) - np.sum(confirmed))
    return records, discarded


def detect_regenerations(record: WalkRecord, safety_margin: Optional[int] = None):
    """Confirmed regeneration records; recomputed from the path if recorded.

    Raises NotTransientEnough when fewer than two confirmed records exist
    (the environment is likely not right-transient, or the horizon is too
    short for the margin).
    """
    if record.path is not None:
        margin = record.censoring.safety_margin if safety_margin is None else safety_margin
        regens, _ = regenerations_from_positions(record.positions(), margin)
    else:
        if safety_margin is not None and safety_margin != record.censoring.safety_margin:
            raise InvalidGap("margin override requires a recorded path")
        regens = record.regenerations
    if len(regens) < 2:
        raise NotTransientEnough(
            f"only {len(regens)} confirmed regenerations (horizon {record.n_steps})"
        )
    return regens


def downcrossings(record: WalkRecord, tau_a: int, tau_b: int) -> np.ndarray:
    """Downcrossing counts D_0..D_{K-1} for one confirmed regeneration gap.

    D_k counts steps within the open gap from level L_b - k down to
    L_b - k - 1, where L_b is the level at tau_b; K is the level gap.
    """
    taus = [r.tau for r in record.regenerations]
    try:
        ia = taus.index(tau_a)
    except ValueError:
        raise InvalidGap(f"{tau_a} is not a confirmed regeneration time")
    if ia + 1 >= len(taus) or taus[ia + 1] != tau_b:
        raise InvalidGap(f"({tau_a}, {tau_b}) are not consecutive confirmed regenerations")
    s = record.positions()
    level_b = int(s[tau_b])
    level_a = int(s[tau_a])
    gap = s[tau_a : tau_b + 1]
    down_from = gap[:-1][np.diff(gap) == -1]
    # exclude the step at tau_a itself (n ranges strictly inside the gap);
    # it is always an up-step at a regeneration, so no correction needed
    k = level_b - down_from
    counts = np.bincount(k, minlength=max(level_b - level_a, 1))
    return counts[: level_b - level_a]


def gap_identity_residual(record: WalkRecord, tau_a: int, tau_b: int) -> int:
    """(tau gap) - (level gap) - 2*sum(D): zero on every confirmed gap."""
    d = downcrossings(record, tau_a, tau_b)
    s = record.positions()
    return int((tau_b - tau_a) - (s[tau_b] - s[tau_a]) - 2 * int(d.sum()))


# ---------------------------------------------------------------------------
# Left-speed reciprocal estimator
# ---------------------------------------------------------------------------


@dataclass
class LeftSpeedReport:
    """Partial sums of P[T_{-1} >= j] under cookies-at-or-below-origin.

    ``partial_sum`` estimates the reciprocal absolute speed when it is
    finite; a non-plateauing partial sum (large ``tail_increment_ratio``)
    is the zero-speed diagnostic.
    """

    j_values: np.ndarray
    terms: np.ndarray
    term_ses: np.ndarray
    partial_sums: np.ndarray
    partial_sum: float
    censored_fraction: float
    tail_increment_ratio: float
    replicas: int
    horizon: int


def left_speed_reciprocal(
    spec: EnvironmentSpec,
    replicas: int,
    horizon: int,
    master_seed: int = 0,
    j_max: Optional[int] = None,
) -> LeftSpeedReport:
    """Monte Carlo partial sums of sum_j P[T_{-j-1} - T_{-j} >= j].

    Uses the reduction of each term to P[T_{-1} >= j] in an environment
    with cookies only at the origin and below (sites right of 0 are eaten
    bare by time T_{-j}).  Requires the left-transient regime
    E[log rho] > 0 with E[(log M)_+] < inf.
    """
    report = moment_report(spec)
    if not (report.e_log_rho > 0.0 and report.e_log_m_plus < math.inf):
        raise RegimeMismatch(
            "left-speed sum needs E[log rho] > 0 and finite E[(log M)_+]"
        )
    if j_max is None:
        j_max = horizon
    j_max = min(j_max, horizon)
    times = np.empty(replicas, dtype=np.int64)
    censored = 0
    base = KeyedStream(master_seed)
    for r in range(replicas):
        env = Environment(
            spec, base.child(0x45, r).key
        ).without_cookies_right_of_origin()
        res = hitting_time(env, base.child(0x4C, r), -1, horizon)
        if isinstance(res, Censored):
            times[r] = horizon
            censored += 1
        else:
            times[r] = res
    js = np.arange(1, j_max + 1, dtype=np.int64)
    hits = (times[None, :] >= js[:, None]).mean(axis=1)
    ses = np.sqrt(np.maximum(hits * (1.0 - hits), 0.0) / replicas)
    partial = np.cumsum(hits)
    half = max(j_max // 2, 1)
    tail_ratio = float((partial[-1] - partial[half - 1]) / max(partial[-1], 1e-300))
    return LeftSpeedReport(
        j_values=js,
        terms=hits,
        term_ses=ses,
        partial_sums=partial,
        partial_sum=float(partial[-1]),
        censored_fraction=censored / replicas,
        tail_increment_ratio=tail_ratio,
        replicas=replicas,
        horizon=horizon,
    )
