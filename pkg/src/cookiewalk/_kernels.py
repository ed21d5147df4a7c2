"""Numba-compiled hot loops for walk simulation.

The keyed mixing here must stay bit-identical to ``rng.mix64``/``fold64``;
``tests/test_rng.py`` pins the two implementations against each other.
Cookie counts arrive as int64 with -1 meaning infinity.
"""

import numpy as np
from numba import njit

U64 = np.uint64

_GOLDEN = U64(0x9E3779B97F4A7C15)
_MUL1 = U64(0xBF58476D1CE4E5B9)
_MUL2 = U64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0

STATUS_DONE = 0
STATUS_GROW_LEFT = 1
STATUS_GROW_RIGHT = 2
STATUS_GROW_CAND = 3
STATUS_TARGET = 4


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> U64(30))) * _MUL1
    z = (z ^ (z >> U64(27))) * _MUL2
    return z ^ (z >> U64(31))


@njit(cache=True, inline="always")
def _fold(h, w):
    return _mix(h + _GOLDEN + w)


@njit(cache=True, inline="always")
def _u01(k):
    return (np.float64(k >> U64(11)) + 0.5) * _INV53


@njit(cache=True)
def mix64_kernel(z):
    return _mix(z)


@njit(cache=True)
def fold64_kernel(h, w):
    return _fold(h, w)


@njit(cache=True)
def step_uniform_kernel(step_key, pos, c):
    return _u01(_fold(_fold(step_key, U64(pos)), U64(c)))


@njit(cache=True)
def walk_kernel(
    step_key,
    n_steps,
    t0,
    pos0,
    lo,
    p_block,
    m_block,
    visits,
    path,
    record_path,
    cand_t,
    cand_level,
    n_cand0,
    run_max0,
    run_min0,
    target,
    use_target,
):
    """Advance the walk until done, out of sampled range, or target hit.

    Candidate regeneration times (strict running maxima not yet dipped
    below) are maintained online as a stack: a down-step to y pops every
    candidate with level > y.  Resumable: all state is passed in and out.
    """
    pos = pos0
    t = t0
    n_cand = n_cand0
    run_max = run_max0
    run_min = run_min0
    size = p_block.shape[0]
    while t < n_steps:
        idx = pos - lo
        if idx < 1:
            return STATUS_GROW_LEFT, pos, t, n_cand, run_max, run_min
        if idx >= size - 1:
            return STATUS_GROW_RIGHT, pos, t, n_cand, run_max, run_min
        visits[idx] += 1
        c = visits[idx]
        m = m_block[idx]
        if m == -1 or c <= m:
            move = 1
        else:
            u = _u01(_fold(_fold(step_key, U64(pos)), U64(c)))
            move = 1 if u < p_block[idx] else -1
        if record_path:
            path[t] = move
        pos += move
        t += 1
        if move == 1:
            if pos > run_max:
                run_max = pos
                if n_cand >= cand_t.shape[0]:
                    return STATUS_GROW_CAND, pos, t, n_cand, run_max, run_min
                cand_t[n_cand] = t
                cand_level[n_cand] = pos
                n_cand += 1
        else:
            if pos < run_min:
                run_min = pos
            while n_cand > 0 and cand_level[n_cand - 1] > pos:
                n_cand -= 1
        if use_target and pos == target:
            return STATUS_TARGET, pos, t, n_cand, run_max, run_min
    return STATUS_DONE, pos, t, n_cand, run_max, run_min
