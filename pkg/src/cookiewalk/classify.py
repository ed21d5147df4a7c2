"""Theorem predicates: transience, speed sign, and exact speed values.

Every verdict cites the clause that fired.  Knife-edge comparisons use a
relative tolerance of 1e-9: within tolerance the verdict is indeterminate
(or flagged when a covering clause still applies), never a guessed sign.
The clause-tag vocabulary is listed in the README.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .environment import EnvironmentSpec
from .errors import NotCookieFree, UnsupportedMLaw
from .moments import MomentReport, moment_report

KNIFE_RTOL = 1e-9

LEFT = "left"
RECURRENT = "recurrent"
RIGHT = "right"
NEGATIVE = "negative"
ZERO = "zero"
POSITIVE = "positive"
INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class Verdict:
    transience: str
    speed_sign: str
    speed_value: Optional[float]
    clause: str
    boundary_flags: tuple = ()

    def to_json_dict(self) -> dict:
        return {
            "transience": self.transience,
            "speed_sign": self.speed_sign,
            "speed_value": self.speed_value,
            "clause": self.clause,
            "boundary_flags": list(self.boundary_flags),
        }


def knife_cmp(a: float, b: float, rtol: float = KNIFE_RTOL) -> int:
    """-1, 0, +1 with 0 meaning equal within relative tolerance."""
    if a == b:
        return 0
    if math.isinf(a) or math.isinf(b):
        return -1 if a < b else 1
    if math.isclose(a, b, rel_tol=rtol, abs_tol=rtol):
        return 0
    return -1 if a < b else 1


def _solomon_speed(e_rho: float, e_rho_inv: float):
    """(sign, value, clause, flags) for the cookie-free walk."""
    flags = []
    c_rho = knife_cmp(e_rho, 1.0)
    c_inv = knife_cmp(e_rho_inv, 1.0)
    if c_rho == 0:
        flags.append("E[rho] = 1")
    if c_inv == 0:
        flags.append("E[rho^-1] = 1")
    if c_rho < 0:
        return POSITIVE, (1.0 - e_rho) / (1.0 + e_rho), "Thm 1.2(i)", flags
    if c_inv < 0:
        return NEGATIVE, -(1.0 - e_rho_inv) / (1.0 + e_rho_inv), "Thm 1.2(ii)", flags
    return ZERO, 0.0, "Thm 1.2(iii)", flags


def classify_rwre(report: MomentReport) -> Verdict:
    """Cookie-free classification: Solomon transience and speed."""
    if report.p_m_zero < 1.0:
        raise NotCookieFree(f"P[M=0] = {report.p_m_zero} < 1")
    c_log = knife_cmp(report.e_log_rho, 0.0)
    if c_log > 0:
        transience = LEFT
    elif c_log < 0:
        transience = RIGHT
    else:
        transience = RECURRENT
    sign, value, clause, flags = _solomon_speed(report.e_rho, report.e_rho_inv)
    if c_log == 0 and report.e_log_rho != 0.0:
        flags.append("E[log rho] = 0")
    return Verdict(
        transience=transience,
        speed_sign=sign,
        speed_value=value,
        clause=clause,
        boundary_flags=tuple(flags),
    )


def classify_transience(report: MomentReport) -> Verdict:
    """Transience verdict; speed fields are left indeterminate.

    For E[log rho] > 0 the three heavy-cookie clauses apply.  For
    E[log rho] <= 0 the cookied walk is right-transient (infinite stacks
    act as one-way doors and cookies only push right); the cookie-free
    recurrent case stays recurrent.
    """
    c_log = knife_cmp(report.e_log_rho, 0.0)
    flags = []
    if c_log == 0:
        flags.append("E[log rho] = 0")
    if c_log > 0:
        if report.e_log_m_plus < math.inf:
            verdict = (LEFT, "Thm 1.1(i)")
        elif report.tail_lambda is None:
            flags.append("tail limit unavailable")
            verdict = (INDETERMINATE, "indeterminate (no tail limit)")
        else:
            c_tail = knife_cmp(report.tail_lambda, report.e_log_rho)
            if c_tail < 0:
                verdict = (RECURRENT, "Thm 1.1(ii)")
            elif c_tail > 0:
                verdict = (RIGHT, "Thm 1.1(iii)")
            else:
                flags.append("tail_lambda = E[log rho]")
                verdict = (INDETERMINATE, "indeterminate (tail_lambda = E[log rho])")
    elif c_log == 0 and report.p_m_zero >= 1.0:
        verdict = (RECURRENT, "Solomon recurrence")
    else:
        verdict = (RIGHT, "§3/eq:as_righttransient")
    return Verdict(
        transience=verdict[0],
        speed_sign=INDETERMINATE,
        speed_value=None,
        clause=verdict[1],
        boundary_flags=tuple(flags),
    )


def _tilde_value(report: MomentReport) -> Optional[float]:
    """Exact speed for {0, inf}-valued cookie laws via the one-way-door map."""
    if not report.m_zero_inf_only:
        return None
    r = report.e_rho * report.p_m_finite
    return (1.0 - r) / (1.0 + r) if r < 1.0 else 0.0


def classify_speed(report: MomentReport) -> Verdict:
    """Full decision tree over the speed theorems."""
    if report.p_m_zero >= 1.0:
        return classify_rwre(report)
    transience = classify_transience(report).transience
    flags = []
    c_log = knife_cmp(report.e_log_rho, 0.0)
    if c_log == 0:
        flags.append("E[log rho] = 0")

    if c_log >= 0:
        # underlying walk is left-transient or recurrent
        cm = knife_cmp(report.e_m, math.inf)
        c_inv = knife_cmp(report.e_rho_inv, 1.0)
        if cm < 0 and c_inv < 0:
            return Verdict(transience, NEGATIVE, None, "Thm 1.3(i)", tuple(flags))
        c = knife_cmp(report.e_rho * report.p_m_finite, 1.0)
        if c > 0:
            return Verdict(transience, ZERO, 0.0, "Thm 1.3(ii)", tuple(flags))
        if c < 0:
            return Verdict(
                transience, POSITIVE, _tilde_value(report), "Thm 1.3(iii)", tuple(flags)
            )
        flags.append("E[rho]*P[M<inf] = 1")
        return Verdict(
            transience,
            INDETERMINATE,
            None,
            "indeterminate (E[rho]*P[M<inf] = 1)",
            tuple(flags),
        )

    # underlying walk is right-transient
    c_rho = knife_cmp(report.e_rho, 1.0)
    if c_rho < 0:
        # positive-speed underlying; cookies only push right
        return Verdict(
            transience,
            POSITIVE,
            _tilde_value(report),
            "§4 first part + Thm 1.2(i)",
            tuple(flags),
        )
    if c_rho == 0:
        flags.append("E[rho] = 1")
    c_zero = knife_cmp(report.e_rho * report.p_m_zero, 1.0)
    if c_zero == 0:
        flags.append("E[rho]*P[M=0] = 1")
    if c_zero >= 0:
        return Verdict(transience, ZERO, 0.0, "Thm 1.4(ii)", tuple(flags))
    assert report.gamma is not None  # guaranteed: E[log rho] < 0 <= E[rho] - 1
    c_gamma = knife_cmp(report.gamma * report.e_rho * report.p_m_finite, 1.0)
    if c_gamma > 0:
        return Verdict(transience, ZERO, 0.0, "Thm 1.4(i)", tuple(flags))
    if c_gamma == 0:
        flags.append("gamma*E[rho]*P[M<inf] = 1")
    c_pos = knife_cmp(report.e_rho * report.p_m_finite, 1.0)
    if c_pos < 0:
        return Verdict(
            transience, POSITIVE, _tilde_value(report), "Thm 1.4(iii)", tuple(flags)
        )
    if c_pos == 0:
        flags.append("E[rho]*P[M<inf] = 1")
    else:
        flags.append("open-problem-Thm-1.4-gap")
    return Verdict(
        transience,
        INDETERMINATE,
        None,
        f"indeterminate ({flags[-1]})",
        tuple(flags),
    )


# ---------------------------------------------------------------------------
# Tilde reduction for {0, inf} cookie laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TildeReduction:
    """Cookie-free reduction: infinite stacks become always-right sites.

    The reduced right-step law places mass ``p_one_mass`` = P[M = inf] on
    p = 1 and keeps the original law otherwise, so the reduced odds-ratio
    mean is E[rho] * P[M < inf].
    """

    p_one_mass: float
    base_p_law: object
    e_rho_tilde: float
    nu: Optional[float]


def tilde_reduction(spec: EnvironmentSpec) -> TildeReduction:
    """Reduce a {0, inf}-cookie walk to an exact cookie-free walk."""
    if not spec.m_law.zero_inf_only():
        raise UnsupportedMLaw(
            f"tilde reduction needs M supported on {{0, inf}}, got {spec.m_law!r}"
        )
    report = moment_report(spec)
    p_inf = 1.0 - report.p_m_finite
    r = report.e_rho * report.p_m_finite
    if p_inf == 0.0:
        _, nu, _, _ = _solomon_speed(report.e_rho, report.e_rho_inv)
    else:
        nu = (1.0 - r) / (1.0 + r) if r < 1.0 else 0.0
    return TildeReduction(
        p_one_mass=p_inf, base_p_law=spec.p_law, e_rho_tilde=r, nu=nu
    )
