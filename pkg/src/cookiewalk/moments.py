"""Moment functionals of the environment law and the (beta, gamma) root.

Everything the classifier consumes lives in a :class:`MomentReport`:
odds-ratio moments E[log rho], E[rho], E[rho^-1], E[rho^2], the cookie-law
summaries E[M], E[(log M)_+], P[M=0], P[M<inf], the log-tail constant
lim t*P[log M > t] when the family defines one, and in the subcritical
regime the root beta of E[rho^beta log rho] = 0 with gamma = E[rho^beta].

Finite-support p laws use exact atom arithmetic.  Beta p laws are
integrated by Gauss-Legendre quadrature after the substitution p = u^2
(which concentrates nodes near p = 0 where the integrands blow up); the
node count is doubled and the discrepancy recorded as the method error.
Divergent quantities are reported as an explicit infinity with method tag
"divergent", never as a large float.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special as sp_special

from .environment import BetaP, Environment, EnvironmentSpec, M_INF, m_p_zero
from .errors import NoConvergence, OutOfDomain, RegimeMismatch

MGF_DOMAIN = (0.0, 2.0)
DEFAULT_BETA_TOL = 1e-10
_QUAD_NODES = 128


@dataclass
class MomentReport:
    """Computed functionals plus per-field method tags.

    ``methods[field]`` is one of ``closed-form``, ``quadrature``,
    ``divergent``, ``bisection`` or ``monte-carlo``; Monte Carlo fields
    carry a standard error in ``mc_standard_errors``.
    """

    e_log_rho: float
    e_rho: float
    e_rho_inv: float
    e_rho_sq: float
    e_log_m_plus: float
    e_m: float
    p_m_zero: float
    p_m_finite: float
    tail_lambda: Optional[float]
    beta: Optional[float] = None
    gamma: Optional[float] = None
    m_zero_inf_only: bool = False
    methods: dict = field(default_factory=dict)
    mc_standard_errors: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        def enc(v):
            if v is None:
                return None
            if v == math.inf:
                return "inf"
            if v == -math.inf:
                return "-inf"
            return v

        out = {
            name: enc(getattr(self, name))
            for name in (
                "e_log_rho",
                "e_rho",
                "e_rho_inv",
                "e_rho_sq",
                "e_log_m_plus",
                "e_m",
                "p_m_zero",
                "p_m_finite",
                "tail_lambda",
                "beta",
                "gamma",
            )
        }
        out["m_zero_inf_only"] = self.m_zero_inf_only
        out["methods"] = dict(self.methods)
        if self.mc_standard_errors:
            out["mc_standard_errors"] = dict(self.mc_standard_errors)
        return out


# ---------------------------------------------------------------------------
# p-law expectations
# ---------------------------------------------------------------------------


def _gauss_legendre_01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def beta_p_expectation(law: BetaP, f, n_nodes: int = _QUAD_NODES):
    """E[f(p)] under Beta(alpha, beta_shape), with a doubling error check.

    Returns (value at 2*n_nodes, |difference| between n and 2n nodes).
    """
    a, b = law.alpha, law.beta_shape
    log_norm = sp_special.betaln(a, b)

    def quad(n):
        u, w = _gauss_legendre_01(n)
        p = u * u
        log_pdf = (a - 1.0) * np.log(p) + (b - 1.0) * np.log1p(-p) - log_norm
        return float(np.sum(w * f(p) * np.exp(log_pdf) * 2.0 * u))

    coarse = quad(n_nodes)
    fine = quad(2 * n_nodes)
    return fine, abs(fine - coarse)


def _rho_expectation(spec: EnvironmentSpec, f):
    """E[f(rho)]; returns (value, method, error_estimate)."""
    atoms = spec.p_law.atoms()
    if atoms is not None:
        val = math.fsum(w * f((1.0 - p) / p) for p, w in atoms)
        return val, "closed-form", 0.0
    if isinstance(spec.p_law, BetaP):
        val, err = beta_p_expectation(spec.p_law, lambda p: f((1.0 - p) / p))
        return val, "quadrature", err
    raise NotImplementedError(f"no analytic path for p law {spec.p_law!r}")


def mgf(spec: EnvironmentSpec, t: float) -> float:
    """Moment generating function of the odds ratio: E[rho^t], t in [0,2]."""
    if not (MGF_DOMAIN[0] <= t <= MGF_DOMAIN[1]):
        raise OutOfDomain(f"mgf defined on {MGF_DOMAIN}, got t={t}")
    atoms = spec.p_law.atoms()
    if atoms is not None:
        return math.fsum(w * ((1.0 - p) / p) ** t for p, w in atoms)
    val, _, _ = _rho_expectation(spec, lambda rho: rho**t)
    return val

def _mgf_slope(spec: EnvironmentSpec, t: float) -> float:
    """E[rho^t log rho], the derivative of the mgf."""
    atoms = spec.p_law.atoms()
    if atoms is not None:
        return math.fsum(
            w * ((1.0 - p) / p) ** t * math.log((1.0 - p) / p) for p, w in atoms
        )
    val, _, _ = _rho_expectation(
        spec, lambda rho: rho**t * np.log(rho)
    )
    return val


def solve_beta(spec: EnvironmentSpec, tol: float = DEFAULT_BETA_TOL, max_iter: int = 200):
    """Root beta of h(t) = E[rho^t log rho] on (0,1), and gamma = E[rho^beta].

    h is strictly increasing (h'(t) = E[rho^t (log rho)^2] > 0), so a
    bracketed bisection on [0,1] is exact and robust.  Requires the
    subcritical-but-heavy regime E[log rho] < 0 <= E[rho] - 1, which
    guarantees the sign change.
    """
    e_log_rho = _mgf_slope(spec, 0.0)
    e_rho = mgf(spec, 1.0)
    if not (e_log_rho < 0.0 and e_rho >= 1.0):
        raise RegimeMismatch(
            f"beta root needs E[log rho] < 0 and E[rho] >= 1, got {e_log_rho:.6g}, {e_rho:.6g}"
        )
    lo, hi = 0.0, 1.0
    h_lo, h_hi = e_log_rho, _mgf_slope(spec, 1.0)
    if not (h_lo < 0.0 < h_hi):
        raise RegimeMismatch("no sign change of E[rho^t log rho] on (0,1)")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        h_mid = _mgf_slope(spec, mid)
        if abs(h_mid) <= tol:
            return mid, mgf(spec, mid)
        if h_mid < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 0.0:
            break
    raise NoConvergence(f"beta bisection did not reach |h| <= {tol} in {max_iter} iterations")


# ---------------------------------------------------------------------------
# Monte Carlo fallback
# ---------------------------------------------------------------------------


def mc_moment_estimates(spec: EnvironmentSpec, budget: int, master_seed: int = 0) -> dict:
    """Sample-mean estimates {field: (value, standard_error)}.

    A fallback for laws without an analytic path, and an independent
    cross-check for laws with one.  An observed infinite atom makes the
    corresponding mean an exact infinity.
    """
    env = Environment(spec, master_seed)
    p, m = env.sites(np.arange(budget, dtype=np.int64))
    rho = (1.0 - p) / p

    def mean_se(samples):
        mean = float(np.mean(samples))
        se = float(np.std(samples, ddof=1) / math.sqrt(len(samples)))
        return mean, se

    out = {
        "e_log_rho": mean_se(np.log(rho)),
        "e_rho": mean_se(rho),
        "e_rho_inv": mean_se(1.0 / rho),
        "e_rho_sq": mean_se(rho * rho),
        "p_m_zero": mean_se((m == 0).astype(float)),
        "p_m_finite": mean_se((m != M_INF).astype(float)),
    }
    if np.any(m == M_INF):
        out["e_m"] = (math.inf, 0.0)
        out["e_log_m_plus"] = (math.inf, 0.0)
    else:
        log_plus = np.log(np.maximum(m, 1).astype(float))
        out["e_m"] = mean_se(m.astype(float))
        out["e_log_m_plus"] = mean_se(log_plus)
    return out


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------


def moment_report(
    spec: EnvironmentSpec,
    mc_budget: Optional[int] = None,
    master_seed: int = 0,
    beta_tol: float = DEFAULT_BETA_TOL,
) -> MomentReport:
    """Populate every functional the theorems consume.

    ``mc_budget`` only matters for law families without an analytic path;
    every built-in family has one.
    """
    methods: dict = {}
    mc_se: dict = {}

    def p_moment(name, f):
        try:
            val, how, err = _rho_expectation(spec, f)
            methods[name] = how
            if how == "quadrature":
                mc_se[name] = err
            return val
        except NotImplementedError:
            if mc_budget is None:
                raise
            val, se = mc_moment_estimates(spec, mc_budget, master_seed)[name]
            methods[name] = "monte-carlo"
            mc_se[name] = se
            return val

    e_log_rho = p_moment("e_log_rho", np.log)
    e_rho = p_moment("e_rho", lambda r: r)
    e_rho_inv = p_moment("e_rho_inv", lambda r: 1.0 / r)
    if isinstance(spec.p_law, BetaP) and spec.p_law.alpha <= 2.0:
        e_rho_sq = math.inf
        methods["e_rho_sq"] = "divergent"
    else:
        e_rho_sq = p_moment("e_rho_sq", lambda r: r * r)

    m_law = spec.m_law
    e_m = m_law.mean()
    e_log_m_plus = m_law.mean_log_plus()
    methods["e_m"] = "divergent" if e_m == math.inf else "closed-form"
    methods["e_log_m_plus"] = "divergent" if e_log_m_plus == math.inf else "closed-form"
    p_zero = m_p_zero(m_law)
    p_finite = 1.0 - m_law.p_inf()
    methods["p_m_zero"] = methods["p_m_finite"] = "closed-form"
    tail = m_law.tail_lambda()
    methods["tail_lambda"] = "divergent" if tail == math.inf else "closed-form"

    report = MomentReport(
        e_log_rho=e_log_rho,
        e_rho=e_rho,
        e_rho_inv=e_rho_inv,
        e_rho_sq=e_rho_sq,
        e_log_m_plus=e_log_m_plus,
        e_m=e_m,
        p_m_zero=p_zero,
        p_m_finite=p_finite,
        tail_lambda=tail,
        m_zero_inf_only=m_law.zero_inf_only(),
        methods=methods,
        mc_standard_errors=mc_se,
    )

    if e_log_rho < 0.0 and e_rho >= 1.0:
        beta, gamma = solve_beta(spec, tol=beta_tol)
        report.beta = beta
        report.gamma = gamma
        methods["beta"] = methods["gamma"] = "bisection"
    return report
