"""Environment model: joint law of (p_x, M_x) and its lazy i.i.d. realization.

A spec declares one law for the right-step probability p and one,
independent, law for the cookie count M (values in the nonnegative
integers plus an explicit infinity).  Sites are sampled on demand by
inverse CDF from keyed uniforms, so the environment over all of the
integers is a pure function of (spec, master_seed, x): no storage, any
access order, identical values on revisit.

All inverse CDFs are monotone in the underlying uniform.  Two specs whose
laws are stochastically ordered therefore yield pointwise-ordered
environments when sampled with the same master seed, which the simulation
modules exploit for coupled comparisons.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import special as sp_special

from .errors import (
    MalformedConfig,
    RejectMomentBlowup,
    RejectNoZeroCookies,
    RejectP1Half,
)
from .rng import MASK64, derive_key, uniform_array

# Cookie counts are carried as int64 in bulk arrays; -1 encodes infinity.
M_INF = -1
# Counts above this are unrepresentable and behaviorally infinite for any
# feasible walk length; heavy-tailed samplers clamp here.
_M_CLAMP = 1 << 62

_WEIGHT_TOL = 1e-12

_P_TAG = 0x70  # 'p'
_M_TAG = 0x6D  # 'm'


def _check_prob_open(p: float, name: str) -> None:
    if not (0.0 < p < 1.0):
        raise ValueError(f"{name} must lie strictly in (0,1), got {p!r}")


def _check_weights(ws, n_atoms: int) -> None:
    if n_atoms == 0:
        raise ValueError("finite PMF needs at least one atom")
    if any(w < 0 for w in ws):
        raise ValueError("weights must be nonnegative")
    total = math.fsum(ws)
    if abs(total - 1.0) > _WEIGHT_TOL:
        raise ValueError(f"weights must sum to 1 within {_WEIGHT_TOL}, got {total!r}")


# ---------------------------------------------------------------------------
# p laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantP:
    """Point mass: p_x = value at every site."""

    value: float

    kind = "constant"

    def __post_init__(self):
        _check_prob_open(self.value, "p")

    def atoms(self):
        return ((self.value, 1.0),)

    def inv_cdf(self, u: np.ndarray) -> np.ndarray:
        return np.full_like(u, self.value, dtype=np.float64)

    def params(self) -> dict:
        return {"value": self.value}


@dataclass(frozen=True)
class TwoPointP:
    """p_x = p_a with probability weight_a, else p_b."""

    p_a: float
    p_b: float
    weight_a: float

    kind = "two_point"

    def __post_init__(self):
        _check_prob_open(self.p_a, "p_a")
        _check_prob_open(self.p_b, "p_b")
        if not (0.0 <= self.weight_a <= 1.0):
            raise ValueError("weight_a must lie in [0,1]")

    def atoms(self):
        return ((self.p_a, self.weight_a), (self.p_b, 1.0 - self.weight_a))

    def inv_cdf(self, u: np.ndarray) -> np.ndarray:
        return np.where(u < self.weight_a, self.p_a, self.p_b).astype(np.float64)

    def params(self) -> dict:
        return {"p_a": self.p_a, "p_b": self.p_b, "weight_a": self.weight_a}


@dataclass(frozen=True)
class FinitePMFP:
    """Finitely many atoms (p_i, w_i); atoms are kept sorted by p."""

    entries: tuple

    kind = "finite_pmf"

    def __post_init__(self):
        entries = tuple(sorted((float(p), float(w)) for p, w in self.entries))
        object.__setattr__(self, "entries", entries)
        for p, _ in entries:
            _check_prob_open(p, "p atom")
        _check_weights([w for _, w in entries], len(entries))

    def atoms(self):
        return self.entries

    def inv_cdf(self, u: np.ndarray) -> np.ndarray:
        ps = np.array([p for p, _ in self.entries])
        cum = np.cumsum([w for _, w in self.entries])
        idx = np.minimum(np.searchsorted(cum, u, side="right"), len(ps) - 1)
        return ps[idx]

    def params(self) -> dict:
        return {"entries": [[p, w] for p, w in self.entries]}


@dataclass(frozen=True)
class BetaP:
    """p_x ~ Beta(alpha, beta_shape) on (0,1).

    The odds ratio rho = (1-p)/p has E[rho^2] < inf only for alpha > 2;
    that bound is enforced at spec validation, not here.
    """

    alpha: float
    beta_shape: float

    kind = "beta"

    def __post_init__(self):
        if self.alpha <= 0 or self.beta_shape <= 0:
            raise ValueError("Beta shape parameters must be positive")

    def atoms(self):
        return None

    def inv_cdf(self, u: np.ndarray) -> np.ndarray:
        return sp_special.betaincinv(self.alpha, self.beta_shape, u)

    def params(self) -> dict:
        return {"alpha": self.alpha, "beta_shape": self.beta_shape}


# ---------------------------------------------------------------------------
# m laws
# ---------------------------------------------------------------------------


def _as_count(m, name: str = "m") -> Union[int, float]:
    """Validate a cookie-count atom: a nonnegative integer or infinity."""
    if m == math.inf:
        return math.inf
    if isinstance(m, float) and not m.is_integer():
        raise ValueError(f"{name} must be a nonnegative integer or inf, got {m!r}")
    m = int(m)
    if m < 0:
        raise ValueError(f"{name} must be nonnegative, got {m!r}")
    return m


def _encode_m(m) -> int:
    return M_INF if m == math.inf else int(m)


@dataclass(frozen=True)
class ConstantM:
    """Point mass: M_x = value (a count or inf) at every site."""

    value: Union[int, float]

    kind = "constant"

    def __post_init__(self):
        object.__setattr__(self, "value", _as_count(self.value))

    def inv_cdf(self, u: np.ndarray) -> np.ndarray:
        return np.full(np.shape(u), _encode_m(self.value), dtype=np.int64)

    def p_zero(self) -> float:
        return 1.0 if self.value == 0 else 0.0

    def p_inf(self) -> float:
        return 1.0 if self.value == math.inf else 0.0

    def mean(self) -> float:
        return float(self.value)

    def mean_log_plus(self) -> float:
        if self.value == math.inf:
            return math.inf
        return math.log(self.value) if self.value > 1 else 0.0

    def tail_lambda(self) -> float:
        return math.inf if self.value == math.inf else 0.0

    def cdf_strict(self, x: float) -> float:
        return 1.0 if self.value < x else 0.0

    def zero_inf_only(self) -> bool:
        return self.value == 0 or self.value == math.inf

    def params(self) -> dict:
        return {"value": _inf_out(self.value)}


@dataclass(frozen=True)
class TwoPointWithInfinityM:
    """Mass p_zero at 0, p_inf at inf, remainder on finite positive atoms.

    ``remainder`` is a tuple of (m, w) pairs with finite m >= 1; the three
    masses must sum to 1.
    """

    p_zero: float
    p_infinity: float
    remainder: tuple = ()

    kind = "two_point_with_infinity"

    def __post_init__(self):
        rem = tuple(sorted((_as_count(m), float(w)) for m, w in self.remainder))
        object.__setattr__(self, "remainder", rem)
        for m, _ in rem:
            if m == 0 or m == math.inf:
                raise ValueError("remainder atoms must be finite and positive")
        if not (0.0 <= self.p_zero <= 1.0 and 0.0 <= self.p_infinity <= 1.0):
            raise ValueError("atom masses must lie in [0,1]")
        _check_weights(
            [self.p_zero, self.p_infinity] + [w for _, w in rem], 2 + len(rem)
        )

    def _table(self):
        ms = [0] + [m for m, _ in self.remainder] + [M_INF]
        ws = [self.p_zero] + [w for _, w in self.remainder] + [self.p_infinity]
        return np.array(ms, dtype=np.int64), np.array(ws)

    def inv_cdf(self, u: np.ndarray) -> np.ndarray:
        ms, ws = self._table()
        cum = np.cumsum(ws)
        idx = np.minimum(np.searchsorted(cum, u, side="right"), len(ms) - 1)
        return ms[idx]

    def p_inf(self) -> float:
        return self.p_infinity

    def mean(self) -> float:
        if self.p_infinity > 0:
            return math.inf
        return math.fsum(m * w for m, w in self.remainder)

    def mean_log_plus(self) -> float:
        if self.p_infinity > 0:
            return math.inf
        return math.fsum(math.log(m) * w for m, w in self.remainder if m > 1)

    def tail_lambda(self) -> float:
        return math.inf if self.p_infinity > 0 else 0.0

    def cdf_strict(self, x: float) -> float:
        total = self.p_zero if x > 0 else 0.0
        total += math.fsum(w for m, w in self.remainder if m < x)
        return total

    def zero_inf_only(self) -> bool:
        return not self.remainder

    def params(self) -> dict:
        return {
            "p_zero": self.p_zero,
            "p_infinity": self.p_infinity,
            "remainder": [[m, w] for m, w in self.remainder],
        }

    # keep attribute-style access uniform with the other laws
    def p_zero_mass(self) -> float:
        return self.p_zero


@dataclass(frozen=True)
class FinitePMFM:
    """Finitely many atoms (m_i, w_i) over counts and inf."""

    entries: tuple

    kind = "finite_pmf"

    def __post_init__(self):
        entries = tuple(
            sorted(
                ((_as_count(m), float(w)) for m, w in self.entries),
                key=lambda t: math.inf if t[0] == math.inf else t[0],
            )
        )
        object.__setattr__(self, "entries", entries)
        _check_weights([w for _, w in entries], len(entries))

    def inv_cdf(self, u: np.ndarray) -> np.ndarray:
        ms = np.array([_encode_m(m) for m, _ in self.entries], dtype=np.int64)
        cum = np.cumsum([w for _, w in self.entries])
        idx = np.minimum(np.searchsorted(cum, u, side="right"), len(ms) - 1)
        return ms[idx]

    def p_zero(self) -> float:
        return math.fsum(w for m, w in self.entries if m == 0)

    def p_inf(self) -> float:
        return math.fsum(w for m, w in self.entries if m == math.inf)

    def mean(self) -> float:
        if self.p_inf() > 0:
            return math.inf
        return math.fsum(m * w for m, w in self.entries)

    def mean_log_plus(self) -> float:
        if self.p_inf() > 0:
            return math.inf
        return math.fsum(math.log(m) * w for m, w in self.entries if m > 1)

    def tail_lambda(self) -> float:
        return math.inf if self.p_inf() > 0 else 0.0

    def cdf_strict(self, x: float) -> float:
        return math.fsum(w for m, w in self.entries if m < x)

    def zero_inf_only(self) -> bool:
        return all(m == 0 or m == math.inf for m, _ in self.entries)

    def params(self) -> dict:
        return {"entries": [[_inf_out(m), w] for m, w in self.entries]}


@dataclass(frozen=True)
class GeometricM:
    """P[M = k] = (1-q)^k q for k >= 0 (failures before a success)."""

    q: float

    kind = "geometric"

    def __post_init__(self):
        _check_prob_open(self.q, "q")

    def inv_cdf(self, u: np.ndarray) -> np.ndarray:
        # P[M >= k] = (1-q)^k, monotone increasing in u
        k = np.floor(np.log1p(-u) / math.log1p(-self.q))
        return np.minimum(k, _M_CLAMP).astype(np.int64)

    def p_zero(self) -> float:
        return self.q

    def p_inf(self) -> float:
        return 0.0

    def mean(self) -> float:
        return (1.0 - self.q) / self.q

    def mean_log_plus(self) -> float:
        # sum_{k>=2} log(k) (1-q)^k q, geometric decay
        total = 0.0
        term_base = self.q
        k = 2
        while True:
            block = np.arange(k, k + 4096)
            terms = np.log(block) * (1.0 - self.q) ** block * term_base
            total += terms.sum()
            if terms[-1] < 1e-18 * max(total, 1e-300):
                return total
            k += 4096

    def tail_lambda(self) -> float:
        return 0.0

    def cdf_strict(self, x: float) -> float:
        if x <= 0:
            return 0.0
        return 1.0 - (1.0 - self.q) ** math.ceil(x)

    def zero_inf_only(self) -> bool:
        return False

    def params(self) -> dict:
        return {"q": self.q}


@dataclass(frozen=True)
class LogHeavyTailM:
    """Heavy log-tail law: t * P[log M > t] -> lam.

    With probability p_zero the site has no cookies; otherwise
    M = floor(exp(lam_b / U)) with U uniform on (0,1) and
    lam_b = lam / (1 - p_zero), so the zero atom leaves the advertised
    tail constant unchanged.  E[(log M)_+] = E[M] = inf whenever lam > 0.
    Counts above 2**62 are clamped (no walk ever visits a site that often).
    """

    lam: float
    p_zero: float = 0.5

    kind = "log_heavy_tail"

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        _check_prob_open(self.p_zero, "p_zero")

    def _lam_branch(self) -> float:
        return self.lam / (1.0 - self.p_zero)

    def inv_cdf(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        heavy = u >= self.p_zero
        v = (u - self.p_zero) / (1.0 - self.p_zero)
        log_m = self._lam_branch() / np.maximum(1.0 - v, 1e-300)
        out = np.zeros(u.shape, dtype=np.int64)
        small = heavy & (log_m < 62.0 * math.log(2.0))
        out[small] = np.floor(np.exp(log_m[small])).astype(np.int64)
        out[heavy & ~small] = _M_CLAMP
        return out

    def p_inf(self) -> float:
        return 0.0

    def mean(self) -> float:
        return math.inf

    def mean_log_plus(self) -> float:
        return math.inf

    def tail_lambda(self) -> float:
        return self.lam

    def cdf_strict(self, x: float) -> float:
        if x <= 0:
            return 0.0
        if x <= 1:
            return self.p_zero
        # M < x iff floor(exp(lam_b/U)) <= ceil(x)-1 iff lam_b/U < log(ceil(x))
        y = math.log(math.ceil(x))
        lam_b = self._lam_branch()
        if y <= lam_b:
            return self.p_zero
        return self.p_zero + (1.0 - self.p_zero) * (1.0 - lam_b / y)

    def zero_inf_only(self) -> bool:
        return False

    def p_zero_mass(self) -> float:
        return self.p_zero

    def params(self) -> dict:
        return {"lam": self.lam, "p_zero": self.p_zero}


@dataclass(frozen=True)
class ParetoTailM:
    """Discrete power tail: P[M >= k] = (1 - p_zero) k^{-alpha} for k >= 1.

    With probability p_zero the site has no cookies; otherwise
    M = floor(U^{-1/alpha}).  E[M] = inf iff alpha <= 1 while
    E[(log M)_+] is finite for every alpha > 0 -- the regime with
    infinitely many cookies on average but tame log-counts.
    """

    alpha: float
    p_zero: float = 0.5

    kind = "pareto_tail"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        _check_prob_open(self.p_zero, "p_zero")

    def inv_cdf(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        heavy = u >= self.p_zero
        v = (u - self.p_zero) / (1.0 - self.p_zero)
        log_m = -np.log(np.maximum(1.0 - v, 1e-300)) / self.alpha
        out = np.zeros(u.shape, dtype=np.int64)
        small = heavy & (log_m < 62.0 * math.log(2.0))
        out[small] = np.floor(np.exp(log_m[small])).astype(np.int64)
        out[heavy & ~small] = _M_CLAMP
        return out

    def p_inf(self) -> float:
        return 0.0

    def mean(self) -> float:
        if self.alpha <= 1.0:
            return math.inf
        return (1.0 - self.p_zero) * float(sp_special.zeta(self.alpha, 1))

    def mean_log_plus(self) -> float:
        # sum_{k>=2} log(k) * w * (k^-a - (k+1)^-a) plus an integral tail bound
        a = self.alpha
        w = 1.0 - self.p_zero
        ks = np.arange(2, 200000, dtype=np.float64)
        partial = float(np.sum(np.log(ks) * (ks**-a - (ks + 1.0) ** -a)))
        kmax = 200000.0
        tail = (math.log(kmax) + 1.0 / a) * kmax**-a
        return w * (partial + tail)

    def tail_lambda(self) -> float:
        return 0.0

    def cdf_strict(self, x: float) -> float:
        if x <= 0:
            return 0.0
        if x <= 1:
            return self.p_zero
        k = math.ceil(x)  # M < x iff M <= k-1 iff not (M >= k)
        return self.p_zero + (1.0 - self.p_zero) * (1.0 - float(k) ** -self.alpha)

    def zero_inf_only(self) -> bool:
        return False

    def p_zero_mass(self) -> float:
        return self.p_zero

    def params(self) -> dict:
        return {"alpha": self.alpha, "p_zero": self.p_zero}


# TwoPointWithInfinityM/LogHeavyTailM/ParetoTailM expose p_zero as a field; the
# others as a method.  Normalize access:
def m_p_zero(m_law) -> float:
    p0 = m_law.p_zero
    return p0 if isinstance(p0, float) else p0()


P_LAWS = {cls.kind: cls for cls in (ConstantP, TwoPointP, FinitePMFP, BetaP)}
M_LAWS = {
    cls.kind: cls
    for cls in (
        ConstantM,
        TwoPointWithInfinityM,
        FinitePMFM,
        GeometricM,
        LogHeavyTailM,
        ParetoTailM,
    )
}


# ---------------------------------------------------------------------------
# Spec, assumptions, serialization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnvironmentSpec:
    """Declarative joint law of (p_0, M_0); p and M are independent per site.

    Direct construction performs structural validation only (weights,
    ranges).  :func:`make_spec` additionally enforces the standing
    assumptions and is the entry point for configuration documents;
    degenerate diagnostic laws (e.g. every site with infinitely many
    cookies) can be built directly when a test needs them.
    """

    p_law: object
    m_law: object

    def to_dict(self) -> dict:
        return {
            "p_law": {"kind": self.p_law.kind, "params": self.p_law.params()},
            "m_law": {"kind": self.m_law.kind, "params": self.m_law.params()},
        }

    def describe(self) -> str:
        d = self.to_dict()
        return f"p={d['p_law']['kind']}{d['p_law']['params']} m={d['m_law']['kind']}{d['m_law']['params']}"


def _inf_out(v):
    return "inf" if v == math.inf else v


def _inf_in(v):
    return math.inf if v == "inf" else v


def check_assumptions(spec: EnvironmentSpec) -> None:
    """Raise if the spec violates a standing assumption.

    Checks: the p law is not the point mass at 1/2; the cookie law puts
    positive mass on zero; E[rho^2] is finite (for Beta: alpha > 2).
    """
    atoms = spec.p_law.atoms()
    if atoms is not None:
        mass_half = math.fsum(w for p, w in atoms if p == 0.5)
        if mass_half >= 1.0 - _WEIGHT_TOL:
            raise RejectP1Half("p law is the point mass at 1/2")
    if isinstance(spec.p_law, BetaP) and spec.p_law.alpha <= 2.0:
        raise RejectMomentBlowup(
            f"E[rho^2] diverges for Beta alpha={spec.p_law.alpha} (need alpha > 2)"
        )
    if m_p_zero(spec.m_law) <= 0.0:
        raise RejectNoZeroCookies("cookie law has P[M=0] = 0")


def make_spec(config: dict) -> EnvironmentSpec:
    """Build and fully validate a spec from a configuration mapping.

    ``config`` must contain exactly the keys ``p_law`` and ``m_law``, each
    a mapping with exactly ``kind`` and ``params``.
    """
    if not isinstance(config, dict):
        raise MalformedConfig("spec config must be a mapping")
    extra = set(config) - {"p_law", "m_law"}
    missing = {"p_law", "m_law"} - set(config)
    if extra or missing:
        raise MalformedConfig(f"spec config keys: missing {missing or '{}'}, extra {extra or '{}'}")
    laws = []
    for field_name, registry in (("p_law", P_LAWS), ("m_law", M_LAWS)):
        entry = config[field_name]
        if not isinstance(entry, dict) or set(entry) != {"kind", "params"}:
            raise MalformedConfig(f"{field_name} must be a mapping with keys kind, params")
        kind = entry["kind"]
        if kind not in registry:
            raise MalformedConfig(f"unknown {field_name} kind {kind!r}")
        params = dict(entry["params"])
        if field_name == "m_law":
            params = _decode_m_params(kind, params)
        try:
            laws.append(registry[kind](**params))
        except (TypeError, ValueError) as exc:
            raise MalformedConfig(f"bad {field_name} params: {exc}") from exc
    p_law, m_law = laws
    spec = EnvironmentSpec(p_law=p_law, m_law=m_law)
    check_assumptions(spec)
    return spec


def _decode_m_params(kind: str, params: dict) -> dict:
    params = dict(params)
    if kind == "constant" and "value" in params:
        params["value"] = _inf_in(params["value"])
    for key in ("entries", "remainder"):
        if key in params:
            params[key] = tuple((_inf_in(m), w) for m, w in params[key])
    return params


def spec_from_dict(doc: dict) -> EnvironmentSpec:
    return make_spec(doc)


def load_spec(path) -> EnvironmentSpec:
    with open(path) as fh:
        return make_spec(json.load(fh))


def save_spec(spec: EnvironmentSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Realized environments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SiteEnvironment:
    """One site's right-step probability and cookie count."""

    p: float
    m: Union[int, float]  # count, or math.inf

    @property
    def rho(self) -> float:
        return (1.0 - self.p) / self.p


@dataclass(frozen=True)
class Environment:
    """Deterministic lazily-sampled i.i.d. environment over all integers.

    ``cookie_free_right`` forces M_x = 0 for x >= 1 (used by the
    left-speed estimator, which needs cookies only at the origin and
    below); p sampling is unaffected.
    """

    spec: EnvironmentSpec
    master_seed: int
    cookie_free_right: bool = False

    def _base(self, tag: int) -> int:
        return derive_key(self.master_seed & MASK64, tag)

    def sites(self, xs: np.ndarray) -> tuple:
        """Vectorized site access: (p array, m int64 array; -1 means inf)."""
        xs = np.asarray(xs, dtype=np.int64)
        up = uniform_array(self._base(_P_TAG), xs)
        um = uniform_array(self._base(_M_TAG), xs)
        p = self.spec.p_law.inv_cdf(up)
        m = self.spec.m_law.inv_cdf(um)
        if self.cookie_free_right:
            m = np.where(xs >= 1, 0, m)
        return p, m

    def site(self, x: int) -> SiteEnvironment:
        p, m = self.sites(np.array([x], dtype=np.int64))
        m_val = math.inf if m[0] == M_INF else int(m[0])
        return SiteEnvironment(p=float(p[0]), m=m_val)

    def without_cookies_right_of_origin(self) -> "Environment":
        return Environment(self.spec, self.master_seed, cookie_free_right=True)


def sample_site(spec: EnvironmentSpec, master_seed: int, x: int) -> SiteEnvironment:
    """Pure function of (spec, master_seed, x); see Environment.site."""
    return Environment(spec, master_seed).site(x)
