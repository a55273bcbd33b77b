"""Exact rational arithmetic for the boundedness conditions and index ranges.

Everything here is computed in ``fractions.Fraction``; no floating point
enters.  Ranges are open intervals with rational endpoints, possibly empty or
unbounded, and empty ranges are ordinary values (the non-selfdual rank-3 cone
with its critical weight produces one).

Indices with a vanishing lower block dimension contribute +infinity to the
minima (and nothing to the maxima): the constraint is void there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .cones import ConeSpec, WeightVector

__all__ = [
    "POS_INF",
    "ParamSet",
    "Interval",
    "IndexReport",
    "conjugate",
    "a_nu",
    "c_nu",
    "sharp_range_tube",
    "main_result_check",
    "S_conditions",
    "bergman_parameters",
    "mixed_range",
    "result3_range",
    "rational",
    "format_rational",
]

POS_INF = "inf"     # serialized form of an unbounded endpoint


def rational(v) -> Fraction:
    """Parse ints, Fractions and 'a/b' strings; floats are rejected."""
    if isinstance(v, Fraction):
        return v
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, str):
        return Fraction(v)
    raise TypeError(f"expected an exact rational, got {v!r}")


def format_rational(v) -> str:
    if v is None:
        return POS_INF
    f = Fraction(v)
    return f"{f.numerator}/{f.denominator}" if f.denominator != 1 else str(f.numerator)


def _exact_weights(w, rank) -> tuple:
    wv = WeightVector.make(w, rank)
    if not wv.is_exact:
        raise TypeError("index arithmetic requires exact rational weights")
    return tuple(wv.entries)


def conjugate(q: Fraction) -> Fraction:
    """The conjugate exponent q' = q / (q - 1)."""
    q = rational(q)
    if q <= 1:
        raise ValueError("conjugation needs q > 1")
    return q / (q - 1)


@dataclass(frozen=True)
class Interval:
    """Open interval with exact endpoints; ``hi = None`` means unbounded."""

    lo: Fraction
    hi: Optional[Fraction]

    @property
    def empty(self) -> bool:
        return self.hi is not None and self.lo >= self.hi

    def contains(self, q) -> bool:
        q = rational(q)
        if self.empty:
            return False
        return q > self.lo and (self.hi is None or q < self.hi)

    def to_dict(self) -> dict:
        if self.empty:
            return {"empty": True, "lo": format_rational(self.lo), "hi": format_rational(self.hi)}
        return {"empty": False, "lo": format_rational(self.lo), "hi": format_rational(self.hi)}


@dataclass
class IndexReport:
    name: str
    range: Optional[Interval]
    per_j: list = field(default_factory=list)
    satisfied: Optional[bool] = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {"name": self.name, "per_j": self.per_j}
        if self.range is not None:
            doc["range"] = self.range.to_dict()
        if self.satisfied is not None:
            doc["satisfied"] = self.satisfied
        doc.update(self.extras)
        return doc


@dataclass(frozen=True)
class ParamSet:
    """The full exponent data of one operator instance.

    ``p`` is carried to mirror the statements but never enters the range
    arithmetic (the ranges are p-independent).
    """

    cone: ConeSpec
    alpha: tuple
    beta: tuple
    gamma: tuple
    nu: tuple
    mu: tuple
    b: tuple
    p: Fraction = Fraction(2)
    q: Fraction = Fraction(2)
    s: Fraction = Fraction(2)

    @classmethod
    def make(cls, cone: ConeSpec, alpha=0, beta=0, gamma=0, nu=1, mu=None, b=0,
             p=2, q=2, s=None) -> "ParamSet":
        r = cone.r
        nu_t = _exact_weights(nu, r)
        return cls(
            cone=cone,
            alpha=_exact_weights(alpha, r),
            beta=_exact_weights(beta, r),
            gamma=_exact_weights(gamma, r),
            nu=nu_t,
            mu=_exact_weights(mu, r) if mu is not None else nu_t,
            b=_exact_weights(b, r),
            p=rational(p),
            q=rational(q),
            s=rational(s) if s is not None else rational(q),
        )

    def __post_init__(self):
        if self.q > self.s:
            raise ValueError("need q <= s")
        for w in (self.alpha, self.beta, self.gamma, self.nu, self.mu, self.b):
            if len(w) != self.cone.r:
                raise ValueError("weight length must equal the rank")


def bergman_parameters(cone: ConeSpec, nu, b=0) -> dict:
    """The specialization alpha = 0, beta = nu - b/2 - tau, gamma = nu."""
    r = cone.r
    nu = _exact_weights(nu, r)
    b = _exact_weights(b, r)
    beta = tuple(nu[j] - b[j] / 2 - cone.tau[j] for j in range(r))
    return {"alpha": (Fraction(0),) * r, "beta": beta, "gamma": nu}


# ---------------------------------------------------------------------------
# the index quantities


def a_nu(cone: ConeSpec, nu) -> Optional[Fraction]:
    """1 + min over j of (nu_j - m_j/2) / (n_j/2); None encodes +infinity."""
    nu = _exact_weights(nu, cone.r)
    best = None
    for j in range(cone.r):
        if nu[j] <= Fraction(cone.m[j], 2):
            raise ValueError(f"nu_{j + 1} must exceed m_j/2")
        if cone.nvec[j] == 0:
            continue
        val = (nu[j] - Fraction(cone.m[j], 2)) / Fraction(cone.nvec[j], 2)
        best = val if best is None else min(best, val)
    return None if best is None else 1 + best


def c_nu(cone: ConeSpec, nu) -> Optional[Fraction]:
    """1 + min over j of nu_j / (n_j/2); None encodes +infinity."""
    nu = _exact_weights(nu, cone.r)
    best = None
    for j in range(cone.r):
        if nu[j] <= 0:
            raise ValueError(f"nu_{j + 1} must be positive")
        if cone.nvec[j] == 0:
            continue
        val = nu[j] / Fraction(cone.nvec[j], 2)
        best = val if best is None else min(best, val)
    return None if best is None else 1 + best


def sharp_range_tube(cone: ConeSpec, nu) -> IndexReport:
    """The two-sided exponent range for the positive operator on the tube."""
    nu = _exact_weights(nu, cone.r)
    lo = Fraction(1)
    hi = None
    per_j = []
    for j in range(cone.r):
        if nu[j] <= Fraction(cone.m[j], 2):
            raise ValueError(f"nu_{j + 1} must exceed m_j/2")
        if cone.nvec[j] == 0:
            per_j.append({"j": j + 1, "lower": None, "upper": None})
            continue
        nj2 = Fraction(cone.nvec[j], 2)
        lower = 1 + nj2 / nu[j]
        upper = 1 + nu[j] / nj2
        lo = max(lo, lower)
        hi = upper if hi is None else min(hi, upper)
        per_j.append({"j": j + 1,
                      "lower": format_rational(lower),
                      "upper": format_rational(upper)})
    return IndexReport("sharp_range_tube", Interval(lo, hi), per_j)


def main_result_check(ps: ParamSet, direction: str) -> IndexReport:
    """The displayed conditions of the two-weight boundedness statement.

    ``direction`` selects the global scalar balance: the sufficiency side
    carries the per-index scaling identity, the necessity side the absolute
    one.  All inequalities are strict.
    """
    cone = ps.cone
    r = cone.r
    nu, mu, b, q, s = ps.nu, ps.mu, ps.b, ps.q, ps.s
    if direction not in ("necessary", "sufficient"):
        raise ValueError("direction must be 'necessary' or 'sufficient'")
    per_j = []
    all_ok = True
    for j in range(r):
        if nu[j] <= Fraction(cone.m[j] + 0, 2) + b[j] / 2:
            raise ValueError(f"nu_{j + 1} must exceed (m_j + b_j)/2")
        nj2 = Fraction(cone.nvec[j], 2)
        cond_q = (q > 1) and (nj2 == 0 or q < 1 + (nu[j] + b[j] / 2) / nj2)
        lo_mu = Fraction(cone.m[j], 2) + b[j] / 2
        hi_mu = s * (nu[j] + b[j] / 2) - nj2 - b[j] / 2
        cond_mu = lo_mu < mu[j] < hi_mu
        checks = {"j": j + 1, "q_window": cond_q, "mu_window": cond_mu}
        if direction == "sufficient":
            scaling = (nu[j] + b[j] / 2) / q == (mu[j] + b[j] / 2) / s
            checks["scaling"] = scaling
            ok = cond_q and cond_mu and scaling
        else:
            ok = cond_q and cond_mu
        checks["ok"] = ok
        all_ok = all_ok and ok
        per_j.append(checks)
    extras = {}
    if direction == "necessary":
        lhs = (sum(nu, Fraction(0)) + Fraction(3, 2) * sum(b, Fraction(0))) / q
        rhs = (sum(mu, Fraction(0)) + Fraction(3, 2) * sum(b, Fraction(0))) / s + sum(b, Fraction(0))
        extras["global_balance"] = lhs == rhs
        all_ok = all_ok and (lhs == rhs)
    return IndexReport(f"main_result_{direction}", None, per_j, satisfied=all_ok, extras=extras)


def S_conditions(ps: ParamSet) -> IndexReport:
    """Per-index feasibility of the kernel-operator boundedness conditions.

    Reports the balance equality, the two q-side and two s-side strict
    inequalities for every index, the positivity hypothesis, and the scalar
    homogeneity identity that the scaling argument forces.
    """
    cone = ps.cone
    r = cone.r
    a, be, g = ps.alpha, ps.beta, ps.gamma
    nu, mu, b, q, s = ps.nu, ps.mu, ps.b, ps.q, ps.s
    qp = conjugate(q)
    per_j = []
    all_ok = True
    for j in range(r):
        tau = cone.tau[j]
        mj2 = Fraction(cone.m[j], 2)
        nj2 = Fraction(cone.nvec[j], 2)
        hyp = (nu[j] + b[j] / 2) / qp + (mu[j] + b[j] / 2) / s > 0
        balance = g[j] == a[j] + be[j] + tau + b[j] / 2 - (nu[j] + b[j] / 2) / q + (mu[j] + b[j] / 2) / s
        c1a_first = q * (be[j] - g[j] + tau + nj2 + b[j] / 2) - nj2 - b[j] / 2 < nu[j]
        c1a_second = q * (be[j] + tau - mj2) + mj2 + b[j] / 2 > nu[j]
        c2a = (mj2 - s * a[j] + b[j] / 2 < mu[j]) and (mu[j] < s * (g[j] - a[j] + b[j] / 2) - nj2 - b[j] / 2)
        ok = hyp and balance and c1a_first and c1a_second and c2a
        all_ok = all_ok and ok
        per_j.append({"j": j + 1, "hypothesis": hyp, "balance": balance,
                      "q_first": c1a_first, "q_second": c1a_second,
                      "s_window": c2a, "ok": ok})
    tot = lambda w: sum(w, Fraction(0))
    homogeneity_residual = tot(g) - (tot(a) + tot(be) + tot(cone.tau) + Fraction(3, 2) * tot(b)
                                     - (tot(nu) + Fraction(3, 2) * tot(b)) / q
                                     + (tot(mu) + Fraction(3, 2) * tot(b)) / s)
    extras = {
        "homogeneity_residual": format_rational(homogeneity_residual),
        "bergman_specialization": {k: [format_rational(v) for v in vals]
                                   for k, vals in bergman_parameters(cone, nu, b).items()},
    }
    return IndexReport("S_conditions", None, per_j, satisfied=all_ok, extras=extras)


def mixed_range(cone: ConeSpec, nu, b=0) -> IndexReport:
    """The symmetric interval around 2 from the mixed-norm necessity bound."""
    r = cone.r
    nu = _exact_weights(nu, r)
    b = _exact_weights(b, r)
    best = None
    per_j = []
    for j in range(r):
        if nu[j] <= Fraction(cone.m[j], 2) + b[j] / 2:
            raise ValueError(f"nu_{j + 1} must exceed (m_j + b_j)/2")
        if cone.nvec[j] == 0:
            per_j.append({"j": j + 1, "term": None})
            continue
        val = (nu[j] + b[j] / 2) / Fraction(cone.nvec[j], 2)
        per_j.append({"j": j + 1, "term": format_rational(val)})
        best = val if best is None else min(best, val)
    if best is None:
        return IndexReport("mixed_range", Interval(Fraction(1), None), per_j)
    hi = 2 * (1 + best)
    return IndexReport("mixed_range", Interval(conjugate(hi), hi), per_j)


def result3_range(cone: ConeSpec, nu, b=0) -> IndexReport:
    """The interpolated sufficiency interval, along with its two indices."""
    r = cone.r
    nu = _exact_weights(nu, r)
    b = _exact_weights(b, r)
    qv = None
    qbar = None
    for j in range(r):
        if nu[j] <= Fraction(cone.m[j], 2) + b[j] / 2:
            raise ValueError(f"nu_{j + 1} must exceed (m_j + b_j)/2")
        if cone.nvec[j] == 0:
            continue
        nj2 = Fraction(cone.nvec[j], 2)
        t1 = (nu[j] - Fraction(cone.m[j], 2) - b[j] / 2) / nj2
        t2 = (nu[j] + b[j] / 2) / nj2
        qv = t1 if qv is None else min(qv, t1)
        qbar = t2 if qbar is None else min(qbar, t2)
    if qv is None:
        return IndexReport("result3_range", Interval(Fraction(1), None), [],
                           extras={"q_nu": POS_INF, "qbar_nu": POS_INF})
    q_nu = 1 + qv
    qbar_nu = 1 + qbar
    hi = qbar_nu - qbar_nu / q_nu + 2
    return IndexReport("result3_range", Interval(conjugate(hi), hi), [],
                       extras={"q_nu": format_rational(q_nu),
                               "qbar_nu": format_rational(qbar_nu)})
