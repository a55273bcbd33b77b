"""Monte Carlo engine on cone charts and verifiers for the integral identities.

Integrals over the cone are pulled back through the chart ``(rho, off) ->
t t^T`` (or its dual-side analogue) and importance sampled; the chart
Jacobian is evaluated numerically by central finite differences, which at
dimension <= 7 costs little and avoids committing to a closed-form measure
convention.  Identity verification follows one pattern: evaluate the left
hand side at several probe points, divide by the claimed right hand shape,
and test that the ratios agree within combined standard errors.  Divergence
is detected on a geometric ladder of truncated regions.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import integrate as _sciint
from scipy import special as _special

from .cones import (
    ConeElement,
    ConeError,
    ConeSpec,
    SingularMinor,
    WeightVector,
    Qpow,
    Qstar_pow,
    batched_coords,
    batched_embed,
    batched_factor_matrices,
    batched_pivots,
)

__all__ = [
    "DivergenceDetected",
    "IntegralReport",
    "SiegelData",
    "builtin_siegel",
    "integrate_cone",
    "numeric_jacobian",
    "chart_points",
    "gamma_integral",
    "verify_integ",
    "verify_beta",
    "verify_J_alpha",
    "verify_J_alpha_lower",
    "verify_hermitian_form",
    "verify_prop_new1",
    "classify_I_alpha_beta",
    "calibrate_pairing",
    "default_dual_probes",
    "default_primal_probes",
    "batched_qpow",
    "batched_inner",
]


class DivergenceDetected(ConeError):
    """Nested truncation estimates grow without stabilizing."""


# ---------------------------------------------------------------------------
# reports


@dataclass
class IntegralReport:
    """Outcome of one ratio-constancy verification."""

    identity: str
    sample_points: list
    ratios: list                  # (estimate, stderr) per probe
    verdict: str                  # consistent | inconsistent | divergent
    samples_used: int
    runtime: float
    tolerance: float
    details: dict = field(default_factory=dict)

    def to_dict(self, include_runtime: bool = False) -> dict:
        doc = {
            "identity": self.identity,
            "sample_points": self.sample_points,
            "ratios": [{"estimate": r, "stderr": s} for (r, s) in self.ratios],
            "verdict": self.verdict,
            "samples_used": self.samples_used,
            "tolerance": self.tolerance,
            "details": self.details,
        }
        if include_runtime:
            doc["runtime"] = self.runtime
        return doc

    @property
    def spread(self) -> float:
        vals = [r for (r, _) in self.ratios if np.isfinite(r)]
        if len(vals) < 2:
            return 0.0
        lo, hi = min(vals), max(vals)
        mid = 0.5 * (lo + hi)
        return (hi - lo) / abs(mid) if mid != 0 else math.inf


def _ratio_verdict(ratios, tol) -> str:
    vals = np.array([r for (r, _) in ratios])
    errs = np.array([s for (_, s) in ratios])
    if not np.all(np.isfinite(vals)):
        return "inconsistent"
    for i in range(len(vals)):
        for j in range(i + 1, len(vals)):
            if abs(vals[i] - vals[j]) > 3.0 * (errs[i] + errs[j]) + tol * abs(vals[i]):
                return "inconsistent"
    mid = np.mean(vals)
    if mid == 0:
        return "inconsistent"
    spread = (vals.max() - vals.min()) / abs(mid)
    return "consistent" if spread < tol else "inconsistent"


# ---------------------------------------------------------------------------
# batched helpers


def batched_qpow(cone: ConeSpec, emb: np.ndarray, alpha, absolute: bool = False) -> np.ndarray:
    """prod_j pivot_j^{alpha_j} over a stack of (complexified) pattern matrices."""
    alpha = WeightVector.make(alpha, cone.r).as_floats()
    piv = batched_pivots(cone, emb)
    if np.iscomplexobj(piv) or absolute:
        mag = np.abs(piv)
        mag = np.maximum(mag, 1e-300)
        return np.exp(np.sum(alpha * np.log(mag), axis=-1))
    piv = np.maximum(piv, 1e-300)
    return np.exp(np.sum(alpha * np.log(piv), axis=-1))


def batched_inner(cone: ConeSpec, coords_a: np.ndarray, coords_b: np.ndarray) -> np.ndarray:
    """Pairing of coordinate stacks, using the cone's diagonal-block weights."""
    g = _gram_vector(cone)
    return np.sum(coords_a * coords_b * g, axis=-1)


def _gram_vector(cone: ConeSpec) -> np.ndarray:
    g = np.empty(cone.n)
    for j in range(cone.r):
        g[j] = cone.block_dims[j] * cone.pairing_weights[j]
    g[cone.r:] = 2.0
    return g


def chart_points(cone: ConeSpec, rho: np.ndarray, off: np.ndarray, side: str = "primal") -> np.ndarray:
    """Map chart parameters to pattern coordinates (batched)."""
    T = batched_factor_matrices(cone, rho, off)
    if side == "primal":
        M = T @ np.swapaxes(T, -1, -2)
    else:
        M = np.swapaxes(T, -1, -2) @ T
    return batched_coords(cone, M)


def numeric_jacobian(cone: ConeSpec, rho: np.ndarray, off: np.ndarray,
                     side: str = "primal", rel_step: float = 1e-5) -> np.ndarray:
    """|det D(chart)| by central finite differences, batched over rows."""
    theta = np.concatenate([rho, off], axis=-1)
    B, n = theta.shape
    if n != cone.n:
        raise ValueError("chart dimension mismatch")
    Jcols = np.empty((B, cone.n, n))
    for i in range(n):
        h = rel_step * (np.abs(theta[:, i]) + 1.0)
        tp = theta.copy()
        tm = theta.copy()
        tp[:, i] += h
        tm[:, i] -= h
        cp = chart_points(cone, tp[:, : cone.r], tp[:, cone.r:], side)
        cm = chart_points(cone, tm[:, : cone.r], tm[:, cone.r:], side)
        Jcols[:, :, i] = (cp - cm) / (2.0 * h)[:, None]
    return np.abs(np.linalg.det(Jcols))


# ---------------------------------------------------------------------------
# proposals


class _Batches:
    """Accumulates batch means for a Monte Carlo estimate."""

    def __init__(self):
        self.means = []

    def add(self, values: np.ndarray):
        self.means.append(float(np.mean(values)))

    def result(self):
        m = np.array(self.means)
        est = float(np.mean(m))
        se = float(np.std(m, ddof=1) / math.sqrt(len(m))) if len(m) > 1 else math.inf
        return est, se


def _sample_gamma_chart(cone, rng, batch, shapes, rate):
    """Q_j ~ Gamma(shape_j)/(d_j * rate), off ~ N(0, 1/(2 rate)); returns rho, off, logpdf."""
    d = np.array(cone.block_dims, dtype=float)
    rates = d * rate
    g = rng.gamma(np.broadcast_to(shapes, (batch, cone.r))) / rates
    rho = np.sqrt(g)
    sig = math.sqrt(1.0 / (2.0 * rate))
    off = rng.normal(0.0, sig, size=(batch, cone.n - cone.r))
    logpdf = np.zeros(batch)
    for j in range(cone.r):
        a = shapes[j]
        logpdf += (a * math.log(rates[j]) - math.lgamma(a)
                   + (a - 1.0) * np.log(g[:, j]) - rates[j] * g[:, j])
        logpdf += np.log(2.0 * rho[:, j])      # dQ -> drho
    if cone.n > cone.r:
        logpdf += np.sum(-0.5 * (off / sig) ** 2 - math.log(sig * math.sqrt(2 * math.pi)), axis=1)
    return rho, off, logpdf


def _student_logpdf(x, df, scale):
    z = x / scale
    return (_special.gammaln((df + 1) / 2) - _special.gammaln(df / 2)
            - 0.5 * math.log(df * math.pi) - np.log(scale)
            - (df + 1) / 2 * np.log1p(z * z / df))


def _sample_heavy_chart(cone, rng, batch, log_scale=2.5, off_scale=2.0, df=3.0, center=None):
    """log Q_j ~ scaled Student-t, off-diagonal entries rho-scaled Student-t."""
    z = rng.standard_t(df, size=(batch, cone.r)) * log_scale
    u = z if center is None else z + np.asarray(center)[None, :]
    rho = np.exp(0.5 * u)
    logpdf = np.sum(_student_logpdf(z, df, log_scale), axis=1)
    # d(logQ) -> drho : logQ = 2 log rho, so density gains 2/rho
    logpdf += np.sum(np.log(2.0 / rho), axis=1)
    off = np.empty((batch, cone.n - cone.r))
    for k, (bi, bj, ri, ci) in enumerate(cone.off_positions):
        s = off_scale * rho[:, bi - 1]          # row-block scale
        off[:, k] = rng.standard_t(df, size=batch) * s
        logpdf += _student_logpdf(off[:, k], df, s)
    return rho, off, logpdf


def _sample_ladder_chart(cone, rng, batch, level, off_cap):
    """log Q_j uniform on the level box, multiplicative off-diagonal box."""
    L = level * math.log(2.0)
    u = rng.uniform(-L, L, size=(batch, cone.r))
    rho = np.exp(0.5 * u)
    logpdf = np.full(batch, -cone.r * math.log(2.0 * L))
    logpdf += np.sum(np.log(2.0 / rho), axis=1)
    off = np.empty((batch, cone.n - cone.r))
    for k, (bi, bj, ri, ci) in enumerate(cone.off_positions):
        s = off_cap * rho[:, bi - 1]
        off[:, k] = rng.uniform(-1.0, 1.0, size=batch) * s
        logpdf += -np.log(2.0 * s)
    return rho, off, logpdf


# ---------------------------------------------------------------------------
# the generic integrator


def integrate_cone(cone: ConeSpec, f: Callable, samples: int = 200_000,
                   strategy: str = "gamma", seed: int = 0, side: str = "primal",
                   shapes=None, rate: float = 1.0, heavy_scales=(2.5, 2.0),
                   heavy_center=None, batches: int = 25, check_divergence: bool = False,
                   ladder_levels=(2, 3, 4, 5, 6)):
    """Importance-sampled integral of ``f`` over the cone (or its dual).

    ``f(coords, emb) -> values`` receives batched pattern coordinates and
    embedded matrices.  Returns (estimate, stderr).  With
    ``check_divergence`` a truncation ladder runs first and raises
    DivergenceDetected if the per-level estimates keep growing.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if check_divergence:
        levels, growing = _ladder_estimates(cone, f, rng, side=side, levels=ladder_levels)
        if growing:
            raise DivergenceDetected(f"truncation ladder grows: {levels}")
    if shapes is None:
        shapes = np.full(cone.r, 1.5)
    acc = _Batches()
    per = max(samples // batches, 1)
    for _ in range(batches):
        if strategy == "gamma":
            rho, off, logpdf = _sample_gamma_chart(cone, rng, per, np.asarray(shapes, float), rate)
        elif strategy == "heavy":
            rho, off, logpdf = _sample_heavy_chart(cone, rng, per, *heavy_scales, center=heavy_center)
        else:
            raise ValueError(f"unknown strategy {strategy!r}")
        coords = chart_points(cone, rho, off, side)
        emb = batched_embed(cone, coords)
        jac = numeric_jacobian(cone, rho, off, side)
        vals = f(coords, emb) * jac * np.exp(-logpdf)
        acc.add(vals)
    return acc.result()


def _ladder_verdict(ests, growth: float = 1.5) -> bool:
    """True when a nested-truncation sequence keeps growing.

    Fires on the geometric rule (two consecutive jumps beyond ``growth``) or,
    for slow logarithmic rates, on monotone growth with non-shrinking
    increments.
    """
    if any(not math.isfinite(v) for v in ests):
        return True
    consec = 0
    for a, b in zip(ests, ests[1:]):
        if a > 0 and b > growth * a:
            consec += 1
            if consec >= 2:
                return True
        else:
            consec = 0
    inc = [b - a for a, b in zip(ests, ests[1:])]
    if all(d > 0 for d in inc) and ests[-1] > 1.25 * ests[0]:
        if min(inc) > 0.4 * max(inc):
            return True
    return False


def _ladder_estimates(cone, f, rng, side="primal", levels=(2, 3, 4, 5, 6),
                      per_level=20_000, growth=1.5):
    ests = []
    for k in levels:
        rho, off, logpdf = _sample_ladder_chart(cone, rng, per_level, k, off_cap=2.0 ** (k / 2.0))
        coords = chart_points(cone, rho, off, side)
        emb = batched_embed(cone, coords)
        jac = numeric_jacobian(cone, rho, off, side)
        vals = f(coords, emb) * jac * np.exp(-logpdf)
        ests.append(float(np.mean(vals)))
    return ests, _ladder_verdict(ests, growth)


# ---------------------------------------------------------------------------
# probe helpers


def default_primal_probes(cone: ConeSpec, k: int = 3, seed: int = 11, spread: float = 0.35):
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    out = []
    from .cones import random_element
    for _ in range(k):
        out.append(random_element(cone, rng, log_spread=spread, off_spread=spread / 2))
    return out


def default_dual_probes(cone: ConeSpec, k: int = 3, seed: int = 13, spread: float = 0.35):
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    out = []
    from .cones import random_element
    for _ in range(k):
        out.append(random_element(cone, rng, side="dual", log_spread=spread, off_spread=spread / 2))
    return out


def _probe_label(p) -> list:
    if isinstance(p, ConeElement):
        return [float(c) for c in p.coords_float]
    if isinstance(p, tuple):
        return [_probe_label(q) for q in p]
    if isinstance(p, np.ndarray):
        return np.asarray(p).ravel().astype(complex).real.tolist()
    return [float(p)]


# ---------------------------------------------------------------------------
# the gamma integral


def gamma_integral(cone: ConeSpec, nu, samples: int = 200_000, seed: int = 0):
    """The defining integral at the identity probe; raises on divergence."""
    nu = WeightVector.make(nu, cone.r)
    nfl = nu.as_floats()
    margins = nfl - np.array(cone.m) / 2.0
    e = cone.identity()
    ec = e.coords_float

    def f(coords, emb):
        expo = np.exp(-batched_inner(cone, coords, ec))
        tau = np.array([float(t) for t in cone.tau])
        return expo * batched_qpow(cone, batched_embed(cone, coords), nfl - tau)

    if np.any(margins <= 0):
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        ests, growing = _ladder_estimates(cone, f, rng)
        raise DivergenceDetected(
            f"gamma integral diverges for nu={list(map(str, nu))}: ladder {ests}")
    shapes = np.maximum(margins, 0.3)
    return integrate_cone(cone, f, samples=samples, seed=seed, strategy="gamma", shapes=shapes)


# ---------------------------------------------------------------------------
# identity verifiers


def _finish_report(identity, probes, ratios, verdict, samples, t0, tol, details):
    return IntegralReport(
        identity=identity,
        sample_points=[_probe_label(p) for p in probes],
        ratios=ratios,
        verdict=verdict,
        samples_used=samples,
        runtime=time.perf_counter() - t0,
        tolerance=tol,
        details=details,
    )


def verify_integ(cone: ConeSpec, nu, probes=None, samples: int = 400_000,
                 seed: int = 0, tol: float = 0.05) -> IntegralReport:
    """Laplace-type integral against Q^{nu - tau}: ratio to (Q*)^{-nu} at each probe."""
    t0 = time.perf_counter()
    nu = WeightVector.make(nu, cone.r)
    nfl = nu.as_floats()
    tau = np.array([float(t) for t in cone.tau])
    probes = probes if probes is not None else default_dual_probes(cone)
    margins = nfl - np.array(cone.m) / 2.0

    def make_f(xi_coords):
        def f(coords, emb):
            return np.exp(-batched_inner(cone, coords, xi_coords)) * batched_qpow(cone, emb, nfl - tau)
        return f

    if np.any(margins <= 0):
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        ests, growing = _ladder_estimates(cone, make_f(probes[0].coords_float), rng)
        verdict = "divergent" if growing else "inconsistent"
        return _finish_report("integ", probes, [], verdict, 0, t0, tol,
                              {"ladder": ests, "reason": "nu_j <= m_j/2"})

    ratios = []
    for i, xi in enumerate(probes):
        lam = float(np.min(np.linalg.eigvalsh(xi.embedded_float)))
        est, se = integrate_cone(cone, make_f(xi.coords_float), samples=samples,
                                 seed=seed + 101 * i, strategy="gamma",
                                 shapes=np.maximum(margins, 0.3), rate=lam)
        rhs = Qstar_pow(-nfl, xi)
        ratios.append((est / rhs, se / rhs))
    verdict = _ratio_verdict(ratios, tol)
    return _finish_report("integ", probes, ratios, verdict, samples * len(probes), t0, tol, {})


def verify_beta(cone: ConeSpec, mu, nu, probes=None, samples: int = 400_000,
                seed: int = 0, tol: float = 0.05) -> IntegralReport:
    """Shifted power integral Q^mu(y+v) Q^{nu-tau}(y) dy against Q^{mu+nu}(v)."""
    t0 = time.perf_counter()
    mu = WeightVector.make(mu, cone.r)
    nu = WeightVector.make(nu, cone.r)
    mfl, nfl = mu.as_floats(), nu.as_floats()
    tau = np.array([float(t) for t in cone.tau])
    probes = probes if probes is not None else default_primal_probes(cone)
    ok = np.all(nfl - np.array(cone.m) / 2.0 > 0) and np.all(
        mfl + nfl + np.array(cone.nvec) / 2.0 < 0)

    def make_f(v_emb):
        def f(coords, emb):
            return batched_qpow(cone, emb + v_emb, mfl) * batched_qpow(cone, emb, nfl - tau)
        return f

    if not ok:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        ests, growing = _ladder_estimates(cone, make_f(probes[0].embedded_float), rng)
        verdict = "divergent" if growing else "inconsistent"
        return _finish_report("beta", probes, [], verdict, 0, t0, tol,
                              {"ladder": ests, "reason": "parameters outside the region"})

    ratios = []
    for i, v in enumerate(probes):
        center = np.log(np.maximum(batched_pivots(cone, v.embedded_float[None])[0], 1e-12))
        est, se = integrate_cone(cone, make_f(v.embedded_float), samples=samples,
                                 seed=seed + 101 * i, strategy="heavy",
                                 heavy_scales=(1.8, 1.5), heavy_center=center)
        rhs = Qpow(mfl + nfl, v.as_float())
        ratios.append((est / rhs, se / rhs))
    verdict = _ratio_verdict(ratios, tol)
    return _finish_report("beta", probes, ratios, verdict, samples * len(probes), t0, tol, {})


def _sample_flat(rng, batch, n, df, scales):
    x = rng.standard_t(df, size=(batch, n)) * scales
    logpdf = np.zeros(batch)
    for k in range(n):
        logpdf += _student_logpdf(x[:, k], df, scales[k])
    return x, logpdf


def verify_J_alpha(cone: ConeSpec, alpha, probes=None, samples: int = 400_000,
                   seed: int = 0, tol: float = 0.05) -> IntegralReport:
    """Absolute complex power integral over V against Q^{-alpha + tau}(y)."""
    t0 = time.perf_counter()
    alpha = WeightVector.make(alpha, cone.r)
    afl = alpha.as_floats()
    tau = np.array([float(t) for t in cone.tau])
    probes = probes if probes is not None else default_primal_probes(cone)
    ok = np.all(afl > 1.0 + np.array(cone.nvec) + np.array(cone.m) / 2.0)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    scales = np.full(cone.n, 1.0)

    def lhs_values(y_emb, x_coords):
        Z = y_emb - 1j * batched_embed(cone, x_coords)
        return batched_qpow(cone, Z, -afl, absolute=True)

    if not ok:
        # ladder over growing slabs |x|_inf <= 2^k
        y0 = probes[0].embedded_float
        ests = []
        for k in (2, 3, 4, 5, 6):
            cap = 2.0 ** k
            x = rng.uniform(-cap, cap, size=(40_000, cone.n))
            vol = (2 * cap) ** cone.n
            ests.append(vol * float(np.mean(lhs_values(y0, x))))
        verdict = "divergent" if _ladder_verdict(ests) else "inconsistent"
        return _finish_report("J_alpha", probes, [], verdict, 0, t0, tol,
                              {"ladder": ests, "reason": "alpha at or below threshold"})

    ratios = []
    nb = 25
    per = max(samples // nb, 1)
    for i, y in enumerate(probes):
        rng_i = np.random.default_rng(np.random.SeedSequence(seed + 17 * i))
        sc = scales * (1.0 + np.linalg.norm(y.embedded_float))
        acc = _Batches()
        for _ in range(nb):
            x, logpdf = _sample_flat(rng_i, per, cone.n, df=2.0, scales=sc)
            acc.add(lhs_values(y.embedded_float, x) * np.exp(-logpdf))
        est, se = acc.result()
        rhs = Qpow(-afl + tau, y.as_float())
        ratios.append((est / rhs, se / rhs))
    verdict = _ratio_verdict(ratios, tol)
    return _finish_report("J_alpha", probes, ratios, verdict, samples * len(probes), t0, tol, {})


def verify_J_alpha_lower(cone: ConeSpec, alpha, probes=None, samples: int = 200_000,
                         seed: int = 0, radii=(0.5, 0.75, 1.0)) -> IntegralReport:
    """Truncated absolute power integral bounded below by Q^{-alpha + tau}(y)."""
    t0 = time.perf_counter()
    alpha = WeightVector.make(alpha, cone.r)
    afl = alpha.as_floats()
    tau = np.array([float(t) for t in cone.tau])
    if probes is None:
        probes = [cone.identity().scale(s) for s in (0.2, 0.1, 0.05)]
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    ratios = []
    mono = []
    unit = math.pi ** (cone.n / 2.0) / math.gamma(cone.n / 2.0 + 1.0)  # unit-ball volume
    Rmax = max(radii)
    for i, y in enumerate(probes):
        y_emb = y.embedded_float
        # one point cloud in the largest ball; sub-radius estimates share it so
        # the truncation monotonicity is exact
        z = rng.normal(size=(samples, cone.n))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        rr = Rmax * rng.uniform(size=(samples, 1)) ** (1.0 / cone.n)
        x = z * rr
        Z = y_emb - 1j * batched_embed(cone, x)
        vals = batched_qpow(cone, Z, -afl, absolute=True)
        vol_max = unit * Rmax ** cone.n
        per_radius = []
        for R in radii:
            inside = (rr[:, 0] <= R)
            per_radius.append(vol_max * float(np.sum(vals[inside])) / samples)
        mono.append(per_radius)
        ratios.append((per_radius[-1] / Qpow(-afl + tau, y.as_float()), 0.0))
    lower = min(r for (r, _) in ratios)
    monotone = all(a <= b * (1 + 1e-9) for row in mono for a, b in zip(row, row[1:]))
    verdict = "consistent" if (lower > 0 and monotone) else "inconsistent"
    return _finish_report("J_alpha_lower", probes, ratios, verdict, samples * len(probes),
                          t0, 0.0, {"lower_bound": lower, "monotone": monotone,
                                    "per_radius": mono})


# ---------------------------------------------------------------------------
# Siegel data (rank-one models and the trivial m = 0 case)


@dataclass(frozen=True)
class SiegelData:
    """Hermitian-form data F on C^m with values in the cone's coordinates."""

    cone: ConeSpec
    m: int
    b: WeightVector
    H_forms: np.ndarray      # (n, m, m) Hermitian

    def F(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Batched form values as pattern coordinates, complex in general."""
        u = np.atleast_2d(u)
        v = np.atleast_2d(v)
        vals = np.einsum("bi,kij,bj->bk", u, self.H_forms, np.conj(v))
        return vals

    def F_self(self, u: np.ndarray) -> np.ndarray:
        return np.real(self.F(u, u))

    def validate(self, rng=None, samples: int = 64) -> None:
        if self.m == 0:
            return
        rng = np.random.default_rng(3) if rng is None else rng
        u = rng.normal(size=(samples, self.m)) + 1j * rng.normal(size=(samples, self.m))
        vals = self.F_self(u)
        emb = batched_embed(self.cone, vals)
        ev = np.linalg.eigvalsh(emb)
        if np.min(ev) < -1e-10:
            raise ConeError("F(u,u) leaves the closed cone")
        norms = np.linalg.norm(vals, axis=1)
        if np.any((np.linalg.norm(u, axis=1) > 1e-6) & (norms < 1e-12)):
            raise ConeError("F(u,u) = 0 with u != 0")


def builtin_siegel(cone: ConeSpec, m: int) -> SiegelData:
    """m = 0 for any cone; rank-one cones admit arbitrary m with b = (m)."""
    if m == 0:
        return SiegelData(cone, 0, WeightVector.make(0, cone.r), np.zeros((cone.n, 0, 0)))
    if cone.r != 1:
        raise ConeError("built-in Hermitian forms with m > 0 exist for rank-one cones only")
    H = np.zeros((cone.n, m, m), dtype=complex)
    H[0] = np.eye(m)
    sd = SiegelData(cone, m, WeightVector.make(m, 1), H)
    sd.validate()
    return sd


def verify_hermitian_form(sd: SiegelData, probes=None, samples: int = 300_000,
                          seed: int = 0, tol: float = 0.05) -> IntegralReport:
    """Gaussian-type integral of e^{-(F(u,u)|xi)} against (Q*)^{-b}(xi)."""
    t0 = time.perf_counter()
    cone = sd.cone
    probes = probes if probes is not None else default_dual_probes(cone)
    if sd.m == 0:
        ratios = [(1.0, 0.0) for _ in probes]
        return _finish_report("hermitian_form", probes, ratios, "consistent", 0, t0, tol,
                              {"note": "m=0, empty product"})
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    nb = 25
    per = max(samples // nb, 1)
    ratios = []
    for i, xi in enumerate(probes):
        xc = xi.coords_float
        lam = float(np.min(np.linalg.eigvalsh(xi.embedded_float)))
        sig = math.sqrt(1.0 / max(lam, 1e-6))
        acc = _Batches()
        for _ in range(nb):
            u = (rng.normal(0, sig, size=(per, sd.m)) + 1j * rng.normal(0, sig, size=(per, sd.m))) / math.sqrt(2)
            # density over R^{2m}: each real coordinate is N(0, sig^2 / 2)
            logpdf = (-np.sum(np.abs(u) ** 2, axis=1) / (sig ** 2)
                      - 2 * sd.m * math.log(sig * math.sqrt(math.pi)))
            vals = np.exp(-batched_inner(cone, sd.F_self(u), xc))
            acc.add(vals * np.exp(-logpdf))
        est, se = acc.result()
        rhs = Qstar_pow(-sd.b.as_floats(), xi)
        ratios.append((est / rhs, se / rhs))
    verdict = _ratio_verdict(ratios, tol)
    return _finish_report("hermitian_form", probes, ratios, verdict, samples * len(probes), t0, tol, {})


def verify_prop_new1(sd: SiegelData, lam, probes=None, samples: int = 300_000,
                     seed: int = 0, tol: float = 0.05) -> IntegralReport:
    """Power-kernel integral over C^m against Q^{-lambda+b}(y - F(u,u))."""
    t0 = time.perf_counter()
    cone = sd.cone
    lam = WeightVector.make(lam, cone.r)
    lfl = lam.as_floats()
    if probes is None:
        if sd.m == 0:
            probes = [(y, np.zeros(0)) for y in default_primal_probes(cone)]
        else:
            base = default_primal_probes(cone, k=2)
            probes = [(base[0].scale(2.0), np.zeros(sd.m)),
                      (base[0].scale(3.0), 0.5 * np.ones(sd.m)),
                      (base[1].scale(2.5), 0.25 * np.ones(sd.m))]
    ok = np.all(lfl - sd.b.as_floats() - np.array(cone.nvec) / 2.0 > 0)
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    def lhs(y_el, u, s):
        arg = y_el.coords_float[None, :] + sd.F_self(s) - 2.0 * np.real(sd.F(np.broadcast_to(u, s.shape), s))
        return batched_qpow(cone, batched_embed(cone, arg), -lfl)

    if not ok:
        y0, u0 = probes[0]
        ests = []
        for k in (2, 3, 4, 5, 6):
            cap = 2.0 ** k
            s = (rng.uniform(-cap, cap, size=(20_000, sd.m))
                 + 1j * rng.uniform(-cap, cap, size=(20_000, sd.m)))
            vol = (2 * cap) ** (2 * sd.m)
            ests.append(vol * float(np.mean(lhs(y0, u0, s))))
        verdict = "divergent" if _ladder_verdict(ests) else "inconsistent"
        return _finish_report("prop_kernel", probes, [], verdict, 0, t0, tol,
                              {"ladder": ests, "reason": "lambda at or below threshold"})

    nb = 25
    per = max(samples // nb, 1)
    ratios = []
    for i, (y, u) in enumerate(probes):
        rng_i = np.random.default_rng(np.random.SeedSequence(seed + 31 * i))
        acc = _Batches()
        if sd.m == 0:
            val = batched_qpow(cone, y.embedded_float[None], -lfl)[0]
            rhs = Qpow(-lfl + sd.b.as_floats(), y.as_float())
            ratios.append((val / rhs, 0.0))
            continue
        for _ in range(nb):
            sre, lp1 = _sample_flat(rng_i, per, sd.m, 3.0, np.full(sd.m, 2.0))
            sim, lp2 = _sample_flat(rng_i, per, sd.m, 3.0, np.full(sd.m, 2.0))
            s = (sre + np.real(u)) + 1j * (sim + np.imag(u))
            vals = lhs(y, u, s)
            acc.add(vals * np.exp(-(lp1 + lp2)))
        est, se = acc.result()
        diffc = y.coords_float - sd.F_self(np.atleast_2d(u))[0]
        diff = ConeElement(cone, diffc)
        rhs = Qpow(-lfl + sd.b.as_floats(), diff)
        ratios.append((est / rhs, se / rhs))
    verdict = _ratio_verdict(ratios, tol)
    return _finish_report("prop_kernel", probes, ratios, verdict, samples * len(probes), t0, tol, {})


# ---------------------------------------------------------------------------
# the weighted dual-side convergence classifier


def _dual_radial_integral(alpha_j: float, extra: float, d: float, lower: float,
                          beta: float | None = None) -> float:
    """integral over rho in (lower, inf) of rho^{2 alpha_j + extra} (1+|2 log rho|)^beta e^{-d rho^2}.

    The piece below rho = 1 is computed in the variable w = -log rho, which
    removes the endpoint singularity; ``lower = 0`` asks for the full
    integral and is only valid when it converges.
    """

    def g(rho):
        val = rho ** (2.0 * alpha_j + extra) * math.exp(-d * rho * rho)
        if beta is not None:
            val *= (1.0 + abs(2.0 * math.log(rho))) ** beta
        return val

    def g_log(w):
        # rho = e^{-w}; includes the Jacobian e^{-w}
        val = math.exp(-w * (2.0 * alpha_j + extra + 1.0) - d * math.exp(-2.0 * w))
        if beta is not None:
            val *= (1.0 + 2.0 * w) ** beta
        return val

    if lower >= 1.0:
        return _sciint.quad(g, lower, np.inf, limit=200)[0]
    W = np.inf if lower == 0.0 else -math.log(lower)
    lo, _ = _sciint.quad(g_log, 0.0, W, limit=400)
    hi, _ = _sciint.quad(g, 1.0, np.inf, limit=200)
    return lo + hi


def classify_I_alpha_beta(cone: ConeSpec, alpha, beta, levels=tuple(range(2, 11)),
                          r2_threshold: float = 0.99) -> dict:
    """Convergence classification of the weighted dual-cone integral.

    The integrand is (Q*)^alpha (1 + |log Q*_r|)^beta e^{-(xi|e)} over the
    dual realization; the log factor rides on the last index, the one with
    m_r = 0.  Classification is exact index arithmetic; the evidence is a
    ladder of truncated integrals, computed by product quadrature in the
    dual chart, fitted against the predicted growth law.
    """
    alpha = WeightVector.make(alpha, cone.r)
    beta = _as_float_or_fraction(beta)
    r = cone.r
    afl = alpha.as_floats()
    a_r = alpha[r - 1]
    # exact classification
    head_ok = all(afl[j] > -cone.m[j] / 2.0 - 1.0 for j in range(r - 1))
    if isinstance(a_r, Fraction):
        tail_converges = a_r > -1 or (a_r == -1 and _lt(beta, -1))
    else:
        tail_converges = a_r > -1 or (a_r == -1 and float(beta) < -1)
    analytic = "converges" if (head_ok and tail_converges) else "diverges"

    # evidence ladder: truncate Q*_r = rho_r^2 >= eps_k
    d = np.array(cone.block_dims, dtype=float)
    head = 1.0
    if head_ok:
        for j in range(r - 1):
            head *= _dual_radial_integral(afl[j], 1.0 + cone.m[j], d[j], 0.0)
    head *= math.pi ** ((cone.n - cone.r) / 2.0) * 2.0 ** cone.r
    values = []
    for k in levels:
        eps = 2.0 ** (-k)
        tail = _dual_radial_integral(afl[r - 1], 1.0 + cone.m[r - 1], d[r - 1],
                                     math.sqrt(eps), beta=float(beta))
        values.append(head * tail)
    if not head_ok:
        growing = True
        return {
            "classification": analytic,
            "alpha": [str(a) for a in alpha],
            "beta": str(beta),
            "evidence": {"note": "head index diverges; ladder keyed to the last index only"},
            "evidence_agrees": True,
        }
    values = np.array(values)
    ks = np.array(levels, dtype=float)
    logs = ks * math.log(2.0)         # log(1/eps_k)

    if analytic == "converges":
        total = head * _dual_radial_integral(afl[r - 1], 1.0 + cone.m[r - 1],
                                             d[r - 1], 0.0, beta=float(beta))
        gaps = total - values
        shrinking = bool(np.all(np.diff(gaps) < 0)) and gaps[-1] < 0.5 * gaps[0]
        evidence = {"levels": list(levels), "values": values.tolist(),
                    "limit": float(total),
                    "stabilized": bool(shrinking and gaps[-1] < 0.2 * total),
                    "last_rel_gap": float(gaps[-1] / total)}
        agree = evidence["stabilized"]
        fit = None
    else:
        bfl = float(beta)
        if afl[r - 1] < -1.0:
            model = "power"
            x = (2.0 ** (-ks)) ** (afl[r - 1] + 1.0)
        elif bfl > -1.0:
            model = "log_power"
            x = (1.0 + logs) ** (bfl + 1.0)
        else:  # a_r == -1, beta == -1: iterated logarithm
            model = "log_log"
            x = np.log1p(logs)
        r2 = _linear_r2(x, values)
        r2_loglinear = _linear_r2(logs, values)
        fit = {"model": model, "r2": r2, "r2_loglinear": r2_loglinear}
        growing = bool(np.all(np.diff(values) > 0))
        evidence = {"levels": list(levels), "values": values.tolist(),
                    "growing": growing, "fit": fit}
        agree = growing and r2 > r2_threshold
    return {
        "classification": analytic,
        "alpha": [str(a) for a in alpha],
        "beta": str(beta),
        "evidence": evidence,
        "evidence_agrees": bool(agree),
    }


def _as_float_or_fraction(v):
    if isinstance(v, (Fraction, int)):
        return Fraction(v)
    if isinstance(v, str):
        return Fraction(v)
    return float(v)


def _lt(a, b) -> bool:
    return (a < b) if isinstance(a, Fraction) else (float(a) < float(b))


def _linear_r2(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        return 1.0
    return 1.0 - ss_res / ss_tot


# ---------------------------------------------------------------------------
# pairing calibration


def calibrate_pairing(cone: ConeSpec, samples: int = 150_000, seed: int = 5,
                      tol: float = 0.05) -> dict:
    """Confirm the diagonal-block pairing weights by ratio constancy.

    The Laplace-type identity is the oracle: with correctly weighted pairing
    the probe ratios agree to Monte Carlo precision.  Returns the weight
    table and the measured spread; raises if the default weights fail.
    """
    nu = WeightVector.make([Fraction(m, 2) + 1 for m in cone.m], cone.r)
    rep = verify_integ(cone, nu, samples=samples, seed=seed, tol=tol)
    if rep.verdict != "consistent":
        raise ConeError(f"pairing calibration failed on {cone.name}: spread {rep.spread:.3f}")
    return {"weights": list(cone.pairing_weights), "spread": rep.spread,
            "verdict": rep.verdict}
