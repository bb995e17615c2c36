"""Large-deviation geometry checks and branching-process tail machinery.

Deterministic pieces: level sets of the rate function t ln 2 - x^2/(2t),
and two grid checkers that certify the region-inclusion / region-disjointness
implications used to convert level-set anomalies into hitting events.  The
checkers work on real-valued (t, position) grids plus the exact endpoint
reduction (the binding inequality is quadratic in t, so its maximum over an
interval sits at an endpoint), and report the minimum slack.

Stochastic pieces: the level-set growth-rate estimator and an inhomogeneous
Galton-Watson simulator with an exact distribution oracle and the
exponential upper-tail bound check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import (BudgetExceeded, DomainError, Extinct,
                     MomentConditionFailed, PreconditionViolated)
from .martingales import RegionSpec
from .model import LN2, ModelParams

BETA_C = math.sqrt(2.0 * LN2)


# ---------------------------------------------------------------------------
# rate-function level sets

@dataclass(frozen=True)
class RegionCurve:
    """Boundary of {(t, s): rate(n - t, L - s) = M} sampled at integer depths.

    Two symmetric branches s = L +- sqrt(2 (n-t) ((n-t) ln 2 - M)) wherever
    the radicand is nonnegative; depths without boundary are omitted.
    """

    region: RegionSpec
    depths: np.ndarray
    s_lower: np.ndarray
    s_upper: np.ndarray

    @property
    def empty(self) -> bool:
        return self.depths.size == 0


def region_boundary(region: RegionSpec) -> RegionCurve:
    depths = []
    lo = []
    hi = []
    for t in range(region.n):
        rem = region.n - t
        radicand = 2.0 * rem * (rem * LN2 - region.M)
        if radicand < 0.0:
            continue
        r = math.sqrt(radicand)
        depths.append(t)
        lo.append(region.L - r)
        hi.append(region.L + r)
    return RegionCurve(region=region, depths=np.asarray(depths, dtype=float),
                       s_lower=np.asarray(lo), s_upper=np.asarray(hi))


# ---------------------------------------------------------------------------
# implication checkers

@dataclass(frozen=True)
class CheckResult:
    """Verdict of one grid implication check.

    ok requires both a violation-free grid scan and the exact endpoint
    inequalities; margin is the smallest slack of the concluded inequality
    over the scanned region (strictly positive on a passing check).
    """

    ok: bool
    margin: float
    counterexample: Optional[tuple[float, float]]
    endpoints: dict


def _implication_scan(n: float, hypothesis: float, beta_prime: float,
                      half_weight: float, density: int) -> CheckResult:
    """Check: rate(t, L) >= hypothesis implies L <= beta_prime t - half_weight.

    Scans a density x density grid of (t, position), evaluates the binding
    boundary curve, and verifies the quadratic endpoint reduction exactly.
    """
    ts = np.linspace(1.0, n, density)
    lam_cap = n * BETA_C
    lams = np.linspace(-lam_cap, lam_cap, density)
    tt, ll = np.meshgrid(ts, lams, indexing="ij")
    phi = tt * LN2 - (ll * ll) / (2.0 * tt)
    sel = phi >= hypothesis
    rhs = beta_prime * tt - half_weight
    slack = rhs - ll
    margin = math.inf
    counter = None
    if sel.any():
        svals = slack[sel]
        margin = float(svals.min())
        if margin <= 0.0:
            i = int(np.argmin(np.where(sel, slack, math.inf)))
            counter = (float(tt.ravel()[i]), float(ll.ravel()[i]))
    # binding curve: the largest position satisfying the hypothesis at each t
    t_lo = hypothesis / LN2
    curve_ok = True
    for t in ts:
        rad = 2.0 * t * (t * LN2 - hypothesis)
        if rad < 0.0:
            continue
        lam_star = math.sqrt(rad)
        s = beta_prime * t - half_weight - lam_star
        margin = min(margin, float(s))
        if s <= 0.0 and counter is None:
            counter = (float(t), float(lam_star))
            curve_ok = False
    # exact endpoint reduction: quadratic in t, max at an endpoint of [t_lo, n]
    def quad(t: float) -> float:
        return ((2.0 * LN2 - beta_prime * beta_prime) * t * t
                - 2.0 * hypothesis * t + beta_prime * t * 2.0 * half_weight
                - half_weight * half_weight)

    vacuous = t_lo > n
    rhs_at_tlo = beta_prime * t_lo - half_weight
    endpoint_ok = vacuous or (rhs_at_tlo >= 0.0 and quad(t_lo) <= 0.0
                              and quad(n) <= 0.0)
    endpoints = {
        "t_lower": t_lo,
        "rhs_at_t_lower": rhs_at_tlo,
        "quad_at_t_lower": quad(min(t_lo, n)),
        "quad_at_n": quad(n),
        "vacuous": vacuous,
    }
    if vacuous:
        # no admissible (t, position) at all: the implication holds trivially
        return CheckResult(ok=True, margin=math.inf, counterexample=None,
                           endpoints=endpoints)
    ok = counter is None and curve_ok and endpoint_ok and margin > 0.0
    return CheckResult(ok=ok, margin=margin, counterexample=counter,
                       endpoints=endpoints)


def _require(cond: bool, name: str, detail: str) -> None:
    if not cond:
        raise PreconditionViolated(name, f"{name}: {detail}")


def check_region_inclusion(params: ModelParams, delta_rate: float, eps: float,
                           delta: float, n: int, k: int, ell: int, a: float,
                           density: int = 1000) -> CheckResult:
    """Certify the growth-event region inclusion on a real (t, position) grid.

    Hypothesis region: rate(t, L) >= (a - eps) n with 1 <= t <= n.
    Conclusion: L <= (beta - delta) t - (ell + k)/2.  The parameter
    constraints tie (eps, delta) to the growth margin delta_rate and pin
    (k, ell, a) to the admissible combinatorial ranges.
    """
    beta = params.beta
    _require(0.0 < eps < delta_rate / 4.0, "eps_range",
             f"need 0 < eps < delta_rate/4, got eps={eps}, delta_rate={delta_rate}")
    _require(abs(delta - 2.0 * math.sqrt(eps)) <= 1e-12 * max(1.0, delta),
             "delta_definition", f"delta must equal 2 sqrt(eps), got {delta}")
    _require(delta < beta / 2.0, "delta_small", f"need delta < beta/2, got {delta}")
    _require(3.0 * beta * delta <= delta_rate / 2.0 - eps, "delta_vs_rate",
             f"need 3 beta delta <= delta_rate/2 - eps")
    _require(3.0 * delta / beta <= (delta_rate / 2.0 - eps) / LN2, "delta_vs_rate_log",
             f"need 3 delta / beta <= (delta_rate/2 - eps)/ln 2")
    _require(1 <= k <= beta * n / 2.0, "k_range", f"need 1 <= k <= beta n/2, got {k}")
    _require(1 <= ell <= delta * n, "ell_range",
             f"need 1 <= ell <= delta n = {delta * n}, got {ell}")
    _require(ell + k >= delta * n, "ell_plus_k",
             f"need ell + k >= delta n = {delta * n}, got {ell + k}")
    a_lo = beta * k / n + (LN2 - 0.5 * beta * beta) + delta_rate / 2.0
    a_hi = LN2 - eps / 2.0
    _require(a_lo - 1e-12 <= a <= a_hi + 1e-12, "a_admissible",
             f"need a in [{a_lo}, {a_hi}], got {a}")
    j = a / (eps / 2.0)
    _require(abs(j - round(j)) <= 1e-6, "a_grid",
             f"a must be a multiple of eps/2 = {eps / 2.0}")
    return _implication_scan(float(n), (a - eps) * n, beta - delta,
                             (ell + k) / 2.0, density)


def check_region_disjoint(params: ModelParams, theta: float, eps: float,
                          delta: float, n: int, k: int, b: float,
                          density: int = 1000) -> CheckResult:
    """Certify the comparison-event region disjointness (as an inclusion).

    Hypothesis region: rate(t, L) >= b n + beta (k + delta n) - 3 eps n.
    Conclusion: L <= (beta - sqrt(eps)) t - (delta n + k)/2.
    """
    beta = params.beta
    _require(0.0 < theta < beta / 2.0, "theta_range",
             f"need 0 < theta < beta/2, got {theta}")
    beta_tilde = beta - theta
    _require(delta < theta, "delta_lt_theta",
             f"need delta < theta (so the shifted slope stays below beta)")
    _require(delta >= 4.0 * eps ** 0.25, "delta_vs_eps",
             f"need delta >= 4 eps^(1/4) = {4.0 * eps ** 0.25}, got {delta}")
    _require(beta * delta > 6.0 * eps, "beta_delta_eps",
             f"need beta delta > 6 eps")
    bound = min(params.phi_beta, LN2 / 2.0)
    _require(3.0 * eps + delta * LN2 / (beta - math.sqrt(eps)) < bound,
             "rate_budget", "need 3 eps + delta ln2/(beta - sqrt(eps)) below "
             "min(phi_beta, ln2/2)")
    lam = (beta_tilde + delta) ** 2 / (2.0 * beta)
    _require(1 <= k <= lam * n, "k_range",
             f"need 1 <= k <= lambda n = {lam * n}, got {k}")
    b_base = LN2 - 0.5 * (beta_tilde + delta) ** 2
    _require(b_base - 1e-12 <= b <= LN2 + 1e-12, "b_admissible",
             f"need b in [{b_base}, ln 2], got {b}")
    j = (b - b_base) / eps
    _require(abs(j - round(j)) <= 1e-6, "b_grid",
             f"b must equal {b_base} + j eps for integer j")
    hypothesis = b * n + beta * (k + delta * n) - 3.0 * eps * n
    return _implication_scan(float(n), hypothesis, beta - math.sqrt(eps),
                             (delta * n + k) / 2.0, density)


# ---------------------------------------------------------------------------
# level-set growth rate

@dataclass(frozen=True)
class BigginsRate:
    """Windowed-slope estimate of the a.s. growth rate of ln #{S_u > a g}."""

    a: float
    n: int
    estimate: float
    ci_lo: float
    ci_hi: float
    slopes: np.ndarray
    window: tuple[int, int]
    dropped: int

    @property
    def limit(self) -> float:
        """The almost-sure limit ln 2 - a^2/2 for a >= 0 (ln 2 for a < 0)."""
        return LN2 - 0.5 * self.a * self.a if self.a >= 0 else LN2


def biggins_rate(params: ModelParams, a: float, n: int, replicates: int,
                 seed: int = 0, threads: int = 1, window: int = 8,
                 bootstrap: int = 400) -> BigginsRate:
    """Estimate lim (1/g) ln #{|u|=g : S_u > a g} from per-generation counts.

    Uses the median over replicates of the least-squares slope of
    ln count over the trailing `window` generations; differencing kills the
    polynomial prefactor that biases the single-generation plug-in
    (1/n) ln count at desk-scale n.  Bootstrap percentile CI over
    replicates.  Raises Extinct when every replicate's window hits an empty
    level set.
    """
    _kernels.warmup()
    _kernels.set_threads(threads)
    if n < 3 or replicates < 1:
        raise DomainError("need n >= 3 and replicates >= 1")
    counts = np.empty((replicates, n + 1), dtype=np.int64)
    _kernels.level_rate_batch(np.uint64(seed & _kernels.MASK64), 0, replicates,
                              n, float(a), counts)
    k_lo = max(2, n - window + 1)
    ks = np.arange(k_lo, n + 1, dtype=float)
    slopes = []
    dropped = 0
    for i in range(replicates):
        row = counts[i, k_lo:n + 1]
        if (row <= 0).any():
            dropped += 1
            continue
        y = np.log(row.astype(float))
        xm = ks - ks.mean()
        slopes.append(float((xm * (y - y.mean())).sum() / (xm * xm).sum()))
    if not slopes:
        raise Extinct(f"all {replicates} replicates had empty level sets at a={a}")
    slopes = np.asarray(slopes)
    est = float(np.median(slopes))
    rng = np.random.Generator(np.random.Philox(key=seed ^ 0x62696767))
    meds = np.empty(bootstrap)
    for b in range(bootstrap):
        meds[b] = np.median(rng.choice(slopes, size=slopes.size, replace=True))
    lo, hi = np.percentile(meds, [2.5, 97.5])
    return BigginsRate(a=float(a), n=n, estimate=est, ci_lo=float(lo),
                       ci_hi=float(hi), slopes=slopes, window=(k_lo, n),
                       dropped=dropped)


# ---------------------------------------------------------------------------
# inhomogeneous Galton-Watson process

@dataclass(frozen=True)
class IGWSpec:
    """Per-generation offspring laws plus the tail-bound parameters.

    offspring[i] is the law of the brood size at generation i as
    ((value, prob), ...) with nonnegative integer values.  The exponential
    moment condition E[e^{lam nu_i}] <= e^{alpha lam m_i} is verified
    numerically for every generation at construction.
    """

    offspring: tuple[tuple[tuple[int, float], ...], ...]
    horizon: int
    ell: int
    alpha: float
    h: float
    lam: float
    means: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        if self.horizon < 1 or len(self.offspring) != self.horizon:
            raise DomainError("need one offspring law per generation")
        if self.ell < 1:
            raise DomainError("initial population must be >= 1")
        if self.alpha <= 1.0 or self.h <= 0.0 or self.lam <= 0.0:
            raise DomainError("need alpha > 1, h > 0, lam > 0")
        means = []
        for i, dist in enumerate(self.offspring):
            vals = np.array([v for v, _ in dist], dtype=np.int64)
            probs = np.array([p for _, p in dist], dtype=float)
            if (vals < 0).any() or (probs < 0).any():
                raise DomainError(f"generation {i}: negative value or probability")
            if abs(probs.sum() - 1.0) > 1e-9:
                raise DomainError(f"generation {i}: probabilities sum to {probs.sum()}")
            m = float((vals * probs).sum())
            # mean 0 (sure extinction) is allowed so dying laws are expressible
            if not 0.0 <= m < math.inf:
                raise DomainError(f"generation {i}: offspring mean must be finite")
            means.append(m)
            emom = float((probs * np.exp(self.lam * vals)).sum())
            if emom > math.exp(self.alpha * self.lam * m) * (1.0 + 1e-12):
                raise MomentConditionFailed(
                    i, f"generation {i}: E[e^(lam nu)] = {emom} exceeds "
                       f"e^(alpha lam m) = {math.exp(self.alpha * self.lam * m)}")
        object.__setattr__(self, "means", tuple(means))

    @property
    def max_support(self) -> int:
        """Largest reachable population: ell * prod(max offspring)."""
        s = self.ell
        for dist in self.offspring:
            s *= max(v for v, _ in dist)
        return s


def homogeneous_igw(dist, horizon: int, ell: int, alpha: float, h: float,
                    lam: float) -> IGWSpec:
    """Same offspring law at every generation."""
    d = tuple((int(v), float(p)) for v, p in dist)
    return IGWSpec(offspring=tuple(d for _ in range(horizon)), horizon=horizon,
                   ell=ell, alpha=alpha, h=h, lam=lam)


def igw_simulate(spec: IGWSpec, replicates: int, seed: int = 0,
                 cap: int = 10_000_000) -> tuple[np.ndarray, np.ndarray]:
    """R trajectories of the population at the horizon.

    Populations are clamped at `cap` with the cap_hit flag set; sampling is
    a vectorized binomial decomposition of the multinomial brood counts,
    deterministic given the seed.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    x = np.full(replicates, spec.ell, dtype=np.int64)
    cap_hit = np.zeros(replicates, dtype=bool)
    for dist in spec.offspring:
        vals = [v for v, _ in dist]
        probs = np.array([p for _, p in dist], dtype=float)
        remaining = x.copy()
        rem_p = 1.0
        nxt = np.zeros(replicates, dtype=np.int64)
        for j, v in enumerate(vals[:-1]):
            p = min(1.0, max(0.0, probs[j] / rem_p)) if rem_p > 0 else 0.0
            cnt = rng.binomial(remaining, p)
            nxt += v * cnt
            remaining -= cnt
            rem_p -= probs[j]
        nxt += vals[-1] * remaining
        over = nxt > cap
        if over.any():
            cap_hit |= over
            nxt[over] = cap
        x = nxt
    return x, cap_hit


@dataclass(frozen=True)
class IGWDistribution:
    """Exact law of the horizon population restricted to {0..cap}."""

    pmf: np.ndarray
    mass_above_cap: float
    cap: int

    def mean_below_cap(self) -> float:
        return float(np.dot(np.arange(self.pmf.size), self.pmf))


def igw_exact_dp(spec: IGWSpec, cap: int, budget: int = 1 << 22) -> IGWDistribution:
    """Exact distribution by generating-function composition on the circle.

    The horizon pgf is the generation-wise composition of the (tiny)
    offspring pgfs raised to the initial count; evaluating it at M-th roots
    of unity with M above the maximal reachable population and inverting
    with one FFT yields the full pmf with no aliasing, at roundoff-level
    error.
    """
    if cap < 0:
        raise DomainError("cap must be >= 0")
    support = spec.max_support
    if support + 1 > budget:
        raise BudgetExceeded(
            f"support {support} exceeds the DP budget {budget}")
    M = 1
    while M < support + 1:
        M <<= 1
    z = np.exp(-2j * np.pi * np.arange(M) / M)
    w = z
    for dist in reversed(spec.offspring):
        acc = np.zeros(M, dtype=complex)
        for v, p in dist:
            acc += p * w ** v
        w = acc
    w = w ** spec.ell
    pmf_full = np.fft.ifft(w).real
    np.clip(pmf_full, 0.0, None, out=pmf_full)
    # bins beyond the reachable support are provably zero: drop the roundoff
    pmf_full = pmf_full[:support + 1]
    upto = min(cap, support)
    pmf = pmf_full[:upto + 1].copy()
    mass_above = float(pmf_full[cap + 1:].sum()) if cap < support else 0.0
    return IGWDistribution(pmf=pmf, mass_above_cap=mass_above, cap=cap)


@dataclass(frozen=True)
class IGWBoundReport:
    """Exceedance probability vs the exponential upper bound.

    threshold = max(ell, (alpha+h)^n ell max_i prod_{j>=i} m_j); the bound
    asserts P(X_n >= threshold) <= n exp(-h ell lam/(alpha+h) + lam).
    """

    threshold: float
    lhs: float
    rhs: float
    ok: bool
    method: str


def igw_tail_bound_rhs(spec: IGWSpec) -> float:
    return spec.horizon * math.exp(
        -spec.h * spec.ell * spec.lam / (spec.alpha + spec.h) + spec.lam)


def igw_tail_threshold(spec: IGWSpec) -> float:
    best = 0.0
    for i in range(spec.horizon):
        prod = 1.0
        for j in range(i, spec.horizon):
            prod *= spec.means[j]
        best = max(best, prod)
    return max(float(spec.ell), (spec.alpha + spec.h) ** spec.horizon
               * spec.ell * best)


def igw_bound_check(spec: IGWSpec, budget: int = 1 << 22,
                    sim_replicates: int = 200_000, seed: int = 0) -> IGWBoundReport:
    """Evaluate both sides of the tail bound, exactly when the DP fits."""
    threshold = igw_tail_threshold(spec)
    rhs = igw_tail_bound_rhs(spec)
    t_int = math.ceil(threshold - 1e-12)
    try:
        support = spec.max_support
        if support + 1 > budget:
            raise BudgetExceeded("support exceeds DP budget")
        if t_int > support:
            lhs = 0.0
        else:
            dist = igw_exact_dp(spec, cap=support, budget=budget)
            lhs = float(dist.pmf[t_int:].sum()) + dist.mass_above_cap
        method = "dp"
    except BudgetExceeded:
        x, _ = igw_simulate(spec, sim_replicates, seed=seed)
        lhs = float((x >= t_int).mean())
        method = "simulation"
    return IGWBoundReport(threshold=threshold, lhs=lhs, rhs=rhs,
                          ok=lhs <= rhs + 1e-12, method=method)
