"""Replicated Monte Carlo campaigns and the statistics built on them.

A campaign fans replicate streams across a worker pool, writes every
replicate's (W, Z) into its own slot, and aggregates in replicate order, so
tables are byte-reproducible for any thread count.  Downstream estimators
(tail curves, exponent fits, moment tables, the band-tilted lower bound)
are pure functions of the persisted samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .engine import BandSchedule, SimSpec, _schedule_arrays
from .errors import BudgetExceeded, DomainError, EmptyWindow
from .io_utils import write_csv
from .model import ModelParams, band, band_mass

#: replicate-count ceiling for one in-memory campaign
MAX_REPLICATES = 50_000_000

#: total increment draws allowed per campaign (R * 2^{n+1})
MAX_DRAWS = 1 << 38

_Z95 = 1.959963984540054

DEFAULT_X_GRID = (-4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0)
DEFAULT_K_MAX = 6


# ---------------------------------------------------------------------------
# campaigns

@dataclass(frozen=True)
class CampaignConfig:
    """One campaign: parameters, horizon(s), replicate count, base seed.

    `horizons` selects the generations whose (W, Z) snapshots are recorded;
    it defaults to the final horizon only.  All horizons share one tree
    traversal per replicate, so recording more generations costs little.
    """

    params: ModelParams
    horizon: int
    replicates: int
    seed: int
    x: float = 0.0
    horizons: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.replicates < 1:
            raise DomainError("campaign needs at least one replicate")
        if self.replicates > MAX_REPLICATES:
            raise BudgetExceeded(f"{self.replicates} replicates exceed the budget")
        if self.horizon < 1:
            raise DomainError("campaign horizon must be >= 1")
        if self.horizon > 40 or self.replicates * (1 << (self.horizon + 1)) > MAX_DRAWS:
            raise BudgetExceeded(
                f"campaign needs {self.replicates} x 2^{self.horizon + 1} draws, "
                f"over the {MAX_DRAWS} budget")
        hs = tuple(sorted(set(self.horizons or (self.horizon,))))
        if hs[-1] > self.horizon or hs[0] < 0:
            raise DomainError("recorded horizons must lie within [0, horizon]")
        object.__setattr__(self, "horizons", hs)


@dataclass
class SampleSet:
    """Per-replicate snapshots of one campaign; columns indexed by horizon."""

    config: CampaignConfig
    W: np.ndarray  # shape (R, H)
    Z: np.ndarray  # shape (R, H)

    def column(self, n: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
        n = self.config.horizon if n is None else n
        try:
            j = self.config.horizons.index(n)
        except ValueError:
            raise DomainError(f"generation {n} was not recorded") from None
        return self.W[:, j], self.Z[:, j]


def run_campaign(config: CampaignConfig, threads: int = 1,
                 out_dir=None, name: str = "campaign") -> SampleSet:
    """Simulate R replicates; deterministic given the base seed.

    With out_dir set, persists the snapshot CSV (one row per replicate and
    recorded generation, stream ids included for replay); the CLI layer
    adds the run manifest.
    """
    _kernels.warmup()
    _kernels.set_threads(threads)
    R = config.replicates
    n = config.horizon
    beta = config.params.beta
    seed = np.uint64(config.seed & _kernels.MASK64)
    hs = config.horizons
    flags = np.zeros(R, dtype=np.uint8)
    if hs == (n,):
        w = np.empty(R)
        z = np.empty(R)
        trunc = np.zeros(n + 1, dtype=np.uint8)
        zero = np.zeros(n + 1)
        _kernels.wz_horizon_batch(seed, 0, R, n, beta, trunc, zero, zero, zero,
                                  zero, w, z, flags)
        W = w[:, None]
        Z = z[:, None]
    else:
        col = np.full(n + 1, -1, dtype=np.int64)
        for j, d in enumerate(hs):
            col[d] = j
        W = np.empty((R, len(hs)))
        Z = np.empty((R, len(hs)))
        _kernels.wz_multi_horizon_batch(seed, 0, R, n, beta, col, W, Z, flags)
    if flags.any():
        raise DomainError("martingale term exponent exceeded the overflow guard")
    samples = SampleSet(config=config, W=W, Z=Z)
    if out_dir is not None:
        persist_samples(samples, out_dir, name)
    return samples


def persist_samples(samples: SampleSet, out_dir, name: str) -> list[str]:
    """Snapshot CSV: (seed, replicate, n, x, W, Z [, Z_shifted])."""
    from pathlib import Path

    cfg = samples.config
    out = Path(out_dir)
    csv_path = out / f"{name}_samples.csv"
    shifted = cfg.x != 0.0
    header = ["seed", "replicate", "n", "x", "W", "Z"]
    if shifted:
        header.append("Z_shifted")
    ebx = math.exp(cfg.params.beta * cfg.x)

    def rows():
        for i in range(cfg.replicates):
            for j, nn in enumerate(cfg.horizons):
                row = [cfg.seed, i, nn, float(cfg.x),
                       float(samples.W[i, j]), float(samples.Z[i, j])]
                if shifted:
                    row.append(float(ebx * (samples.Z[i, j] - cfg.x * samples.W[i, j])))
                yield row

    write_csv(csv_path, header, rows())
    return [str(csv_path)]


def statistic(samples: SampleSet, name: str, n: Optional[int] = None,
              x: float = 0.0) -> np.ndarray:
    """Per-replicate statistic column: W, Z, D (=-Z), ratio, or Z_shifted."""
    W, Z = samples.column(n)
    if name == "W":
        return W.copy()
    if name == "Z":
        return Z.copy()
    if name == "D":
        return -Z
    if name == "ratio":
        return Z / W
    if name == "Z_shifted":
        beta = samples.config.params.beta
        return math.exp(beta * x) * (Z - x * W)
    raise DomainError(f"unknown statistic {name!r}")


# ---------------------------------------------------------------------------
# survival curves and exponent fits

def wilson_interval(hits: int, total: int) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if total <= 0:
        raise DomainError("Wilson interval needs a positive sample count")
    z2 = _Z95 * _Z95
    p = hits / total
    denom = 1.0 + z2 / total
    center = (p + z2 / (2 * total)) / denom
    half = _Z95 * math.sqrt(p * (1 - p) / total + z2 / (4 * total * total)) / denom
    lo = 0.0 if hits == 0 else max(0.0, center - half)
    hi = 1.0 if hits == total else min(1.0, center + half)
    return lo, hi


@dataclass(frozen=True)
class TailCurve:
    """Empirical survival estimates P(statistic > y) on a y-grid."""

    y: np.ndarray
    p: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    hits: np.ndarray
    total: int


def tail_curve(values: np.ndarray, y_grid) -> TailCurve:
    """Exact empirical survival function of the samples on the grid.

    Built from one sorted copy, so estimates are nonincreasing in y by
    construction and recomputable from the persisted sample file.
    """
    values = np.asarray(values, dtype=float)
    if values.size < 1:
        raise DomainError("tail_curve needs at least one sample")
    y = np.asarray(y_grid, dtype=float)
    srt = np.sort(values)
    hits = values.size - np.searchsorted(srt, y, side="right")
    if not (hits > 0).any():
        raise EmptyWindow("no grid level has any exceedance")
    lo = np.empty_like(y)
    hi = np.empty_like(y)
    for i, h in enumerate(hits):
        lo[i], hi[i] = wilson_interval(int(h), values.size)
    return TailCurve(y=y, p=hits / values.size, ci_lo=lo, ci_hi=hi,
                     hits=hits.astype(np.int64), total=values.size)


@dataclass(frozen=True)
class ExponentFit:
    """Least-squares slope of a survival curve under a tail model."""

    model: str
    slope: float
    intercept: float
    stderr: float
    n_points: int
    y_window: tuple[float, float]
    x_values: np.ndarray
    y_values: np.ndarray


def _ols_hc1(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Slope, intercept, and heteroscedasticity-robust (HC1) slope SE."""
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    xtx_inv = np.linalg.inv(X.T @ X)
    k = X.shape[1]
    nobs = X.shape[0]
    scale = nobs / max(1, nobs - k)
    meat = X.T @ (X * (resid * resid)[:, None]) * scale
    cov = xtx_inv @ meat @ xtx_inv
    return float(coef[1]), float(coef[0]), float(math.sqrt(max(cov[1, 1], 0.0)))


def fit_exponent(curve: TailCurve, model: str, *, gamma: Optional[float] = None,
                 p_window: tuple[float, float] = (1e-4, 1e-2),
                 min_hits: int = 100, min_points: int = 5) -> ExponentFit:
    """Fit the tail exponent on the window where the curve is trustworthy.

    Models: "power-law-with-log" regresses ln p on ln(ln y / y) (slope is
    the tail exponent of a (ln y / y)^g tail); "power-law" regresses ln p on
    ln y; "stretched-exponential" regresses -ln p on y^gamma (slope is the
    rate in exp(-c y^gamma); requires gamma).
    """
    p_lo, p_hi = p_window
    keep = (curve.p > 0) & (curve.p >= p_lo) & (curve.p <= p_hi)
    if model in ("power-law-with-log", "power-law"):
        keep &= curve.hits >= min_hits
    if model == "power-law-with-log":
        keep &= curve.y > 1.0
        xs = np.log(np.log(curve.y[keep]) / curve.y[keep])
        ys = np.log(curve.p[keep])
        sign = 1.0
    elif model == "power-law":
        keep &= curve.y > 0.0
        xs = np.log(curve.y[keep])
        ys = np.log(curve.p[keep])
        sign = 1.0
    elif model == "stretched-exponential":
        if gamma is None:
            raise DomainError("stretched-exponential model needs gamma")
        xs = curve.y[keep] ** gamma
        ys = -np.log(curve.p[keep])
        sign = 1.0
    else:
        raise DomainError(f"unknown model {model!r}")
    if xs.size < min_points:
        raise EmptyWindow(
            f"window holds {xs.size} usable points; {min_points} required"
        )
    slope, intercept, se = _ols_hc1(xs, ys)
    yw = curve.y[keep]
    return ExponentFit(model=model, slope=sign * slope, intercept=intercept,
                       stderr=se, n_points=int(xs.size),
                       y_window=(float(yw.min()), float(yw.max())),
                       x_values=xs, y_values=ys)


# ---------------------------------------------------------------------------
# band-tilted lower bound

@dataclass(frozen=True)
class ISLowerBound:
    """Tilted estimate: tilt weight times band-conditioned frequency.

    The first n generations are drawn from the band-conditioned law whose
    probability is the weight; the following m generations run free.  The
    product weight * P(Z_{n+m} > y | conditioned) lower-bounds the plain
    probability P(Z_{n+m} > y); everything is kept in log space.
    """

    n: int
    m: int
    replicates: int
    log_weight: float
    y: np.ndarray
    freq: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    log_lower_bound: np.ndarray
    y_reference: float


def band_log_weight(params: ModelParams, n: int) -> float:
    """log P(all generation n-k increments in band k) = sum 2^{n-k} ln p_k."""
    total = 0.0
    for k in range(n):
        _, _, mass = band_mass(band(k, params))
        total += (1 << (n - k)) * math.log(mass)
    return total


def reference_level(params: ModelParams, n: int) -> float:
    """Conditioned runs push Z_n above this level with margin ~4x."""
    return math.exp(0.5 * params.beta ** 2 * n) / (2.0 * math.e ** 2 * params.beta)


def is_lower_bound(params: ModelParams, n: int, m: int, replicates: int,
                   seed: int = 0, y_grid=None, threads: int = 1) -> ISLowerBound:
    """Run the band-conditioned campaign and assemble the lower-bound curve."""
    _kernels.warmup()
    _kernels.set_threads(threads)
    if n < 1 or m < 0:
        raise DomainError("need n >= 1 and m >= 0")
    sched = BandSchedule(params=params, n=n)
    spec = SimSpec(params=params, n=n + m, seed=seed, conditioning=sched)
    trunc, lo, hi, flo, fhi = _schedule_arrays(spec, n + m)
    R = replicates
    w = np.empty(R)
    z = np.empty(R)
    flags = np.zeros(R, dtype=np.uint8)
    _kernels.wz_horizon_batch(np.uint64(seed & _kernels.MASK64), 0, R, n + m,
                              params.beta, trunc, lo, hi, flo, fhi, w, z, flags)
    if flags.any():
        raise DomainError("martingale term exponent exceeded the overflow guard")
    y_ref = reference_level(params, n)
    y = np.asarray([y_ref] if y_grid is None else y_grid, dtype=float)
    hits = np.array([(z > yy).sum() for yy in y], dtype=np.int64)
    freq = hits / R
    lo_ci = np.empty_like(freq)
    hi_ci = np.empty_like(freq)
    for i, h in enumerate(hits):
        lo_ci[i], hi_ci[i] = wilson_interval(int(h), R)
    logw = band_log_weight(params, n)
    with np.errstate(divide="ignore"):
        log_lb = logw + np.log(freq)
    return ISLowerBound(n=n, m=m, replicates=R, log_weight=logw, y=y,
                        freq=freq, ci_lo=lo_ci, ci_hi=hi_ci,
                        log_lower_bound=log_lb, y_reference=y_ref)


# ---------------------------------------------------------------------------
# moment tables and sub-exponentiality diagnostics

@dataclass(frozen=True)
class MomentRow:
    k: int
    x_star: float
    moment: float
    stderr: float
    t_value: float


@dataclass(frozen=True)
class MomentTable:
    """Rescaled positive-part moments t(k), maximized over the x-grid.

    t(k) = (1/k!) e^{(1-1/gamma) k ln k} sup_x E[(Z^[x])_+^k]; the sup over
    all real starts is approximated on the configured grid.
    """

    rows: tuple[MomentRow, ...]
    x_grid: tuple[float, ...]
    gamma: float

    def t_values(self) -> np.ndarray:
        return np.array([r.t_value for r in self.rows])

    def moments(self) -> np.ndarray:
        return np.array([r.moment for r in self.rows])


def _t_prefactor(k: int, gamma: float) -> float:
    return math.exp((1.0 - 1.0 / gamma) * k * math.log(k)) / math.factorial(k)


def moment_table(samples: SampleSet, params: ModelParams,
                 x_grid: Sequence[float] = DEFAULT_X_GRID,
                 k_max: int = DEFAULT_K_MAX, n: Optional[int] = None) -> MomentTable:
    """Plug-in moments of (Z^[x])_+^k with jackknife standard errors.

    The shifted values come from the per-replicate identity
    Z^[x] = e^{beta x}(Z - x W), so one campaign serves the whole grid.
    For a plain mean the delete-one jackknife SE equals the usual SEM.
    """
    if k_max < 1:
        raise DomainError("k_max must be >= 1")
    W, Z = samples.column(n)
    R = W.size
    beta = params.beta
    rows = []
    for k in range(1, k_max + 1):
        pref = _t_prefactor(k, params.gamma)
        best = None
        for x in x_grid:
            v = math.exp(beta * x) * (Z - x * W)
            np.maximum(v, 0.0, out=v)
            if k > 1:
                v = v ** k
            m = float(v.mean())
            if best is None or pref * m > best[0]:
                se = float(v.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0
                best = (pref * m, x, m, se)
        t_val, x_star, m, se = best
        rows.append(MomentRow(k=k, x_star=float(x_star), moment=m,
                              stderr=se, t_value=t_val))
    return MomentTable(rows=tuple(rows), x_grid=tuple(float(x) for x in x_grid),
                       gamma=params.gamma)


def convolution_sup_constant(k_max: int = 64) -> tuple[float, int]:
    """sup_k k^2 sum_{j=1}^{k-1} 1/(j^2 (k-j)^2) and its argmax.

    The sequence rises to k = 4 (value 41/9) and decreases toward
    2 zeta(2) afterwards, so a moderate scan captures the sup.
    """
    best, arg = 0.0, 1
    for k in range(2, k_max + 1):
        j = np.arange(1, k)
        val = k * k * float(np.sum(1.0 / (j * j * (k - j) * (k - j))))
        if val > best:
            best, arg = val, k
    return best, arg


@dataclass(frozen=True)
class TkRow:
    k: int
    t_value: float
    residual: float
    residual_sigma: float


@dataclass(frozen=True)
class TkDiagnostics:
    """Recursion residuals t(k) - [2 q^k t(k) + convolution] and C-constants.

    residual <= 0 (within Monte Carlo error) is what the sub-convolution
    recursion demands; c3_min is the smallest constant making
    t(k) <= C^k / (2 A k^2) hold on the table, c2_min the smallest C with
    m_k <= C^k k^{k/gamma}.
    """

    rows: tuple[TkRow, ...]
    c3_min: float
    c2_min: float
    a_constant: float


def _tk_residuals(t: np.ndarray, q: float) -> np.ndarray:
    k_max = t.size
    res = np.empty(k_max)
    for k in range(1, k_max + 1):
        conv = sum(t[j - 1] * t[k - j - 1] for j in range(1, k))
        res[k - 1] = t[k - 1] - 2.0 * q ** k * t[k - 1] - conv
    return res


def tk_diagnostics(table: MomentTable, params: ModelParams,
                   samples: Optional[SampleSet] = None,
                   n: Optional[int] = None, groups: int = 100) -> TkDiagnostics:
    """Check the moment recursion on the table, with grouped-jackknife errors.

    When the generating samples are provided, residual sigmas come from a
    delete-one-group jackknife over replicate blocks, which respects the
    correlation between moments of different orders; otherwise first-order
    propagation with an independence approximation is used.
    """
    t = table.t_values()
    q = params.q
    res = _tk_residuals(t, q)
    k_max = t.size
    if samples is not None:
        W, Z = samples.column(n)
        R = W.size
        groups = min(groups, R)
        bounds = np.linspace(0, R, groups + 1).astype(np.int64)
        sums = np.zeros((k_max, groups))
        counts = np.diff(bounds).astype(float)
        beta = params.beta
        for krow in table.rows:
            v = math.exp(beta * krow.x_star) * (Z - krow.x_star * W)
            np.maximum(v, 0.0, out=v)
            if krow.k > 1:
                v = v ** krow.k
            csum = np.concatenate([[0.0], np.cumsum(v)])
            sums[krow.k - 1] = csum[bounds[1:]] - csum[bounds[:-1]]
        totals = sums.sum(axis=1)
        prefs = np.array([_t_prefactor(k, params.gamma) for k in range(1, k_max + 1)])
        res_g = np.empty((groups, k_max))
        for g in range(groups):
            mean_g = (totals - sums[:, g]) / (R - counts[g])
            res_g[g] = _tk_residuals(prefs * mean_g, q)
        rbar = res_g.mean(axis=0)
        sig = np.sqrt((groups - 1) / groups * ((res_g - rbar) ** 2).sum(axis=0))
    else:
        # first-order propagation, moments treated as independent
        t_se = np.array([_t_prefactor(r.k, params.gamma) * r.stderr
                         for r in table.rows])
        sig = np.empty(k_max)
        for k in range(1, k_max + 1):
            var = ((1 - 2 * q ** k) * t_se[k - 1]) ** 2
            for j in range(1, k):
                var += (2.0 * t[k - j - 1] * t_se[j - 1]) ** 2
            sig[k - 1] = math.sqrt(var)
    a_const, _ = convolution_sup_constant()
    c3 = max((2.0 * a_const * r.k ** 2 * r.t_value) ** (1.0 / r.k)
             for r in table.rows if r.t_value > 0)
    c2 = max((r.moment / r.k ** (r.k / params.gamma)) ** (1.0 / r.k)
             for r in table.rows if r.moment > 0)
    rows = tuple(TkRow(k=i + 1, t_value=float(t[i]), residual=float(res[i]),
                       residual_sigma=float(sig[i])) for i in range(k_max))
    return TkDiagnostics(rows=rows, c3_min=float(c3), c2_min=float(c2),
                         a_constant=float(a_const))


@dataclass(frozen=True)
class SubexpConstants:
    """Equivalent sub-exponential tail/moment constants of a statistic >= 0.

    k1: smallest exponential-tail scale on the probed grid, i.e.
    sup_t t / (-ln P(X >= t)).  k2: sup_k E[X^k]^{1/k} / k.
    """

    k1: float
    k2: float


def subexp_constants(values: np.ndarray, k_max: int = 8,
                     t_grid=None) -> SubexpConstants:
    values = np.asarray(values, dtype=float)
    if values.size < 1 or (values < 0).any():
        raise DomainError("subexp_constants needs a nonnegative sample")
    R = values.size
    if t_grid is None:
        qs = [0.5, 0.75, 0.9, 0.95, 0.99, 0.995, 0.999, 0.9995, 0.9999]
        t_grid = np.unique(np.quantile(values, [q for q in qs if q > 1.0 / R]))
    srt = np.sort(values)
    k1 = 0.0
    for t in np.asarray(t_grid, dtype=float):
        if t <= 0:
            continue
        p = (R - np.searchsorted(srt, t, side="left")) / R
        if 0.0 < p < 1.0:
            k1 = max(k1, t / (-math.log(p)))
    k2 = 0.0
    for k in range(1, k_max + 1):
        mk = float(np.mean(values ** k))
        if mk > 0:
            k2 = max(k2, mk ** (1.0 / k) / k)
    return SubexpConstants(k1=float(k1), k2=float(k2))


def ratio_exp_moment(samples: SampleSet, K_grid,
                     n: Optional[int] = None) -> list[dict]:
    """Empirical E[exp(K Z/W)] per K with normal-approximation 95% CIs."""
    W, Z = samples.column(n)
    ratio = Z / W
    out = []
    for K in np.asarray(K_grid, dtype=float):
        v = np.exp(K * ratio)
        m = float(v.mean())
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
        out.append({"K": float(K), "mean": m, "stderr": se,
                    "ci_lo": m - _Z95 * se, "ci_hi": m + _Z95 * se})
    return out


# ---------------------------------------------------------------------------
# rare-event frequency scans

@dataclass(frozen=True)
class ScanRow:
    n: int
    threshold: float
    hits: int
    freq: float
    ci_lo: float
    ci_hi: float
    impossible: bool


@dataclass(frozen=True)
class ScanTable:
    """Frequencies of one rare-event family over a generation grid.

    For the growth event Z_n >= n e^{n delta}, generations where the
    threshold exceeds the pathwise cap e^{n beta^2/2}/(beta e) are flagged
    impossible (the frequency there is exactly zero).  The comparison event
    is Z_n >= theta n (W_n - e^{-beta^2 n}): with the exponentially small
    correction the frequency decays in n, which is what the decay guidance
    covers.  The naive variant Z_n >= theta n (W_n - 1) is exposed as
    'theta_literal'; it converges to P(W < 1) > 0 instead of decaying,
    because on {W_n < 1} its right side drifts to -infinity.  Both carry an
    outside_regime flag when theta exceeds beta/2, where the decay guidance
    is untested.
    """

    event: str
    value: float
    rows: tuple[ScanRow, ...]
    replicates: int
    outside_regime: bool


def rare_event_scan(params: ModelParams, event: str, value: float,
                    n_grid: Sequence[int], replicates: int, seed: int = 0,
                    threads: int = 1) -> ScanTable:
    if event not in ("delta", "theta", "theta_literal"):
        raise DomainError(
            "event must be 'delta' (growth), 'theta' (comparison), or "
            "'theta_literal'")
    if value <= 0:
        raise DomainError("event parameter must be positive")
    outside = event.startswith("theta") and value > params.beta / 2.0
    rows = []
    for nn in sorted(set(int(v) for v in n_grid)):
        cfg = CampaignConfig(params=params, horizon=nn, replicates=replicates,
                             seed=seed)
        ss = run_campaign(cfg, threads=threads)
        W, Z = ss.column(nn)
        if event == "delta":
            thr = nn * math.exp(nn * value)
            cap = math.exp(0.5 * params.beta ** 2 * nn) / (params.beta * math.e)
            impossible = thr > cap
            hits = int((Z >= thr).sum())
        else:
            thr = value * nn
            impossible = False
            offset = 1.0 if event == "theta_literal" else math.exp(
                -params.beta ** 2 * nn)
            hits = int((Z >= thr * (W - offset)).sum())
        lo, hi = wilson_interval(hits, replicates)
        rows.append(ScanRow(n=nn, threshold=float(thr), hits=hits,
                            freq=hits / replicates, ci_lo=lo, ci_hi=hi,
                            impossible=impossible))
    return ScanTable(event=event, value=float(value), rows=tuple(rows),
                     replicates=replicates, outside_regime=outside)


# ---------------------------------------------------------------------------
# persistence helpers shared with the CLI

def tail_curve_rows(curve: TailCurve):
    for i in range(curve.y.size):
        yield [float(curve.y[i]), float(curve.p[i]), float(curve.ci_lo[i]),
               float(curve.ci_hi[i]), int(curve.hits[i]), curve.total]


TAIL_HEADER = ["y", "p", "ci_lo", "ci_hi", "hits", "total"]
