"""Per-realization statistics: martingales, level sets, hit detection.

All functions consume a *leaf stream*: the walk displacements S_u of one
generation in heap order (engine positions minus the start).  Sums over the
2^n leaf terms use compensated accumulation so the sign of near-zero values
survives 16M-term cancellation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._kernels import EXP_ARG_LIMIT, kahan_sum
from .engine import SimSpec, _draw_python, _schedule_arrays
from .errors import DomainError
from .model import LN2, ModelParams, varphi


@dataclass(frozen=True)
class MartingaleSnapshot:
    """(n, x, W, Z) of one realization plus optional extra statistics."""

    n: int
    x: float
    W: float
    Z: float
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class LevelQuery:
    """Level-set count request: interval (a, b] and evaluation shift x."""

    a: float
    b: float
    x: float = 0.0

    def __post_init__(self):
        if not self.a < self.b:
            raise DomainError("level interval needs a < b")


@dataclass(frozen=True)
class RegionSpec:
    """Hit-detection region: horizon n, level L, rate threshold M, shift x."""

    n: int
    L: float
    M: float
    x: float = 0.0


def _check_stream(leaves: np.ndarray, n: int) -> np.ndarray:
    arr = np.asarray(leaves, dtype=float)
    if arr.shape != (1 << n,):
        raise DomainError(f"leaf stream must hold 2^{n} values")
    return arr


def _leaf_terms(leaves: np.ndarray, params: ModelParams, n: int,
                shift: float = 0.0) -> np.ndarray:
    """exp(beta*(S+shift) - beta^2 n/2 - n ln 2), with the overflow guard."""
    args = params.beta * (leaves + shift) - n * (0.5 * params.beta ** 2 + LN2)
    if args.size and np.max(args) > EXP_ARG_LIMIT:
        raise DomainError("martingale term exponent exceeds the overflow guard (700)")
    return np.exp(args)


def additive_W(leaves, params: ModelParams, n: int) -> float:
    """Normalized partition function 2^-n sum e^{beta S_u - beta^2 n/2}."""
    arr = _check_stream(leaves, n)
    return float(kahan_sum(_leaf_terms(arr, params, n)))


def derivative_Z(leaves, params: ModelParams, n: int) -> float:
    """Signed companion 2^-n sum (beta n - S_u) e^{beta S_u - beta^2 n/2}.

    Bounded above by e^{n beta^2/2}/(beta e) pathwise: each term is
    y e^{-beta y} e^{n beta^2 / 2} with y = beta n - S_u.
    """
    arr = _check_stream(leaves, n)
    terms = _leaf_terms(arr, params, n)
    return float(kahan_sum((params.beta * n - arr) * terms))


def shifted_Z(leaves, params: ModelParams, n: int, x: float) -> float:
    """Start-shifted version: 2^-n sum (beta n - S_u - x) e^{beta(S_u+x) - beta^2 n/2}.

    Equals e^{beta x} (Z - x W) of the same realization.
    """
    arr = _check_stream(leaves, n)
    terms = _leaf_terms(arr, params, n, shift=x)
    return float(kahan_sum((params.beta * n - arr - x) * terms))


def deterministic_cap(params: ModelParams, n: int) -> float:
    """Pathwise upper bound e^{n beta^2/2} / (beta e) for Z_n."""
    return math.exp(0.5 * params.beta ** 2 * n) / (params.beta * math.e)


def _interval_mask(values: np.ndarray, intervals) -> np.ndarray:
    mask = np.zeros(values.shape, dtype=bool)
    for a, b in intervals:
        if not a < b:
            raise DomainError("restriction interval needs a < b")
        mask |= (values > a) & (values <= b)
    return mask


def restricted_Z(leaves, params: ModelParams, n: int, x: float, intervals) -> float:
    """shifted_Z summed only over leaves with x + S_u in the given set.

    The set is a finite union of half-open intervals (a, b]; a = -inf and
    b = +inf are allowed.  Restricting to the whole line gives shifted_Z,
    and the value is additive over disjoint sets.
    """
    arr = _check_stream(leaves, n)
    mask = _interval_mask(arr + x, intervals)
    if not mask.any():
        return 0.0
    sel = arr[mask]
    terms = _leaf_terms(sel, params, n, shift=x)
    return float(kahan_sum((params.beta * n - sel - x) * terms))


def level_count(leaves, n: int, query: LevelQuery) -> int:
    """#{|u| = n : x + S_u in (a, b]}; half-open so partitions are exact."""
    arr = _check_stream(leaves, n)
    shifted = arr + query.x
    return int(np.count_nonzero((shifted > query.a) & (shifted <= query.b)))


def hit_event(spec: SimSpec, region: RegionSpec) -> tuple[bool, Optional[tuple[int, float]]]:
    """First vertex u in the tree of depth < n with varphi(n-|u|, L-(x+S_u)) >= M.

    Walks the realization in preorder and stops at the first hit, returning
    (True, (depth, position)); depth-n vertices are excluded because the
    rate function needs a remaining horizon of at least one generation.
    Always true via the root when L = x and M <= n ln 2; never true when
    M > n ln 2.
    """
    if region.n != spec.n:
        raise DomainError("region horizon must match the spec horizon")
    n = spec.n
    if n < 1:
        return False, None
    tables = _schedule_arrays(spec, n)
    stack = [(1, 0, spec.x)]
    while stack:
        idx, depth, pos = stack.pop()
        t = n - depth
        if t >= 1:
            lam = region.L - (region.x - spec.x + pos)
            if varphi(t, lam) >= region.M:
                return True, (depth, pos)
        if depth < n - 1:
            d = depth + 1
            left = 2 * idx
            lpos = pos + _draw_python(spec, left, d, tables)
            rpos = pos + _draw_python(spec, left + 1, d, tables)
            stack.append((left + 1, d, rpos))
            stack.append((left, d, lpos))
    return False, None


def exact_second_moment_W(params: ModelParams, n: int) -> float:
    """E[W_n^2] in closed form by pair-overlap counting on the binary tree.

    Splitting ordered leaf pairs by the depth j of their last common
    ancestor gives q'^n for the diagonal and 2^{2n-j-1} pairs otherwise,
    with q' = e^{beta^2}/2 the tilted pair weight.
    """
    if n < 0:
        raise DomainError("n must be >= 0")
    qp = 0.5 * math.exp(params.beta ** 2)
    return qp ** n + 0.5 * sum(qp ** j for j in range(n))


def exact_second_moment_Z(params: ModelParams, n: int) -> float:
    """E[Z_n^2] in closed form.

    Same pair-overlap count as the W case; tilting each Gaussian block via
    E[xi e^{l xi}] = l e^{l^2/2} and E[xi^2 e^{l xi}] = (1+l^2) e^{l^2/2}
    turns the pair expectation with overlap j into q'^j (beta^2 j^2 + j).
    """
    if n < 0:
        raise DomainError("n must be >= 0")
    b2 = params.beta ** 2
    qp = 0.5 * math.exp(b2)
    diag = qp ** n * (b2 * n * n + n)
    cross = 0.5 * sum(qp ** j * (b2 * j * j + j) for j in range(n))
    return diag + cross


def snapshot(leaves, params: ModelParams, n: int, x: float = 0.0) -> MartingaleSnapshot:
    """W, Z (and the start-shifted value when x != 0) of one realization."""
    W = additive_W(leaves, params, n)
    Z = derivative_Z(leaves, params, n)
    extras = {}
    if x != 0.0:
        extras["Z_shifted"] = shifted_Z(leaves, params, n, x)
    return MartingaleSnapshot(n=n, x=x, W=W, Z=Z, extras=extras)
