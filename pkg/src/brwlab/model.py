"""Model parameters, rate functions, bands, and the node-addressed Gaussians.

The walk lives on the full binary tree: each vertex adds an independent
standard Gaussian increment to its parent's position.  This module is the
single source of truth for the inverse temperature and everything derived
from it, and for the deterministic map from a node address to its increment.
All operations are pure; no shared mutable state anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, _rng
from .errors import DegenerateBand, DomainError, OutOfRegime

LN2 = math.log(2.0)
BETA_CRITICAL = math.sqrt(2.0 * LN2)

#: Heap node indices fit one 64-bit word up to this depth.
MAX_DEPTH = _rng.MAX_DEPTH


@dataclass(frozen=True)
class ModelParams:
    """Inverse temperature and the constants derived from it.

    beta_c is the critical inverse temperature sqrt(2 ln 2); gamma the tail
    exponent (beta_c/beta)^2 > 1; phi_beta = ln 2 - beta^2/2 the free-energy
    gap; q = e^{beta^2/2}/2 the one-step weight of the shifted-martingale
    recursion.  gamma * beta^2 / 2 == ln 2 identically.
    """

    beta: float
    beta_c: float = field(init=False)
    gamma: float = field(init=False)
    phi_beta: float = field(init=False)
    q: float = field(init=False)

    def __post_init__(self):
        if not (0.0 < self.beta < BETA_CRITICAL):
            raise OutOfRegime(
                f"beta={self.beta!r} outside the subcritical range (0, {BETA_CRITICAL!r})"
            )
        object.__setattr__(self, "beta_c", BETA_CRITICAL)
        object.__setattr__(self, "gamma", 2.0 * LN2 / (self.beta * self.beta))
        object.__setattr__(self, "phi_beta", LN2 - 0.5 * self.beta * self.beta)
        object.__setattr__(self, "q", 0.5 * math.exp(0.5 * self.beta * self.beta))


def derive_params(beta: float) -> ModelParams:
    """Build ModelParams for a subcritical inverse temperature."""
    return ModelParams(float(beta))


@dataclass(frozen=True)
class RngAddress:
    """Names one Gaussian increment: (seed, replicate, heap node index).

    Heap indexing: root = 1, children of i are 2i and 2i+1.  The root draws
    no increment, so addressable nodes have index >= 2.  The map from an
    address to its increment is pure and engine-independent.
    """

    seed: int
    replicate: int
    node_index: int

    def __post_init__(self):
        if self.node_index < 1:
            raise DomainError("node_index must be >= 1 (root = 1)")
        if self.depth > MAX_DEPTH:
            raise DomainError(f"node depth exceeds the {MAX_DEPTH}-generation cap")

    @property
    def depth(self) -> int:
        return self.node_index.bit_length() - 1


@dataclass(frozen=True)
class Band:
    """Increment band [lo, hi] used by the conditioned (tilted) runs.

    Band k spans [beta - 1/(beta 2^k), beta - 1/(beta 2^{k+1})]; widths over
    all k sum to 1/beta and the bands climb toward beta as k grows.
    """

    k: int
    lo: float
    hi: float

    @property
    def width(self) -> float:
        return self.hi - self.lo


def band(k: int, params: ModelParams) -> Band:
    """The k-th conditioning band for the given parameters."""
    if k < 0:
        raise DomainError("band index must be >= 0")
    b = params.beta
    return Band(k=k, lo=b - 1.0 / (b * 2.0 ** k), hi=b - 1.0 / (b * 2.0 ** (k + 1)))


def varphi(t, x):
    """Level-set rate function t ln 2 - x^2 / (2t) for t >= 1.

    Accepts scalars or numpy arrays (broadcasting); always <= t ln 2 with
    equality only at x = 0.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 1.0):
        raise DomainError("varphi requires t >= 1")
    x_arr = np.asarray(x, dtype=float)
    out = t_arr * LN2 - (x_arr * x_arr) / (2.0 * t_arr)
    if out.ndim == 0:
        return float(out)
    return out


def std_norm_cdf(x: float) -> float:
    """Standard normal CDF (erfc-based), shared by all samplers."""
    return _rng.ndtr(float(x))


def inv_norm_cdf(p):
    """Inverse standard normal CDF, |cdf(result) - p| <= 1e-9 guaranteed.

    Scalar or array input; raises DomainError outside the open unit
    interval.  The far tails (p down to 1e-300) stay finite.
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr <= 0.0) or np.any(p_arr >= 1.0):
        raise DomainError("inv_norm_cdf requires 0 < p < 1")
    if p_arr.ndim == 0:
        return _rng.norm_quantile(float(p_arr))
    flat = p_arr.ravel()
    out = np.empty_like(flat)
    for i, v in enumerate(flat):
        out[i] = _rng.norm_quantile(v)
    return out.reshape(p_arr.shape)


def _as_u64(value: int) -> np.uint64:
    return np.uint64(int(value) & _rng.MASK64)


def node_gaussian(addr: RngAddress) -> float:
    """The standard Gaussian increment named by an address."""
    return float(
        _kernels.node_gaussian(
            _as_u64(addr.seed), _as_u64(addr.replicate), _as_u64(addr.node_index)
        )
    )


def node_uniform(addr: RngAddress) -> float:
    """The underlying uniform (0,1) variate of an address."""
    return float(
        _kernels.node_uniform(
            _as_u64(addr.seed), _as_u64(addr.replicate), _as_u64(addr.node_index)
        )
    )


def band_mass(b: Band) -> tuple[float, float, float]:
    """(F(lo), F(hi), mass) of a band under the standard normal law."""
    flo = std_norm_cdf(b.lo)
    fhi = std_norm_cdf(b.hi)
    mass = fhi - flo
    if mass <= 0.0:
        raise DegenerateBand(
            f"band [{b.lo}, {b.hi}] carries no normal mass at double precision"
        )
    return flo, fhi, mass


def truncated_node_gaussian(addr: RngAddress, b: Band) -> float:
    """The node's Gaussian conditioned on the band, by CDF-range inversion.

    Uses the same uniform as node_gaussian, so widening the band to cover
    the whole real line recovers the unconditioned draw.
    """
    if not b.lo < b.hi:
        raise DomainError("band must satisfy lo < hi")
    flo, fhi, _ = band_mass(b)
    return float(
        _kernels.truncated_node_gaussian(
            _as_u64(addr.seed),
            _as_u64(addr.replicate),
            _as_u64(addr.node_index),
            b.lo,
            b.hi,
            flo,
            fhi,
        )
    )
