"""Deterministic node-addressed randomness: hashing, uniforms, normal quantiles.

Every Gaussian increment of the walk is a pure function of its address
(seed, replicate, heap node index).  The functions below are written so that
the exact same source can run as plain Python or compiled by numba; both
paths must produce bit-identical doubles (verified in tests).  Keep the
arithmetic order untouched: reordering a polynomial or fusing operations
changes the last ulp and breaks cross-engine reproducibility.
"""

import math

MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLD1 = 0x9E3779B97F4A7C15  # 2^64 / phi, odd
_GOLD2 = 0xC2B2AE3D27D4EB4F  # xxhash64 prime, odd
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

#: Heap indexing uses one 64-bit word; depth 62 keeps 2i+1 below 2^64.
MAX_DEPTH = 62

_INV_2_53 = 1.0 / 9007199254740992.0  # 2^-53
_SQRT1_2 = 0.7071067811865476


def mix64(z):
    """SplitMix64 finalizer: full-avalanche 64-bit permutation."""
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def address_hash(seed, replicate, node_index):
    """Collapse an increment address into one well-mixed 64-bit word."""
    h = mix64(seed & MASK64)
    h = mix64(h ^ ((replicate * _GOLD1) & MASK64))
    return mix64(h ^ ((node_index * _GOLD2) & MASK64))


def to_unit(h):
    """Map a 64-bit hash to the open interval (0, 1), 2^53 equispaced values."""
    return (float(h >> 11) + 0.5) * _INV_2_53


def ndtr(x):
    """Standard normal CDF via erfc; accurate into the far tails."""
    return 0.5 * math.erfc(-x * _SQRT1_2)


def norm_quantile(p):
    """Inverse standard normal CDF (rational minimax approximation).

    Three-branch scheme with double-precision accuracy (~1e-15 relative)
    over the full open interval, including p near 1e-300.  The caller is
    responsible for 0 < p < 1.
    """
    q = p - 0.5
    if q < 0.0:
        aq = -q
    else:
        aq = q
    if aq <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
                    + 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r
                  + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r
                + 1.3314166789178437745e2) * r + 3.3871328727963666080e0)
        den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
                    + 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r
                  + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r
                + 4.2313330701600911252e1) * r + 1.0)
        return q * num / den
    if q < 0.0:
        r = p
    else:
        r = 1.0 - p
    w = math.sqrt(-math.log(r))
    if w <= 5.0:
        w = w - 1.6
        num = (((((((7.74545014278341407640e-4 * w + 2.27238449892691845833e-2) * w
                    + 2.41780725177450611770e-1) * w + 1.27045825245236838258e0) * w
                  + 3.64784832476320460504e0) * w + 5.76949722146069140550e0) * w
                + 4.63033784615654529590e0) * w + 1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * w + 5.47593808499534494600e-4) * w
                    + 1.51986665636164571966e-2) * w + 1.48103976427480074590e-1) * w
                  + 6.89767334985100004550e-1) * w + 1.67638483018380384940e0) * w
                + 2.05319162663775882187e0) * w + 1.0)
    else:
        w = w - 5.0
        num = (((((((2.01033439929228813265e-7 * w + 2.71155556874348757815e-5) * w
                    + 1.24266094738807843860e-3) * w + 2.65321895265761230930e-2) * w
                  + 2.96560571828504891230e-1) * w + 1.78482653991729133580e0) * w
                + 5.46378491116411436990e0) * w + 6.65790464350110377720e0)
        den = (((((((2.04426310338993978564e-15 * w + 1.42151175831644588870e-7) * w
                    + 1.84631831751005468180e-5) * w + 7.86869131145613259100e-4) * w
                  + 1.48753612908506148525e-2) * w + 1.36929880922735805310e-1) * w
                + 5.99832206555887937690e-1) * w + 1.0)
    x = num / den
    if q < 0.0:
        return -x
    return x


def node_uniform(seed, replicate, node_index):
    """Uniform (0,1) draw attached to one tree node."""
    return to_unit(address_hash(seed, replicate, node_index))


def node_gaussian(seed, replicate, node_index):
    """Standard Gaussian draw attached to one tree node."""
    return norm_quantile(to_unit(address_hash(seed, replicate, node_index)))


def truncated_node_gaussian(seed, replicate, node_index, lo, hi, flo, fhi):
    """Gaussian draw conditioned on [lo, hi] by CDF-range inversion.

    flo/fhi are the precomputed CDF values at lo/hi; the clamp keeps the
    result inside the band even when the quantile rounds past an endpoint.
    """
    u = to_unit(address_hash(seed, replicate, node_index))
    x = norm_quantile(flo + u * (fhi - flo))
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x
