"""Counter-based random streams for reproducible parallel simulation.

Every variate consumed by particle ``i`` is a pure function of
``(seed, i, draw index)``, so trajectories are identical no matter how
particles are scheduled across workers.  The generator is Philox4x32-10
(a 10-round bijective mixing of a 128-bit counter under a 64-bit key); one
block yields two 64-bit outputs, consumed by consecutive draw indices.

Normal variates are produced by applying the inverse normal CDF to a single
uniform draw, keeping the draw count per proposal fixed at exactly one.
"""

from __future__ import annotations

import math

from numba import njit, uint32, uint64

_PHILOX_M0 = uint64(0xD2511F53)
_PHILOX_M1 = uint64(0xCD9E8D57)
_PHILOX_W0 = uint32(0x9E3779B9)
_PHILOX_W1 = uint32(0xBB67AE85)

_INV_2_53 = float(2.0**-53)
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@njit(inline="always", cache=True)
def _philox4x32_10(c0, c1, c2, c3, k0, k1):
    """One Philox4x32 block: 10 rounds over counter words under key (k0, k1)."""
    for _ in range(10):
        p0 = _PHILOX_M0 * uint64(c0)
        p1 = _PHILOX_M1 * uint64(c2)
        n0 = uint32(p1 >> uint64(32)) ^ c1 ^ k0
        n1 = uint32(p1)
        n2 = uint32(p0 >> uint64(32)) ^ c3 ^ k1
        n3 = uint32(p0)
        c0, c1, c2, c3 = n0, n1, n2, n3
        k0 = uint32(k0 + _PHILOX_W0)
        k1 = uint32(k1 + _PHILOX_W1)
    return c0, c1, c2, c3


@njit(inline="always", cache=True)
def raw64(seed, stream, index):
    """64 uniform bits for draw ``index`` of stream ``stream`` under ``seed``.

    Counter words hold the block index (two draws per block) and the stream
    id; the key holds the seed.  All inputs are treated as unsigned 64-bit.
    """
    seed = uint64(seed)
    stream = uint64(stream)
    index = uint64(index)
    blk = index >> uint64(1)
    x0, x1, x2, x3 = _philox4x32_10(
        uint32(blk),
        uint32(blk >> uint64(32)),
        uint32(stream),
        uint32(stream >> uint64(32)),
        uint32(seed),
        uint32(seed >> uint64(32)),
    )
    if index & uint64(1) == uint64(0):
        return (uint64(x0) << uint64(32)) | uint64(x1)
    return (uint64(x2) << uint64(32)) | uint64(x3)


@njit(inline="always", cache=True, fastmath=True, error_model="numpy")
def u64_to_uniform(r):
    """Map a raw 64-bit word to a uniform double in [0, 1)."""
    return float(r >> uint64(11)) * _INV_2_53


@njit(inline="always", cache=True, fastmath=True, error_model="numpy")
def uniform01(seed, stream, index):
    """Uniform double in [0, 1) from the stream's draw ``index``."""
    return u64_to_uniform(raw64(seed, stream, index))


@njit(inline="always", cache=True, fastmath=True, error_model="numpy")
def norm_ppf(p):
    """Standard normal quantile for p in (0, 1).

    Rational approximations on a central interval and two tail regions
    (AS 241 layout).  The far-tail branch (|quantile| > 5-ish, hit with
    probability ~1e-11 per draw) is polished with two Newton steps against
    erfc so its accuracy does not rest on the rational fit alone.
    """
    q = p - 0.5
    if abs(q) <= 0.425:
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
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        rr = r - 1.6
        num = (((((((7.74545014278341407640e-4 * rr + 2.27238449892691845833e-2) * rr
            + 2.41780725177450611770e-1) * rr + 1.27045825245236838258e0) * rr
            + 3.64784832476320460504e0) * rr + 5.76949722146069140550e0) * rr
            + 4.63033784615654529590e0) * rr + 1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * rr + 5.47593808499534494600e-4) * rr
            + 1.51986665636164571966e-2) * rr + 1.48103976427480074590e-1) * rr
            + 6.89767334985100004550e-1) * rr + 1.67638483018380384940e0) * rr
            + 2.05319162663775882187e0) * rr + 1.0)
        val = num / den
        return -val if q < 0.0 else val
    rr = r - 5.0
    num = (((((((2.01033439929228813265e-7 * rr + 2.71155556874348757815e-5) * rr
        + 1.24266094738807843860e-3) * rr + 2.65321895265761230930e-2) * rr
        + 2.96560571828504891230e-1) * rr + 1.78482653991729133580e0) * rr
        + 5.46378491116411436990e0) * rr + 6.65790464350110377720e0)
    den = (((((((2.04426310338993978564e-15 * rr + 1.42151175831644588870e-9) * rr
        + 1.84631831751005468180e-6) * rr + 7.86869131145613259100e-4) * rr
        + 1.48753612908506148525e-2) * rr + 1.36929880922735805310e-1) * rr
        + 5.99832206555887937690e-1) * rr + 1.0)
    val = num / den
    # Newton polish on the lower-tail quantile: solve Phi(-val) = min(p, 1-p)
    pt = p if q < 0.0 else 1.0 - p
    x = -val
    for _ in range(2):
        cdf = 0.5 * math.erfc(-x / _SQRT2)
        pdf = _INV_SQRT_2PI * math.exp(-0.5 * x * x)
        x -= (cdf - pt) / pdf
    val = -x
    return -val if q < 0.0 else val


@njit(inline="always", cache=True, fastmath=True, error_model="numpy")
def u64_to_normal(r):
    """Map a raw 64-bit word to a standard normal variate.

    The uniform is centered on the 53-bit lattice so it never touches 0 or 1.
    """
    return norm_ppf((float(r >> uint64(11)) + 0.5) * _INV_2_53)


@njit(inline="always", cache=True, fastmath=True, error_model="numpy")
def normal(seed, stream, index):
    """Standard normal variate for the stream's draw ``index``."""
    return u64_to_normal(raw64(seed, stream, index))


class RngStream:
    """Stateful view of one particle's counter-based stream.

    Draw ``k`` of particle ``i`` is ``f(seed, i, k)``; this wrapper just
    tracks ``k`` for callers that step a single particle from Python.
    """

    __slots__ = ("seed", "particle", "counter")

    def __init__(self, seed: int, particle: int = 0, counter: int = 0):
        self.seed = int(seed)
        self.particle = int(particle)
        self.counter = int(counter)

    def uniform(self) -> float:
        u = uniform01(self.seed, self.particle, self.counter)
        self.counter += 1
        return float(u)

    def normal(self) -> float:
        w = normal(self.seed, self.particle, self.counter)
        self.counter += 1
        return float(w)
