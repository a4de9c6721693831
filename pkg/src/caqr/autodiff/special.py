"""log-Gamma, digamma and trigamma for positive reals.

Each function shifts its argument up to at least 6 with the recurrence and
then evaluates the asymptotic (Stirling-type) series.
"""

import numpy as np

from ..errors import DomainError

_SHIFT = 6.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)

# Bernoulli-number coefficients B_2k / (2k (2k - 1)) of the Stirling series
_LGAMMA_COEFFS = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
    -3617.0 / 122400.0,
)
# B_2k / (2k) for digamma
_DIGAMMA_COEFFS = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
# B_2k for trigamma
_TRIGAMMA_COEFFS = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)


def _check(x):
    x = np.asarray(x, dtype=np.float64)
    if np.any(~(x > 0)):
        raise DomainError("special functions need x > 0")
    return x


def _shift(x):
    """Return (z, steps) with z = x + steps >= 6, as float arrays."""
    steps = np.maximum(np.ceil(_SHIFT - x), 0.0)
    return x + steps, steps


def lgamma(x):
    x = _check(x)
    z, steps = _shift(x)
    # log Γ(x) = log Γ(z) - log(x (x+1) ... (x+steps-1))
    prod = np.ones_like(x)
    k = 0.0
    while np.any(steps > k):
        prod = np.where(steps > k, prod * (x + k), prod)
        k += 1.0
    inv = 1.0 / z
    inv2 = inv * inv
    series = np.zeros_like(z)
    for c in reversed(_LGAMMA_COEFFS):
        series = series * inv2 + c
    series = series * inv
    return (z - 0.5) * np.log(z) - z + _HALF_LOG_2PI + series - np.log(prod)


def digamma(x):
    x = _check(x)
    z, steps = _shift(x)
    acc = np.zeros_like(x)
    k = 0.0
    while np.any(steps > k):
        acc = np.where(steps > k, acc + 1.0 / (x + k), acc)
        k += 1.0
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for c in reversed(_DIGAMMA_COEFFS):
        series = series * inv2 + c
    series = series * inv2
    return np.log(z) - 0.5 / z - series - acc


def trigamma(x):
    x = _check(x)
    z, steps = _shift(x)
    acc = np.zeros_like(x)
    k = 0.0
    while np.any(steps > k):
        acc = np.where(steps > k, acc + 1.0 / ((x + k) * (x + k)), acc)
        k += 1.0
    inv = 1.0 / z
    inv2 = inv * inv
    series = np.zeros_like(z)
    for c in reversed(_TRIGAMMA_COEFFS):
        series = series * inv2 + c
    series = series * inv2 * inv
    return inv + 0.5 * inv2 + series + acc
