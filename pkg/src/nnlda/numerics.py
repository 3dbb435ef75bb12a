"""Special functions and probability kernels shared by the topic models.

lgamma and digamma shift their argument upward with the recurrence until
it is at least 6, then evaluate the asymptotic series. Within 0.25 of the
zeros of lgamma (x = 1, 2) a zeta-function power series is used instead.
Both accept scalars or numpy arrays; arrays are evaluated elementwise.
"""

import math

import numpy as np

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_SHIFT_TO = 6.0

# Stirling series coefficients B_{2k} / (2k (2k-1)), k = 1..8
_LGAMMA_COEFS = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
    -3617.0 / 122400.0,
)

# digamma asymptotic coefficients B_{2k} / (2k), k = 1..7
_DIGAMMA_COEFS = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)

_EULER_GAMMA = 0.5772156649015329

# zeta(k), k = 2..30, for the expansion of lgamma around 1
_ZETA = (
    1.6449340668482264, 1.2020569031595942, 1.0823232337111381, 1.03692775514337,
    1.0173430619844492, 1.008349277381923, 1.0040773561979444, 1.0020083928260821,
    1.000994575127818, 1.0004941886041194, 1.000246086553308, 1.0001227133475785,
    1.0000612481350588, 1.000030588236307, 1.0000152822594086, 1.0000076371976379,
    1.000003817293265, 1.0000019082127165, 1.0000009539620338, 1.0000004769329869,
    1.0000002384505027, 1.000000119219926, 1.000000059608189, 1.0000000298035034,
    1.0000000149015549, 1.0000000074507118, 1.000000003725334, 1.0000000018626598,
    1.0000000009313275,
)
_NEAR_ONE = 0.25


def _lgamma1p_series(z):
    """lgamma(1 + z) for |z| <= 0.25; keeps relative accuracy around the zero at z = 0."""
    out = np.zeros_like(z)
    for k in range(len(_ZETA) + 1, 1, -1):
        out = out * z + ((-1) ** k) * _ZETA[k - 2] / k
    return (out * z - _EULER_GAMMA) * z


def _as_positive(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(arr > 0):
        bad = arr[~(arr > 0)].ravel()[0]
        raise ValueError(f"{name} requires x > 0, got {bad!r}")
    return arr


def _shift(arr):
    """Move every entry to >= 6; return (shifted, running product of the skipped factors)."""
    x = arr.copy()
    prod = np.ones_like(x)
    # at most ceil(6 - x) steps for x in (0, 6)
    for _ in range(int(_SHIFT_TO)):
        small = x < _SHIFT_TO
        if not small.any():
            break
        prod = np.where(small, prod * x, prod)
        x = np.where(small, x + 1.0, x)
    return x, prod


def _unwrap(arr, scalar_input):
    return float(arr) if scalar_input else arr


def lgamma(x):
    """Natural log of the gamma function for x > 0."""
    scalar_input = np.ndim(x) == 0
    arr = _as_positive(x, "lgamma")
    z, prod = _shift(arr)
    inv = 1.0 / z
    inv2 = inv * inv
    series = np.zeros_like(z)
    for c in reversed(_LGAMMA_COEFS):
        series = series * inv2 + c
    out = (z - 0.5) * np.log(z) - z + _HALF_LOG_2PI + series * inv - np.log(prod)
    # the recurrence cancels catastrophically next to the zeros at 1 and 2
    d1 = arr - 1.0
    d2 = arr - 2.0
    near1 = np.abs(d1) <= _NEAR_ONE
    near2 = np.abs(d2) <= _NEAR_ONE
    if near1.any():
        out = np.where(near1, _lgamma1p_series(np.where(near1, d1, 0.0)), out)
    if near2.any():
        z2 = np.where(near2, d2, 0.0)
        out = np.where(near2, _lgamma1p_series(z2) + np.log1p(z2), out)
    return _unwrap(out, scalar_input)


def digamma(x):
    """Derivative of lgamma for x > 0."""
    scalar_input = np.ndim(x) == 0
    arr = _as_positive(x, "digamma")
    z = arr.copy()
    acc = np.zeros_like(z)
    for _ in range(int(_SHIFT_TO)):
        small = z < _SHIFT_TO
        if not small.any():
            break
        acc = np.where(small, acc - 1.0 / np.where(small, z, 1.0), acc)
        z = np.where(small, z + 1.0, z)
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for c in reversed(_DIGAMMA_COEFS):
        series = series * inv2 + c
    out = acc + np.log(z) - 0.5 / z - series * inv2
    return _unwrap(out, scalar_input)


def dirichlet_log_pdf(theta, alpha):
    """Log density of Dir(alpha) at a point of the simplex, or at each row of a batch.

    Entries of ``theta`` are floored at 1e-12 before the log. A point on
    the boundary paired with some alpha_i < 1 has an unbounded density and
    raises instead of returning inf.
    """
    theta = np.asarray(theta, dtype=np.float64)
    alpha = _as_positive(alpha, "dirichlet_log_pdf alpha")
    if alpha.ndim != 1 or theta.ndim not in (1, 2) or theta.shape[-1] != alpha.size:
        raise ValueError(f"theta shape {theta.shape} does not match alpha shape {alpha.shape}")
    if np.any(theta < 0):
        raise ValueError("theta must be non-negative")
    if np.any((theta <= 0) & (alpha < 1)):
        raise ValueError("density is not finite: theta on the boundary where alpha < 1")
    logt = np.log(np.maximum(theta, 1e-12))
    out = lgamma(alpha.sum()) - np.sum(lgamma(alpha)) + ((alpha - 1.0) * logt).sum(axis=-1)
    return float(out) if theta.ndim == 1 else out


def log_sum_exp(xs, axis=None):
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise ValueError("log_sum_exp of an empty input")
    m = np.max(xs, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(xs - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.ravel()[0])
    return np.squeeze(out, axis=axis)


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    """Inverse of softplus for y > 0: log(exp(y) - 1)."""
    y = _as_positive(y, "softplus_inverse")
    # log(expm1(y)) = y + log1p(-exp(-y)), stable for large y
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


def dirichlet_expectation(eta):
    """E[log theta] under Dir(eta); rows are independent Dirichlets for 2-D input."""
    eta = np.asarray(eta, dtype=np.float64)
    if eta.ndim == 1:
        return digamma(eta) - digamma(eta.sum())
    return digamma(eta) - digamma(eta.sum(axis=1))[:, np.newaxis]
