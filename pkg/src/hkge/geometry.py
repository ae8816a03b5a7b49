"""Numerical kernels for the Poincare ball model of hyperbolic space.

All maps are taken at the origin, which is where the model needs them:
embeddings live in the tangent space at 0 and are pushed onto the ball
of curvature -c (c > 0) with ``exp0``.  Points x satisfy c * ||x||^2 < 1.

Curvature ``c`` may be a python float or an ndarray matching the batch
shape of the point arguments (one curvature per row).

Near-boundary arguments to arctanh are clamped to 1 - BALL_EPS instead
of overflowing; every clamped element increments a module-level counter
so callers can watch for saturation (see ``clamp_events``).
"""

import numpy as np

# Margin kept between representable points and the unit sphere.
BALL_EPS = 1e-5
# Below this, tanh(z)/z and friends switch to their series limit.
TAU_SMALL = 1e-12
# Mobius denominators smaller than this are treated as degenerate.
DEN_EPS = 1e-15

_clamp_events = 0


def clamp_events():
    """Total boundary-clamp and projection events since the last reset."""
    return _clamp_events


def reset_clamp_events():
    global _clamp_events
    _clamp_events = 0


def _count_clamps(mask):
    global _clamp_events
    n = int(np.count_nonzero(mask))
    if n:
        _clamp_events += n
    return n


def _as_float(name, x):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def _as_curvature(c):
    c = np.asarray(c, dtype=np.float64)
    if not np.all(np.isfinite(c)):
        raise ValueError("curvature contains non-finite values")
    if np.any(c <= 0.0):
        raise ValueError("curvature must be strictly positive")
    if c.ndim:
        c = c[..., np.newaxis]  # align with the coordinate axis
    return c


def _norm(x):
    return np.sqrt(np.sum(x * x, axis=-1, keepdims=True))


def tanh_ratio(z):
    """tanh(z)/z, stable at z = 0 (limit 1)."""
    z = np.asarray(z, dtype=np.float64)
    zs = np.where(z > TAU_SMALL, z, 1.0)
    return np.where(z > TAU_SMALL, np.tanh(zs) / zs, 1.0 - z * z / 3.0)


def artanh_ratio(g):
    """arctanh(g)/g for 0 <= g < 1, stable at g = 0 (limit 1)."""
    g = np.asarray(g, dtype=np.float64)
    gs = np.where(g > TAU_SMALL, g, 0.5)  # placeholder keeps arctanh finite
    return np.where(g > TAU_SMALL, np.arctanh(gs) / gs, 1.0 + g * g / 3.0)


def tanh_ratio_prime_over_z(z):
    """(d/dz)[tanh(z)/z] divided by z; smooth, limit -2/3 at z = 0.

    Needed by backward passes through exp0.  The direct expression
    (sech^2(z) - tanh(z)/z) / z^2 cancels catastrophically for small z,
    so below 0.05 a series expansion takes over.
    """
    z = np.asarray(z, dtype=np.float64)
    small = z < 0.05
    zs = np.where(small, 1.0, z)
    t = np.tanh(zs)
    direct = ((1.0 - t * t) - t / zs) / (zs * zs)
    z2 = z * z
    series = -2.0 / 3.0 + z2 * (8.0 / 15.0 + z2 * (-34.0 / 105.0 + z2 * (496.0 / 2835.0)))
    return np.where(small, series, direct)


def exp0(v, c):
    """Exponential map at the origin: tangent vector -> ball point.

    exp0(v) = tanh(sqrt(c)*||v||) * v / (sqrt(c)*||v||)
    """
    v = _as_float("v", v)
    c = _as_curvature(c)
    z = np.sqrt(c) * _norm(v)
    return tanh_ratio(z) * v


def log0(x, c):
    """Logarithmic map at the origin: ball point -> tangent vector.

    Inverse of exp0 on the open ball.  Arguments outside the clamp
    radius are pulled back to 1 - BALL_EPS (counted as clamp events).
    """
    x = _as_float("x", x)
    c = _as_curvature(c)
    g = np.sqrt(c) * _norm(x)
    over = g > 1.0 - BALL_EPS
    _count_clamps(over)
    if np.any(over):
        coef = np.where(over, np.arctanh(1.0 - BALL_EPS) / np.where(over, g, 1.0),
                        artanh_ratio(np.minimum(g, 1.0 - BALL_EPS)))
    else:
        coef = artanh_ratio(g)
    return coef * x


def mobius_add(x, y, c):
    """Mobius addition x (+)_c y on the ball of curvature -c.

    Output is projected back inside the clamp radius; a denominator
    within DEN_EPS of zero raises (the points are essentially antipodal
    at the boundary and the sum is not representable).
    """
    x = _as_float("x", x)
    y = _as_float("y", y)
    cc = _as_curvature(c)
    dot = np.sum(x * y, axis=-1, keepdims=True)
    nx2 = np.sum(x * x, axis=-1, keepdims=True)
    ny2 = np.sum(y * y, axis=-1, keepdims=True)
    num = (1.0 + 2.0 * cc * dot + cc * ny2) * x + (1.0 - cc * nx2) * y
    den = 1.0 + 2.0 * cc * dot + cc * cc * nx2 * ny2
    if np.any(np.abs(den) < DEN_EPS):
        raise ValueError("mobius_add: degenerate denominator")
    return project_to_ball(num / den, c)


def hyp_distance(x, y, c):
    """Geodesic distance d_c(x, y) = (2/sqrt(c)) * arctanh(sqrt(c)*||-x (+) y||)."""
    c_col = _as_curvature(c)
    m = mobius_add(-np.asarray(x, dtype=np.float64), y, c)
    g = np.sqrt(c_col) * _norm(m)
    over = g > 1.0 - BALL_EPS
    _count_clamps(over)
    g = np.minimum(g, 1.0 - BALL_EPS)
    d = (2.0 / np.sqrt(c_col)) * np.arctanh(g)
    return np.squeeze(d, axis=-1)


def project_to_ball(x, c):
    """Radially rescale x to norm (1 - BALL_EPS)/sqrt(c) if it lies outside."""
    x = np.asarray(x, dtype=np.float64)
    c = _as_curvature(c)
    n = _norm(x)
    limit = (1.0 - BALL_EPS) / np.sqrt(c)
    over = n > limit
    _count_clamps(over)
    scale = np.where(over, limit / np.where(over, n, 1.0), 1.0)
    return x * scale


def _split_pairs(x):
    if x.shape[-1] % 2:
        raise ValueError("last dimension must be even")
    return x.reshape(x.shape[:-1] + (x.shape[-1] // 2, 2))


def block_scale(x, k):
    """Scale each coordinate pair (x_{2i}, x_{2i+1}) by k_i."""
    x = _as_float("x", x)
    k = _as_float("k", k)
    xp = _split_pairs(x)
    if k.shape[-1] != xp.shape[-2]:
        raise ValueError(f"expected {xp.shape[-2]} scale factors, got {k.shape[-1]}")
    return (xp * k[..., np.newaxis]).reshape(x.shape)


def block_rotate(x, theta):
    """Rotate each coordinate pair (x_{2i}, x_{2i+1}) by angle theta_i.

    Counter-clockwise Givens rotations; norms of every pair (and hence
    of x) are preserved.
    """
    x = _as_float("x", x)
    theta = _as_float("theta", theta)
    xp = _split_pairs(x)
    if theta.shape[-1] != xp.shape[-2]:
        raise ValueError(f"expected {xp.shape[-2]} angles, got {theta.shape[-1]}")
    cos = np.cos(theta)
    sin = np.sin(theta)
    a = xp[..., 0]
    b = xp[..., 1]
    out = np.empty(np.broadcast_shapes(xp[..., 0].shape, cos.shape) + (2,))
    out[..., 0] = a * cos - b * sin
    out[..., 1] = a * sin + b * cos
    return out.reshape(out.shape[:-2] + (out.shape[-2] * 2,))
