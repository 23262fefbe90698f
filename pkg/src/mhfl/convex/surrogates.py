"""Convex surrogates that are tight at an expansion point."""

import numpy as np


def bilinear_upper(x, p, x_i, p_i):
    """Convex upper bound of ``x * p`` for positive variables, tight at ``(x_i, p_i)``.

    ``x*p <= 0.5*(p_i/x_i)*x**2 + 0.5*(x_i/p_i)*p**2`` follows from
    ``(sqrt(p_i/x_i)*x - sqrt(x_i/p_i)*p)**2 >= 0``.
    """
    x_i = np.asarray(x_i, dtype=float)
    p_i = np.asarray(p_i, dtype=float)
    if np.any(x_i <= 0) or np.any(p_i <= 0):
        raise ValueError("bilinear_upper: expansion point must be positive")
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    return 0.5 * (p_i / x_i) * x ** 2 + 0.5 * (x_i / p_i) * p ** 2


def log_rate_lower(z, z_i):
    """Lower bound of ``ln(1 + z)`` that is concave in ``z > 0`` and tight at ``z_i``.

    ``ln(1+z) >= ln(1+z_i) + z_i/(z_i+1) - z_i**2/(z_i+1) / z``.
    """
    z = np.asarray(z, dtype=float)
    z_i = np.asarray(z_i, dtype=float)
    if np.any(z <= 0) or np.any(z_i <= 0):
        raise ValueError("log_rate_lower: arguments must be positive")
    return np.log1p(z_i) + z_i / (z_i + 1.0) - z_i ** 2 / (z_i + 1.0) / z
