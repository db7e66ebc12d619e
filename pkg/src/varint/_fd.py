"""Central finite-difference helpers.

Used by the derivative checker, by the fallback generator that fills in
missing analytic derivatives, and by tests as an independent oracle.
"""

from __future__ import annotations

import numpy as np


def jacobian(f, x, step=1e-6):
    """Second-order central-difference Jacobian of ``f`` at ``x``.

    ``f`` may return a scalar or an array; the result gains one trailing
    axis of len(x) holding the derivative direction.
    """
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * step))
    return np.stack(cols, axis=-1)


def jacobian_o4(f, x, step=1e-3):
    """Fourth-order (five-point) central-difference Jacobian."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        num = (
            -np.asarray(f(x + 2 * e))
            + 8.0 * np.asarray(f(x + e))
            - 8.0 * np.asarray(f(x - e))
            + np.asarray(f(x - 2 * e))
        )
        cols.append(num / (12.0 * step))
    return np.stack(cols, axis=-1)


def directional(f, x, u, step=1e-6):
    """Directional derivative of ``f`` along ``u``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    return (np.asarray(f(x + step * u)) - np.asarray(f(x - step * u))) / (2.0 * step)


def directional2(f, x, u, w, step=1e-4):
    """Mixed second directional derivative of ``f`` along ``u`` then ``w``."""
    x = np.asarray(x, dtype=float)
    su, sw = step * np.asarray(u, dtype=float), step * np.asarray(w, dtype=float)
    num = (
        np.asarray(f(x + su + sw))
        - np.asarray(f(x + su - sw))
        - np.asarray(f(x - su + sw))
        + np.asarray(f(x - su - sw))
    )
    return num / (4.0 * step * step)


def rel_error(approx, exact):
    """Max-norm error of ``approx`` against ``exact``, relative to max(1, scale)."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    scale = max(1.0, float(np.max(np.abs(exact), initial=0.0)))
    return float(np.max(np.abs(approx - exact), initial=0.0)) / scale
