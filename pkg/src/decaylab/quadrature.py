"""Quadrature helpers: adaptive Simpson with singular-endpoint splitting.

Integrands like 1/mu(s) blow up at s=0; `integrate_left_singular` splits
[a, b] into geometrically shrinking panels toward a and runs adaptive
Simpson on each, so the singularity is resolved without ever evaluating
at the endpoint itself.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

DEFAULT_PANEL_TOL = 1e-10
_MAX_DEPTH = 48


def _simpson(f: Callable[[float], float], a: float, fa: float, b: float, fb: float,
             fm: float) -> float:
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb)


def adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                     tol: float = DEFAULT_PANEL_TOL) -> float:
    """Adaptive Simpson on [a, b] to absolute tolerance `tol`.

    Raises ValueError if the integrand evaluates non-finite anywhere the
    rule touches.
    """
    if a == b:
        return 0.0
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    if not (math.isfinite(fa) and math.isfinite(fb) and math.isfinite(fm)):
        raise ValueError(f"non-finite integrand on [{a}, {b}]")
    whole = _simpson(f, a, fa, b, fb, fm)
    return _adaptive(f, a, fa, b, fb, m, fm, whole, tol, _MAX_DEPTH)


def _adaptive(f, a, fa, b, fb, m, fm, whole, tol, depth):
    lm = 0.5 * (a + m)
    rm = 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    if not (math.isfinite(flm) and math.isfinite(frm)):
        raise ValueError(f"non-finite integrand on [{a}, {b}]")
    left = _simpson(f, a, fa, m, fm, flm)
    right = _simpson(f, m, fm, b, fb, frm)
    err = left + right - whole
    if depth <= 0 or abs(err) <= 15.0 * tol:
        return left + right + err / 15.0
    half = 0.5 * tol
    return (_adaptive(f, a, fa, m, fm, lm, flm, left, half, depth - 1)
            + _adaptive(f, m, fm, b, fb, rm, frm, right, half, depth - 1))


def integrate_left_singular(f: Callable[[float], float], a: float, b: float,
                            tol: float = DEFAULT_PANEL_TOL, ratio: float = 2.0) -> float:
    """Integrate f on [a, b], 0 < a < b, with a possible blow-up as s -> 0.

    Panels [a, ratio*a], [ratio*a, ratio^2*a], ... up to b; adaptive
    Simpson per panel at absolute tolerance `tol` each.
    """
    if not (0.0 < a <= b):
        raise ValueError(f"need 0 < a <= b, got [{a}, {b}]")
    total = 0.0
    lo = a
    while lo < b:
        hi = min(lo * ratio, b)
        total += adaptive_simpson(f, lo, hi, tol)
        lo = hi
    return total


_GAUSS_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_nodes(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on [-1, 1], cached."""
    if order not in _GAUSS_CACHE:
        x, w = np.polynomial.legendre.leggauss(order)
        _GAUSS_CACHE[order] = (x, w)
    return _GAUSS_CACHE[order]


def gauss_panels(fvec: Callable[[np.ndarray], np.ndarray], lo: np.ndarray,
                 hi: np.ndarray, order: int = 12) -> np.ndarray:
    """Fixed-order Gauss quadrature of a vectorized integrand on many panels.

    lo, hi are equal-shape arrays of panel endpoints; returns the per-panel
    integrals. Accurate to near machine precision for integrands smooth on
    each (narrow) panel.
    """
    x, w = gauss_nodes(order)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = mid[..., None] + half[..., None] * x
    vals = fvec(nodes.reshape(-1)).reshape(nodes.shape)
    return half * (vals @ w)
