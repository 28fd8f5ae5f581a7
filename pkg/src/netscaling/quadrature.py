"""Small quadrature toolkit shared by the energy code and the oracles."""

from __future__ import annotations

import math
from typing import Callable, Sequence

Integrand = Callable[[float], float]


def sqrt_antiderivative(x: float, b: float) -> float:
    """Antiderivative of sqrt(x**2 + b**2) in x, continuous in b down to b = 0."""
    b = abs(b)
    r = math.hypot(x, b)
    if b == 0.0:
        return 0.5 * x * r
    return 0.5 * x * r + 0.5 * b * b * math.asinh(x / b)


def _simpson(fa: float, fm: float, fb: float, a: float, b: float) -> float:
    return (b - a) * (fa + 4.0 * fm + fb) / 6.0


def _adaptive(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm = 0.5 * (a + m)
    rm = 0.5 * (m + b)
    flm = f(lm)
    frm = f(rm)
    left = _simpson(fa, flm, fm, a, m)
    right = _simpson(fm, frm, fb, m, b)
    delta = left + right - whole
    if depth <= 0 or abs(delta) <= 15.0 * tol:
        return left + right + delta / 15.0
    return (_adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + _adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1))


def adaptive_simpson(f: Integrand, a: float, b: float, tol: float = 1e-12,
                     breakpoints: Sequence[float] = (), max_depth: int = 50) -> float:
    """Integrate ``f`` over [a, b] by recursive Simpson with Richardson correction.

    ``breakpoints`` inside (a, b) split the interval first; put kinks of a
    piecewise-smooth integrand there so every panel sees a smooth function.
    ``tol`` is an absolute tolerance distributed over the panels by length.
    """
    if b == a:
        return 0.0
    if b < a:
        return -adaptive_simpson(f, b, a, tol, breakpoints, max_depth)
    cuts = sorted({a, b, *(p for p in breakpoints if a < p < b)})
    total = 0.0
    span = b - a
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        fa, fb = f(lo), f(hi)
        fm = f(0.5 * (lo + hi))
        whole = _simpson(fa, fm, fb, lo, hi)
        total += _adaptive(f, lo, hi, fa, fm, fb, whole, tol * (hi - lo) / span, max_depth)
    return total


def composite_simpson(f: Integrand, a: float, b: float, panels: int) -> float:
    """Fixed-step composite Simpson rule with ``panels`` panels (2*panels+1 nodes)."""
    if panels < 1:
        raise ValueError("panels must be >= 1")
    h = (b - a) / panels
    acc = f(a) + f(b)
    for i in range(panels):
        acc += 4.0 * f(a + (i + 0.5) * h)
        if i:
            acc += 2.0 * f(a + i * h)
    return acc * h / 6.0
