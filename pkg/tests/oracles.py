"""Reference implementations used only as test oracles.

These are written independently of the library code paths on purpose: the
oracle computes the 8-corner weighted average directly from the raw sample
grid, corner by corner, while the library nests one-dimensional
interpolations. Both implement the same documented semantics (zero plane at
load 0, per-plane clamp of the CAS coordinate to 0..plane_load on the
ragged axis).
"""

import math


def _axis_corners(x: float, lo: int) -> list[tuple[int, float]]:
    frac = x - lo
    if frac == 0.0:
        return [(lo, 1.0)]
    return [(lo, 1.0 - frac), (lo + 1, frac)]


def trilinear_reference(samples, n_max: int, n: float, e: float, c: float) -> float:
    """8-corner weighted average of the drain-time grid at (n, e, c).

    ``samples`` is the raw (n_max, 32, n_max+1) array indexed [n-1, e-1, c].
    Coordinates must already be inside the lookup domain (0 <= n <= n_max,
    1 <= e <= 32, 0 <= c <= n).
    """
    assert 0.0 <= n <= n_max and 1.0 <= e <= 32.0 and 0.0 <= c <= n
    total = 0.0
    for ni, wn in _axis_corners(n, math.floor(n)):
        if ni == 0:
            continue  # zero plane contributes nothing
        cp = min(c, float(ni))
        for ei, we in _axis_corners(e, math.floor(e)):
            for ci, wc in _axis_corners(cp, math.floor(cp)):
                total += wn * we * wc * float(samples[ni - 1, ei - 1, ci])
    return total
