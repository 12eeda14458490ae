"""Tracy-Widom distribution for real symmetric matrices (Dyson index 1).

Values come from a tabulated CDF (``data/tw1_cdf.csv``) interpolated with a
monotone piecewise cubic, so the CDF is non-decreasing everywhere and the
quantile function is its exact inverse up to root-finding tolerance.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq


@dataclass(frozen=True)
class TwTable:
    grid: np.ndarray
    cdf: np.ndarray

    def __post_init__(self):
        if self.grid.ndim != 1 or self.grid.shape != self.cdf.shape:
            raise ValueError("grid and cdf must be 1-d arrays of equal length")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(np.diff(self.cdf) <= 0):
            raise ValueError("cdf must be strictly increasing")
        if self.cdf[0] <= 0 or self.cdf[-1] >= 1:
            raise ValueError("cdf values must lie in (0, 1)")

    @classmethod
    def from_csv(cls, fh) -> "TwTable":
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["x", "cdf"]:
            raise ValueError(f"expected header 'x,cdf', got {header!r}")
        rows = [(float(x), float(f)) for x, f in reader]
        arr = np.array(rows)
        return cls(arr[:, 0].copy(), arr[:, 1].copy())


@lru_cache(maxsize=1)
def default_table() -> TwTable:
    with resources.files("smtnet").joinpath("data/tw1_cdf.csv").open() as fh:
        return TwTable.from_csv(fh)


@lru_cache(maxsize=1)
def _interpolant():
    """Lower branch on F, upper branch on 1 - F, joined at a grid node.

    Interpolating the survival function above the median keeps relative
    precision in the upper tail, where F itself is 1 to within a few ulp
    and rounding noise would break monotonicity.
    """
    t = default_table()
    j = int(np.searchsorted(t.cdf, 0.5))
    lower = PchipInterpolator(t.grid[: j + 1], t.cdf[: j + 1], extrapolate=False)
    upper = PchipInterpolator(t.grid[j:], 1.0 - t.cdf[j:], extrapolate=False)
    x_join, f_join = t.grid[j], t.cdf[j]

    def f(x):
        x = np.asarray(x, dtype=np.float64)
        lo = x < x_join
        out = np.empty_like(x)
        out[lo] = np.minimum(lower(x[lo]), f_join)
        out[~lo] = 1.0 - upper(x[~lo])
        return out

    return f


def tw1_cdf(x):
    """CDF of TW1; clamps to 0 and 1 outside the tabulated range."""
    xa = np.asarray(x, dtype=np.float64)
    if np.any(np.isnan(xa)):
        raise ValueError("tw1_cdf: NaN input")
    t = default_table()
    out = np.empty(xa.shape, dtype=np.float64)
    inside = (xa >= t.grid[0]) & (xa <= t.grid[-1])
    out[inside] = _interpolant()(xa[inside])
    out[xa < t.grid[0]] = 0.0
    out[xa > t.grid[-1]] = 1.0
    np.clip(out, 0.0, 1.0, out=out)
    return float(out) if out.ndim == 0 else out


def tw1_quantile(p: float) -> float:
    """Inverse of :func:`tw1_cdf` for ``p`` in (0, 1).

    Probabilities beyond the table's first or last CDF value map to the
    table's end points.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"tw1_quantile: p={p} outside (0, 1)")
    t = default_table()
    if p <= t.cdf[0]:
        return float(t.grid[0])
    if p >= t.cdf[-1]:
        return float(t.grid[-1])
    i = int(np.searchsorted(t.cdf, p))
    lo, hi = t.grid[i - 1], t.grid[i]
    f = _interpolant()
    return float(brentq(lambda s: float(f(np.array([s]))[0]) - p, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps))
