"""Jump-rate functions ``g`` of the zero-range process."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class RateFunctionError(ValueError):
    """A table violates the standing assumptions on ``g``.

    ``pair`` holds the first offending ``(k, j)`` when the failure is about
    a pair of occupations, otherwise ``None``.
    """

    def __init__(self, msg, pair=None):
        super().__init__(msg)
        self.pair = pair


@dataclass(frozen=True)
class RateFunction:
    """Tabulated ``g(0..K)`` with certified constants.

    Beyond the table ``g`` is continued linearly with the last slope.

    Attributes
    ----------
    table : ndarray
        ``g(0), ..., g(K)``.
    g_star_upper : float
        ``g* = sup_k |g(k+1) - g(k)|``.
    g_star_lower : float
        ``g_* = inf_k g(k)/k``.
    c1, k0 : float, int
        ``g(k) - g(j) >= c1`` whenever ``k >= j + k0``.
    name : str
        Preset name or ``"table"``.
    """

    table: np.ndarray
    g_star_upper: float
    g_star_lower: float
    c1: float
    k0: int
    name: str = "table"

    @property
    def K(self) -> int:
        return self.table.size - 1

    @property
    def slope(self) -> float:
        return float(self.table[-1] - self.table[-2])

    @property
    def linear_coefficient(self) -> float | None:
        """``c`` if ``g(k) = c k`` exactly, else ``None``."""
        c = self.table[1]
        k = np.arange(self.table.size)
        if np.all(self.table == c * k):
            return float(c)
        return None

    @property
    def max_rate_per_particle(self) -> float:
        """``sup_k g(k)/k``, the thinning bound used by the particle kernel."""
        k = np.arange(1, self.table.size)
        return float(max(np.max(self.table[1:] / k), self.slope))

    def __call__(self, k):
        k = np.asarray(k)
        inside = np.minimum(k, self.K)
        out = self.table[inside].astype(np.float64)
        over = k > self.K
        if np.any(over):
            out = np.where(over, self.table[-1] + (k - self.K) * self.slope, out)
        return out

    def extended(self, K: int) -> np.ndarray:
        """``g(0..K)`` including the linear continuation."""
        return self(np.arange(K + 1))

    def log_factorial(self, n_max: int) -> np.ndarray:
        """``log g(n)!`` for ``n = 0..n_max``."""
        vals = self.extended(max(n_max, 1))[1 : n_max + 1]
        return np.concatenate(([0.0], np.cumsum(np.log(vals))))


def certify_rate_function(table, name: str = "table") -> RateFunction:
    """Check the standing assumptions on a rate table and compute its constants.

    Raises
    ------
    RateFunctionError
        if ``g(0) != 0``, ``g(k) <= 0`` for some ``k >= 1``, the linear
        continuation is not increasing, or no ``(c1, k0)`` exists.
    """
    g = np.asarray(table, dtype=np.float64)
    if g.ndim != 1 or g.size < 2:
        raise RateFunctionError("rate table needs g(0) and at least g(1)")
    if not np.all(np.isfinite(g)):
        raise RateFunctionError("rate table must be finite")
    if g[0] != 0.0:
        raise RateFunctionError(f"g(0) must be 0, got {g[0]}")
    bad = np.flatnonzero(g[1:] <= 0.0)
    if bad.size:
        raise RateFunctionError(f"g({bad[0] + 1}) = {g[bad[0] + 1]} is not positive")
    K = g.size - 1
    slope = g[-1] - g[-2] if K >= 2 else g[1]
    gx = _extend(g, 2 * K + 2)
    diffs = np.diff(gx)
    g_upper = float(np.max(np.abs(diffs)))
    k = np.arange(1, gx.size)
    g_lower = float(min(np.min(gx[1:] / k), slope))

    # smallest k0 with min_{k >= j + k0} g(k) - g(j) > 0, scanned over the
    # extended table; an increasing linear continuation keeps later pairs
    # no worse, a flat one can never be certified
    n = gx.size
    suffix_min = np.minimum.accumulate(gx[::-1])[::-1]
    first_violation = None
    for k0 in range(1, K + 1):
        gaps = suffix_min[k0:] - gx[: n - k0]
        c1 = float(np.min(gaps))
        if c1 > 0 and slope > 0:
            return RateFunction(g.copy(), g_upper, g_lower, c1, k0, name)
        if first_violation is None:
            j = int(np.flatnonzero(gaps <= 0)[0]) if c1 <= 0 else K
            kk = j + k0 + int(np.argmin(gx[j + k0 :]))
            first_violation = (kk, j)
    raise RateFunctionError(
        "no (c1, k0) with g(k) - g(j) >= c1 > 0 for all k >= j + k0; "
        f"first violating pair (k, j) = {first_violation}",
        pair=first_violation,
    )


def _extend(g, K):
    if K <= g.size - 1:
        return g[: K + 1].copy()
    slope = g[-1] - g[-2]
    extra = g[-1] + slope * np.arange(1, K - g.size + 2)
    return np.concatenate((g, extra))


PRESETS = {
    "linear": lambda k: k.astype(float),
    "linear2": lambda k: 2.0 * k,
    "kplusmin5": lambda k: k + np.minimum(k, 5).astype(float),
}


def preset(name: str, K: int = 64) -> RateFunction:
    """Named rate function: ``linear`` (g=k), ``linear2`` (g=2k), ``kplusmin5`` (g=k+min(k,5))."""
    if name not in PRESETS:
        raise KeyError(f"unknown rate preset {name!r}; known: {sorted(PRESETS)}")
    return certify_rate_function(PRESETS[name](np.arange(K + 1)), name=name)


def load_rate(spec: str) -> RateFunction:
    """A preset name, or a path to a text file with ``g(0) g(1) ...``."""
    if spec in PRESETS:
        return preset(spec)
    path = Path(spec)
    if not path.exists():
        raise KeyError(f"{spec!r} is neither a rate preset nor a file")
    text = path.read_text().replace(",", " ").split()
    return certify_rate_function([float(v) for v in text], name=path.stem)

