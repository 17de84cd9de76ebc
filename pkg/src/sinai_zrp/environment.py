"""Quenched random environment.

A quenched sample is the pair ``(seed, law)``.  From it we draw the i.i.d.
disorder ``r_1, r_2, ...``, the normalised partial-sum walk ``X^N`` on the
grid ``{-N, ..., 2N}/N`` and the block-averaged drifts ``q_k^N`` that bias
the particle jumps.  Everything here is a pure function of its arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Disorder is drawn in fixed-size chunks, each from its own child seed, so a
# longer request always extends a shorter one (prefix consistency) and sites
# on the negative half-line can be generated lazily.
CHUNK = 4096

_LAWS = ("rademacher", "uniform", "truncated_gaussian", "zero")


@dataclass(frozen=True)
class DisorderLaw:
    """Bounded, mean-zero law of a single disorder variable.

    ``param`` is the half-width ``a`` for ``uniform`` and the truncation
    bound for ``truncated_gaussian``; it is ignored otherwise.
    """

    kind: str = "rademacher"
    param: float = 1.0

    def __post_init__(self):
        if self.kind not in _LAWS:
            raise ValueError(
                f"unsupported disorder law {self.kind!r}; bounded laws only: {_LAWS}"
            )
        if self.kind in ("uniform", "truncated_gaussian") and not (
            0.0 < self.param < math.inf
        ):
            raise ValueError(f"{self.kind} needs a finite positive parameter")

    @classmethod
    def parse(cls, text: str) -> "DisorderLaw":
        """Parse ``"rademacher"``, ``"uniform:0.5"``, ``"truncated_gaussian:2"``."""
        name, _, arg = text.strip().partition(":")
        name = name.strip().lower().replace("-", "_")
        if name in ("gaussian", "normal"):
            raise ValueError(
                "unbounded disorder is not supported: u = 1/2 + r/sqrt(N) must "
                "stay in (0, 1); use truncated_gaussian:<bound>"
            )
        if name == "uniform_pm_a":
            name = "uniform"
        return cls(name, float(arg) if arg else 1.0)

    def __str__(self):
        if self.kind in ("uniform", "truncated_gaussian"):
            return f"{self.kind}:{self.param:g}"
        return self.kind

    @property
    def bound(self) -> float:
        if self.kind == "rademacher":
            return 1.0
        if self.kind == "zero":
            return 0.0
        return self.param

    @property
    def sigma(self) -> float:
        """Standard deviation of the law (1 for the degenerate zero law).

        The zero law has no spread; we report 1 so that the walk
        normalisation stays finite and the walk is identically zero.
        """
        if self.kind == "rademacher":
            return 1.0
        if self.kind == "uniform":
            return self.param / math.sqrt(3.0)
        if self.kind == "truncated_gaussian":
            b = self.param
            mass = math.erf(b / math.sqrt(2.0))
            dens = math.exp(-0.5 * b * b) / math.sqrt(2.0 * math.pi)
            return math.sqrt(1.0 - 2.0 * b * dens / mass)
        return 1.0

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "rademacher":
            return 2.0 * rng.integers(0, 2, size=size).astype(np.float64) - 1.0
        if self.kind == "uniform":
            return rng.uniform(-self.param, self.param, size=size)
        if self.kind == "truncated_gaussian":
            out = np.empty(size)
            filled = 0
            while filled < size:
                x = rng.standard_normal(2 * (size - filled) + 16)
                x = x[np.abs(x) <= self.param][: size - filled]
                out[filled : filled + x.size] = x
                filled += x.size
            return out
        return np.zeros(size)


def _chunk_key(c: int) -> int:
    # interleave chunk indices of both half-lines onto nonnegative spawn keys
    return 2 * c if c >= 0 else -2 * c - 1


def draw_sites(seed: int, law: DisorderLaw, start: int, stop: int) -> np.ndarray:
    """Disorder values ``r_i`` for integer sites ``start <= i < stop``.

    Site ``i`` always receives the same value for a given ``(seed, law)``,
    whichever window is requested.
    """
    if stop <= start:
        return np.zeros(0)
    out = np.empty(stop - start)
    c0, c1 = start // CHUNK, (stop - 1) // CHUNK
    for c in range(c0, c1 + 1):
        ss = np.random.SeedSequence(seed, spawn_key=(_chunk_key(c),))
        vals = law.draw(np.random.Generator(np.random.PCG64(ss)), CHUNK)
        lo = max(start, c * CHUNK)
        hi = min(stop, (c + 1) * CHUNK)
        out[lo - start : hi - start] = vals[lo - c * CHUNK : hi - c * CHUNK]
    return out


@dataclass(frozen=True)
class DisorderSequence:
    """The disorder ``r_1, ..., r_M`` of one quenched sample."""

    seed: int | None
    law: DisorderLaw | None
    values: np.ndarray
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @classmethod
    def from_values(cls, values, sigma: float = 1.0) -> "DisorderSequence":
        """Wrap a hand-made sequence (used for degenerate test environments)."""
        return cls(None, None, np.asarray(values, dtype=np.float64).copy(), float(sigma))

    def __len__(self):
        return self.values.size

    @property
    def bound(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


def gen_disorder(seed: int, count: int, law: DisorderLaw | str = "rademacher") -> DisorderSequence:
    """Draw ``r_1..r_count`` for the quenched sample ``(seed, law)``."""
    if isinstance(law, str):
        law = DisorderLaw.parse(law)
    if count < 1:
        raise ValueError("count must be >= 1")
    values = draw_sites(seed, law, 1, count + 1)
    return DisorderSequence(seed, law, values, law.sigma)


@dataclass(frozen=True)
class WalkPath:
    """Normalised walk ``X^N`` sampled on ``u = n/N``, ``n = -N..2N``.

    ``values[n + N]`` is ``X^N_{n/N}``; in between the walk is linear.
    """

    N: int
    values: np.ndarray
    sigma: float = 1.0
    disorder: DisorderSequence | None = field(default=None, repr=False, compare=False)

    def at(self, u):
        """Piecewise-linear interpolant at ``u`` in ``[-1, 2]``."""
        u = np.asarray(u, dtype=np.float64)
        if np.any(u < -1.0 - 1e-12) or np.any(u > 2.0 + 1e-12):
            raise ValueError("walk is only defined on [-1, 2]")
        grid = np.arange(-self.N, 2 * self.N + 1) / self.N
        return np.interp(u, grid, self.values)

    def grid_value(self, n):
        """``X^N_{n/N}`` for integer ``n`` in ``[-N, 2N]``."""
        return self.values[np.asarray(n) + self.N]


def build_walk(d: DisorderSequence, N: int) -> WalkPath:
    """Partial-sum walk ``X^N_{n/N} = s_n / (sigma sqrt N)`` with the
    periodic-shift extension to ``[-1, 0)`` and ``(1, 2]``.

    Only ``r_1..r_N`` enter: the extension rule makes the increments
    ``N``-periodic.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if len(d) < N:
        raise ValueError(f"need at least N={N} disorder values, got {len(d)}")
    r = d.values[:N]
    s = np.concatenate(([0.0], np.cumsum(r)))
    s_N = s[N]
    full = np.empty(3 * N + 1)
    full[N : 2 * N + 1] = s
    full[:N] = s[:N] - s_N  # n = -N..-1  ->  s_{n+N} - s_N
    full[2 * N + 1 :] = s[1:] + s_N  # n = N+1..2N  ->  s_{n-N} + s_N
    return WalkPath(N, full / (d.sigma * math.sqrt(N)), d.sigma, d)


@dataclass(frozen=True)
class DriftField:
    """Block-averaged drifts ``q_k^N``, stored for ``k = 1..N`` at index ``k-1``."""

    N: int
    eps: float | None
    q: np.ndarray
    sup_scaled: float
    walk: WalkPath | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_q(cls, q, eps: float | None = None) -> "DriftField":
        """Build a drift field directly from values (small tests, N < 1/eps)."""
        q = np.asarray(q, dtype=np.float64).copy()
        N = q.size
        return cls(N, eps, q, float(np.max(np.sqrt(N) * np.abs(q))) if N else 0.0)

    @classmethod
    def zero(cls, N: int) -> "DriftField":
        return cls.from_q(np.zeros(N))

    @property
    def bias(self) -> np.ndarray:
        """``q_k / sqrt(N)``: the excess of the right-jump probability over 1/2."""
        return self.q / math.sqrt(self.N)

    @property
    def p_right(self) -> np.ndarray:
        return 0.5 + self.bias

    @property
    def admissible(self) -> bool:
        return bool(np.all(np.abs(self.bias) < 0.5))

    def check_admissible(self):
        if not self.admissible:
            k = int(np.argmax(np.abs(self.bias)))
            raise ValueError(
                f"|q_k|/sqrt(N) = {abs(self.bias[k]):.3f} >= 1/2 at site k={k + 1}; "
                "N is too small for this environment"
            )


def window_halfwidth(N: int, eps: float) -> int:
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    m = int(math.floor(eps * N))
    if m < 1:
        raise ValueError(f"eps*N = {eps * N:g} < 1: the averaging window is empty")
    return m


def epsilon_drift(w: WalkPath, eps: float) -> DriftField:
    """``q_k^N = sqrt(N)/(2m+1) * (X_{(k+m)/N} - X_{(k-m-1)/N})``, ``m = floor(eps N)``.

    The lower endpoint ``k-m-1`` makes the walk difference equal to the sum
    of the ``2m+1`` disorder values ``r_{k-m}..r_{k+m}`` (periodically),
    so that ``q_k = (2m+1)^{-1} sigma^{-1} sum_{|j-k|<=m} r_j`` exactly.
    """
    N = w.N
    m = window_halfwidth(N, eps)
    if 2 * m + 1 > 3 * N:
        raise ValueError("window wider than the stored walk")
    k = np.arange(1, N + 1)
    hi = w.grid_value(k + m)
    lo = w.grid_value(k - m - 1)
    if np.any(k + m > 2 * N) or np.any(k - m - 1 < -N):
        raise ValueError("window leaves the stored walk range [-1, 2]")
    q = math.sqrt(N) / (2 * m + 1) * (hi - lo)
    return DriftField(N, eps, q, float(np.max(np.sqrt(N) * np.abs(q))), w)


def w_prime_eps(w: WalkPath, eps: float, x):
    """Mollified white noise ``(W(x+eps) - W(x-eps)) / (2 eps)`` on the torus.

    ``x`` is reduced to ``(0, 1]``; the periodic-shift extension of the
    walk makes the result 1-periodic.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    x = np.asarray(x, dtype=np.float64)
    xr = 1.0 - np.mod(-x, 1.0)  # representative in (0, 1]
    return (w.at(xr + eps) - w.at(xr - eps)) / (2.0 * eps)


def quenched_drift(seed: int, law: DisorderLaw | str, N: int, eps: float) -> DriftField:
    """Convenience: disorder -> walk -> drift for one ``(seed, law, N, eps)``."""
    d = gen_disorder(seed, N, law)
    return epsilon_drift(build_walk(d, N), eps)
