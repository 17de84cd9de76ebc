"""Sinai random walk, its diffusive rescaling and the Brox diffusion.

The walk in the scaled environment ``u_i = 1/2 + r_i/sqrt(N)`` is compared
with the Brox diffusion built from the potential of the same environment,
``W(x) = V(N x)``, ``V(k) = sum_{i=1}^{k} log((1 - u_i)/u_i)``:

    A(y) = int_0^y e^{W},   T(s) = int_0^s e^{-2 W(A^{-1}(B_r))} dr,
    X_t = A^{-1}(B_{T^{-1}(t)}).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy.special import gammaln
from scipy.stats import ks_2samp

from . import _kernels as K
from .environment import DisorderLaw, DisorderSequence, draw_sites


def _state(rng) -> np.ndarray:
    if isinstance(rng, np.random.Generator):
        s = rng.integers(0, 2**64, size=4, dtype=np.uint64)
        s[0] |= np.uint64(1)
        return s
    if isinstance(rng, np.random.SeedSequence):
        return K.seed_state(rng)
    return K.seed_state(np.random.SeedSequence(rng))


BROX_HX = 0.005  # spatial step of the adaptive Brox driver


# ---------------------------------------------------------------------------
# environments on Z


@dataclass
class SiteEnvironment:
    """Right-jump probabilities ``u_x`` on ``Z``, generated lazily from ``(seed, law)``.

    ``u_x = 1/2 + scale * r_x``; the Seignourel scaling is ``scale =
    N^{-1/2}``.  Site ``x`` always gets the disorder value ``r_x`` used by the
    particle system for the same seed.
    """

    seed: int | None
    law: DisorderLaw | None
    scale: float
    _lo: int = field(default=0, repr=False)
    _r: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    fixed: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def constant(cls, u: float) -> "SiteEnvironment":
        env = cls(None, None, 1.0)
        env.fixed = np.array([u])
        return env

    @classmethod
    def seignourel(cls, d: DisorderSequence | tuple, N: int) -> "SiteEnvironment":
        seed, law = (d.seed, d.law) if isinstance(d, DisorderSequence) else d
        if isinstance(law, str):
            law = DisorderLaw.parse(law)
        if law.bound / math.sqrt(N) >= 0.5:
            raise ValueError("environment leaves (0, 1): N too small for the disorder bound")
        return cls(seed, law, 1.0 / math.sqrt(N))

    def r(self, lo: int, hi: int) -> np.ndarray:
        """Disorder on sites ``lo..hi`` (inclusive), cached."""
        if self.fixed is not None:
            return np.zeros(hi - lo + 1)
        c_lo, c_hi = self._lo, self._lo + self._r.size - 1
        if self._r.size == 0 or lo < c_lo or hi > c_hi:
            nlo = min(lo, c_lo) if self._r.size else lo
            nhi = max(hi, c_hi) if self._r.size else hi
            self._r = draw_sites(self.seed, self.law, nlo, nhi + 1)
            self._lo = nlo
        return self._r[lo - self._lo : hi - self._lo + 1]

    def u(self, lo: int, hi: int) -> np.ndarray:
        if self.fixed is not None:
            return np.full(hi - lo + 1, float(self.fixed[0]))
        u = 0.5 + self.scale * self.r(lo, hi)
        if np.any(u <= 0) or np.any(u >= 1):
            raise ValueError("site probabilities outside (0, 1)")
        return u

    def potential(self, lo: int, hi: int) -> np.ndarray:
        """``V(k)`` for ``k = lo..hi`` with ``V(0) = 0`` (needs ``lo <= 0 <= hi``)."""
        if not lo <= 0 <= hi:
            raise ValueError("potential window must contain 0")
        u = self.u(lo + 1, hi)  # u_{lo+1} .. u_hi
        step = np.log1p(-u) - np.log(u)  # V(k) - V(k-1) = log((1-u_k)/u_k)
        V = np.concatenate(([0.0], np.cumsum(step)))  # V(k) - V(lo), k = lo..hi
        return V - V[-lo]


# ---------------------------------------------------------------------------
# discrete walk


def sinai_walk(env: SiteEnvironment, steps: int, rng, record_every: int = 1) -> np.ndarray:
    """``U_0 = 0``, ``U_{n+1} = U_n + 1`` w.p. ``u_{U_n}``, else ``U_n - 1``.

    Returns ``U`` at multiples of ``record_every``.  The environment window
    grows until the walk stays inside it.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    state = _state(rng)
    half = int(min(steps, 10 * math.isqrt(max(steps, 1)) + 64)) + 1
    while True:
        u = env.u(-half, half)
        st = state.copy()
        path, out = K.sinai_run(u, half, steps, st, record_every)
        if not out:
            state[:] = st
            return path
        if half > steps:
            raise RuntimeError("walk left a window wider than its length")
        half = min(2 * half, steps + 1)


# ---------------------------------------------------------------------------
# exact law of the scaled walk


@nb.njit(cache=True)
def _chebyshev_power(s_off, L, coef, kmax):
    """``sum_k coef[k] T_k(S) e_0`` for the tridiagonal symmetric ``S``.

    ``S[j, j+1] = s_off[j]``; ``e_0`` is the window centre ``L``.
    ``T_k(S) e_0`` lives on ``|j - L| <= k`` with ``j - L = k (mod 2)``, so
    ``T_{k-1}`` and ``T_k`` occupy disjoint sites and share one array: the
    three-term recurrence overwrites ``T_{k-1}`` by ``T_{k+1}`` in place.
    """
    S = 2 * L + 1
    a = np.zeros(S)
    acc = np.zeros(S)
    a[L] = 1.0
    acc[L] = coef[0]
    if kmax >= 1:
        if L >= 1:
            a[L - 1] = s_off[L - 1]
            a[L + 1] = s_off[L]
            acc[L - 1] += coef[1] * a[L - 1]
            acc[L + 1] += coef[1] * a[L + 1]
    for k in range(1, kmax):
        lo = L - k - 1
        while lo < 0:
            lo += 2
        hi = min(L + k + 1, S - 1)
        c = coef[k + 1]
        for j in range(lo, hi + 1, 2):
            v = 0.0
            if j > 0:
                v += s_off[j - 1] * a[j - 1]
            if j < S - 1:
                v += s_off[j] * a[j + 1]
            a[j] = 2.0 * v - a[j]
            if c != 0.0:
                acc[j] += c * a[j]
    return acc


def walk_law(env: SiteEnvironment, n: int, half_width: int, tol: float = 1e-18):
    """Exact law of ``U_n`` on ``[-half_width, half_width]``.

    The birth-death matrix is reversible, so ``P^n(0, y) = v(y)
    sqrt(pi_y / pi_0)`` with ``v = S^n e_0`` for the symmetrised ``S``,
    ``S[y, y+1] = sqrt(u_y (1 - u_{y+1}))``.  ``S^n`` is expanded in
    Chebyshev polynomials, ``x^n = 2^{1-n} sum_k C(n, (n-k)/2) T_k(x)``.
    Mass leaving the window is dropped and reported.

    Returns ``(sites, probabilities, lost_mass)``.
    """
    L = int(half_width)
    y = np.arange(-L, L + 1)
    u = env.u(-L, L)
    s_off = np.sqrt(u[:-1] * (1.0 - u[1:]))
    # Chebyshev coefficients; k has the parity of n
    k = np.arange(n % 2, n + 1, 2)
    logc = (1 - n) * math.log(2.0) + gammaln(n + 1) - gammaln((n - k) // 2 + 1) - gammaln((n + k) // 2 + 1)
    logc = np.where(k == 0, logc - math.log(2.0), logc)
    keep = logc > math.log(tol)
    kmax = int(k[keep].max()) if keep.any() else 0
    coef = np.zeros(kmax + 1)
    sel = k[keep]
    coef[sel] = np.exp(logc[keep])
    v = _chebyshev_power(s_off, L, coef, kmax)
    # log pi_y with pi_{y+1}/pi_y = u_y / (1 - u_{y+1})
    dlog = np.log(u[:-1]) - np.log1p(-u[1:])
    logpi = np.concatenate(([0.0], np.cumsum(dlog)))
    logpi -= logpi[L]
    p = np.maximum(v, 0.0) * np.exp(0.5 * logpi)
    p[(y - n) % 2 != 0] = 0.0
    total = p.sum()
    return y, p / total, float(max(0.0, 1.0 - total))


def seignourel_sample(d, N: int, t: float, rng, size: int = 1, half_width: int | None = None,
                      uniforms=None):
    """Samples of ``N^{-1} U^N_{floor(N^2 t)}`` in ``u_i = 1/2 + r_i/sqrt(N)``.

    Drawn by inverse transform from the exact law (:func:`walk_law`).
    ``uniforms`` may be supplied to couple samples across ``N`` (common
    random numbers); otherwise they come from ``rng``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    n = int(math.floor(N * N * t))
    if n == 0:
        return np.zeros(size)
    env = SiteEnvironment.seignourel(d, N)
    L = half_width if half_width is not None else min(10 * N, n)
    y, p, lost = walk_law(env, n, L)
    if lost > 1e-6:
        raise RuntimeError(f"window too small: lost mass {lost:.2e}")
    cdf = np.cumsum(p)
    u = np.asarray(uniforms) if uniforms is not None else rng.random(size)
    idx = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), y.size - 1)
    return y[idx] / N


def seignourel_walk_sample(d, N: int, t: float, rng, size: int = 1) -> np.ndarray:
    """Same law as :func:`seignourel_sample` by running the walk (small ``N``)."""
    n = int(math.floor(N * N * t))
    env = SiteEnvironment.seignourel(d, N)
    ss = np.random.SeedSequence(int(rng.integers(2**63)))
    out = np.empty(size)
    for i, child in enumerate(ss.spawn(size)):
        path = sinai_walk(env, n, child, record_every=max(n, 1))
        out[i] = path[-1] / N
    return out


# ---------------------------------------------------------------------------
# Brox diffusion


@dataclass
class BrownianDriver:
    """Brownian path ``B`` on a uniform grid of step ``dt_b`` over ``[0, T_b]``.

    Increments come from ``seed`` (level 0).  :meth:`refined` inserts
    Brownian-bridge midpoints, so every refinement is the same path.
    """

    seed: int
    dt_b: float
    T_b: float
    level: int = 0
    B: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.B is None:
            n = int(math.ceil(self.T_b / self.dt_b - 1e-9))
            rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(0,)))
            inc = rng.standard_normal(n) * math.sqrt(self.dt_b)
            self.B = np.concatenate(([0.0], np.cumsum(inc)))
            self.T_b = n * self.dt_b

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.B.size) * self.dt_b

    def refined(self) -> "BrownianDriver":
        lvl = self.level + 1
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(lvl,)))
        mid = 0.5 * (self.B[:-1] + self.B[1:]) + rng.standard_normal(self.B.size - 1) * math.sqrt(
            self.dt_b / 4.0
        )
        B = np.empty(2 * self.B.size - 1)
        B[0::2] = self.B
        B[1::2] = mid
        return BrownianDriver(self.seed, self.dt_b / 2.0, self.T_b, lvl, B)

    def at(self, s: float) -> float:
        return float(np.interp(s, self.times, self.B))


def _exp_table(W: np.ndarray, h: float, sign: float) -> np.ndarray:
    """Cumulative ``int e^{sign W}`` over a piecewise-linear ``W``, exact per piece."""
    a, b = sign * W[:-1], sign * W[1:]
    dw = b - a
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        seg = np.where(np.abs(dw) > 1e-12, h * (np.exp(b) - np.exp(a)) / dw,
                       h * np.exp(0.5 * (a + b)) * (1.0 + dw * dw / 24.0))
    return np.concatenate(([0.0], np.cumsum(seg)))


@dataclass(frozen=True)
class Potential:
    """Piecewise-linear ``W`` on a uniform grid ``x_0 + i h``.

    ``A = int_0 e^{W}`` is the scale function and ``C = int_0 e^{-W}``
    drives the clock; both are tabulated by exact integration on each
    linear piece and vanish at ``x = 0``.
    """

    x0: float
    h: float
    W: np.ndarray
    A: np.ndarray
    C: np.ndarray

    @classmethod
    def from_values(cls, x0: float, h: float, W) -> "Potential":
        W = np.asarray(W, dtype=np.float64)
        i0 = int(round(-x0 / h))
        if abs(x0 + i0 * h) > 1e-9 * h or not 0 <= i0 < W.size:
            raise ValueError("grid must contain x = 0")
        A = _exp_table(W, h, 1.0)
        C = _exp_table(W, h, -1.0)
        return cls(x0, h, W, A - A[i0], C - C[i0])

    @classmethod
    def from_callable(cls, f, half: float, h: float) -> "Potential":
        n = int(round(half / h))
        x = np.arange(-n, n + 1) * h
        return cls.from_values(-n * h, h, f(x))

    @classmethod
    def from_environment(cls, env: SiteEnvironment, N: int, half: float) -> "Potential":
        """``W(x) = V(N x)`` on ``[-half, half]``, grid ``1/N``."""
        L = int(math.ceil(half * N))
        return cls.from_values(-L / N, 1.0 / N, env.potential(-L, L))

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.h * np.arange(self.W.size)

    @property
    def half(self) -> float:
        return min(-self.x0, self.x[-1])

    def w(self, x):
        return np.interp(x, self.x, self.W)

    def a(self, x):
        return self._int(x, self.A, 1.0)

    def c(self, x):
        return self._int(x, self.C, -1.0)

    def a_inv(self, b):
        return self._inv(b, self.A, 1.0)

    def c_inv(self, b):
        return self._inv(b, self.C, -1.0)

    def _int(self, x, F, sign):
        x = np.asarray(x, dtype=np.float64)
        s = (x - self.x0) / self.h
        if np.any(s < 0) or np.any(s > self.W.size - 1):
            raise WindowExhausted("point outside the potential grid")
        i = np.minimum(np.floor(s).astype(np.int64), self.W.size - 2)
        a = sign * self.W[i]
        dw = sign * self.W[i + 1] - a
        d = s - i
        with np.errstate(invalid="ignore", divide="ignore"):
            piece = np.where(np.abs(dw) > 1e-12, np.exp(a) * np.expm1(dw * d) / dw, d * np.exp(a))
        return F[i] + self.h * piece

    def _inv(self, b, F, sign):
        b = np.asarray(b, dtype=np.float64)
        if np.any(b <= F[0]) or np.any(b >= F[-1]):
            raise WindowExhausted("scale function window exhausted")
        # invert exactly on each linear piece of W
        i = np.clip(np.searchsorted(F, b, side="right") - 1, 0, F.size - 2)
        a = sign * self.W[i]
        dw = sign * self.W[i + 1] - a
        rem = (b - F[i]) * np.exp(-a) / self.h
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(np.abs(dw) > 1e-12, np.log1p(rem * dw) / dw, rem)
        return self.x[i] + self.h * frac


class WindowExhausted(RuntimeError):
    pass


@nb.njit(cache=True)
def _inv1(b, x0, h, W, F, sign):
    """Inverse of ``F = int_0 e^{sign W}``, exact on each linear piece; NaN outside."""
    n = F.size
    if b <= F[0] or b >= F[n - 1]:
        return np.nan
    lo, hi = 0, n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if F[mid] <= b:
            lo = mid
        else:
            hi = mid
    a = sign * W[lo]
    dw = sign * W[lo + 1] - a
    rem = b - F[lo]
    if abs(dw) > 1e-12:
        return x0 + h * lo + math.log1p(rem * dw / h * math.exp(-a)) / dw * h
    return x0 + h * lo + rem * math.exp(-a)


@nb.njit(cache=True)
def _int1(x, x0, h, W, F, sign):
    """``F(x)`` for ``F = int_0 e^{sign W}``; NaN outside the grid."""
    s = (x - x0) / h
    i = int(math.floor(s))
    if i < 0 or i > W.size - 1 or (i == W.size - 1 and s > i):
        return np.nan
    if i == W.size - 1:
        return F[i]
    a = sign * W[i]
    dw = sign * W[i + 1] - a
    d = (s - i) * h
    if abs(dw) > 1e-12:
        return F[i] + h / dw * math.exp(a) * math.expm1(dw * d / h)
    return F[i] + d * math.exp(a)


def brox_from_driver(pot: Potential, driver: BrownianDriver, t: float) -> float:
    """``A^{-1}(B_{T^{-1}(t)})`` along a fixed driver path.

    ``B`` is taken piecewise linear between grid points; along a linear
    piece the clock ``int e^{-2W(A^{-1}(B))}`` equals
    ``dt (C(X') - C(X)) / (B' - B)`` exactly, and ``X_t`` solves
    ``C(X_t) = C(X) + (t - T) (B' - B) / dt`` on the piece where the clock
    crosses ``t``.
    """
    if t == 0:
        return 0.0
    inside = (driver.B > pot.A[0]) & (driver.B < pot.A[-1])
    stop = driver.B.size if inside.all() else int(np.argmin(inside))
    B = driver.B[:stop]
    X = pot.a_inv(B)
    Cx = pot.c(X)
    dB = np.diff(B)
    dC = np.diff(Cx)
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = np.where(dB != 0.0, dC / dB, np.exp(-2.0 * pot.w(X[:-1])))
    T = np.concatenate(([0.0], np.cumsum(rate * driver.dt_b)))
    if T[-1] < t:
        raise WindowExhausted("driver too short: T(T_b) < t")
    j = max(int(np.searchsorted(T, t, side="left")) - 1, 0)
    return float(pot.c_inv(Cx[j] + (t - T[j]) * dB[j] / driver.dt_b))


@nb.njit(cache=True)
def _gauss(state):
    # Box-Muller, one normal per call
    u1 = K.uniform(state)
    u2 = K.uniform(state)
    return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)


@nb.njit(cache=True)
def _brox_batch(x0, h, W, A, C, t, hx, state, size, max_steps):
    """Adaptive-grid Brox samples; NaN marks an exhausted window.

    At ``X`` the driver step is ``dt = ((A(X + hx) - A(X - hx)) / 2)^2`` so
    that ``X`` moves by about ``hx``; the clock along each linear piece of
    the driver is integrated exactly through ``C``.
    """
    out = np.empty(size)
    xl = x0 + h
    xr = x0 + h * (W.size - 2)
    for r in range(size):
        y = 0.0
        x = 0.0
        cx = 0.0
        clock = 0.0
        done = False
        for _ in range(max_steps):
            lo = max(x - hx, xl)
            hi = min(x + hx, xr)
            dt = ((_int1(hi, x0, h, W, A, 1.0) - _int1(lo, x0, h, W, A, 1.0)) * hx / (hi - lo)) ** 2
            dy = math.sqrt(dt) * _gauss(state)
            if dy == 0.0:
                continue
            y2 = y + dy
            x2 = _inv1(y2, x0, h, W, A, 1.0)
            if x2 != x2:
                break
            cx2 = _int1(x2, x0, h, W, C, -1.0)
            dT = dt * (cx2 - cx) / dy
            if clock + dT >= t:
                out[r] = _inv1(cx + (t - clock) * dy / dt, x0, h, W, C, -1.0)
                done = True
                break
            clock += dT
            y, x, cx = y2, x2, cx2
        if not done:
            out[r] = np.nan
    return out


def brox_sample(pot: Potential, t: float, rng, size: int = 1, hx: float = None,
                max_steps: int = 50_000_000) -> np.ndarray:
    """Independent samples of ``X_t`` for the Brox diffusion in ``pot``.

    The driver is simulated on an adaptive grid (Gaussian increments with
    state-dependent step sizes), taken piecewise linear in between, and
    the clock is integrated exactly along it.
    """
    if t == 0:
        return np.zeros(size)
    hx = BROX_HX if hx is None else hx
    out = _brox_batch(pot.x0, pot.h, pot.W, pot.A, pot.C, float(t), float(hx), _state(rng), size,
                      max_steps)
    if np.any(np.isnan(out)):
        raise WindowExhausted(f"{int(np.isnan(out).sum())} samples left the window [-{pot.half:g}, {pot.half:g}]")
    return out


def scaled_potential(d, N: int, half: float = 12.0) -> Potential:
    """Brox potential of the Seignourel environment at scale ``N``."""
    return Potential.from_environment(SiteEnvironment.seignourel(d, N), N, half)


def ks_distance(a, b) -> float:
    return float(ks_2samp(a, b).statistic)


def compare_seignourel_brox(d, Ns, t: float, samples: int, seed: int, hx: float | None = None,
                            half: float = 12.0) -> dict:
    """KS distance between the scaled walk and Brox in the same potential, per ``N``.

    The walk samples are the stratified quantiles ``F_N^{-1}((i - 1/2)/n)``
    of the exact law and the Brox samples reuse one seed for every ``N``;
    both are common-random-number choices that keep the comparison across
    ``N`` from being swamped by sampling noise.
    """
    U = (np.arange(samples) + 0.5) / samples
    ks, pairs = [], []
    for N in Ns:
        s = seignourel_sample(d, N, t, None, size=samples, uniforms=U)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(11,)))
        b = brox_sample(scaled_potential(d, N, half), t, rng, size=samples, hx=hx)
        ks.append(ks_distance(s, b))
        pairs.append((s, b))
    return {"N": list(Ns), "ks": ks, "samples": pairs}
