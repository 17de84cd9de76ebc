"""Exact simulation of the zero-range process on the discrete torus.

A site holding ``m`` particles releases one at rate ``g(m)``; it jumps to
the right with probability ``1/2 + q_k/sqrt(N)`` and to the left otherwise.
Macroscopic time ``t`` corresponds to ``N^2 t`` microscopic time units.

Three exact engines are available:

``tree``
    event-driven Gillespie on a binary sum tree of site rates.
``thinning``
    uniform per-particle clocks thinned by ``g(m)/(m c)``; O(1) per event
    and the engine used for the martingale diagnostic.
``kernel``
    linear ``g`` only: particles are independent walkers, and the law
    after a time step is a banded transition kernel applied per particle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.stats import poisson

from . import _kernels as K
from .environment import DriftField
from .rates import RateFunction


@dataclass
class Configuration:
    """Occupation numbers ``eta(1..N)`` stored at index ``k-1``."""

    eta: np.ndarray

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=np.int64)
        if self.eta.ndim != 1 or np.any(self.eta < 0):
            raise ValueError("occupations must be a 1-d array of nonnegative integers")

    @property
    def N(self) -> int:
        return self.eta.size

    @property
    def total(self) -> int:
        return int(self.eta.sum())

    def copy(self) -> "Configuration":
        return Configuration(self.eta.copy())

    def positions(self) -> np.ndarray:
        """Site index of every particle, particles labelled by site order."""
        return np.repeat(np.arange(self.N), self.eta)


@dataclass
class DensityField:
    """Grid function on the unit torus, cell centres ``(i + 1/2)/M``."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size == 0:
            raise ValueError("a density field is a nonempty 1-d array")

    @property
    def M(self) -> int:
        return self.values.size

    @property
    def dx(self) -> float:
        return 1.0 / self.M

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.M) + 0.5) / self.M

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.dx)


def _gtab(g: RateFunction, total: int) -> np.ndarray:
    return np.ascontiguousarray(g.extended(max(total + 2, g.K)), dtype=np.float64)


def _rng_state(rng) -> np.ndarray:
    if isinstance(rng, np.random.SeedSequence):
        return K.seed_state(rng)
    if isinstance(rng, np.random.Generator):
        s = rng.integers(0, 2**64, size=4, dtype=np.uint64)
        if not s.any():
            s[0] = 1
        return s
    return K.seed_state(np.random.SeedSequence(rng))


# ---------------------------------------------------------------------------
# event-level interface


@dataclass
class EventState:
    """Mutable Gillespie state: configuration, environment and rate tree.

    ``rate_tree[P + k]`` holds ``g(eta(k))``; internal node ``i`` is the
    sum of ``2i`` and ``2i+1``, the root is ``rate_tree[1]``.
    """

    config: Configuration
    env: DriftField
    g: RateFunction
    t_micro: float = 0.0
    rate_tree: np.ndarray = field(init=False, repr=False)
    P: int = field(init=False)
    gtab: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.config.N != self.env.N:
            raise ValueError("configuration and environment sizes differ")
        self.env.check_admissible()
        self.P = 1 << max(1, (self.config.N - 1).bit_length())
        self.gtab = _gtab(self.g, self.config.total)
        self.rate_tree = np.zeros(2 * self.P)
        K.tree_build(self.rate_tree, self.config.eta, self.gtab, self.P)

    @property
    def root(self) -> float:
        return float(self.rate_tree[1])

    def coherence_error(self) -> float:
        """Max gap between the incremental tree and a rebuild from scratch."""
        fresh = np.zeros_like(self.rate_tree)
        K.tree_build(fresh, self.config.eta, self.gtab, self.P)
        return float(np.max(np.abs(fresh - self.rate_tree)))


def step(s: EventState, rng: np.random.Generator) -> tuple[int, int, float]:
    """Perform one jump; return ``(site, direction, dt)``.

    ``site`` is 1-based, ``dt`` is in macroscopic time (rate ``root N^2``).
    """
    root = s.rate_tree[1]
    if s.config.total == 0 or root <= 0.0:
        raise ValueError("empty configuration: no event can occur")
    N = s.config.N
    e, u_site, u_dir = rng.exponential(), rng.random(), rng.random()
    k = K.tree_select(s.rate_tree, s.P, u_site)
    d = 1 if u_dir < s.env.p_right[k] else -1
    K.tree_apply(s.rate_tree, s.config.eta, s.gtab, s.P, N, k, d)
    s.t_micro += e / root
    return k + 1, d, e / (root * N * N)


# ---------------------------------------------------------------------------
# trajectory simulation


def _snap_micro(snapshots, t_end, N):
    snaps = np.asarray(sorted(snapshots), dtype=np.float64)
    if snaps.size and (snaps[0] < 0 or snaps[-1] > t_end * (1 + 1e-12)):
        raise ValueError("snapshot times must lie in [0, t_end]")
    return snaps, snaps * float(N) ** 2


def pick_method(g: RateFunction, N: int) -> str:
    if g.linear_coefficient is not None and N >= 64:
        return "kernel"
    return "thinning"


def simulate(
    eta0: Configuration,
    env: DriftField,
    g: RateFunction,
    t_end: float,
    snapshots,
    rng,
    method: str = "auto",
) -> list[Configuration]:
    """Exact trajectory sampled at the given macroscopic ``snapshots``."""
    etas = simulate_array(eta0, env, g, t_end, snapshots, rng, method)
    return [Configuration(e) for e in etas]


def simulate_array(eta0, env, g, t_end, snapshots, rng, method="auto") -> np.ndarray:
    """As :func:`simulate` but returns a ``(len(snapshots), N)`` array."""
    if isinstance(eta0, Configuration):
        eta0 = eta0.eta
    eta = np.array(eta0, dtype=np.int64)
    N = eta.size
    if env.N != N:
        raise ValueError("configuration and environment sizes differ")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    env.check_admissible()
    snaps, snaps_micro = _snap_micro(snapshots, t_end, N)
    out = np.empty((snaps.size, N), dtype=np.int64)
    state = _rng_state(rng)
    if method == "auto":
        method = pick_method(g, N)
    tau_end = t_end * float(N) ** 2
    total = int(eta.sum())
    pr = np.ascontiguousarray(env.p_right)
    if method == "tree":
        P = 1 << max(1, (N - 1).bit_length())
        tree = np.zeros(2 * P)
        gtab = _gtab(g, total)
        K.tree_build(tree, eta, gtab, P)
        dummy = np.zeros(1)
        K.tree_run(eta, tree, P, pr, gtab, 0.0, tau_end, snaps_micro, 0, out, state,
                   -1, dummy, np.zeros(1, np.int64), 0)
    elif method == "thinning":
        pos = np.repeat(np.arange(N), eta).astype(np.int64)
        gtab = _gtab(g, total)
        empty = np.zeros(0)
        K.thin_run(pos, eta, pr, gtab, g.max_rate_per_particle, 0.0, tau_end,
                   snaps_micro, 0, out, state, empty, empty, empty, np.zeros(3))
    elif method == "kernel":
        c = g.linear_coefficient
        if c is None:
            raise ValueError("the kernel engine needs g(k) = c k")
        kern = WalkerKernel.shared(env, c)
        pos = np.repeat(np.arange(N), eta).astype(np.int64)
        tau = 0.0
        for i, ts in enumerate(snaps_micro):
            kern.advance(pos, ts - tau, state)
            tau = ts
            out[i] = K.occupation(pos, N)
    else:
        raise ValueError(f"unknown method {method!r}")
    if np.any(out.sum(axis=1) != total):
        raise AssertionError("particle number not conserved")
    return out


class WalkerKernel:
    """Transition law of one walker over a micro time span, for ``g = c k``.

    Each particle jumps at rate ``c``.  Over a span with ``lam = c dtau``
    expected jumps the law is ``sum_n Poisson(lam; n) P^n`` with ``P`` the
    one-step nearest-neighbour matrix.  Spans are cut into pieces of at
    most ``lam_step`` jumps and each piece is tabulated as a band of width
    ``2B + 1`` around the start site (or densely on small tori).
    """

    _shared: dict = {}

    @classmethod
    def shared(cls, env: DriftField, c: float) -> "WalkerKernel":
        """Kernel cached per environment, so replicas reuse the tables."""
        key = (env.q.tobytes(), c)
        if key not in cls._shared:
            if len(cls._shared) >= 8:
                cls._shared.pop(next(iter(cls._shared)))
            cls._shared[key] = cls(env, c)
        return cls._shared[key]

    def __init__(self, env: DriftField, c: float, lam_step: float = 64.0):
        self.N = env.N
        self.c = c
        self.pr = env.p_right
        self.lam_step = lam_step
        self._cache: dict[float, tuple] = {}

    def _build(self, lam: float):
        key = round(lam, 12)
        if key in self._cache:
            return self._cache[key]
        N = self.N
        # Poisson tail beyond lam + 12 sqrt(lam) + 25 is far below 1e-17
        nmax = int(lam + 12.0 * math.sqrt(lam) + 25.0)
        drift = float(np.max(np.abs(2.0 * self.pr - 1.0)))
        B = int(math.ceil(12.0 * math.sqrt(lam) + nmax * drift)) + 2
        W = 2 * B + 1
        weights = poisson.pmf(np.arange(nmax + 1), lam)
        if W >= N:
            Pm = np.zeros((N, N))
            idx = np.arange(N)
            Pm[idx, (idx + 1) % N] += self.pr
            Pm[idx, (idx - 1) % N] += 1.0 - self.pr
            Kmat = sla.expm(lam * (Pm - np.eye(N)))
            entry = ("dense", np.cumsum(np.maximum(Kmat, 0.0), axis=1), 0)
        else:
            offs = np.arange(W) - B
            sites = (np.arange(N)[:, None] + offs[None, :]) % N
            PR = self.pr[sites]
            PL = 1.0 - PR
            v = np.zeros((N, W))
            v[:, B] = 1.0
            acc = weights[0] * v
            for n in range(1, nmax + 1):
                nv = np.zeros_like(v)
                nv[:, 1:] += v[:, :-1] * PR[:, :-1]
                nv[:, :-1] += v[:, 1:] * PL[:, 1:]
                v = nv
                acc += weights[n] * v
            entry = ("band", np.cumsum(acc, axis=1), B)
        self._cache[key] = entry
        return entry

    def advance(self, pos: np.ndarray, dtau: float, state: np.ndarray):
        lam_total = self.c * dtau
        if lam_total <= 0:
            return
        n_full = int(lam_total // self.lam_step)
        rest = lam_total - n_full * self.lam_step
        if rest < 1e-9 * self.lam_step and n_full > 0:
            rest = 0.0
        pieces = [(self.lam_step, n_full)] + ([(rest, 1)] if rest > 0 else [])
        for lam, count in pieces:
            if count == 0:
                continue
            kind, cdf, B = self._build(lam)
            for _ in range(count):
                if kind == "band":
                    K.leap_apply(pos, cdf, B, self.N, state)
                else:
                    K.dense_apply(pos, cdf, state)


# ---------------------------------------------------------------------------
# martingale run


def simulate_martingale(eta0, env, g, t_end, snapshots, rng, G):
    """Thinning run that also returns ``M^{N,G}`` at the snapshots.

    ``G`` is a callable on the torus.  With ``D_k = (G_{k+1} + G_{k-1} -
    2G_k)/2 + (q_k/sqrt N)(G_{k+1} - G_{k-1})`` at ``G_k = G(k/N)``,

        M_t = <G, pi_t> - <G, pi_0> - N^{-1} int_0^{N^2 t} sum_k g(eta_k) D_k dtau

    is computed exactly along the path.
    """
    eta = np.array(eta0.eta if isinstance(eta0, Configuration) else eta0, dtype=np.int64)
    N = eta.size
    env.check_admissible()
    snaps, snaps_micro = _snap_micro(snapshots, t_end, N)
    Gv = np.asarray(G(np.arange(1, N + 1) / N), dtype=np.float64)
    Dv = generator_weights(Gv, env)
    total = int(eta.sum())
    gtab = _gtab(g, total)
    pos = np.repeat(np.arange(N), eta).astype(np.int64)
    out = np.empty((snaps.size, N), dtype=np.int64)
    mg_out = np.zeros(snaps.size)
    mg = np.array([0.0, 0.0, float(np.dot(gtab[eta], Dv))])
    K.thin_run(pos, eta, np.ascontiguousarray(env.p_right), gtab, g.max_rate_per_particle,
               0.0, t_end * float(N) ** 2, snaps_micro, 0, out, _rng_state(rng),
               Gv, Dv, mg_out, mg)
    return out, mg_out


def generator_weights(Gv: np.ndarray, env: DriftField) -> np.ndarray:
    """``D_k`` such that ``N^2 L <G, pi> = N sum_k g(eta_k) D_k``."""
    Gp, Gm = np.roll(Gv, -1), np.roll(Gv, 1)
    return 0.5 * (Gp + Gm - 2.0 * Gv) + env.bias * (Gp - Gm)


# ---------------------------------------------------------------------------
# observables


def block_average(c: Configuration, k: int, l: int) -> float:
    """``eta^l(k) = (2l+1)^{-1} sum_{|y-k| <= l} eta(y)``, periodic, ``k`` 1-based."""
    N = c.N
    if 2 * l + 1 > N or l < 0:
        raise ValueError("need 0 <= l and 2l + 1 <= N")
    idx = (np.arange(k - l, k + l + 1) - 1) % N
    return float(c.eta[idx].sum() / (2 * l + 1))


def block_averages(eta: np.ndarray, l: int) -> np.ndarray:
    """``eta^l(k)`` at every site at once (periodic moving average)."""
    eta = np.asarray(eta, dtype=np.float64)
    N = eta.size
    if 2 * l + 1 > N:
        raise ValueError("block wider than the torus")
    ext = np.concatenate((eta[N - l:], eta, eta[:l])) if l else eta
    cs = np.concatenate(([0.0], np.cumsum(ext)))
    return (cs[2 * l + 1:] - cs[: N]) / (2 * l + 1)


def smoothing_window(N: int, theta: float, M: int):
    """Site-index bounds ``[lo, hi]`` of the window ``|k/N - x_i| <= theta``."""
    if theta * N < 1:
        raise ValueError("theta * N must be at least 1")
    if not 0 < theta < 0.5:
        raise ValueError("theta must lie in (0, 1/2)")
    x = (np.arange(M) + 0.5) / M
    lo = np.ceil(N * (x - theta) - 1e-9).astype(np.int64)
    hi = np.floor(N * (x + theta) + 1e-9).astype(np.int64)
    return lo, hi


def smooth_empirical(c, theta: float, M: int) -> DensityField:
    """``<iota_theta(. - x_i), pi^N>`` at the cell centres of an ``M`` grid.

    ``pi^N = N^{-1} sum_k eta(k) delta_{k/N}``, ``iota_theta = (2 theta)^{-1}
    1[-theta, theta]``, periodic distance.  ``c`` may also be a 2-d array of
    configurations, in which case the fields are averaged.
    """
    eta = c.eta if isinstance(c, Configuration) else np.asarray(c)
    etas = np.atleast_2d(eta).astype(np.float64)
    N = etas.shape[1]
    lo, hi = smoothing_window(N, theta, M)
    # site k sits at k/N, stored at column k-1; extend periodically
    mean = etas.mean(axis=0)
    ext = np.concatenate((mean, mean, mean))
    cs = np.concatenate(([0.0], np.cumsum(ext)))
    # sum over sites k in [lo, hi]  ->  columns k-1+N in the tripled array
    s = cs[hi - 1 + N + 1] - cs[lo - 1 + N]
    return DensityField(s / (N * 2.0 * theta))


@dataclass(frozen=True)
class TaggedPath:
    """Piecewise-constant path: ``sites[i]`` (1-based) from ``times[i]`` on."""

    times: np.ndarray
    sites: np.ndarray
    N: int

    def position(self) -> np.ndarray:
        """Scaled positions ``x^N = site / N``."""
        return self.sites / self.N

    def unwrapped(self) -> np.ndarray:
        """Lattice displacement from the start without torus wrap-around."""
        d = np.diff(self.sites)
        d = np.where(d > self.N // 2, d - self.N, np.where(d < -(self.N // 2), d + self.N, d))
        return np.concatenate(([0], np.cumsum(d)))


def track_tagged(eta0, env, g, particle_id: int, t_end: float, rng, buffer: int = 4096):
    """Simulate to ``t_end`` and follow one labelled particle.

    Particles are labelled in site order.  When the tagged particle's site
    fires with ``m`` residents it is the one leaving with probability
    ``1/m``.  Returns ``(TaggedPath, final Configuration)``.
    """
    eta = np.array(eta0.eta if isinstance(eta0, Configuration) else eta0, dtype=np.int64)
    N = eta.size
    total = int(eta.sum())
    if not 0 <= particle_id < total:
        raise ValueError("particle id out of range")
    env.check_admissible()
    site = int(np.repeat(np.arange(N), eta)[particle_id])
    P = 1 << max(1, (N - 1).bit_length())
    tree = np.zeros(2 * P)
    gtab = _gtab(g, total)
    K.tree_build(tree, eta, gtab, P)
    state = _rng_state(rng)
    pr = np.ascontiguousarray(env.p_right)
    tau_end = t_end * float(N) ** 2
    times, sites = [np.zeros(1)], [np.array([site])]
    tau = 0.0
    no_snaps = np.zeros(0)
    out = np.zeros((0, N), dtype=np.int64)
    while True:
        tt = np.empty(buffer)
        tx = np.empty(buffer, dtype=np.int64)
        tau, _, _, site, n, status = K.tree_run(eta, tree, P, pr, gtab, tau, tau_end, no_snaps,
                                                0, out, state, site, tt, tx, 0)
        times.append(tt[:n])
        sites.append(tx[:n])
        if status == 0:
            break
    t = np.concatenate(times) / float(N) ** 2
    x = np.concatenate(sites) + 1
    return TaggedPath(t, x, N), Configuration(eta)
