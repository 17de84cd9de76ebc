"""Canonical ensembles and localized block generators.

A block is a finite set of sites carrying fugacities.  Conditioning the
product measure on the particle number gives the canonical measure; the
localized generators ``S_{k,l}`` and ``S_{k,k',l}`` are reversible for it and
their spectral gaps can be computed exactly for small blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .environment import DriftField
from .invariant_measure import FugacityProfile
from .rates import RateFunction

DP_MAX_SITES = 64
DP_MAX_PARTICLES = 10_000
STATE_BUDGET = 200_000
DENSE_LIMIT = 2000


@dataclass(frozen=True)
class CanonicalBlock:
    """Product measure on ``len(phi)`` sites conditioned on ``j`` particles."""

    phi: np.ndarray
    j: int
    g: RateFunction

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=np.float64)
        object.__setattr__(self, "phi", phi)
        if phi.ndim != 1 or phi.size < 1:
            raise ValueError("block needs at least one site")
        if np.any(phi <= 0) or not np.all(np.isfinite(phi)):
            raise ValueError("fugacities must be positive and finite")
        if self.j < 0:
            raise ValueError("particle number must be nonnegative")

    @property
    def n(self) -> int:
        return self.phi.size


def _check_budget(n, j):
    if n > DP_MAX_SITES or j > DP_MAX_PARTICLES:
        raise ValueError(
            f"canonical DP budget exceeded: n={n} (max {DP_MAX_SITES}), "
            f"j={j} (max {DP_MAX_PARTICLES})"
        )


def _site_weights(g: RateFunction, phi: float, j: int, tilt: float):
    """``(phi e^{-tilt})^m / g(m)!`` for ``m = 0..j``, in floating point."""
    m = np.arange(j + 1)
    lw = m * (math.log(phi) - tilt) - g.log_factorial(j)
    return np.exp(lw - lw.max()), lw.max()


def _log_Z_table(phis, g: RateFunction, j: int) -> np.ndarray:
    """``log Z^{(n)}(m)`` for ``m = 0..j`` by convolving single-site weights.

    A common tilt ``phi -> phi e^{-tilt}`` is applied so the conditioned
    totals sit near the bulk of the product law; each convolution is
    rescaled and the scale kept as a log offset.
    """
    phis = np.asarray(phis, dtype=np.float64)
    n = phis.size
    _check_budget(n, j)
    # tilt so that a homogeneous block at the geometric-mean fugacity has
    # mean density about j/n (for g(k) ~ c k: phi ~ c rho)
    target = max(j / n, 1e-3) * g.g_star_upper
    tilt = float(np.mean(np.log(phis))) - math.log(target)
    acc = np.zeros(j + 1)
    acc[0] = 1.0
    log_scale = 0.0
    for phi in phis:
        w, off = _site_weights(g, phi, j, tilt)
        acc = np.convolve(acc, w)[: j + 1]
        top = acc.max()
        acc /= top
        log_scale += off + math.log(top)
    with np.errstate(divide="ignore"):
        out = np.log(acc) + log_scale
    # undo the tilt: Z(m) = e^{tilt m} Z_tilted(m)
    return out + tilt * np.arange(j + 1)


def canonical_log_Z(block: CanonicalBlock) -> float:
    return float(_log_Z_table(block.phi, block.g, block.j)[-1])


def canonical_expectation(block: CanonicalBlock, site: int, observable: str = "g") -> float:
    """``E[g(eta(site))]`` or ``E[eta(site)]`` under the canonical measure.

    ``E[g(eta_s)] = phi_s Z^{(n)}(j-1) / Z^{(n)}(j)`` because
    ``g(m) w_s(m) = phi_s w_s(m-1)``.  The occupancy mean conditions the
    remaining ``n-1`` sites on ``j - m``.
    """
    n, j = block.n, block.j
    if not 0 <= site < n:
        raise IndexError("site outside the block")
    _check_budget(n, j)
    if j == 0:
        return 0.0
    if observable == "g":
        lz = _log_Z_table(block.phi, block.g, j)
        return float(block.phi[site] * math.exp(lz[j - 1] - lz[j]))
    if observable == "occupancy":
        lz = _log_Z_table(block.phi, block.g, j)[j]
        if n == 1:
            return float(j)
        rest = np.delete(block.phi, site)
        lz_rest = _log_Z_table(rest, block.g, j)
        m = np.arange(j + 1)
        lw = m * math.log(block.phi[site]) - block.g.log_factorial(j)
        logp = lw + lz_rest[j - m] - lz
        return float(np.sum(m * np.exp(logp)))
    raise ValueError(f"unknown observable {observable!r}; use 'g' or 'occupancy'")


def enumerate_states(n: int, j: int) -> np.ndarray:
    """All ``eta in N_0^n`` with ``sum eta = j``, one per row (stars and bars)."""
    size = math.comb(j + n - 1, n - 1)
    if size > STATE_BUDGET:
        raise ValueError(f"state space of size {size} exceeds budget {STATE_BUDGET}")
    out = np.empty((size, n), dtype=np.int64)
    for row, bars in enumerate(combinations(range(j + n - 1), n - 1)):
        edges = (-1,) + bars + (j + n - 1,)
        out[row] = np.diff(edges) - 1
    return out


def canonical_law(phis, g: RateFunction, states: np.ndarray) -> np.ndarray:
    """Canonical probabilities of the given states (normalised over them)."""
    phis = np.asarray(phis, dtype=np.float64)
    kmax = int(states.max()) if states.size else 0
    lf = g.log_factorial(max(kmax, 1))
    logw = states @ np.log(phis) - lf[states].sum(axis=1)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def enumerate_expectation(block: CanonicalBlock, site: int, observable: str = "g") -> float:
    """Brute-force counterpart of :func:`canonical_expectation`."""
    states = enumerate_states(block.n, block.j)
    p = canonical_law(block.phi, block.g, states)
    x = states[:, site]
    f = block.g(x) if observable == "g" else x.astype(np.float64)
    return float(np.dot(p, f))


# ---------------------------------------------------------------------------
# generators


def _bond_rates(phi_a, phi_b, bias_a, bias_b):
    """``(p_{a->b}, p_{b->a})`` for a bond with ``b`` to the right of ``a``."""
    p_ab = (0.5 + bias_a) + (phi_b / phi_a) * (0.5 - bias_b)
    p_ba = (0.5 - bias_b) + (phi_a / phi_b) * (0.5 + bias_a)
    return p_ab, p_ba


@dataclass(frozen=True)
class BlockGenerator:
    """Generator matrix ``Q`` of a localized dynamics on ``Omega_{.,j}``.

    ``Q[a, b]`` is the rate from ``states[a]`` to ``states[b]``; rows sum
    to zero.  ``kappa`` is the canonical law, ``sites`` the torus sites
    (1-based) in block order and ``r`` is ``1 / min p_{x,+}``.
    """

    Q: sp.csr_matrix
    states: np.ndarray
    kappa: np.ndarray
    sites: np.ndarray
    phi: np.ndarray
    r: float

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def detailed_balance_residual(self) -> float:
        flow = sp.diags(self.kappa) @ self.Q
        diff = flow - flow.T
        return float(abs(diff).max()) if diff.nnz else 0.0

    def irreducible(self) -> bool:
        adj = (self.Q != 0).astype(np.int8)
        ncomp, _ = sp.csgraph.connected_components(adj, directed=True, connection="strong")
        return ncomp == 1


def _assemble(states, bonds, g: RateFunction):
    """Sparse ``Q`` from directed bonds ``(a, b, p)`` (rate ``g(eta_a) p / 2``)."""
    S, n = states.shape
    index = {tuple(s): i for i, s in enumerate(states.tolist())}
    rows, cols, vals = [], [], []
    gvals = g(states)
    for a, b, p in bonds:
        src = np.flatnonzero(states[:, a] > 0)
        tgt = states[src].copy()
        tgt[:, a] -= 1
        tgt[:, b] += 1
        rows.append(src)
        cols.append(np.fromiter((index[tuple(t)] for t in tgt.tolist()), np.int64, src.size))
        vals.append(0.5 * gvals[src, a] * p)
    rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    vals = np.concatenate(vals) if vals else np.zeros(0)
    off = sp.csr_matrix((vals, (rows, cols)), shape=(S, S))
    diag = np.asarray(off.sum(axis=1)).ravel()
    return (off - sp.diags(diag)).tocsr()


def _block_sites(N, k, l):
    if 2 * l + 1 > N:
        raise ValueError("block wider than the torus")
    return (np.arange(k - l, k + l + 1) - 1) % N + 1


def build_block_generator(
    env: DriftField,
    profile: FugacityProfile,
    g: RateFunction,
    j: int,
    k: int,
    l: int,
    k2: int | None = None,
) -> BlockGenerator:
    """Localized generator ``S_{k,l}`` (or ``S_{k,k2,l}`` when ``k2`` is given).

    Sites are 1-based torus indices.  Inside a block each bond ``(x, x+1)``
    carries rate ``g(eta_x) p_{x,+} / 2`` to the right and
    ``g(eta_{x+1}) p_{x+1,-} / 2`` to the left; the two-block version adds a
    bridge between ``k+l`` and ``k2-l`` with the same structure.
    """
    N = env.N
    if profile.N != N:
        raise ValueError("profile and environment sizes differ")
    first = _block_sites(N, k, l)
    blocks = [first]
    if k2 is not None:
        dist = min((k2 - k) % N, (k - k2) % N)
        if dist <= 2 * l:
            raise ValueError("two blocks must satisfy |k - k2| > 2l")
        blocks.append(_block_sites(N, k2, l))
    sites = np.concatenate(blocks)
    if np.unique(sites).size != sites.size:
        raise ValueError("blocks overlap")
    phi = profile.phi[sites - 1]
    bias = env.bias[sites - 1]
    n = sites.size
    states = enumerate_states(n, j)

    bonds = []
    width = 2 * l + 1
    pairs = []
    for b in range(len(blocks)):
        base = b * width
        pairs += [(base + i, base + i + 1) for i in range(width - 1)]
    if k2 is not None:
        pairs.append((width - 1, width))  # k+l  <->  k2-l
    for a, b in pairs:
        p_ab, p_ba = _bond_rates(phi[a], phi[b], bias[a], bias[b])
        bonds += [(a, b, p_ab), (b, a, p_ba)]

    # r_{k,l,N}^{-1} = min over the block of p_{x,+} (with torus neighbours)
    right = sites % N  # 0-based index of x+1
    p_plus = (0.5 + bias) + profile.phi[right] / phi * (0.5 - env.bias[right])
    Q = _assemble(states, bonds, g)
    kappa = canonical_law(phi, g, states)
    return BlockGenerator(Q, states, kappa, sites, phi, float(1.0 / p_plus.min()))


def spectral_gap(gen: BlockGenerator, tol: float = 1e-8) -> float:
    """Smallest nonzero eigenvalue of ``-Q`` in ``L^2(kappa)``.

    The symmetrisation ``K^{1/2} Q K^{-1/2}`` is exact for reversible
    ``Q``.  Dense ``eigh`` below ``DENSE_LIMIT`` states, otherwise
    shift-invert Lanczos.
    """
    S = gen.size
    if S < 2:
        raise ValueError("a one-state chain has no spectral gap")
    s = np.sqrt(gen.kappa)
    A = sp.diags(s) @ gen.Q @ sp.diags(1.0 / s)
    A = -0.5 * (A + A.T)
    if S <= DENSE_LIMIT:
        ev = sla.eigh(A.toarray(), eigvals_only=True, subset_by_index=[0, 1])
    else:
        ev = spla.eigsh(A.tocsc(), k=2, sigma=-1e-6, which="LM", tol=tol, return_eigenvectors=False)
        ev = np.sort(ev)
        if not np.all(np.isfinite(ev)):
            raise ArithmeticError("eigensolver did not converge")
    if abs(ev[0]) > 1e-8 * max(1.0, abs(ev[1])):
        raise ArithmeticError(f"lowest eigenvalue {ev[0]:.3e} is not zero; chain not conservative?")
    return float(ev[1])


def gap_envelope(gen: BlockGenerator, j: int, l: int, c_cal: float) -> float:
    """``C (2l+1)^2 r (phi_max/phi_min)^{2j}`` for the sites of one block."""
    ratio = gen.phi.max() / gen.phi.min()
    return c_cal * (2 * l + 1) ** 2 * gen.r * ratio ** (2 * j)


# ---------------------------------------------------------------------------
# full generator on a small torus


@dataclass(frozen=True)
class TorusChain:
    """The zero-range generator on the whole torus at fixed particle number."""

    Q: np.ndarray
    states: np.ndarray

    def stationary(self) -> np.ndarray:
        """Solve ``pi Q = 0``, ``sum pi = 1`` (one balance equation replaced)."""
        S = self.states.shape[0]
        A = self.Q.T.copy()
        A[-1, :] = 1.0
        rhs = np.zeros(S)
        rhs[-1] = 1.0
        pi = np.linalg.solve(A, rhs)
        return pi


def torus_generator(env: DriftField, g: RateFunction, total: int) -> TorusChain:
    """Dense generator of ``L`` on ``{eta : sum eta = total}`` (no time speed-up)."""
    N = env.N
    states = enumerate_states(N, total)
    if states.shape[0] > DENSE_LIMIT:
        raise ValueError("torus chain too large for the dense oracle")
    index = {tuple(s): i for i, s in enumerate(states.tolist())}
    S = states.shape[0]
    Q = np.zeros((S, S))
    pr = env.p_right
    for a, s in enumerate(states.tolist()):
        for x in range(N):
            if s[x] == 0:
                continue
            rate = float(g(s[x]))
            for y, p in (((x + 1) % N, pr[x]), ((x - 1) % N, 1.0 - pr[x])):
                t = list(s)
                t[x] -= 1
                t[y] += 1
                Q[a, index[tuple(t)]] += rate * p
    Q[np.diag_indices(S)] = -Q.sum(axis=1)
    return TorusChain(Q, states)
