"""Compiled inner loops for the particle simulations.

Each kernel takes its random state as a ``uint64[4]`` xoshiro256+ array
seeded from a ``numpy.random.SeedSequence``, so replicas are reproducible
and independent without touching numba's global generator.
"""

from __future__ import annotations

import numba as nb
import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def seed_state(seed_seq: np.random.SeedSequence) -> np.ndarray:
    s = seed_seq.generate_state(4, np.uint64)
    if not s.any():
        s[0] = 1
    return s


@nb.njit(inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@nb.njit(inline="always")
def _next(s):
    result = s[0] + s[3]
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@nb.njit(inline="always")
def uniform(s):
    """Uniform double in ``[0, 1)`` from the top 53 bits."""
    return float(_next(s) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@nb.njit(inline="always")
def exponential(s):
    return -np.log(1.0 - uniform(s))


@nb.njit(cache=True)
def uniforms(s, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = uniform(s)
    return out


# ---------------------------------------------------------------------------
# sum tree


@nb.njit(cache=True)
def tree_build(tree, eta, gtab, P):
    tree[:] = 0.0
    for k in range(eta.size):
        tree[P + k] = gtab[eta[k]]
    for i in range(P - 1, 0, -1):
        tree[i] = tree[2 * i] + tree[2 * i + 1]


@nb.njit(inline="always")
def _tree_set(tree, P, k, val):
    i = P + k
    tree[i] = val
    i >>= 1
    while i >= 1:
        tree[i] = tree[2 * i] + tree[2 * i + 1]
        i >>= 1


@nb.njit(inline="always")
def _tree_find(tree, P, u):
    # u in [0, root): descend to the leaf whose prefix interval contains u
    i = 1
    while i < P:
        left = tree[2 * i]
        if u < left:
            i = 2 * i
        else:
            u -= left
            i = 2 * i + 1
    return i - P


@nb.njit(cache=True)
def tree_select(tree, P, u):
    """Site index for ``u`` uniform in ``[0, 1)``, guarding round-off."""
    k = _tree_find(tree, P, u * tree[1])
    while tree[P + k] <= 0.0:  # landed on an empty leaf through rounding
        k -= 1
        if k < 0:
            k = _tree_find(tree, P, 0.5 * tree[1])
    return k


@nb.njit(cache=True)
def tree_apply(tree, eta, gtab, P, N, k, d):
    """Move one particle from ``k`` to ``k + d`` and update the two leaves."""
    y = (k + d) % N
    eta[k] -= 1
    eta[y] += 1
    _tree_set(tree, P, k, gtab[eta[k]])
    _tree_set(tree, P, y, gtab[eta[y]])
    return y


@nb.njit(cache=True)
def tree_run(eta, tree, P, pright, gtab, tau, tau_end, snaps, snap_i, out, state,
             tag_site, tag_t, tag_x, tag_n):
    """Gillespie loop on the sum tree up to micro time ``tau_end``.

    Stops early (status 1) when the tagged-path buffer is full; the caller
    grows it and resumes from the returned time, which is exact because
    waiting times are memoryless.
    """
    N = eta.size
    n_events = 0
    while True:
        root = tree[1]
        if root <= 0.0:
            t_next = np.inf
        else:
            t_next = tau + exponential(state) / root
        while snap_i < snaps.size and snaps[snap_i] < t_next:
            if snaps[snap_i] > tau_end:
                break
            out[snap_i, :] = eta
            snap_i += 1
        if t_next > tau_end:
            return tau_end, n_events, snap_i, tag_site, tag_n, 0
        tau = t_next
        k = tree_select(tree, P, uniform(state))
        d = 1 if uniform(state) < pright[k] else -1
        m = eta[k]
        moved = tag_site == k and uniform(state) * m < 1.0
        y = tree_apply(tree, eta, gtab, P, N, k, d)
        n_events += 1
        if moved:
            tag_site = y
            tag_t[tag_n] = tau
            tag_x[tag_n] = y
            tag_n += 1
            if tag_n == tag_t.size:
                return tau, n_events, snap_i, tag_site, tag_n, 1


# ---------------------------------------------------------------------------
# particle thinning


@nb.njit(cache=True)
def thin_run(pos, eta, pright, gtab, cmax, tau, tau_end, snaps, snap_i, out, state,
             Gv, Dv, mg_out, mg):
    """Exact simulation by thinning a uniform per-particle clock.

    Proposals arrive at rate ``n_particles * cmax``; the proposing particle
    sits at ``k`` with ``m`` residents and is accepted with probability
    ``g(m) / (m cmax)``, so site ``k`` fires at rate ``g(m)``.

    With ``Gv`` nonempty the martingale
    ``sum_jumps (G(y) - G(k)) / N - N^{-1} int A dtau``,
    ``A = sum_k g(eta_k) Dv_k``, is accumulated pathwise and written to
    ``mg_out`` at each snapshot; ``mg`` holds ``[jump sum, integral, A]``.
    """
    N = eta.size
    P = pos.size
    track = Gv.size > 0
    if P == 0:
        while snap_i < snaps.size and snaps[snap_i] <= tau_end:
            out[snap_i, :] = eta
            snap_i += 1
        return tau_end, 0, snap_i
    lam = P * cmax
    n_acc = 0
    A = mg[2]
    while True:
        t_next = tau + exponential(state) / lam
        while snap_i < snaps.size and snaps[snap_i] < t_next and snaps[snap_i] <= tau_end:
            if track:
                mg[1] += A * (snaps[snap_i] - tau)
                tau = snaps[snap_i]
                mg_out[snap_i] = (mg[0] - mg[1]) / N
            out[snap_i, :] = eta
            snap_i += 1
        if t_next > tau_end:
            if track:
                mg[1] += A * (tau_end - tau)
                mg[2] = A
            return tau_end, n_acc, snap_i
        if track:
            mg[1] += A * (t_next - tau)
        tau = t_next
        i = int(uniform(state) * P)
        k = pos[i]
        m = eta[k]
        if uniform(state) * cmax * m >= gtab[m]:
            continue
        if uniform(state) < pright[k]:
            y = k + 1
            if y == N:
                y = 0
        else:
            y = k - 1
            if y < 0:
                y = N - 1
        if track:
            mg[0] += Gv[y] - Gv[k]
            A += (gtab[m - 1] - gtab[m]) * Dv[k] + (gtab[eta[y] + 1] - gtab[eta[y]]) * Dv[y]
        eta[k] = m - 1
        eta[y] += 1
        pos[i] = y
        n_acc += 1


# ---------------------------------------------------------------------------
# independent walkers (linear g): banded transition kernel


@nb.njit(cache=True)
def leap_apply(pos, cdf, B, N, state):
    """Move every particle once by the banded kernel ``cdf[site, offset]``."""
    W = cdf.shape[1]
    for i in range(pos.size):
        x = pos[i]
        u = uniform(state) * cdf[x, W - 1]
        lo, hi = 0, W - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if cdf[x, mid] > u:
                hi = mid
            else:
                lo = mid + 1
        y = (x + lo - B) % N
        pos[i] = y


@nb.njit(cache=True)
def dense_apply(pos, cdf, state):
    N = cdf.shape[1]
    for i in range(pos.size):
        x = pos[i]
        u = uniform(state) * cdf[x, N - 1]
        lo, hi = 0, N - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if cdf[x, mid] > u:
                hi = mid
            else:
                lo = mid + 1
        pos[i] = lo


@nb.njit(cache=True)
def occupation(pos, N):
    eta = np.zeros(N, dtype=np.int64)
    for i in range(pos.size):
        eta[pos[i]] += 1
    return eta


# ---------------------------------------------------------------------------
# discrete-time walk in a site environment


@nb.njit(cache=True)
def sinai_run(u_env, origin, steps, state, record_every):
    """Walk ``U_{n+1} = U_n +/- 1`` w.p. ``u(U_n)``, ``1 - u(U_n)``.

    ``u_env[origin + x]`` is the probability at site ``x``.  Returns the
    positions at every ``record_every`` steps (``U_0`` first) and a flag
    that is 1 if the walk left the tabulated window.
    """
    n_rec = steps // record_every + 1
    path = np.empty(n_rec, dtype=np.int64)
    x = 0
    path[0] = 0
    r = 1
    L = u_env.size
    for n in range(1, steps + 1):
        idx = origin + x
        if idx < 0 or idx >= L:
            return path[:r], 1
        if uniform(state) < u_env[idx]:
            x += 1
        else:
            x -= 1
        if n % record_every == 0:
            path[r] = x
            r += 1
    return path[:r], 0
