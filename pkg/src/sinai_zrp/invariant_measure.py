"""Single-site thermodynamics, fugacity profiles and product measures.

The single-site law is ``P_phi(n) = phi^n / (Z(phi) g(n)!)``.  Its mean
``R(phi)`` is inverted to the homogenised rate ``Phi(rho)``, the
nonlinearity of the hydrodynamic equation.  ``solve_fugacities`` builds the
inhomogeneous fugacities that make the product measure invariant for the
biased dynamics on the torus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .environment import DriftField
from .rates import RateFunction

TAIL_TOL = 1e-14


def _truncation(g: RateFunction, phi: float) -> int:
    """Series length such that the dropped tail is below ``TAIL_TOL * Z``.

    Uses ``g(k) >= g_* k``: beyond ``n`` consecutive term ratios are at most
    ``phi / (g_* (n+1))``, which gives a geometric bound on the tail.
    """
    if phi == 0.0:
        return 0
    g_lo = g.g_star_lower
    n = max(8, int(math.ceil(2.0 * phi / g_lo)) + 8)
    while True:
        lf = g.log_factorial(n)
        idx = np.arange(n + 1)
        logw = idx * math.log(phi) - lf
        top = logw.max()
        log_z = top + math.log(np.exp(logw - top).sum())
        ratio = phi / (g_lo * (n + 1))
        if ratio < 1.0:
            log_tail = logw[-1] + math.log(ratio / (1.0 - ratio))
            if log_tail - log_z < math.log(TAIL_TOL):
                return n
        n *= 2


def _series(g: RateFunction, phis) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``log Z``, mean and variance of ``P_phi`` for an array of fugacities."""
    phis = np.atleast_1d(np.asarray(phis, dtype=np.float64))
    if np.any(phis < 0) or not np.all(np.isfinite(phis)):
        raise ValueError("fugacities must be finite and nonnegative")
    n = _truncation(g, float(phis.max()))
    lf = g.log_factorial(n)
    idx = np.arange(n + 1, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        logphi = np.log(phis)
        logw = idx[:, None] * logphi[None, :] - lf[:, None]
    logw[0, :] = 0.0  # phi^0 = 1, also for phi = 0
    top = logw.max(axis=0)
    w = np.exp(logw - top)
    s0 = w.sum(axis=0)
    mean = (idx[:, None] * w).sum(axis=0) / s0
    second = (idx[:, None] ** 2 * w).sum(axis=0) / s0
    var = np.maximum(second - mean**2, 0.0)
    return top + np.log(s0), mean, var


@dataclass(frozen=True)
class SingleSiteLaw:
    g: RateFunction
    phi: float
    z_value: float
    log_z: float
    trunc: int
    p: np.ndarray


def single_site_law(g: RateFunction, phi: float) -> SingleSiteLaw:
    if phi < 0:
        raise ValueError("fugacity must be nonnegative")
    n = _truncation(g, phi)
    idx = np.arange(n + 1)
    lf = g.log_factorial(n)
    if phi == 0.0:
        logw = np.where(idx == 0, 0.0, -np.inf)
    else:
        logw = idx * math.log(phi) - lf
    top = logw.max()
    w = np.exp(logw - top)
    s = w.sum()
    log_z = top + math.log(s)
    z = math.exp(log_z) if log_z < 709.0 else math.inf
    return SingleSiteLaw(g, float(phi), z, log_z, n, w / s)


def partition_Z(g: RateFunction, phi: float) -> tuple[float, int]:
    """``Z(phi) = sum_n phi^n / g(n)!`` and the truncation index used."""
    if phi < 0:
        raise ValueError("phi must be nonnegative")
    law = single_site_law(g, phi)
    return law.z_value, law.trunc


def log_partition(g: RateFunction, phi) -> np.ndarray:
    return _series(g, phi)[0]


def moments(g: RateFunction, phi: float) -> tuple[float, float]:
    """Mean ``R(phi)`` and variance of ``P_phi``."""
    if phi < 0:
        raise ValueError("phi must be nonnegative")
    _, m, v = _series(g, [phi])
    return float(m[0]), float(v[0])


def expect(g: RateFunction, phi: float, f) -> float:
    """``E_{P_phi}[f(X)]`` by the truncated series."""
    law = single_site_law(g, phi)
    return float(np.dot(law.p, f(np.arange(law.trunc + 1))))


def phi_of_rho(g: RateFunction, rho: float) -> tuple[float, float]:
    """``Phi(rho)`` (inverse of ``R``) and ``Phi'(rho) = Phi / sigma^2``."""
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if rho == 0.0:
        return 0.0, float(g.table[1])
    c = g.linear_coefficient
    if c is not None:
        return c * rho, c
    lo, hi = g.g_star_lower * rho, g.g_star_upper * rho
    f = lambda p: moments(g, p)[0] - rho  # noqa: E731
    flo, fhi = f(lo), f(hi)
    if flo > 0 or fhi < 0:
        # bounds hold analytically; allow for series rounding at the ends
        lo, hi = lo * (1 - 1e-9), hi * (1 + 1e-9)
    phi = brentq(f, lo, hi, xtol=1e-15 * max(1.0, rho), rtol=4 * np.finfo(float).eps, maxiter=200)
    r, var = moments(g, phi)
    # one Newton polish on R(phi) = rho, R'(phi) = var/phi
    phi = phi - (r - rho) * phi / var
    r, var = moments(g, phi)
    if abs(r - rho) > 1e-12 * (1.0 + rho):
        raise ArithmeticError(f"Phi inversion failed at rho={rho}: residual {r - rho:.2e}")
    return float(phi), float(phi / var)


def phi_of_rho_array(g: RateFunction, rho) -> np.ndarray:
    """Vectorised ``Phi`` with a Newton polish on every entry."""
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(rho < 0):
        raise ValueError("rho must be nonnegative")
    c = g.linear_coefficient
    if c is not None:
        return c * rho
    table = PhiTable.build(g, float(rho.max()) * 1.05 + 1.0)
    phi = table.phi(rho)
    pos = phi > 0
    for _ in range(2):
        _, m, v = _series(g, phi[pos])
        phi[pos] = phi[pos] - (m - rho[pos]) * phi[pos] / v
    return phi


class PhiTable:
    """Monotone interpolant of ``Phi`` (and ``Phi'``) on ``[0, rho_max]``.

    Built from the parametric curve ``(R(phi), phi)`` so no root-finding is
    needed.  For linear ``g`` it is exact.
    """

    def __init__(self, g: RateFunction, rho_max: float, rho_nodes, phi_nodes, dphi_nodes):
        self.g = g
        self.rho_max = rho_max
        self.linear = g.linear_coefficient
        self._phi = PchipInterpolator(rho_nodes, phi_nodes, extrapolate=True)
        self._dphi = PchipInterpolator(rho_nodes, dphi_nodes, extrapolate=True)
        self.max_slope = float(np.max(dphi_nodes))

    @classmethod
    def build(cls, g: RateFunction, rho_max: float, n: int = 2049) -> "PhiTable":
        c = g.linear_coefficient
        if c is not None:
            r = np.array([0.0, rho_max])
            return cls(g, rho_max, r, c * r, np.array([c, c]))
        # fugacity grid dense near zero, where Phi is steepest in relative terms
        phi_hi = g.g_star_upper * rho_max * 1.05 + 1e-12
        s = np.linspace(0.0, 1.0, n)
        phis = phi_hi * s**2
        _, m, v = _series(g, phis)
        dphi = np.empty_like(phis)
        dphi[1:] = phis[1:] / v[1:]
        dphi[0] = g.table[1]
        return cls(g, rho_max, m, phis, dphi)

    def phi(self, rho):
        rho = np.asarray(rho, dtype=np.float64)
        if self.linear is not None:
            return self.linear * rho
        if np.any(rho > self.rho_max * (1 + 1e-12)):
            raise ValueError(f"density {rho.max():g} beyond the tabulated range {self.rho_max:g}")
        return self._phi(rho)

    def dphi(self, rho):
        rho = np.asarray(rho, dtype=np.float64)
        if self.linear is not None:
            return np.full_like(rho, self.linear)
        return self._dphi(rho)

    __call__ = phi


@nb.njit(cache=True)
def _kahan_cumsum(x):
    out = np.empty_like(x)
    s = 0.0
    c = 0.0
    for i in range(x.size):
        y = x[i] - c
        t = s + y
        c = (t - s) - y
        s = t
        out[i] = s
    return out


@dataclass(frozen=True)
class FugacityProfile:
    """Invariant fugacities ``phi_1..phi_N`` (index ``k-1``), normalised to max 1."""

    N: int
    phi: np.ndarray
    gamma: float
    residual: float

    @property
    def max_min_ratio(self) -> float:
        return float(self.phi.max() / self.phi.min())

    @property
    def max_increment_times_N(self) -> float:
        return float(self.N * np.max(np.abs(self.phi - np.roll(self.phi, -1))))


def stationarity_residual(phi: np.ndarray, env: DriftField) -> np.ndarray:
    """``r_{k-1} phi_{k-1} + l_{k+1} phi_{k+1} - phi_k`` at every site."""
    b = env.bias
    r = 0.5 + b
    l = 0.5 - b
    return np.roll(r * phi, 1) + np.roll(l * phi, -1) - phi


def solve_fugacities(env: DriftField, phi_1: float = 1.0, normalize: bool = True) -> FugacityProfile:
    """Positive solution of the stationarity recursion on the torus.

    With ``r_k = 1/2 + q_k/sqrt N``, ``l_k = 1/2 - q_k/sqrt N`` the flux
    ``gamma = r_k phi_k - l_{k+1} phi_{k+1}`` is constant.  Writing
    ``D_k = sum_{i<=k} log(l_i/r_i)`` the closed-form solution is

        phi_k = phi_1 (l_1/l_k) e^{-D_{k-1}}
                [1 - (sum_{i<k} e^{D_i} / sum_{i<=N} e^{D_i}) (1 - e^{D_N})]

    which is the product formula with every product kept as a sum of logs,
    so nothing underflows for large ``N``.
    """
    N = env.N
    if N < 3:
        raise ValueError("need N >= 3")
    env.check_admissible()
    if normalize:
        phi_1 = 1.0  # the normalised profile does not depend on the free constant
    b = env.bias
    r = 0.5 + b
    l = 0.5 - b
    d = np.log(l) - np.log(r)
    D = _kahan_cumsum(d)  # D[i-1] = D_i
    eD = np.exp(D)
    C = _kahan_cumsum(eD)  # C[i-1] = sum_{i' <= i} e^{D_i'}
    total = C[-1]
    frac = np.concatenate(([0.0], C[:-1])) / total  # sum_{i<k} e^{D_i} / total
    one_minus = -math.expm1(D[-1])
    D_prev = np.concatenate(([0.0], D[:-1]))
    phi = phi_1 * (l[0] / l) * np.exp(-D_prev) * (1.0 - frac * one_minus)
    gamma = phi_1 * l[0] * one_minus / total
    if not np.all(phi > 0):
        raise ArithmeticError("fugacity solution is not strictly positive")
    if normalize:
        top = phi.max()
        phi = phi / top
        gamma = gamma / top
    res = stationarity_residual(phi, env)
    resid = float(np.max(np.abs(res)) / phi.max())
    if resid > 1e-10:
        raise ArithmeticError(f"stationarity residual {resid:.2e} exceeds 1e-10")
    return FugacityProfile(N, phi, float(gamma), resid)


def _inverse_cdf_tables(g: RateFunction, phis: np.ndarray):
    phis = np.asarray(phis, dtype=np.float64)
    n = _truncation(g, float(phis.max()))
    lf = g.log_factorial(n)
    idx = np.arange(n + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logw = idx[None, :] * np.log(phis)[:, None] - lf[None, :]
    logw[:, 0] = 0.0
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    cdf = np.cumsum(w, axis=1)
    cdf /= cdf[:, -1:]
    return cdf


def sample_product(fugacities, g: RateFunction, rng: np.random.Generator) -> np.ndarray:
    """One configuration of the product measure with marginals ``P_{phi_k}``.

    Inverse-CDF sampling from the truncated single-site tables; the dropped
    tail is below ``1e-14`` so it never matters at double precision.
    """
    phis = np.asarray(fugacities, dtype=np.float64)
    if np.any(phis < 0) or not np.all(np.isfinite(phis)):
        raise ValueError("fugacities must be positive and finite")
    uniq, inv = np.unique(phis, return_inverse=True)
    cdf = _inverse_cdf_tables(g, uniq)
    u = rng.random(phis.size)
    rows = cdf[inv]
    eta = (rows < u[:, None]).sum(axis=1)
    return eta.astype(np.int64)


def cell_averages(rho0, N: int) -> np.ndarray:
    """``rho_{k,N} = N * integral of rho0 over ((k-1)/N, k/N]``, ``k = 1..N``.

    ``rho0`` is a callable on ``[0, 1]`` (5-point Gauss-Legendre per cell)
    or an array of length ``N`` taken as already averaged.
    """
    if callable(rho0):
        nodes, weights = np.polynomial.legendre.leggauss(5)
        left = np.arange(N) / N
        x = left[:, None] + (nodes[None, :] + 1.0) / (2.0 * N)
        return (rho0(x) * weights[None, :]).sum(axis=1) / 2.0
    arr = np.asarray(rho0, dtype=np.float64)
    if arr.shape != (N,):
        raise ValueError("profile array must have length N")
    return arr.copy()


def le_fugacities(rho0, N: int, g: RateFunction) -> tuple[np.ndarray, np.ndarray]:
    """Local-equilibrium fugacities ``Phi(rho_{k,N})`` and the cell means."""
    rho = cell_averages(rho0, N)
    if np.any(rho < 0):
        raise ValueError("initial profile must be nonnegative")
    return phi_of_rho_array(g, rho), rho


def relative_entropy_le(le_phi, profile_phi, rho, g: RateFunction) -> tuple[float, float]:
    """``H(mu_le | R_N) = sum rho_k ln(phit_k/phi_k) + sum ln Z(phi_k)/Z(phit_k)``.

    Returns ``(H, H/N)``.
    """
    le_phi = np.asarray(le_phi, dtype=np.float64)
    profile_phi = np.asarray(profile_phi, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(le_phi <= 0) or np.any(profile_phi <= 0):
        raise ValueError("fugacities must be positive")
    lz_p = log_partition(g, profile_phi)
    lz_le = log_partition(g, le_phi)
    h = float(np.sum(rho * np.log(le_phi / profile_phi)) + np.sum(lz_p - lz_le))
    return h, h / rho.size


def scale_to_mass(phi, g: RateFunction, mass: float) -> tuple[np.ndarray, np.ndarray]:
    """Multiply fugacities by the constant making the mean density ``mass``.

    Returns ``(c phi, R(c phi))``.  Stationarity is preserved because the
    recursion is linear in ``phi``.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if mass <= 0:
        raise ValueError("mass must be positive")
    c_lin = g.linear_coefficient
    if c_lin is not None:
        c = c_lin * mass / phi.mean()
    else:
        lo = g.g_star_lower * mass / phi.mean()
        hi = g.g_star_upper * mass / phi.mean()
        c = brentq(lambda c: float(np.mean(_series(g, c * phi)[1])) - mass, lo * (1 - 1e-9),
                   hi * (1 + 1e-9), xtol=1e-15, rtol=1e-14)
    return c * phi, _series(g, c * phi)[1]
