"""Finite-volume solver for the hydrodynamic equation

    d_t rho = (1/2) d_xx Phi(rho) - 2 d_x (W'_eps Phi(rho))

on the unit torus, with weak-form and stationary-state diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import brentq

from .invariant_measure import _series, phi_of_rho_array
from .rates import RateFunction
from .zero_range import DensityField

CFL = 0.4
NEG_TOL = 1e-12
_TABLE_POINTS = 1 << 15


class PhiGrid:
    """``Phi`` as an array evaluator usable inside compiled loops.

    Linear ``g`` is exact; otherwise ``Phi`` is sampled on a uniform
    density grid and interpolated linearly (error ``O(h^2 Phi'')``, below
    1e-8 at the default resolution).
    """

    def __init__(self, g: RateFunction, rho_max: float):
        self.g = g
        self.rho_max = float(rho_max)
        c = g.linear_coefficient
        self.linear = 0.0 if c is None else float(c)
        if c is None:
            self.grid = np.linspace(0.0, self.rho_max, _TABLE_POINTS + 1)
            self.values = phi_of_rho_array(g, self.grid)
            self.max_slope = float(np.max(np.diff(self.values) / np.diff(self.grid)))
        else:
            self.grid = np.array([0.0, self.rho_max])
            self.values = c * self.grid
            self.max_slope = float(c)
        self.h = self.grid[1] - self.grid[0]

    def __call__(self, rho):
        return _phi_eval(np.atleast_1d(np.asarray(rho, dtype=np.float64)), self.linear,
                         self.values, self.h)


@nb.njit(cache=True)
def _phi_eval(rho, linear, values, h):
    out = np.empty_like(rho)
    if linear > 0.0:
        for i in range(rho.size):
            out[i] = linear * rho[i]
        return out
    n = values.size - 1
    for i in range(rho.size):
        r = rho[i]
        if r <= 0.0:
            out[i] = values[1] / h * r  # slope at 0, keeps tiny negatives odd
            continue
        s = r / h
        j = int(s)
        if j >= n:
            j = n - 1
        w = s - j
        out[i] = (1.0 - w) * values[j] + w * values[j + 1]
    return out


@nb.njit(cache=True)
def _advance(rho, drift, dx, dt, n_steps, central, linear, values, h, work_phi, flux):
    """``n_steps`` explicit conservative steps in place; returns min density."""
    M = rho.size
    lo = np.inf
    for _ in range(n_steps):
        ph = _phi_eval(rho, linear, values, h)
        for i in range(M):
            ip = i + 1 if i + 1 < M else 0
            diff = -(ph[ip] - ph[i]) / (2.0 * dx)
            b = drift[i]
            if central:
                adv = 0.5 * (ph[i] + ph[ip])
            elif b > 0.0:
                adv = ph[i]
            else:
                adv = ph[ip]
            flux[i] = diff + 2.0 * b * adv
        r = dt / dx
        for i in range(M):
            im = i - 1 if i > 0 else M - 1
            rho[i] -= r * (flux[i] - flux[im])
            if rho[i] < lo:
                lo = rho[i]
    return lo


@dataclass
class PdeState:
    """Current field, time and scheme data of one solve.

    ``drift[i]`` is ``W'_eps`` at the face ``x_{i+1/2} = (i+1)/M`` between
    cells ``i`` and ``i+1``.
    """

    field: DensityField
    t: float
    dx: float
    dt: float
    flux_type: str
    drift: np.ndarray = field(repr=False)


@dataclass
class PdeTrajectory:
    """Snapshots of a solve plus the data needed for weak-form checks."""

    times: np.ndarray
    fields: list
    drift: np.ndarray
    phi: PhiGrid
    dt: float
    steps: int
    flux_type: str
    mass_drift: float

    @property
    def M(self) -> int:
        return self.fields[0].M

    def array(self) -> np.ndarray:
        return np.stack([f.values for f in self.fields])


def face_drift(drift, M: int) -> np.ndarray:
    """Sample a callable ``W'_eps`` at the faces ``(i+1)/M``; arrays pass through."""
    if callable(drift):
        return np.asarray(drift((np.arange(M) + 1.0) / M), dtype=np.float64)
    arr = np.asarray(drift, dtype=np.float64)
    if arr.shape == ():
        return np.full(M, float(arr))
    if arr.shape != (M,):
        raise ValueError("drift array must have one value per face")
    return arr


def stable_dt(dx: float, max_slope: float, max_drift: float, cfl: float = CFL) -> float:
    """Parabolic limit ``cfl dx^2 / max Phi'`` tightened by the advective term."""
    return cfl * dx * dx / (max_slope * (1.0 + 2.0 * dx * max_drift))


def solve_pde(
    rho0,
    drift,
    g: RateFunction,
    t_end: float,
    snapshots=None,
    flux: str = "upwind",
    cfl: float = CFL,
    rho_max: float | None = None,
) -> PdeTrajectory:
    """Explicit conservative finite-volume solve from ``rho0`` to ``t_end``.

    Parameters
    ----------
    rho0 : DensityField or array
        Initial cell values; ``M`` must be a power of two in ``[2^7, 2^14]``.
    drift : callable, float or array
        ``W'_eps``; sampled once at the faces.
    snapshots : sequence of float, optional
        Output times (``t_end`` is always included); steps are shortened to
        land on them exactly.
    flux : {"upwind", "central"}
        Advective face value of ``Phi(rho)``.
    """
    f0 = rho0 if isinstance(rho0, DensityField) else DensityField(rho0)
    M = f0.M
    if M < 2**7 or M > 2**14 or M & (M - 1):
        raise ValueError("grid size must be a power of two between 128 and 16384")
    if np.any(f0.values < 0):
        raise ValueError("initial density must be nonnegative")
    if flux not in ("upwind", "central"):
        raise ValueError("flux must be 'upwind' or 'central'")
    if cfl > CFL:
        raise ValueError(f"CFL number above {CFL}")
    dx = 1.0 / M
    b = face_drift(drift, M)
    if rho_max is None:
        rho_max = 4.0 * float(f0.values.max()) + 1.0
    phi = PhiGrid(g, rho_max)
    dt = stable_dt(dx, phi.max_slope, float(np.max(np.abs(b))), cfl)

    times = sorted(set([0.0, float(t_end)] + [float(s) for s in (() if snapshots is None else snapshots)]))
    if times[0] < 0 or times[-1] > t_end:
        raise ValueError("snapshot times must lie in [0, t_end]")
    rho = f0.values.copy()
    mass0 = rho.sum() * dx
    work = np.empty(M)
    fl = np.empty(M)
    fields = [DensityField(rho.copy())]
    t = 0.0
    steps = 0
    worst = 0.0
    for target in times[1:]:
        span = target - t
        n_full = int(math.floor(span / dt * (1 + 1e-12)))
        done = 0
        while done < n_full:
            k = min(n_full - done, 4096)
            lo = _advance(rho, b, dx, dt, k, flux == "central", phi.linear, phi.values,
                          phi.h, work, fl)
            done += k
            steps += k
            _check(rho, lo, t + done * dt, steps, phi)
        rest = span - n_full * dt
        if rest > 1e-15 * max(1.0, target):
            lo = _advance(rho, b, dx, rest, 1, flux == "central", phi.linear, phi.values,
                          phi.h, work, fl)
            steps += 1
            _check(rho, lo, target, steps, phi)
        t = target
        fields.append(DensityField(rho.copy()))
        worst = max(worst, abs(rho.sum() * dx - mass0) / mass0 if mass0 else 0.0)
    return PdeTrajectory(np.array(times), fields, b, phi, dt, steps, flux, worst)


def _check(rho, lo, t, steps, phi):
    if not np.all(np.isfinite(rho)):
        raise FloatingPointError(f"non-finite density after {steps} steps (t={t:.6g})")
    if lo < -NEG_TOL:
        raise FloatingPointError(
            f"density {lo:.3e} below -{NEG_TOL:g} after {steps} steps (t={t:.6g})"
        )
    if rho.max() > phi.rho_max:
        raise FloatingPointError(
            f"density {rho.max():.3g} left the tabulated range [0, {phi.rho_max:.3g}]"
        )


# ---------------------------------------------------------------------------
# weak form


@dataclass(frozen=True)
class SeparableTest:
    """Test function ``G(s, x) = chi(s) h(x)`` with ``chi(T) = 0``.

    ``h, dh, d2h`` are callables in ``x``; ``chi, dchi`` in ``s``.
    """

    h: object
    dh: object
    d2h: object
    chi: object
    dchi: object
    name: str = ""


def trig_tests(T: float, modes=(1, 2, 3)) -> list[SeparableTest]:
    """``(1 - s/T)^2 sin(2 pi m x)`` and ``cos`` variants for each mode."""
    chi = lambda s: (1.0 - s / T) ** 2  # noqa: E731
    dchi = lambda s: -2.0 * (1.0 - s / T) / T  # noqa: E731
    out = []
    for m in modes:
        w = 2.0 * math.pi * m
        out.append(SeparableTest(lambda x, w=w: np.sin(w * x), lambda x, w=w: w * np.cos(w * x),
                                 lambda x, w=w: -w * w * np.sin(w * x), chi, dchi, f"sin{m}"))
        out.append(SeparableTest(lambda x, w=w: np.cos(w * x), lambda x, w=w: -w * np.sin(w * x),
                                 lambda x, w=w: -w * w * np.cos(w * x), chi, dchi, f"cos{m}"))
    return out


def weak_residual(traj: PdeTrajectory, tests, times=None, fields=None) -> np.ndarray:
    """Weak-form defect of a trajectory for each separable test.

    ``int int d_s G rho + int G(0) rho_0 + int int [G''/2 + 2 W'_eps G'] Phi(rho)``,
    trapezoid in time over the stored snapshots, midpoint in space; the
    drift term uses the face values of ``W'_eps`` and the face average of
    ``Phi(rho)``.  ``times``/``fields`` override the trajectory data (used
    to inject analytic solutions).
    """
    times = traj.times if times is None else np.asarray(times)
    rho = traj.array() if fields is None else np.asarray(fields)
    T = times[-1]
    M = rho.shape[1]
    dx = 1.0 / M
    xc = (np.arange(M) + 0.5) * dx
    xf = (np.arange(M) + 1.0) * dx
    ph = np.stack([traj.phi(r) for r in rho])
    ph_face = 0.5 * (ph + np.roll(ph, -1, axis=1))
    out = []
    for G in tests:
        if abs(G.chi(T)) > 1e-14:
            raise ValueError(f"test {G.name!r} does not vanish at the final time")
        h = G.h(xc)
        space_rho = rho @ h * dx
        space_phi = ph @ (0.5 * G.d2h(xc)) * dx + ph_face @ (2.0 * traj.drift * G.dh(xf)) * dx
        integrand = G.dchi(times) * space_rho + G.chi(times) * space_phi
        r = np.trapezoid(integrand, times) + G.chi(0.0) * space_rho[0]
        out.append(r)
    return np.array(out)


# ---------------------------------------------------------------------------
# stationary state


def _stationary_shape(b_fine: np.ndarray, x_fine: np.ndarray):
    """Positive periodic ``psi`` with ``psi' = 4 W' psi + 2 gamma``, ``psi(0) = 1``.

    Returns ``(psi, gamma)`` on the fine grid.  With ``V = 4 int W'``,
    ``psi = e^V (1 + 2 gamma int_0^x e^{-V})`` and periodicity fixes gamma.
    """
    V = cumulative_trapezoid(4.0 * b_fine, x_fine, initial=0.0)
    shift = V.max()
    e_neg = np.exp(-(V - shift))  # e^{-V} e^{shift}
    I = cumulative_trapezoid(e_neg, x_fine, initial=0.0) * math.exp(-shift)
    gamma = (math.exp(-V[-1]) - 1.0) / (2.0 * I[-1])
    psi = np.exp(V) * (1.0 + 2.0 * gamma * I)
    return psi, gamma


def stationary_profile(drift, total_mass: float, g: RateFunction, M: int = 1024,
                       refine: int = 16):
    """Stationary density of given mass for the drift ``W'_eps``.

    Solves ``(1/2) d_x Phi(rho) - 2 W'_eps Phi(rho) = gamma_c`` on the torus:
    ``Phi(rho) = Psi_0 psi(x)`` with ``psi`` from the linear ODE, and
    ``Psi_0`` chosen by root-finding so that ``int R(Psi_0 psi) = mass``.
    Returns ``(DensityField, Psi_0 psi on the cell centres, gamma_c)``.
    """
    if total_mass <= 0:
        raise ValueError("mass must be positive")
    Mf = M * refine
    x_fine = np.linspace(0.0, 1.0, Mf + 1)
    if callable(drift):
        b_fine = np.asarray(drift(np.where(x_fine == 0.0, 1.0, x_fine)), dtype=np.float64)
    else:
        b_fine = np.full(Mf + 1, float(drift))
    psi_f, gamma = _stationary_shape(b_fine, x_fine)
    if not np.all(psi_f > 0):
        raise ArithmeticError("stationary flux balance produced a non-positive profile")
    xc = (np.arange(M) + 0.5) / M
    psi = np.interp(xc, x_fine, psi_f)
    c = g.linear_coefficient
    if c is not None:
        psi0 = total_mass * c / float(np.mean(psi))
    else:
        # R is increasing; the linear bounds g_* rho <= Phi <= g* rho bracket
        lo = g.g_star_lower * total_mass / psi.max()
        hi = g.g_star_upper * total_mass / psi.min()
        f = lambda p: float(np.mean(_series(g, p * psi)[1])) - total_mass  # noqa: E731
        psi0 = brentq(f, lo, hi, xtol=1e-14, rtol=1e-13)
    Phi_vals = psi0 * psi
    rho = Phi_vals / c if c is not None else _series(g, Phi_vals)[1]
    return DensityField(rho), Phi_vals, float(gamma * psi0)


def l1_distance(a, b) -> float:
    """``int |a - b| dx`` for two fields on the same grid."""
    va = a.values if isinstance(a, DensityField) else np.asarray(a)
    vb = b.values if isinstance(b, DensityField) else np.asarray(b)
    if va.shape != vb.shape:
        raise ValueError("fields live on different grids")
    return float(np.mean(np.abs(va - vb)))
