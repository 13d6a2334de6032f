"""Local variance from call surfaces: finite differences, contour integrals, closed form.

Also the eps-shifted field sigma_eps^2(K, T) = tau'(T) * sigma_loc^2(K, tau(T))
that drives the regularized diffusion, and the forward-equation residual
check for it.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import log_ndtr

from .errors import BoundaryPoint, DegenerateDensity
from .models import BlackScholesParams, JumpToRuinParams, ModelSpec, require_density
from .pricing import QuadratureConfig, SurfaceGrid, _tail_range, fourier_parts

__all__ = [
    "DENSITY_FLOOR",
    "LocalVolSurface",
    "TimeChange",
    "local_vol_fd",
    "local_vol_fd_surface",
    "local_vol_fourier",
    "ruin_local_vol",
    "ShiftedLocalVol",
    "shifted_local_vol",
    "FokkerPlanckResult",
    "fokker_planck_residual",
    "fokker_planck_refinement",
]

DENSITY_FLOOR = 1e-14
PROVENANCES = ("finite-difference", "fourier", "closed-form-ruin", "saddle-approx")
_LOG_SQRT2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LocalVolSurface:
    """sigma_loc^2 on a strike x maturity grid; ``local_variance[i, j]`` at (strikes[i], maturities[j]).

    Entries where the source violates the density condition are excluded:
    ``valid`` is False there and the value is NaN.
    """

    strikes: np.ndarray
    maturities: np.ndarray
    local_variance: np.ndarray
    provenance: str
    valid: np.ndarray | None = None
    eps: float | None = None
    time_change: str | None = None

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        lv = np.asarray(self.local_variance, dtype=float)
        valid = np.isfinite(lv) if self.valid is None else np.asarray(self.valid, bool)
        if lv.shape != (len(self.strikes), len(self.maturities)) or valid.shape != lv.shape:
            raise ValueError("local_variance must have shape (len(strikes), len(maturities))")
        if np.any(~np.isfinite(lv[valid])) or np.any(lv[valid] <= 0):
            raise ValueError("local variance must be finite and > 0 at every valid entry")
        object.__setattr__(self, "local_variance", lv)
        object.__setattr__(self, "valid", valid)


@dataclass(frozen=True)
class TimeChange:
    """Strictly increasing tau: [0, inf) -> [eps, inf) with derivative dtau > 0."""

    name: str
    tau: Callable
    dtau: Callable
    eps: float

    @classmethod
    def shift(cls, eps: float) -> "TimeChange":
        if not eps > 0:
            raise ValueError("eps must be > 0")
        return cls("shift", lambda T: np.asarray(T) + eps, lambda T: np.ones_like(np.asarray(T, float)), eps)

    @classmethod
    def affine(cls, a: float, b: float) -> "TimeChange":
        """tau(T) = a + b T, so tau(0) = a plays the role of eps."""
        if not a > 0 or not b > 0:
            raise ValueError("affine time change needs a > 0 and b > 0")
        return cls(f"affine:{a:g},{b:g}", lambda T: a + b * np.asarray(T), lambda T: np.full_like(np.asarray(T, float), b), a)

    @classmethod
    def parse(cls, text: str, eps: float) -> "TimeChange":
        if text == "shift":
            return cls.shift(eps)
        if text.startswith("affine:"):
            a, b = (float(v) for v in text[len("affine:") :].split(","))
            if not math.isclose(a, eps):
                raise ValueError(f"affine time change starts at tau(0)={a:g}, expected eps={eps:g}")
            return cls.affine(a, b)
        raise ValueError(f"unknown time change {text!r}; use 'shift' or 'affine:a,b'")


def _lagrange_weights(x0, x1, x2):
    """First and second derivative weights at x1 from nodes x0 < x1 < x2."""
    h0, h1 = x1 - x0, x2 - x1
    d1 = (-h1 / (h0 * (h0 + h1)), (h1 - h0) / (h0 * h1), h0 / (h1 * (h0 + h1)))
    d2 = (2.0 / (h0 * (h0 + h1)), -2.0 / (h0 * h1), 2.0 / (h1 * (h0 + h1)))
    return d1, d2


def _node(grid, value, what):
    idx = int(np.argmin(np.abs(grid - value)))
    if not math.isclose(grid[idx], value, rel_tol=1e-12, abs_tol=1e-15):
        raise BoundaryPoint(f"{what}={value:g} is not a grid node")
    if idx == 0 or idx == grid.size - 1:
        raise BoundaryPoint(f"{what}={value:g} is on the grid boundary; the three-point stencil leaves the grid")
    return idx


def _fd_parts(surface, i, j):
    K, T, C = surface.strikes, surface.maturities, surface.prices
    d1, _ = _lagrange_weights(*T[j - 1 : j + 2])
    _, d2 = _lagrange_weights(*K[i - 1 : i + 2])
    dT = sum(w * C[i, j - 1 + n] for n, w in enumerate(d1))
    dKK = sum(w * C[i - 1 + n, j] for n, w in enumerate(d2))
    return dT, dKK


def local_vol_fd(surface: SurfaceGrid, K: float, T: float, floor: float = DENSITY_FLOOR) -> float:
    """Dupire's ratio 2 d_T C / (K^2 d_KK C) from three-point stencils at a grid node."""
    i = _node(surface.strikes, K, "K")
    j = _node(surface.maturities, T, "T")
    dT, dKK = _fd_parts(surface, i, j)
    if dKK <= floor:
        raise DegenerateDensity(f"discrete d_KK C = {dKK:.3g} <= floor {floor:g} at K={K:g}, T={T:g}")
    return 2.0 * dT / (K * K * dKK)


def local_vol_fd_surface(surface: SurfaceGrid, floor: float = DENSITY_FLOOR) -> LocalVolSurface:
    """Dupire on every interior node; points with d_KK C <= floor or d_T C <= 0 are excluded."""
    K, T = surface.strikes, surface.maturities
    out = np.full((K.size - 2, T.size - 2), np.nan)
    for i in range(1, K.size - 1):
        for j in range(1, T.size - 1):
            dT, dKK = _fd_parts(surface, i, j)
            if dKK > floor and dT > 0:
                out[i - 1, j - 1] = 2.0 * dT / (K[i] ** 2 * dKK)
    return LocalVolSurface(K[1:-1], T[1:-1], out, "finite-difference")


def _ratio(model, K, T, q):
    parts = fourier_parts(model, K, T, q, ("density", "theta"))
    raw = parts["raw"]
    dens = raw["density"]
    bad = ~(dens > 0)
    if np.any(bad):
        raise DegenerateDensity(
            f"{model.name}: contour density {dens[bad][0]:.3g} <= 0 at K={np.atleast_1d(K)[bad][0]:g}, T={T:g}"
        )
    return 2.0 * raw["theta"] / dens


def local_vol_fourier(model: ModelSpec, K, T: float, q: QuadratureConfig | None = None):
    """Local variance as the ratio of the theta and density contour integrals.

    Both integrals share the contour, so the common factor exp(-k c) M(c, T)
    cancels.  The default places each strike's contour at its saddle point,
    which keeps the ratio accurate in the far wings and at small T.
    """
    require_density(model, T)
    q = q or QuadratureConfig(scheme="saddle")
    vals = _ratio(model, np.atleast_1d(np.asarray(K, dtype=float)), T, q)
    return float(vals[0]) if np.ndim(K) == 0 else vals.reshape(np.shape(K))


def ruin_local_vol(params: JumpToRuinParams, K, T, as_printed: bool = False):
    """Closed-form jump-to-ruin local variance sigma^2 + 2 lam sigma sqrt(T) N(d2) / N'(d2) (unit spot).

    d2 = (log(1/K) + lam T) / (sigma sqrt T) - sigma sqrt(T) / 2 is the
    second Black-Scholes argument at interest rate lam.  ``as_printed=True``
    uses the variant log(1/K + lam T) / (sigma sqrt T) + sigma sqrt(T) / 2
    instead, for comparison.
    """
    sig, lam = params.sigma, params.lam
    K = np.asarray(K, dtype=float)
    T = np.asarray(T, dtype=float)
    sd = sig * np.sqrt(T)
    with np.errstate(divide="ignore", over="ignore"):
        if as_printed:
            d2 = np.log(1.0 / K + lam * T) / sd + 0.5 * sd
        else:
            d2 = (np.log(1.0 / K) + lam * T) / sd - 0.5 * sd
    # N(d2)/N'(d2) in logs: stays finite deep in the money where both factors are extreme
    with np.errstate(over="ignore"):
        mills = np.exp(log_ndtr(d2) + 0.5 * d2 * d2 + _LOG_SQRT2PI)
    out = sig * sig + 2.0 * lam * sd * mills
    return float(out) if out.ndim == 0 else out


class _Slice:
    """sigma_eps^2(., t) for one t: cubic spline in log-strike, quadrature outside the table."""

    def __init__(self, owner, t):
        self.owner, self.t = owner, t
        model, tau = owner.model, float(owner.time_change.tau(t))
        lo, hi, _ = _tail_range(model.with_spot(1.0), tau, tail=1e-9)
        self.lo, self.hi = lo, hi
        x = np.linspace(lo, hi, owner.table_points)
        vals = owner._direct(model.spot * np.exp(x), t)
        self.spline = CubicSpline(x, vals)

    def __call__(self, S):
        x = np.log(S / self.owner.model.spot)
        out = self.spline(x)
        outside = (x < self.lo) | (x > self.hi)
        if np.any(outside):
            out[outside] = self.owner._direct(S[outside], self.t)
        return out


@dataclass
class ShiftedLocalVol:
    """The eps-shifted local variance field sigma_eps^2(K, T), defined for all T >= 0.

    Model sources are evaluated exactly (closed forms, or contour quadrature);
    ``slice(t)`` returns a fast vectorised S -> sigma_eps^2(S, t) for time
    stepping, backed by a cached spline table.  Surface sources interpolate the
    finite-difference Dupire values and raise BoundaryPoint outside the grid.
    """

    source: ModelSpec | SurfaceGrid
    time_change: TimeChange
    q: QuadratureConfig | None = None
    table_points: int = 161
    _fd: LocalVolSurface | None = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if isinstance(self.source, ModelSpec):
            require_density(self.source, float(self.time_change.tau(0.0)))
        else:
            self._fd = local_vol_fd_surface(self.source)

    @property
    def eps(self) -> float:
        return self.time_change.eps

    @property
    def model(self) -> ModelSpec:
        return self.source

    @property
    def provenance(self) -> str:
        if not isinstance(self.source, ModelSpec):
            return "finite-difference"
        return "closed-form-ruin" if isinstance(self.source.params, JumpToRuinParams) else "fourier"

    def _unshifted(self, K, tau):
        if isinstance(self.source, ModelSpec):
            p = self.source.params
            if isinstance(p, BlackScholesParams):
                return np.full(np.shape(K), p.sigma**2)
            if isinstance(p, JumpToRuinParams):
                return np.asarray(ruin_local_vol(p, np.asarray(K) / self.source.spot, tau))
            return local_vol_fourier(self.source, np.asarray(K, dtype=float), tau, self.q)
        return self._interp_fd(np.asarray(K, dtype=float), tau)

    def _interp_fd(self, K, tau):
        s = self._fd
        Kg, Tg = s.strikes, s.maturities
        if tau < Tg[0] or tau > Tg[-1] or np.any(K < Kg[0]) or np.any(K > Kg[-1]):
            raise BoundaryPoint(
                f"shifted field needs T={tau:g}, K in [{np.min(K):g}, {np.max(K):g}] outside the interior "
                f"grid [{Kg[0]:g}, {Kg[-1]:g}] x [{Tg[0]:g}, {Tg[-1]:g}]"
            )
        j = int(np.clip(np.searchsorted(Tg, tau) - 1, 0, Tg.size - 2))
        w = (tau - Tg[j]) / (Tg[j + 1] - Tg[j])
        a = np.interp(K, Kg, s.local_variance[:, j])
        b = np.interp(K, Kg, s.local_variance[:, j + 1])
        out = (1 - w) * a + w * b
        if np.any(~np.isfinite(out)):
            raise DegenerateDensity(f"shifted field reads an excluded point near T={tau:g}")
        return out

    def _direct(self, K, t):
        return float(self.time_change.dtau(t)) * self._unshifted(K, float(self.time_change.tau(t)))

    def __call__(self, K, T):
        """sigma_eps^2(K, T) = tau'(T) sigma_loc^2(K, tau(T)), scalar T."""
        if T < 0:
            raise ValueError("T must be >= 0")
        out = self._direct(np.atleast_1d(np.asarray(K, dtype=float)), float(T))
        return float(out[0]) if np.ndim(K) == 0 else out.reshape(np.shape(K))

    def slice(self, t: float):
        """Vectorised S -> sigma_eps^2(S, t)."""
        if isinstance(self.source, ModelSpec) and self.provenance == "fourier":
            with self._lock:
                sl = self._cache.get(t)
            if sl is None:
                sl = _Slice(self, t)
                with self._lock:
                    sl = self._cache.setdefault(t, sl)
            return sl
        if isinstance(self.source, ModelSpec):
            p, spot = self.source.params, self.source.spot
            tau, dtau = float(self.time_change.tau(t)), float(self.time_change.dtau(t))
            if isinstance(p, JumpToRuinParams):
                return lambda S: dtau * ruin_local_vol(p, S / spot, tau)
            return lambda S: np.full(np.shape(S), dtau * p.sigma**2)
        return lambda S: self._direct(S, t)

    def surface(self, strikes, maturities) -> LocalVolSurface:
        K = np.asarray(strikes, dtype=float)
        T = np.asarray(maturities, dtype=float)
        cols = [np.atleast_1d(self(K, t)) for t in T]
        return LocalVolSurface(K, T, np.column_stack(cols), self.provenance, None, self.eps, self.time_change.name)


def shifted_local_vol(source, eps: float, time_change: TimeChange | None = None, q: QuadratureConfig | None = None) -> ShiftedLocalVol:
    """Local variance of the eps-regularized diffusion; default time change T -> T + eps."""
    tc = time_change or TimeChange.shift(eps)
    if not math.isclose(tc.eps, eps):
        raise ValueError(f"time change starts at {tc.eps:g}, expected eps={eps:g}")
    return ShiftedLocalVol(source, tc, q)


@dataclass(frozen=True)
class FokkerPlanckResult:
    strikes: np.ndarray
    maturities: np.ndarray
    residual: np.ndarray
    max_residual: float


def _fp_inputs(model, eps, K, T, q):
    """Density p and a p = d_T C at (K, T + eps), each from quadrature."""
    p = np.empty((K.size, T.size))
    ap = np.empty_like(p)
    for j, t in enumerate(T):
        if isinstance(model.params, (BlackScholesParams, JumpToRuinParams)):
            from .pricing import dC_dT, density

            p[:, j] = density(model, K, t + eps)
            ap[:, j] = dC_dT(model, K, t + eps)
        else:
            parts = fourier_parts(model, K, t + eps, q, ("density", "theta"))
            p[:, j] = parts["density"]
            ap[:, j] = parts["theta"]
    return p, ap


def fokker_planck_residual(model: ModelSpec, eps: float, strikes, maturities, q: QuadratureConfig | None = None) -> FokkerPlanckResult:
    """Residual d_KK(a p) - d_T p of the forward equation on the interior of a grid.

    p is the density of S at T + eps and a = K^2 sigma_eps^2 / 2, so
    a p = d_T C(K, T + eps) exactly; both sides use three-point stencils on
    quadrature values and the residual vanishes at second order.
    """
    if not eps > 0:
        raise ValueError("eps must be > 0")
    require_density(model, eps)
    q = q or QuadratureConfig(scheme="saddle")
    K = np.asarray(strikes, dtype=float)
    T = np.asarray(maturities, dtype=float)
    if K.size < 3 or T.size < 3:
        raise BoundaryPoint("need at least 3 nodes in each direction")
    p, ap = _fp_inputs(model, eps, K, T, q)
    res = np.empty((K.size - 2, T.size - 2))
    for i in range(1, K.size - 1):
        _, d2 = _lagrange_weights(*K[i - 1 : i + 2])
        lhs = d2[0] * ap[i - 1, 1:-1] + d2[1] * ap[i, 1:-1] + d2[2] * ap[i + 1, 1:-1]
        rhs = np.empty(T.size - 2)
        for j in range(1, T.size - 1):
            d1, _ = _lagrange_weights(*T[j - 1 : j + 2])
            rhs[j - 1] = d1[0] * p[i, j - 1] + d1[1] * p[i, j] + d1[2] * p[i, j + 1]
        res[i - 1] = lhs - rhs
    return FokkerPlanckResult(K[1:-1], T[1:-1], res, float(np.max(np.abs(res))))


def fokker_planck_refinement(model, eps, K_range, T_range, n_K=51, n_T=11, q=None):
    """Max residual on a uniform grid and on the grid with both steps halved.

    The fine residual is read at the coarse interior nodes so the two maxima
    compare like with like.  Returns (coarse, fine, coarse / fine).
    """
    coarse = fokker_planck_residual(model, eps, np.linspace(*K_range, n_K), np.linspace(*T_range, n_T), q)
    fine = fokker_planck_residual(model, eps, np.linspace(*K_range, 2 * n_K - 1), np.linspace(*T_range, 2 * n_T - 1), q)
    on_coarse = fine.residual[1::2, 1::2]
    f = float(np.max(np.abs(on_coarse)))
    return coarse.max_residual, f, coarse.max_residual / f
