"""Call prices, densities and calendar derivatives from contour integrals.

Everything is computed in units of a unit spot and rescaled:
C(K) = S0 C1(K/S0), d_KK C(K) = d_KK C1(K/S0) / S0, d_T C(K) = S0 d_T C1(K/S0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import rng
from ._fourier import QuadratureConfig, contour_integrals
from .errors import ArbitrageDetected, StripViolation, TabulationRangeTooNarrow
from .models import BlackScholesParams, JumpToRuinParams, ModelSpec, require_density
from .saddle import real_saddle_points

__all__ = [
    "QuadratureConfig",
    "SurfaceGrid",
    "SpotTable",
    "bs_call",
    "default_contour",
    "call_price",
    "density",
    "dC_dT",
    "fourier_parts",
    "build_surface",
    "audit_surface",
    "spot_table",
    "sample_spot",
]

_SQRT2PI = math.sqrt(2.0 * math.pi)


def _phi(x):
    return np.exp(-0.5 * x * x) / _SQRT2PI


def bs_call(S0, K, sigma, T, rate=0.0):
    """Black-Scholes call; with ``rate`` it is the jump-to-ruin price (default intensity as rate)."""
    K = np.asarray(K, dtype=float)
    sd = sigma * math.sqrt(T)
    d1 = (np.log(S0 / K) + (rate + 0.5 * sigma * sigma) * T) / sd
    return S0 * ndtr(d1) - K * math.exp(-rate * T) * ndtr(d1 - sd)


def _closed(model: ModelSpec, K, T):
    """(price, density, theta) for the models with elementary closed forms."""
    p = model.params
    rate = p.lam if isinstance(p, JumpToRuinParams) else 0.0
    S0, sig = model.spot, p.sigma
    sd = sig * math.sqrt(T)
    d2 = (np.log(S0 / K) + (rate - 0.5 * sig * sig) * T) / sd
    disc = math.exp(-rate * T)
    price = bs_call(S0, K, sig, T, rate)
    dens = disc * _phi(d2) / (K * sd)
    theta = K * disc * (_phi(d2) * sig / (2.0 * math.sqrt(T)) + rate * ndtr(d2))
    return price, dens, theta


def _has_closed_form(model):
    return isinstance(model.params, (BlackScholesParams, JumpToRuinParams))


def default_contour(model: ModelSpec) -> float:
    """1.5, or the midpoint of (1, upper) when the strip is too narrow for it."""
    st = model.strip()
    if not st.upper > 1.0:
        raise StripViolation(f"{model.name}: strip ({st.lower:g}, {st.upper:g}) has no abscissa above 1")
    if st.upper < 2.0:
        return 0.5 * (1.0 + st.upper)
    return 1.5


def _lower_admissible(model):
    # the ruin M holds on Re s > 0 only; theta has a true pole at s = 0 there
    return 0.1 if isinstance(model.params, JumpToRuinParams) else -math.inf


def contours(model: ModelSpec, k, T, q: QuadratureConfig) -> np.ndarray:
    k = np.atleast_1d(np.asarray(k, dtype=float))
    st = model.strip()
    if q.scheme == "trapezoid":
        c = default_contour(model) if q.contour is None else q.contour
        if not st.contains(c) or (st.bounded_singularity and c in (st.lower, st.upper)):
            raise StripViolation(f"{model.name}: contour {c:g} outside strip ({st.lower:g}, {st.upper:g})")
        return np.full(k.shape, float(c))
    s, status = real_saddle_points(model.params, k / T, 1e-8 * np.maximum(1.0, np.abs(k / T)))
    margin = 0.05 * st.width if math.isfinite(st.width) else 0.0
    lo = max(st.lower + margin, _lower_admissible(model))
    hi = st.upper - margin
    s = np.where(status > 0, hi, np.where(status < 0, lo, s))
    s = np.clip(s, lo, hi)
    # poles of 1/(s(s-1)) are removable for theta but not for price: stay 0.1 away
    for pole in (0.0, 1.0):
        near = np.abs(s - pole) < 0.1
        s = np.where(near, np.where(s >= pole, pole + 0.1, pole - 0.1), s)
    return np.clip(s, max(lo, st.lower + 1e-3 if math.isfinite(st.lower) else lo), hi)


def fourier_parts(model: ModelSpec, K, T: float, q: QuadratureConfig | None = None, kinds=("price", "density", "theta")):
    """Fourier values of C, d_KK C and d_T C at strikes K (arrays, original spot units)."""
    if not T > 0:
        raise ValueError(f"maturity must be > 0, got {T}")
    q = q or QuadratureConfig()
    K = np.atleast_1d(np.asarray(K, dtype=float))
    if np.any(K <= 0):
        raise ValueError("strikes must be > 0")
    S0 = model.spot
    K1 = K / S0
    k = np.log(K1)
    c = contours(model, k, T, q)
    raw = contour_integrals(model, k, T, c, kinds, q)
    with np.errstate(over="ignore", under="ignore"):
        scale = np.exp(raw["log_scale"])
    out = {}
    if "price" in raw:
        res = np.where(c < 1.0, 1.0, 0.0) - np.where(c < 0.0, K1, 0.0)
        out["price"] = S0 * (K1 * scale * raw["price"] + res)
    if "density" in raw:
        out["density"] = scale * raw["density"] / K1 / S0
    if "theta" in raw:
        out["theta"] = S0 * K1 * scale * raw["theta"]
    out["raw"] = raw
    return out


def _shape(K, values):
    return float(values[0]) if np.ndim(K) == 0 else values.reshape(np.shape(K))


def call_price(model: ModelSpec, K, T: float, q: QuadratureConfig | None = None, method: str = "auto"):
    """E[(S_T - K)^+]; closed form for Black-Scholes and jump-to-ruin unless method="fourier"."""
    if not T > 0:
        raise ValueError(f"maturity must be > 0, got {T}")
    Ka = np.atleast_1d(np.asarray(K, dtype=float))
    if method == "closed" or (method == "auto" and _has_closed_form(model)):
        return _shape(K, np.asarray(_closed(model, Ka, T)[0]))
    return _shape(K, fourier_parts(model, Ka, T, q, ("price",))["price"])


def density(model: ModelSpec, K, T: float, q: QuadratureConfig | None = None, method: str = "auto"):
    """Density of S_T at K, i.e. d_KK C(K, T)."""
    require_density(model, T)
    Ka = np.atleast_1d(np.asarray(K, dtype=float))
    if method == "closed" or (method == "auto" and _has_closed_form(model)):
        return _shape(K, np.asarray(_closed(model, Ka, T)[1]))
    return _shape(K, np.maximum(fourier_parts(model, Ka, T, q, ("density",))["density"], 0.0))


def dC_dT(model: ModelSpec, K, T: float, q: QuadratureConfig | None = None, method: str = "auto"):
    """Calendar derivative d_T C(K, T)."""
    if not T > 0:
        raise ValueError(f"maturity must be > 0, got {T}")
    Ka = np.atleast_1d(np.asarray(K, dtype=float))
    if method == "closed" or (method == "auto" and _has_closed_form(model)):
        return _shape(K, np.asarray(_closed(model, Ka, T)[2]))
    return _shape(K, fourier_parts(model, Ka, T, q, ("theta",))["theta"])


@dataclass(frozen=True)
class SurfaceGrid:
    """Call prices on a strike x maturity grid; ``prices[i, j] = C(strikes[i], maturities[j])``."""

    strikes: np.ndarray
    maturities: np.ndarray
    prices: np.ndarray
    spot: float = 1.0

    def __post_init__(self):
        K, T = np.asarray(self.strikes, float), np.asarray(self.maturities, float)
        P = np.asarray(self.prices, float)
        if K.ndim != 1 or T.ndim != 1 or P.shape != (K.size, T.size):
            raise ValueError(f"prices must have shape ({K.size}, {T.size}), got {P.shape}")
        if np.any(np.diff(K) <= 0) or np.any(K <= 0):
            raise ValueError("strikes must be positive and strictly ascending")
        if np.any(np.diff(T) <= 0) or np.any(T <= 0):
            raise ValueError("maturities must be positive and strictly ascending")
        object.__setattr__(self, "strikes", K)
        object.__setattr__(self, "maturities", T)
        object.__setattr__(self, "prices", P)


def audit_surface(surface: SurfaceGrid) -> dict:
    """Worst discrete no-arbitrage margins (negative means violated)."""
    K, C = surface.strikes, surface.prices
    slope = np.diff(C, axis=0) / np.diff(K)[:, None]
    butterfly = np.diff(slope, axis=0)
    calendar = np.diff(C, axis=1)
    intrinsic = C - np.maximum(surface.spot - K, 0.0)[:, None]
    return {
        "min_price": float(C.min()),
        "min_intrinsic_margin": float(intrinsic.min()),
        "max_strike_slope": float(slope.max()) if slope.size else 0.0,
        "min_strike_slope_plus_one": float((slope + 1.0).min()) if slope.size else 0.0,
        "min_butterfly": float(butterfly.min()) if butterfly.size else 0.0,
        "min_calendar": float(calendar.min()) if calendar.size else 0.0,
    }


def build_surface(model: ModelSpec, strikes, maturities, q: QuadratureConfig | None = None, tol: float = 1e-9) -> SurfaceGrid:
    """Price the whole grid and check it is free of static arbitrage to within ``tol``."""
    strikes = np.asarray(strikes, dtype=float)
    maturities = np.asarray(maturities, dtype=float)
    if np.any(maturities <= 0):
        raise ValueError("all maturities must be > 0")
    cols = [np.atleast_1d(call_price(model, strikes, T, q)) for T in maturities]
    surface = SurfaceGrid(strikes, maturities, np.column_stack(cols), model.spot)
    report = audit_surface(surface)
    bad = {
        name: v
        for name, v in report.items()
        if (name != "max_strike_slope" and v < -tol) or (name == "max_strike_slope" and v > tol)
    }
    if bad:
        raise ArbitrageDetected(f"{model.name}: surface violates no-arbitrage bounds {bad} (tolerance {tol:g})")
    return surface


@dataclass(frozen=True)
class SpotTable:
    """Tabulated law of S_T: atom at zero plus a CDF on a log-moneyness grid."""

    x: np.ndarray
    cdf: np.ndarray
    atom: float
    mass: float
    spot: float

    def ppf(self, u):
        """Quantile of the continuous part for u in [0, 1] (spot units)."""
        return self.spot * np.exp(np.interp(u, self.cdf, self.x))

    def cdf_at(self, S):
        """P[S_T <= S] including the atom."""
        S = np.asarray(S, dtype=float)
        with np.errstate(divide="ignore"):
            x = np.log(S / self.spot)
        return self.atom + (1.0 - self.atom) * np.interp(x, self.x, self.cdf, left=0.0, right=1.0)


def _tail_range(model, T, tail=1e-10):
    """Chernoff bounds on X_T holding at most ``tail`` mass outside, plus 12 standard deviations."""
    p = model.params
    _, d1, d2 = (np.real(v) for v in p.exponent(np.array([0.0 + 0j]), order=2))
    mean, sd = T * float(d1[0]), math.sqrt(T * float(d2[0]))
    lo, hi = mean - 12 * sd, mean + 12 * sd
    st = model.strip()
    logt = math.log(1.0 / tail)
    top = min(st.upper, 1e3) * (1 - 1e-6)
    if top > 0:
        s = np.geomspace(1e-3, top, 400)
        m = T * p.exponent(s.astype(complex)).real
        hi = max(hi, float(np.nanmin((m + logt) / s)))
    bot = max(st.lower, -1e3) * (1 - 1e-6)
    if bot < 0:
        s = -np.geomspace(1e-3, -bot, 400)
        m = T * p.exponent(s.astype(complex)).real
        lo = min(lo, float(np.nanmax((m + logt) / s)))
    return lo, hi, sd


def spot_table(model: ModelSpec, T: float, q: QuadratureConfig | None = None, n_grid: int = 2048) -> SpotTable:
    """Tabulate the CDF of S_T by integrating its Fourier density on a log-strike grid."""
    require_density(model, T)
    q = q or QuadratureConfig(scheme="saddle")
    lo, hi, sd = _tail_range(model, T)
    n = n_grid
    while (hi - lo) / (n - 1) > sd / 16 and n < (1 << 16):
        n *= 2
    x = np.linspace(lo, hi, n)
    ruin = isinstance(model.params, JumpToRuinParams)
    survive = math.exp(-model.params.lam * T) if ruin else 1.0
    if _has_closed_form(model):
        pdf = _closed(model.with_spot(1.0), np.exp(x), T)[1] * np.exp(x)
    else:
        pdf = np.maximum(fourier_parts(model.with_spot(1.0), np.exp(x), T, q, ("density",))["density"] * np.exp(x), 0.0)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(x))])
    mass = float(cdf[-1])
    if mass < survive * (1.0 - 1e-6):
        raise TabulationRangeTooNarrow(
            f"{model.name}: CDF table on [{lo:.3g}, {hi:.3g}] holds mass {mass:.8f} < {survive:.8f} * (1 - 1e-6)"
        )
    cdf /= mass
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return SpotTable(x[keep], cdf[keep], 1.0 - survive, mass, model.spot)


def _draw(table: SpotTable, u):
    if table.atom <= 0:
        return table.ppf(u)
    v = (u - table.atom) / (1.0 - table.atom)
    return np.where(u < table.atom, 0.0, table.ppf(np.clip(v, 0.0, 1.0)))


def sample_spot(model: ModelSpec, eps: float, n: int, seed: int, q: QuadratureConfig | None = None, table: SpotTable | None = None) -> np.ndarray:
    """n draws of the randomized spot S0^eps, whose law is d_KK C(K, eps) (plus the default atom).

    Inverse-CDF sampling from ``spot_table``; block b of paths uses the
    counter-based stream (seed, SPOT, b).
    """
    if not eps > 0:
        raise ValueError("eps must be > 0")
    table = table or spot_table(model, eps, q)
    out = np.empty(n)
    for b, start, stop in rng.blocks(n):
        out[start:stop] = _draw(table, rng.stream(seed, rng.SPOT, b).random(stop - start))
    return out
