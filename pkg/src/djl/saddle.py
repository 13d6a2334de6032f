"""Saddle points of exp(-ks) M(s, T) and the small-maturity local-vol asymptotics built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    NoSaddle,
    RegimeTooSmall,
    SaddleInUnitInterval,
    StripExhausted,
)
from .models import JumpToRuinParams, MertonParams, ModelSpec

__all__ = [
    "SaddleResult",
    "BlowupFit",
    "real_saddle_points",
    "solve_saddle",
    "wing_local_vol",
    "merton_saddle_expansion",
    "blowup_fit",
]

_MAX_ITER = 200
_EDGE = 1e-12  # closest approach to a finite strip endpoint, relative to strip width


@dataclass(frozen=True)
class SaddleResult:
    s_hat: float
    k: float
    T: float
    m: float
    dm_ds: float
    d2m_ds2: float
    dm_dT: float
    local_variance_approx: float | None = None


@dataclass(frozen=True)
class BlowupFit:
    model: str
    K: float
    T: np.ndarray
    local_variance: np.ndarray
    exponent: float
    r2: float
    source: str
    correction: str = "none"
    exp_slope: float | None = None
    exp_r2: float | None = None
    slopes: np.ndarray = field(default=None, repr=False)


def _d1d2(params, s):
    _, d1, d2 = params.exponent(s.astype(complex), order=2)
    return d1.real, d2.real


def _edge_points(lo, hi, side):
    """Geometric approach to a finite endpoint: lo + w*10^-j or hi - w*10^-j."""
    w = hi - lo if math.isfinite(hi - lo) else 1.0
    f = 10.0 ** -np.arange(0, 13)
    f[0] = 0.5
    return (hi - w * f) if side > 0 else (lo + w * f)


def _bracket_side(params, y, side):
    """Point on one side where psi' passes y; NaN where psi' never gets there."""
    st = params.strip()
    end = st.upper if side > 0 else st.lower
    out = np.full(y.shape, np.nan)
    if math.isinf(end):
        x = np.full(y.shape, float(side))
        todo = np.ones(y.shape, bool)
        for _ in range(80):
            d1, _ = _d1d2(params, x)
            passed = (d1 >= y) if side > 0 else (d1 <= y)
            hit = todo & (passed | np.isnan(d1))
            out[hit] = x[hit]
            todo &= ~hit
            if not todo.any():
                break
            x = np.where(todo, 2.0 * x + side, x)
        return out
    todo = np.ones(y.shape, bool)
    for x in _edge_points(st.lower, st.upper, side):
        d1, _ = _d1d2(params, np.full(y.shape, x))
        passed = (d1 >= y) if side > 0 else (d1 <= y)
        hit = todo & passed
        out[hit] = x
        todo &= ~hit
        if not todo.any():
            break
    return out


def real_saddle_points(params, y, tol=None):
    """Solve psi'(s) = y on the open real strip, vectorised over ``y``.

    Safeguarded Newton inside a maintained bracket; psi' is strictly
    increasing because psi is convex on the real strip.  Entries with no
    root come back as NaN together with ``status``: +1 if y exceeds the range
    of psi' (root would lie past the upper end), -1 if below it, 0 if found.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    tol = np.broadcast_to(1e-12 * np.maximum(1.0, np.abs(y)) if tol is None else tol, y.shape)
    hi = _bracket_side(params, y, +1)
    lo = _bracket_side(params, y, -1)
    status = np.where(np.isnan(hi), 1, np.where(np.isnan(lo), -1, 0))
    ok = status == 0
    a, b = lo[ok].copy(), hi[ok].copy()
    yy, tt = y[ok], tol[ok]
    s = 0.5 * (a + b)
    done = np.zeros(a.shape, bool)
    for _ in range(_MAX_ITER):
        d1, d2 = _d1d2(params, s)
        f = d1 - yy
        below = f < 0
        a = np.where(below & ~done, s, a)
        b = np.where(~below & ~done, s, b)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = s - f / d2
        inside = np.isfinite(newton) & (newton > a) & (newton < b)
        # bisect geometrically across wide one-signed brackets
        geo = (a > 0) & (b > 4 * a)
        geon = (b < 0) & (a < 4 * b)
        root = np.sqrt(np.abs(a * b))
        mid = np.where(geo, root, np.where(geon, -root, 0.5 * (a + b)))
        nxt = np.where(inside, newton, mid)
        step = np.abs(nxt - s)
        collapsed = (b - a) <= 4e-16 * np.maximum(1.0, np.abs(s))
        finished = (np.abs(f) <= tt) & (step <= 1e-14 * np.maximum(1.0, np.abs(s)))
        done |= finished | collapsed
        s = np.where(done, s, nxt)
        if done.all():
            break
    out = np.full(y.shape, np.nan)
    out[ok] = s
    return out, status


def _nearest_bounded_singularity(st, s):
    if not st.bounded_singularity:
        return math.inf
    return min(s - st.lower, st.upper - s)


def solve_saddle(model: ModelSpec, k: float, T: float) -> SaddleResult:
    """Real saddle point of exp(-ks) M(s, T): the root of d_s m(s, T) = k.

    For Lévy models this is psi'(s) = k/T, so the saddle depends on (k, T)
    only through k/T.  Raises NoSaddle when d_s m never reaches k on the
    strip, or when the root sits within one Gaussian width
    (d_ss m)^(-1/2) of a branch point where M stays bounded, so the integrand
    has no isolated saddle there (NIG at large k/T).
    """
    if not T > 0:
        raise ValueError("T must be > 0")
    params = model.params
    tol = 0.1 * 1e-10 * max(1.0, abs(k)) / T
    s, status = real_saddle_points(params, k / T, tol)
    s, status = float(s[0]), int(status[0])
    st = params.strip()
    if status != 0:
        end = st.upper if status > 0 else st.lower
        if math.isinf(end) or (st.upper_closed if status > 0 else st.lower_closed) or st.bounded_singularity:
            raise NoSaddle(
                f"{model.name}: d_s m(s, {T:g}) stays {'below' if status > 0 else 'above'} k={k:g} "
                f"on the whole strip ({st.lower:g}, {st.upper:g})"
            )
        raise StripExhausted(
            f"{model.name}: root of d_s m = {k:g} not bracketed within {_EDGE:g} of the strip end {end:g}"
        )
    psi, dpsi, d2psi = (float(np.real(v)) for v in params.exponent(complex(s), order=2))
    m, d1, d2 = float(T * psi), float(T * dpsi), float(T * d2psi)
    dist = _nearest_bounded_singularity(st, s)
    if d2 > 0 and dist <= 1.0 / math.sqrt(d2):
        raise NoSaddle(
            f"{model.name}: saddle {s:.6g} is within its Gaussian width {1 / math.sqrt(d2):.3g} of the "
            f"singularity at distance {dist:.3g}; M stays bounded there, so there is no saddle point"
        )
    wing = None if 0.0 <= s <= 1.0 else 2.0 * psi / (s * (s - 1.0))
    return SaddleResult(s, float(k), float(T), m, d1, d2, psi, wing)


def wing_local_vol(model: ModelSpec, k: float, T: float) -> float:
    """Saddle-point local variance 2 d_T m(s, T) / (s (s - 1)) at s = s_hat(k, T)."""
    res = solve_saddle(model, k, T)
    if res.local_variance_approx is None:
        raise SaddleInUnitInterval(
            f"saddle {res.s_hat:.6g} in [0, 1]: s(s-1) <= 0, the wing approximation does not apply near the money"
        )
    return res.local_variance_approx


def merton_saddle_expansion(params: MertonParams, k: float, T: float) -> float:
    """Large-k/T expansion of the Merton saddle point (k > 0).

    With L = log(k/T):
        delta^2 s^2 / 2 = L - (sqrt(2) mu / delta) sqrt(L) - log(L) / 2
                          + mu^2 / delta^2 - log(sqrt(2) lambda delta)
    obtained by taking logs of the dominant jump term
    lambda delta^2 s exp(delta^2 s^2/2 + mu s) = k/T and iterating once.
    """
    if not T > 0:
        raise ValueError("T must be > 0")
    ratio = k / T
    if not ratio > math.e:
        raise RegimeTooSmall(f"k/T = {ratio:g} <= e: log log(k/T) is not positive")
    if params.lam <= 0:
        raise RegimeTooSmall("expansion needs jumps (lambda > 0)")
    d, mu = params.delta, params.mu
    L = math.log(ratio)
    y = (
        L
        - math.sqrt(2.0) * mu / d * math.sqrt(L)
        - 0.5 * math.log(L)
        + mu * mu / (d * d)
        - math.log(math.sqrt(2.0) * params.lam * d)
    )
    if y <= 0:
        raise RegimeTooSmall(f"expansion gives delta^2 s^2/2 = {y:g} <= 0 at k/T = {ratio:g}")
    return math.sqrt(2.0 * y) / d


def _fit(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return coef[0], r2


def _local_variances(model, K, Ts, source, q):
    if source == "fourier":
        from .dupire import local_vol_fourier

        return np.array([local_vol_fourier(model, K, T, q) for T in Ts])
    if source == "ruin":
        if not isinstance(model.params, JumpToRuinParams):
            raise ValueError("closed-form source needs the jump-to-ruin model")
        from .dupire import ruin_local_vol

        return np.array([ruin_local_vol(model.params, K / model.spot, T) for T in Ts])
    if source == "saddle":
        k = math.log(K / model.spot)
        return np.array([wing_local_vol(model, k, T) for T in Ts])
    raise ValueError(f"unknown source {source!r}")


def blowup_fit(
    model: ModelSpec,
    K: float,
    T_grid,
    source: str = "fourier",
    correction: str = "none",
    q=None,
) -> BlowupFit:
    """Fit sigma_loc^2(K, T) ~ T^(-rho) as T -> 0 at a fixed strike K != S0.

    The headline exponent uses the three smallest maturities; R^2 uses all.
    ``correction="merton"`` fits the exponent of
    sigma_loc^2 * T * log(|k|/T)^(3/2) / |k| instead, which is flat if the
    blowup is (|k|/T) log(|k|/T)^(-3/2).  For the jump-to-ruin model the fit
    also regresses log(sigma_loc^2 - sigma^2) on 1/T (exp_slope, exp_r2).
    """
    Ts = np.sort(np.asarray(T_grid, dtype=float))[::-1]
    if Ts.size < 4:
        raise ValueError("blowup fits need at least 4 maturities")
    if math.isclose(K, model.spot):
        raise ValueError("blowup fits are for off-the-money strikes K != S0")
    if correction not in ("none", "merton"):
        raise ValueError(f"unknown correction {correction!r}")
    from .models import require_density

    require_density(model, Ts.min())
    lv = _local_variances(model, K, Ts, source, q)
    y = np.log(lv)
    if correction == "merton":
        ak = abs(math.log(K / model.spot))
        y = y + np.log(Ts * np.log(ak / Ts) ** 1.5 / ak)
    x = np.log(Ts)
    small = np.argsort(Ts)[:3]
    slope, _ = _fit(x[small], y[small])
    _, r2 = _fit(x, y)
    exp_slope = exp_r2 = None
    if isinstance(model.params, JumpToRuinParams):
        excess = lv - model.params.sigma**2
        if np.all(excess > 0):
            exp_slope, exp_r2 = _fit(1.0 / Ts, np.log(excess))
    local = np.array([_fit(x[i : i + 2], y[i : i + 2])[0] for i in range(Ts.size - 1)])
    return BlowupFit(
        model.name, K, Ts, lv, -slope, r2, source, correction, exp_slope, exp_r2, -local
    )
