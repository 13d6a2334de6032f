"""Monte Carlo check that the eps-regularized local-vol diffusion reprices the jump model.

The diffusion dS/S = sigma_eps(S, t) dW is started at the randomized spot
(law d_KK C(K, eps)) and stepped with log-Euler, which keeps every step an
exact martingale increment.  Paths live in fixed blocks with one
counter-based stream per block, so results do not depend on how blocks are
spread over workers.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .dupire import ShiftedLocalVol, shifted_local_vol
from .errors import DjlError, NonFiniteState
from .models import ModelSpec
from .pricing import QuadratureConfig, call_price, sample_spot, spot_table

__all__ = ["McConfig", "McEstimate", "Terminals", "TheoremReport", "simulate_terminal", "estimate_call", "verify_theorem"]


@dataclass(frozen=True)
class McConfig:
    """Simulation controls.

    ``vol_cap`` bounds sigma_eps during stepping; paths where it binds are
    counted and the estimate is flagged.  Steps whose variance increment
    sigma^2 dt exceeds ``max_step_variance``, or over which log sigma^2 is
    expected to move by more than ``max_step_change``, are split into up to
    ``max_substeps`` substeps.  Where the field is so large and steep that a
    path would leave the zone within 1/``exit_ratio`` of the step, it is moved
    to the zone's edge by the martingale exit rule.  Steps with sigma^2 dt
    below ``flat_below`` skip the slope test.
    Paths below ``absorb_below`` are absorbed at zero.
    """

    n_paths: int = 400_000
    steps_per_year: int = 200
    seed: int = 0
    scheme: str = "log-euler"
    vol_cap: float = 5.0
    antithetic: bool = True
    max_step_variance: float = 0.02
    max_step_change: float = 0.5
    max_substeps: int = 4096
    exit_ratio: float = 20.0
    flat_below: float = 1e-3
    absorb_below: float = 1e-6
    workers: int = 1

    def __post_init__(self):
        if self.scheme != "log-euler":
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.n_paths < 2 or (self.antithetic and self.n_paths % 2):
            raise ValueError("n_paths must be >= 2 and even with antithetic pairing")
        if not (self.vol_cap > 0 and self.max_step_variance > 0 and self.max_step_change > 0 and self.exit_ratio > 0):
            raise ValueError("vol_cap, max_step_variance, max_step_change and exit_ratio must be > 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def steps(self, T: float) -> int:
        n = math.ceil(self.steps_per_year * T - 1e-9)
        if n < 50:
            raise ValueError(f"{n} time steps to T={T:g}; at least 50 are required")
        return n


@dataclass(frozen=True)
class Terminals:
    values: np.ndarray
    cap_hit: np.ndarray
    seed: int
    antithetic: bool
    elapsed: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n_paths: int
    seed: int | None = None
    cap_hit_count: int = 0
    elapsed: float = field(default=0.0, compare=False)

    @property
    def accepted(self) -> bool:
        return self.cap_hit_count == 0


def _block(field_slices, x0, dt, cfg, gen, antithetic):
    n = x0.size
    x = x0.copy()
    alive = np.isfinite(x)
    hit = np.zeros(n, bool)
    floor = math.log(cfg.absorb_below)
    for sl in field_slices:
        if antithetic:
            half = gen.standard_normal(n // 2)
            z = np.empty(n)
            z[0::2], z[1::2] = half, -half
        else:
            z = gen.standard_normal(n)
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        _advance(sl, x, idx, dt, z[idx], cfg, gen, hit, [])
        if np.any(np.isnan(x)):
            bad = int(np.flatnonzero(np.isnan(x))[0])
            raise NonFiniteState(f"log-spot became NaN on path {bad} (start {x0[bad]:.6g})")
        dead = alive & (x < floor)
        x[dead] = -np.inf
        alive &= ~dead
    return np.exp(x), hit


def _variance(sl, x, j, dt, cfg, hit):
    """Capped local variance and its log-slope g = |d log sigma^2 / d log S| at paths j."""
    v = sl(np.exp(x[j]))
    if np.any(np.isnan(v)) or np.any(v < 0):
        k = int(np.flatnonzero(np.isnan(v) | (v < 0))[0])
        raise NonFiniteState(f"local variance {v[k]} at S={math.exp(x[j[k]]):.6g} (path {j[k]})")
    over = v > cfg.vol_cap**2
    hit[j[over]] = True
    v = np.minimum(v, cfg.vol_cap**2)
    g = np.zeros(v.size)
    steep = ~(v * dt <= cfg.flat_below)
    if np.any(steep):
        g[steep] = _slope(sl, x[j[steep]])
    return v, g


def _slope(sl, x, d=1e-3):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        g = np.abs(np.log(sl(np.exp(x + d))) - np.log(sl(np.exp(x - d)))) / (2 * d)
    return np.where(np.isfinite(g), g, np.inf)


def _explosive(v, g, h, cfg):
    # leaving the zone takes about 1 / (g^2 v), far less than h here
    with np.errstate(invalid="ignore", over="ignore"):
        return ~np.isfinite(v) | ((v * h > cfg.max_step_variance) & (v * h * g * g >= cfg.exit_ratio))


def _n_sub(v, g, h, cfg):
    with np.errstate(invalid="ignore", over="ignore"):
        need = np.maximum(v * h / cfg.max_step_variance, v * h * g * g / cfg.max_step_change**2)
    return np.clip(np.ceil(np.nan_to_num(need, posinf=cfg.max_substeps)), 1, cfg.max_substeps).astype(int)


def _advance(sl, x, j, dt, z, cfg, gen, hit, zones):
    """One log-Euler step of size dt for paths j, splitting or resolving steps the field varies too much over."""
    v, g = _variance(sl, x, j, dt, cfg, hit)
    explosive = _explosive(v, g, dt, cfg)
    if np.any(explosive):
        _exit(sl, x, j[explosive], dt, cfg, gen, zones)
    m = _n_sub(v, g, dt, cfg)
    big = ~explosive & (m > 1)
    small = ~explosive & ~big
    x[j[small]] += -0.5 * v[small] * dt + np.sqrt(v[small] * dt) * z[small]
    if np.any(big):
        _substeps(sl, x, j[big], v[big], g[big], dt, m[big], z[big], cfg, gen, hit, zones)


def _boundary(sl, x, dt, cfg, direction):
    """Nearest log-level from scalar x in ``direction`` where the zone criterion fails (-inf: none above absorption)."""
    floor = math.log(cfg.absorb_below)

    def calm(y):
        with np.errstate(over="ignore"):
            v = sl(np.exp(np.array([y])))
        return not _explosive(v, _slope(sl, np.array([y])), dt, cfg)[0]

    far = x
    for _ in range(64):
        far += direction * math.log(2.0)
        if direction < 0 and far < floor:
            return -math.inf
        if calm(far):
            break
    else:
        raise NonFiniteState("local variance stays explosive over 64 doublings of the spot")
    near = x
    for _ in range(40):
        mid = 0.5 * (near + far)
        if calm(mid):
            far = mid
        else:
            near = mid
    return far


def _exit(sl, x, j, dt, cfg, gen, zones):
    """Resolve paths deep inside a zone where the field is both large and steep.

    The diffusion leaves the interval (a, b) bounding the zone within a small
    fraction of the step.  S is a martingale, so it exits at b with
    probability (S - a) / (b - a) and at a otherwise (a may be zero).
    ``zones`` caches the intervals found so far for this time slice.
    """
    xs = x[j]
    a = np.full(xs.size, np.nan)
    b = np.full(xs.size, np.nan)
    while True:
        for lo, hi in zones:
            inside = (xs > lo) & (xs < hi)
            a[inside], b[inside] = lo, hi
        todo = np.flatnonzero(np.isnan(a))
        if todo.size == 0:
            break
        x0 = float(xs[todo[0]])
        zones.append((_boundary(sl, x0, dt, cfg, -1), _boundary(sl, x0, dt, cfg, +1)))
    S, A, B = np.exp(xs), np.exp(a), np.exp(b)
    up = gen.random(j.size) < (S - A) / (B - A)
    x[j] = np.where(up, b, a)


def _substeps(sl, x, j, v, g, dt, m, z, cfg, gen, hit, zones):
    """Split a step into m_i substeps, re-reading the field in S before each (slope from the step start)."""
    sub = dt / m
    x[j] += -0.5 * v * sub + np.sqrt(v * sub) * z
    for r in range(1, int(m.max())):
        act = (m > r) & np.isfinite(x[j])
        if not act.any():
            break
        jj, hh = j[act], sub[act]
        raw = sl(np.exp(x[jj]))
        if np.any(np.isnan(raw)):
            raise NonFiniteState(f"local variance NaN at S={math.exp(x[jj[np.isnan(raw)][0]]):.6g}")
        hit[jj[raw > cfg.vol_cap**2]] = True
        vv = np.minimum(raw, cfg.vol_cap**2)
        explosive = _explosive(vv, g[act], dt, cfg)
        if np.any(explosive):
            _exit(sl, x, jj[explosive], dt, cfg, gen, zones)
        k = ~explosive
        x[jj[k]] += -0.5 * vv[k] * hh[k] + np.sqrt(vv[k] * hh[k]) * gen.standard_normal(int(k.sum()))


def simulate_terminal(field: ShiftedLocalVol, spots, T: float, cfg: McConfig) -> Terminals:
    """Terminal values S_T of dS/S = sigma_eps(S, t) dW from the given starting spots.

    With antithetic pairing, paths 2i and 2i+1 use opposite Brownian
    increments (callers pass each spot twice).  Paths starting at zero stay
    there.  Deterministic in (cfg.seed, spots) for any ``cfg.workers``.
    """
    spots = np.asarray(spots, dtype=float)
    if np.any(spots < 0) or np.any(~np.isfinite(spots)):
        raise NonFiniteState("starting spots must be finite and >= 0")
    t0 = time.perf_counter()
    n_steps = cfg.steps(T)
    dt = T / n_steps
    slices = [field.slice(j * dt) for j in range(n_steps)]
    with np.errstate(divide="ignore"):
        x0 = np.log(spots)
    parts = list(rng.blocks(spots.size))

    def run(part):
        b, start, stop = part
        gen = rng.stream(cfg.seed, rng.PATHS, b)
        return _block(slices, x0[start:stop], dt, cfg, gen, cfg.antithetic)

    if cfg.workers == 1:
        results = [run(p) for p in parts]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run, parts))
    values = np.concatenate([r[0] for r in results]) if results else np.empty(0)
    hits = np.concatenate([r[1] for r in results]) if results else np.empty(0, bool)
    return Terminals(values, hits, cfg.seed, cfg.antithetic, time.perf_counter() - t0)


def estimate_call(terminals, K: float) -> McEstimate:
    """Mean and standard error of (S_T - K)^+; antithetic pairs are averaged before the variance."""
    if isinstance(terminals, Terminals):
        values, hits, seed, anti = terminals.values, int(terminals.cap_hit.sum()), terminals.seed, terminals.antithetic
        elapsed = terminals.elapsed
    else:
        values, hits, seed, anti = np.asarray(terminals, dtype=float), 0, None, False
        elapsed = 0.0
    if values.size == 0:
        raise ValueError("no terminal values")
    payoff = np.maximum(values - K, 0.0)
    samples = payoff.reshape(-1, 2).mean(axis=1) if anti else payoff
    m = samples.size
    # shifted data: exact zero spread for constant payoffs, better conditioning otherwise
    std = float((samples - samples[0]).std(ddof=1)) if m > 1 else 0.0
    return McEstimate(float(samples.mean()), std / math.sqrt(m), values.size, seed, hits, elapsed)


@dataclass(frozen=True)
class TheoremRow:
    K: float
    eps: float
    mc_price: float
    stderr: float
    analytic: float
    z: float
    cap_hits: int
    error: str | None = None


@dataclass(frozen=True)
class TheoremReport:
    """MC prices of the regularized diffusion against C(K, T + eps) and the eps -> 0 limit."""

    model: str
    strikes: tuple
    T: float
    eps: tuple
    rows: tuple
    limit: dict
    martingale_z: dict
    converged: bool

    @property
    def max_abs_z(self) -> float:
        zs = [abs(r.z) for r in self.rows if r.error is None]
        return max(zs) if zs else math.nan

    @property
    def passed(self) -> bool:
        ok = all(r.error is None and abs(r.z) < 3 and r.cap_hits == 0 for r in self.rows)
        return ok and self.converged


def _converged(strikes, eps, analytic, limit, tol=1e-9):
    """Gap C(K, T + eps) - C(K, T) positive and shrinking along the decreasing eps list."""
    for K in strikes:
        gaps = [analytic[(K, e)] - limit[K] for e in eps]
        if any(g < -tol for g in gaps) or any(b >= a for a, b in zip(gaps, gaps[1:])):
            return False
    return True


def verify_theorem(model: ModelSpec, strikes, T: float, eps_list, cfg: McConfig | None = None, q: QuadratureConfig | None = None) -> TheoremReport:
    """Price calls under the eps-shifted diffusion for each eps and compare with C(K, T + eps).

    Failures of one eps are recorded in its rows and the batch carries on.
    """
    cfg = cfg or McConfig()
    strikes = tuple(float(k) for k in strikes)
    eps_list = tuple(float(e) for e in eps_list)
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be strictly decreasing")
    rows, analytic, mart = [], {}, {}
    for e in eps_list:
        for K in strikes:
            analytic[(K, e)] = float(call_price(model, K, T + e, q))
        try:
            field = shifted_local_vol(model, e, q=q)
            n_start = cfg.n_paths // 2 if cfg.antithetic else cfg.n_paths
            spots = sample_spot(model, e, n_start, cfg.seed, q, table=spot_table(model, e, q))
            if cfg.antithetic:
                spots = np.repeat(spots, 2)
            term = simulate_terminal(field, spots, T, cfg)
        except DjlError as exc:
            for K in strikes:
                rows.append(TheoremRow(K, e, math.nan, math.nan, analytic[(K, e)], math.nan, 0, f"{type(exc).__name__}: {exc}"))
            continue
        mean = estimate_call(term, 0.0)
        mart[e] = (mean.mean - model.spot) / mean.stderr if mean.stderr > 0 else 0.0
        for K in strikes:
            est = estimate_call(term, K)
            z = (est.mean - analytic[(K, e)]) / est.stderr if est.stderr > 0 else math.inf
            rows.append(TheoremRow(K, e, est.mean, est.stderr, analytic[(K, e)], z, est.cap_hit_count))
    limit = {K: float(call_price(model, K, T, q)) for K in strikes}
    return TheoremReport(model.name, strikes, T, eps_list, tuple(rows), limit, mart, _converged(strikes, eps_list, analytic, limit))
