"""Trapezoidal quadrature of inverse-Laplace integrals along vertical contours.

For log-moneyness k and a contour Re s = c inside the strip, three integrals
are computed (all equal to (1/2 pi i) * integral over the contour):

    density : exp(-k s) M(s, T)                       -> density of X_T at k
    price   : exp(-k s) M(s, T) / (s (s - 1))         -> call price / K (c > 1)
    theta   : exp(-k s) M(s, T) psi(s) / (s (s - 1))  -> d_T C / K

By conjugate symmetry each reduces to (1/pi) * int_0^inf Re f(c + iu) du.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import warnings

import numpy as np
from scipy import integrate

from .errors import QuadratureNotConverged

KINDS = ("density", "price", "theta")

_CHUNK = 1 << 20
_TAIL_TOL = 1e-16
_ATOL = 1e-13


@dataclass(frozen=True)
class QuadratureConfig:
    """Contour placement and trapezoid controls.

    ``contour`` None selects the default abscissa (1.5, or the midpoint of
    (1, upper) for narrow strips).  ``bound`` None truncates automatically
    where |M| has decayed below round-off.  ``scheme`` "trapezoid" uses one
    fixed contour; "saddle" moves each strike's contour to its real saddle
    point, which keeps relative accuracy in the far wings.
    """

    contour: float | None = None
    bound: float | None = None
    nodes: int = 64
    scheme: str = "trapezoid"
    rtol: float = 1e-9
    max_nodes: int = 1 << 24
    max_bound: float = 1e7

    def __post_init__(self):
        if self.nodes < 64:
            raise ValueError("quadrature needs at least 64 nodes")
        if self.bound is not None and not self.bound > 0:
            raise ValueError("truncation bound must be > 0")
        if self.scheme not in ("trapezoid", "saddle"):
            raise ValueError(f"unknown quadrature scheme {self.scheme!r}")
        if self.contour is not None and not self.contour > 1:
            raise ValueError("fixed contour abscissa must exceed 1")


def _integrands(model, k, T, s, kinds, shift):
    """Integrand values for rows k (n, 1) at nodes s (n, m), divided by exp(shift)."""
    psi = model.psi(s)
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        f = np.exp(T * psi - k * s - shift)
        out = {}
        if "density" in kinds:
            out["density"] = f
        if "price" in kinds or "theta" in kinds:
            g = f / (s * (s - 1.0))
            if "price" in kinds:
                out["price"] = g
            if "theta" in kinds:
                out["theta"] = g * psi
    return out


def _envelope(model, T, c, kinds):
    """Per-row truncation point U and characteristic width of |integrand|."""
    grid = np.geomspace(1e-4, 1e8, 241)
    s = c[:, None] + 1j * grid[None, :]
    base = model.psi(c.astype(complex)).real
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        r = np.exp(T * (model.psi(s).real - base[:, None]))
        if "density" not in kinds:
            r = r * np.abs(c * (c - 1.0))[:, None] / np.abs(s * (s - 1.0))
    r = np.where(np.isfinite(r), r, np.inf)
    # width: first u where the modulus has halved
    halved = r < 0.5
    width = np.where(halved.any(axis=1), grid[np.argmax(halved, axis=1)], grid[-1])
    tail = r * np.maximum(grid[None, :] / width[:, None], 1.0)
    bad = tail > _TAIL_TOL
    last_bad = np.where(bad.any(axis=1), grid.size - 1 - np.argmax(bad[:, ::-1], axis=1), -1)
    upper = grid[np.minimum(last_bad + 1, grid.size - 1)]
    return upper, width, last_bad >= grid.size - 1


def contour_integrals(model, k, T, c, kinds=KINDS, cfg: QuadratureConfig | None = None):
    """Evaluate the requested contour integrals for every log-moneyness in ``k``.

    ``c`` is a scalar abscissa or one abscissa per entry of ``k``.
    Returns a dict kind -> array shaped like ``k`` holding the integrals
    divided by exp(log_scale), plus ``"log_scale"`` = T psi(c) - k c, the log
    of the integrand modulus at u = 0.  Ratios of kinds are thus immune to
    underflow in the far wings.
    """
    cfg = cfg or QuadratureConfig()
    k = np.atleast_1d(np.asarray(k, dtype=float))
    c = np.broadcast_to(np.asarray(c, dtype=float), k.shape).astype(float)
    kinds = tuple(kinds)

    shift = T * model.psi(c.astype(complex)).real - k * c
    result = {kind: np.empty(k.shape) for kind in kinds}
    result["log_scale"] = shift

    if cfg.bound is None:
        upper, width, runaway = _envelope(model, T, c, kinds)
        slow = runaway | (upper > cfg.max_bound)
    else:
        upper = np.full(k.shape, float(cfg.bound))
        width = np.full(k.shape, float(cfg.bound))
        slow = np.zeros(k.shape, bool)
    # algebraic tails (VG near its smoothness threshold): adaptive Fourier-integral quadrature
    for i in np.flatnonzero(slow):
        for kind in kinds:
            result[kind][i] = _oscillatory(model, k[i], T, c[i], shift[i], kind, cfg)
    if slow.all():
        return result
    upper = np.where(slow, 1.0, upper)
    width = np.where(slow, 1.0, width)
    step = np.minimum(upper / cfg.nodes, width / 2.0)

    # rows with similar (U, h) share nodes
    key = np.stack([np.floor(np.log2(upper)), np.floor(np.log2(step))], axis=1)
    key[slow] = np.nan
    for bucket in np.unique(key[~slow], axis=0):
        rows = np.flatnonzero(np.all(key == bucket, axis=1))
        U = upper[rows].max()
        h = step[rows].min()
        vals = _trapezoid(model, k[rows], T, c[rows], shift[rows], kinds, U, h, cfg)
        for kind in kinds:
            result[kind][rows] = vals[kind]
    return result


def _oscillatory(model, k, T, c, shift, kind, cfg):
    """(1/pi) int_0^inf Re f du for one row, with the oscillation handled as a Fourier weight.

    The drift term of the exponent is moved into the weight frequency so the
    remaining amplitude varies slowly in u.
    """
    drift = float(model.params.drift)
    freq = k - drift * T

    def h(u):
        s = np.array([[c + 1j * u]])
        f = _integrands(model, np.zeros((1, 1)), T, s, (kind,), shift + k * c)[kind][0, 0]
        return complex(f * np.exp(-1j * drift * T * u))

    tol = dict(epsabs=0.1 * cfg.rtol, limit=2000)
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            if abs(freq) < 1e-14:
                # u = e^y on [1, inf) turns the algebraic tail into an exponential one
                head = integrate.quad(lambda u: h(u).real, 0.0, 1.0, epsrel=cfg.rtol, **tol)[0]
                tail = integrate.quad(lambda y: h(math.exp(y)).real * math.exp(y), 0.0, np.inf, epsrel=cfg.rtol, **tol)[0]
                val = head + tail
            else:
                w = abs(freq)
                re = integrate.quad(lambda u: h(u).real, 0.0, np.inf, weight="cos", wvar=w, **tol)[0]
                im = integrate.quad(lambda u: h(u).imag, 0.0, np.inf, weight="sin", wvar=w, **tol)[0]
                val = re + math.copysign(1.0, freq) * im
        except integrate.IntegrationWarning as exc:
            raise QuadratureNotConverged(f"{model.name}: adaptive Fourier quadrature failed at T={T:g}: {exc}") from exc
    return val / math.pi


def _partial_sums(model, k, T, c, shift, kinds, u):
    """Sum over nodes u of Re f and |f| for each row, chunked for memory."""
    n = k.size
    sums = {kind: np.zeros(n) for kind in kinds}
    l1 = {kind: np.zeros(n) for kind in kinds}
    per = max(1, _CHUNK // max(n, 1))
    for j in range(0, u.size, per):
        s = c[:, None] + 1j * u[None, j : j + per]
        vals = _integrands(model, k[:, None], T, s, kinds, shift[:, None])
        for kind, f in vals.items():
            if not np.all(np.isfinite(f)):
                raise QuadratureNotConverged(f"{model.name}: non-finite integrand on the contour")
            sums[kind] += f.real.sum(axis=1)
            l1[kind] += np.abs(f).sum(axis=1)
    return sums, l1


def _trapezoid(model, k, T, c, shift, kinds, U, h, cfg):
    n_int = max(cfg.nodes, int(math.ceil(U / h)))
    h = U / n_int
    u = np.arange(n_int + 1) * h
    sums, l1 = _partial_sums(model, k, T, c, shift, kinds, u)
    ends, _ = _partial_sums(model, k, T, c, shift, kinds, np.array([0.0, U]))
    # trapezoid: half weight at both ends
    est = {kind: (h / math.pi) * (sums[kind] - 0.5 * ends[kind]) for kind in kinds}
    mass = {kind: (h / math.pi) * l1[kind] for kind in kinds}
    while True:
        if 2 * n_int > cfg.max_nodes:
            raise QuadratureNotConverged(
                f"{model.name}: trapezoid did not reach rtol={cfg.rtol:g} with {cfg.max_nodes} nodes (T={T:g})"
            )
        mid = (np.arange(n_int) + 0.5) * h
        msums, ml1 = _partial_sums(model, k, T, c, shift, kinds, mid)
        h /= 2.0
        n_int *= 2
        converged = True
        for kind in kinds:
            new = 0.5 * est[kind] + (h / math.pi) * msums[kind]
            mass[kind] = 0.5 * mass[kind] + (h / math.pi) * ml1[kind]
            tol = cfg.rtol * np.abs(new) + _ATOL * mass[kind]
            if np.any(np.abs(new - est[kind]) > tol):
                converged = False
            est[kind] = new
        if converged:
            return est
