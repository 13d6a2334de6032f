"""Exponential Lévy models and their log moment generating functions.

Every model is described by its Lévy exponent per unit time ``psi(s)`` so that
``m(s, T) = log E[exp(s X_T)] = T * psi(s)`` where ``S_T = S_0 exp(X_T)``.
The drift is fixed at construction so that ``m(1, T) = 0`` (the price is a
martingale under the pricing measure; rates are zero throughout).

Complex ``s`` is supported everywhere; all exponents are written with
principal branches that are analytic on the open strip of finiteness.
"""

from __future__ import annotations

import json
import math
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import ClassVar, NamedTuple, Union

import numpy as np

from .errors import NoMartingaleDrift, SingularDensity, StripViolation

__all__ = [
    "Strip",
    "BlackScholesParams",
    "MertonParams",
    "KouParams",
    "NigParams",
    "VgParams",
    "JumpToRuinParams",
    "ModelSpec",
    "log_mgf",
    "log_mgf_grad",
    "martingale_drift",
    "vg_smoothness_gate",
    "vg_decay_slope",
    "require_density",
    "model_from_dict",
    "model_to_dict",
    "load_model",
]


class Strip(NamedTuple):
    """Real-part interval on which M(s, T) is finite.

    ``bounded_singularity`` marks finite endpoints that are branch points of
    the exponent at which M(s, T) nevertheless stays finite (NIG).
    """

    lower: float
    upper: float
    lower_closed: bool = False
    upper_closed: bool = False
    bounded_singularity: bool = False

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo = x >= self.lower if self.lower_closed else x > self.lower
        hi = x <= self.upper if self.upper_closed else x < self.upper
        return lo & hi

    @property
    def width(self) -> float:
        return self.upper - self.lower


_REAL = Strip(-math.inf, math.inf)


class _LevyParams:
    """Shared behaviour: drift handling, strip checks and the exponent."""

    name: ClassVar[str]
    drift_field: ClassVar[str] = "b"

    def strip(self) -> Strip:
        return _REAL

    @property
    def diffusion_sigma(self) -> float:
        return 0.0

    @property
    def drift(self) -> float:
        return getattr(self, self.drift_field)

    def _base(self, s):
        """Driftless exponent and its first two s-derivatives."""
        raise NotImplementedError

    def exponent(self, s, order: int = 0):
        """psi(s) and, for ``order`` > 0, its derivatives up to that order."""
        s = np.asarray(s)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            p0, d1, d2 = self._base(s)
            b = self.drift
            if order == 0:
                return p0 + b * s
            return p0 + b * s, d1 + b, d2

    def _normalized(self):
        given = getattr(self, self.drift_field)
        if given is not None:
            object.__setattr__(self, self.drift_field, float(given))
            m1 = complex(self.exponent(1.0 + 0j)).real
            if abs(m1) > 1e-10:
                raise ValueError(f"{self.name}: drift {given!r} is not the martingale drift (m(1,1)={m1:.3g})")
            return
        if not self.strip().contains(1.0):
            raise NoMartingaleDrift(
                f"{self.name}: s=1 lies outside the finiteness strip {tuple(self.strip()[:2])}"
            )
        with np.errstate(all="ignore"):
            p0 = complex(self._base(np.asarray(1.0 + 0j))[0]).real
        if not math.isfinite(p0):
            raise NoMartingaleDrift(f"{self.name}: M(1, T) is infinite")
        object.__setattr__(self, self.drift_field, -p0)


def _positive(name, value):
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value}")


@dataclass(frozen=True)
class BlackScholesParams(_LevyParams):
    sigma: float
    b: float | None = None
    name: ClassVar[str] = "bs"

    def __post_init__(self):
        _positive("sigma", self.sigma)
        self._normalized()

    @property
    def diffusion_sigma(self) -> float:
        return self.sigma

    def _base(self, s):
        v = self.sigma**2
        return 0.5 * v * s * s, v * s, np.full_like(s, v, dtype=complex)


@dataclass(frozen=True)
class MertonParams(_LevyParams):
    """Gaussian diffusion plus compound Poisson jumps with N(mu, delta^2) log sizes."""

    sigma: float
    lam: float
    mu: float
    delta: float
    b: float | None = None
    name: ClassVar[str] = "merton"

    def __post_init__(self):
        _positive("sigma", self.sigma)
        _positive("delta", self.delta)
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        self._normalized()

    @property
    def diffusion_sigma(self) -> float:
        return self.sigma

    def _base(self, s):
        v, d2 = self.sigma**2, self.delta**2
        e = np.exp(0.5 * d2 * s * s + self.mu * s)
        g = d2 * s + self.mu
        return (
            0.5 * v * s * s + self.lam * (e - 1.0),
            v * s + self.lam * g * e,
            v + self.lam * (d2 + g * g) * e,
        )


@dataclass(frozen=True)
class KouParams(_LevyParams):
    """Diffusion plus double-exponential jumps (rates lambda_plus up, lambda_minus down)."""

    sigma: float
    lam: float
    p: float
    lambda_plus: float
    lambda_minus: float
    b: float | None = None
    name: ClassVar[str] = "kou"

    def __post_init__(self):
        _positive("sigma", self.sigma)
        _positive("lambda_minus", self.lambda_minus)
        _positive("lambda_plus", self.lambda_plus)
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        self._normalized()

    @property
    def diffusion_sigma(self) -> float:
        return self.sigma

    def strip(self) -> Strip:
        return Strip(-self.lambda_minus, self.lambda_plus)

    def _base(self, s):
        v, lp, lm, p = self.sigma**2, self.lambda_plus, self.lambda_minus, self.p
        up, dn = 1.0 / (lp - s), 1.0 / (lm + s)
        return (
            0.5 * v * s * s + self.lam * (p * lp * up + (1 - p) * lm * dn - 1.0),
            v * s + self.lam * (p * lp * up**2 - (1 - p) * lm * dn**2),
            v + 2.0 * self.lam * (p * lp * up**3 + (1 - p) * lm * dn**3),
        )


@dataclass(frozen=True)
class NigParams(_LevyParams):
    """Normal inverse Gaussian; M stays finite at both ends of its (closed) strip."""

    alpha: float
    beta: float
    delta: float
    b: float | None = None
    name: ClassVar[str] = "nig"

    def __post_init__(self):
        _positive("alpha", self.alpha)
        _positive("delta", self.delta)
        if not abs(self.beta) < self.alpha:
            raise ValueError("NIG requires |beta| < alpha")
        self._normalized()

    def strip(self) -> Strip:
        a, b = self.alpha, self.beta
        return Strip(-a - b, a - b, True, True, True)

    def _base(self, s):
        a2 = self.alpha**2
        z = self.beta + s
        r = np.sqrt((a2 - z * z) + 0j)
        return (
            self.delta * (math.sqrt(a2 - self.beta**2) - r),
            self.delta * z / r,
            self.delta * a2 / r**3,
        )


@dataclass(frozen=True)
class VgParams(_LevyParams):
    """Asymmetric Variance Gamma: Brownian motion (theta, sigma) run on a Gamma clock of variance rate nu."""

    theta: float
    nu: float
    sigma: float
    mu: float | None = None
    name: ClassVar[str] = "vg"
    drift_field: ClassVar[str] = "mu"

    def __post_init__(self):
        _positive("nu", self.nu)
        _positive("sigma", self.sigma)
        self._normalized()

    def strip(self) -> Strip:
        # roots of 1 - theta*nu*s - sigma^2*nu*s^2/2
        a = 0.5 * self.sigma**2 * self.nu
        bq = self.theta * self.nu
        disc = math.sqrt(bq * bq + 4 * a)
        return Strip((-bq - disc) / (2 * a), (-bq + disc) / (2 * a))

    def _base(self, s):
        v, nu, th = self.sigma**2, self.nu, self.theta
        q = 1.0 - th * nu * s - 0.5 * v * nu * s * s
        g = th + v * s
        return -np.log(q + 0j) / nu, g / q, (v * q + nu * g * g) / q**2


@dataclass(frozen=True)
class JumpToRuinParams(_LevyParams):
    """Black-Scholes dynamics killed (sent to zero) at an independent exponential time."""

    sigma: float
    lam: float
    name: ClassVar[str] = "ruin"

    def __post_init__(self):
        _positive("sigma", self.sigma)
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")

    @property
    def drift(self) -> float:
        return 0.0

    @property
    def diffusion_sigma(self) -> float:
        return self.sigma

    def strip(self) -> Strip:
        # S_T can be 0, so E[S_T^s] is infinite for s < 0; derivative stays bounded at 0
        return Strip(0.0, math.inf, True, False)

    def _base(self, s):
        v, lam = self.sigma**2, self.lam
        return (
            0.5 * v * s * s + (lam - 0.5 * v) * s - lam,
            v * s + lam - 0.5 * v,
            np.full_like(s, v, dtype=complex),
        )


LevyParams = Union[
    BlackScholesParams, MertonParams, KouParams, NigParams, VgParams, JumpToRuinParams
]

_REGISTRY: dict[str, type] = {
    cls.name: cls
    for cls in (BlackScholesParams, MertonParams, KouParams, NigParams, VgParams, JumpToRuinParams)
}

# JSON keys that differ from attribute names ("lambda" is reserved in Python)
_JSON_ALIASES = {"lambda": "lam"}
_JSON_NAMES = {v: k for k, v in _JSON_ALIASES.items()}


@dataclass(frozen=True)
class ModelSpec:
    """A parameter set plus spot; spot defaults to the normalised value 1."""

    params: LevyParams
    spot: float = 1.0

    def __post_init__(self):
        _positive("spot", self.spot)

    @property
    def name(self) -> str:
        return self.params.name

    def strip(self) -> Strip:
        return self.params.strip()

    def psi(self, s, order: int = 0):
        return self.params.exponent(s, order)

    def with_spot(self, spot: float) -> "ModelSpec":
        return replace(self, spot=spot)


def _check_strip(model: ModelSpec, s) -> None:
    st = model.strip()
    if not np.all(st.contains(np.real(s))):
        bad = np.real(s)[~st.contains(np.real(s))] if np.ndim(s) else np.real(s)
        raise StripViolation(
            f"{model.name}: Re s={np.ravel(bad)[0]!r} outside finiteness strip "
            f"({st.lower}, {st.upper}); shrink the contour"
        )


def _out(x):
    return complex(x) if np.ndim(x) == 0 else x


def log_mgf(model: ModelSpec, s, T: float):
    """m(s, T) = log E[exp(s X_T)] for scalar or array ``s``."""
    if not T > 0:
        raise ValueError(f"T must be > 0, got {T}")
    _check_strip(model, s)
    return _out(T * model.psi(np.asarray(s, dtype=complex)))


def log_mgf_grad(model: ModelSpec, s, T: float):
    """(m, d_s m, d_ss m, d_T m) at (s, T), all in closed form."""
    if not T > 0:
        raise ValueError(f"T must be > 0, got {T}")
    _check_strip(model, s)
    p, d1, d2 = model.psi(np.asarray(s, dtype=complex), order=2)
    return _out(T * p), _out(T * d1), _out(T * d2), _out(p)


def martingale_drift(model: ModelSpec | LevyParams) -> float:
    """Drift coefficient making exp(X_T) a martingale (already stored on the params)."""
    params = model.params if isinstance(model, ModelSpec) else model
    return float(params.drift)


class Smoothness(NamedTuple):
    smooth: bool
    exponent: float

    @property
    def status(self) -> str:
        return "Smooth" if self.smooth else "SingularDensity"


def vg_smoothness_gate(params: VgParams, T: float) -> Smoothness:
    """Characteristic function decays like u^(-2T/nu); integrable (smooth density) iff 2T/nu > 1."""
    if not T > 0:
        raise ValueError("T must be > 0")
    expo = 2.0 * T / params.nu
    return Smoothness(expo > 1.0, expo)


def vg_decay_slope(params: VgParams, T: float, u_lo: float = 1e2, u_hi: float = 1e4, n: int = 200) -> float:
    """Least-squares slope of log|phi(u)| against log u from the closed-form characteristic function."""
    u = np.geomspace(u_lo, u_hi, n)
    m = T * params.exponent(1j * u)
    return float(np.polyfit(np.log(u), m.real, 1)[0])


def require_density(model: ModelSpec, T: float) -> None:
    """Raise SingularDensity when the law of S_T has no continuous density."""
    if isinstance(model.params, VgParams):
        gate = vg_smoothness_gate(model.params, T)
        if not gate.smooth:
            raise SingularDensity(
                f"VG density is singular at T={T:g}: need T > nu/2 = {model.params.nu / 2:g} "
                f"(decay exponent 2T/nu = {gate.exponent:g} <= 1)"
            )


def model_from_dict(d: dict) -> ModelSpec:
    try:
        cls = _REGISTRY[d["model"]]
    except KeyError as exc:
        raise ValueError(f"unknown or missing model tag in {d!r}") from exc
    names = {f.name for f in fields(cls)}
    kw = {}
    for key, val in d.get("params", {}).items():
        attr = _JSON_ALIASES.get(key, key)
        if attr not in names:
            raise ValueError(f"{cls.name}: unexpected parameter {key!r}")
        kw[attr] = val
    missing = sorted(f.name for f in fields(cls) if f.default is MISSING and f.name not in kw)
    if missing:
        raise ValueError(f"{cls.name}: missing parameters {missing}")
    return ModelSpec(cls(**kw), float(d.get("spot", 1.0)))


def model_to_dict(model: ModelSpec) -> dict:
    params = {_JSON_NAMES.get(k, k): v for k, v in asdict(model.params).items()}
    return {"model": model.name, "params": params, "spot": model.spot}


def load_model(path) -> ModelSpec:
    with open(Path(path)) as fh:
        return model_from_dict(json.load(fh))
