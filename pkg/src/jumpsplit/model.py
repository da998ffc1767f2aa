"""Semilinear PIDE problems and the four benchmark models.

Coefficient callables are vectorized over a leading batch axis:

* ``mu(t, x)`` maps ``x`` of shape ``(n, d)`` to ``(n, d)``;
* ``sigma(t, x)`` returns a scalar per row ``(n,)`` (``sigma_kind="scalar"``),
  a diagonal ``(n, d)`` (``"diag"``) or a full ``(n, d, d)`` matrix (``"dense"``);
* ``eta(t, x, z)`` broadcasts ``x`` of shape ``(..., d)`` against ``z``;
* ``f(t, x, v)`` maps ``(n, d), (n,)`` to ``(n,)`` and ``g(x)`` maps
  ``(n, d)`` to ``(n,)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, special, stats

from .errors import NumericError, ParameterError, SamplerError
from .numkit import inverse_regularized_gamma_q, regularized_gamma_q
from .numkit.rng import RngStream

MAX_REJECTIONS = 10**6
# counters reserved by every rejection call, so later draws on the same
# stream never depend on how many rounds other lanes needed
REJECTION_SPAN = 1 << 40


# --------------------------------------------------------------------------
# jump measures


class JumpMeasure:
    """Levy measure with the restricted-sampling interface used by the engine."""

    d: int
    activity: str = "finite"

    def intensity_above(self, delta: float) -> float:
        raise NotImplementedError

    def sample_above(self, stream: RngStream, delta: float) -> np.ndarray:
        """Draw one z ~ nu_delta per lane; returns ``stream.shape + (d,)``."""
        raise NotImplementedError


def _rejection(stream: RngStream, delta: float, d: int, width: int, propose) -> np.ndarray:
    """Per-lane rejection from ``propose(substream) -> (n, d)`` until norm >= delta."""
    shape = stream.shape
    flat = stream.reshape(-1)
    n = flat.shape[0]
    out = np.empty((n, d))
    pending = np.arange(n)
    base = stream.counter
    for r in range(MAX_REJECTIONS):
        sub = flat.take(pending).at(base + r * width)
        z = propose(sub)
        ok = np.linalg.norm(z, axis=-1) >= delta
        out[pending[ok]] = z[ok]
        pending = pending[~ok]
        if pending.size == 0:
            break
    else:
        raise SamplerError(
            f"{MAX_REJECTIONS} consecutive rejections at delta={delta:g}; "
            "delta is too large for this measure"
        )
    stream.counter = base + REJECTION_SPAN
    return out.reshape(shape + (d,))


@dataclass(frozen=True)
class GaussianJumpMeasure(JumpMeasure):
    """lam * N(mu_z * 1, sigma_z^2 I): the Merton jump law."""

    d: int
    lam: float
    mu_z: float
    sigma_z: float
    activity: str = "finite"

    @property
    def total_mass(self) -> float:
        return self.lam

    def intensity_above(self, delta: float) -> float:
        t = (delta / self.sigma_z) ** 2
        nc = self.d * (self.mu_z / self.sigma_z) ** 2
        if nc == 0.0:
            p = regularized_gamma_q(self.d / 2.0, t / 2.0)
        else:
            p = stats.ncx2.sf(t, self.d, nc)
        return float(self.lam * p)

    def sample_above(self, stream: RngStream, delta: float) -> np.ndarray:
        prop = lambda s: self.mu_z + self.sigma_z * s.normal(self.d)
        return _rejection(stream, delta, self.d, self.d, prop)


@dataclass(frozen=True)
class UniformCubeMeasure(JumpMeasure):
    """lam * Lebesgue measure on [0, 1]^d: the Vasicek jump law."""

    d: int
    lam: float
    activity: str = "finite"

    @property
    def total_mass(self) -> float:
        return self.lam

    def intensity_above(self, delta: float) -> float:
        if delta <= 0:
            return float(self.lam)
        if delta > 1:
            raise ParameterError("closed form valid for delta <= 1 only")
        # volume of the positive orthant of the delta-ball
        logv = (self.d / 2) * math.log(math.pi) + self.d * math.log(delta) \
            - self.d * math.log(2.0) - special.gammaln(self.d / 2 + 1)
        return float(self.lam * (1.0 - math.exp(logv)))

    def sample_above(self, stream: RngStream, delta: float) -> np.ndarray:
        return _rejection(stream, delta, self.d, self.d, lambda s: s.uniform(self.d))


@dataclass(frozen=True)
class GammaSubordinatedMeasure(JumpMeasure):
    """Levy measure of N(0, kappa I)-Brownian motion run on a Gamma(alpha) clock.

    nu(B) = alpha * int_0^inf s^-1 exp(-alpha s) N(0, kappa s I)(B) ds.
    Restricted to the complement of the delta-ball, the mixing variable has
    density proportional to s^-1 exp(-alpha s) Q(d/2, delta^2 / (2 kappa s)).
    """

    d: int
    alpha: float
    kappa: float
    activity: str = "infinite"
    table_nodes: int = 4096

    def _log_weight(self, w, delta):
        # log of the s-integrand in w = log s coordinates (the s^-1 cancels ds)
        s = np.exp(w)
        q = special.gammaincc(self.d / 2.0, delta**2 / (2 * self.kappa * s))
        with np.errstate(divide="ignore"):
            return np.log(self.alpha) - self.alpha * s + np.log(q)

    def _w_range(self, delta):
        a = self.d / 2.0
        y_hi = a + 900.0 + 60.0 * math.sqrt(a)
        w_lo = math.log(delta**2 / (2 * self.kappa * y_hi))
        w_hi = math.log(800.0 / self.alpha)
        return w_lo, w_hi

    def intensity_above(self, delta: float) -> float:
        if delta <= 0:
            return math.inf
        return _vg_intensity(self.d, self.alpha, self.kappa, float(delta))

    def s_table(self, delta: float):
        """Nodes (log s) and CDF values of the tilted mixing law."""
        return _vg_table(self.d, self.alpha, self.kappa, float(delta), self.table_nodes)

    def sample_above(self, stream: RngStream, delta: float) -> np.ndarray:
        w_nodes, cdf = self.s_table(delta)
        u = stream.uniform(2)
        w = np.interp(u[..., 0], cdf, w_nodes)
        s = np.exp(w)
        a = self.d / 2.0
        y0 = delta**2 / (2 * self.kappa * s)
        q0 = regularized_gamma_q(a, y0)
        target = np.maximum(u[..., 1] * q0, np.finfo(float).tiny)
        x = np.maximum(inverse_regularized_gamma_q(a, target, polish=False), y0)
        r = np.sqrt(2 * self.kappa * s * x)
        g = stream.normal(self.d)
        direction = g / np.linalg.norm(g, axis=-1, keepdims=True)
        return r[..., None] * direction

    @property
    def exp_integral(self) -> float:
        """Per-coordinate int (e^{z_i} - 1) nu(dz), finite when kappa < alpha/2."""
        return self.alpha * math.log(self.alpha / (self.alpha - self.kappa / 2))


@lru_cache(maxsize=64)
def _vg_intensity(d, alpha, kappa, delta):
    m = GammaSubordinatedMeasure(d, alpha, kappa)
    w_lo, w_hi = m._w_range(delta)
    fn = lambda w: math.exp(m._log_weight(np.array(w), delta))
    # the integrand is unimodal in w; split at its mode for quad's benefit
    grid = np.linspace(w_lo, w_hi, 2001)
    w_mode = float(grid[np.argmax(m._log_weight(grid, delta))])
    pieces = [(w_lo, w_mode), (w_mode, w_hi)]
    total, err = 0.0, 0.0
    for lo, hi in pieces:
        val, e, *rest = integrate.quad(fn, lo, hi, limit=400, epsabs=0.0, epsrel=1e-11, full_output=1)
        total += val
        err += e
    if not np.isfinite(total) or err > 1e-8 * max(total, 1e-300):
        raise NumericError(
            f"quadrature of the truncated intensity did not converge "
            f"(d={d}, delta={delta:g}, value={total:.6e}, abserr={err:.2e})"
        )
    return total


@lru_cache(maxsize=64)
def _vg_table(d, alpha, kappa, delta, nodes):
    m = GammaSubordinatedMeasure(d, alpha, kappa)
    w_lo, w_hi = m._w_range(delta)
    # coarse pass locates the 1e-12 and 1 - 1e-12 quantiles
    for _ in range(2):
        w = np.linspace(w_lo, w_hi, 20001)
        dens = np.exp(m._log_weight(w, delta))
        cdf = integrate.cumulative_trapezoid(dens, w, initial=0.0)
        cdf /= cdf[-1]
        w_lo = float(np.interp(1e-12, cdf, w))
        w_hi = float(np.interp(1 - 1e-12, cdf, w))
    w = np.linspace(w_lo, w_hi, nodes)
    dens = np.exp(m._log_weight(w, delta))
    cdf = integrate.cumulative_trapezoid(dens, w, initial=0.0)
    cdf /= cdf[-1]
    w.setflags(write=False)
    cdf.setflags(write=False)
    return w, cdf


def simulate_vg_exact_increment(stream: RngStream, d: int, kappa: float, alpha_g: float, dt: float) -> np.ndarray:
    """Exact increment of the subordinated Brownian motion over ``dt``."""
    from .numkit import sample_gamma

    if dt <= 0:
        raise ParameterError("dt must be positive")
    tau = sample_gamma(stream, alpha_g * dt, alpha_g)
    return np.sqrt(kappa * tau)[..., None] * stream.normal(d)


# --------------------------------------------------------------------------
# problem container


@dataclass(frozen=True)
class PideProblem:
    d: int
    T: float
    mu: Callable
    sigma: Callable
    f: Callable
    g: Callable
    initial: object
    sigma_kind: str = "diag"
    eta: Callable | None = None
    jumps: JumpMeasure | None = None
    theory: object = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1:
            raise ParameterError("d must be >= 1")
        if not self.T > 0:
            raise ParameterError("T must be positive")
        if self.sigma_kind not in ("scalar", "diag", "dense"):
            raise ParameterError(f"unknown sigma_kind {self.sigma_kind!r}")
        if self.jumps is not None and self.eta is None:
            raise ParameterError("a problem with jumps needs eta")
        if not callable(self.initial):
            x0 = np.broadcast_to(np.asarray(self.initial, dtype=float), (self.d,)).copy()
            x0.setflags(write=False)
            object.__setattr__(self, "initial", x0)

    @property
    def x0(self) -> np.ndarray:
        if callable(self.initial):
            raise ParameterError("problem has a random initial law, no fixed x0")
        return self.initial

    def sigma_apply(self, t: float, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        s = self.sigma(t, x)
        if self.sigma_kind == "scalar":
            return np.asarray(s)[..., None] * w if np.ndim(s) else s * w
        if self.sigma_kind == "diag":
            return s * w
        return np.einsum("...ij,...j->...i", s, w)

    def replace(self, **changes) -> "PideProblem":
        return replace(self, **changes)


# --------------------------------------------------------------------------
# nonlinearities and payoffs


@dataclass(frozen=True)
class DefaultRiskParams:
    gamma_h: float = 0.2
    gamma_l: float = 0.02
    v_h: float = 25.0
    v_l: float = 50.0
    alpha: float = 2.0 / 3.0
    R_rate: float = 0.02

    def __post_init__(self):
        if not (self.gamma_h > self.gamma_l > 0):
            raise ParameterError("need gamma_h > gamma_l > 0")
        if not self.v_h < self.v_l:
            raise ParameterError("need v_h < v_l")
        if not 0 <= self.alpha < 1:
            raise ParameterError("alpha must lie in [0, 1)")


def default_intensity(params: DefaultRiskParams, v):
    """Piecewise-linear default intensity Q(v)."""
    v = np.asarray(v, dtype=float)
    slope = (params.gamma_h - params.gamma_l) / (params.v_h - params.v_l)
    mid = slope * (v - params.v_h) + params.gamma_h
    out = np.where(v < params.v_h, params.gamma_h, np.where(v >= params.v_l, params.gamma_l, mid))
    return out if out.ndim else float(out)


def f_default_risk(params: DefaultRiskParams, t, x, v):
    v = np.asarray(v, dtype=float)
    out = -(1.0 - params.alpha) * default_intensity(params, v) * v - params.R_rate * v
    return out if np.ndim(out) else float(out)


def g_min(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ParameterError("g_min needs a non-empty vector")
    out = x.min(axis=-1)
    return out if out.ndim else float(out)


def g_call_spread(x, K1, K2, L):
    if not K1 < K2:
        raise ParameterError("need K1 < K2")
    m = g_min(x)
    out = np.maximum(m - K1, 0.0) - np.maximum(m - K2, 0.0) - L
    return out if np.ndim(out) else float(out)


def f_counterparty(zeta, v):
    out = -zeta * np.minimum(v, 0.0)
    return out if np.ndim(out) else float(out)


def _eta_exp(t, x, z):
    return x * np.expm1(z)


def _eta_identity(t, x, z):
    return np.broadcast_to(z, np.broadcast_shapes(np.shape(x), np.shape(z)))


# --------------------------------------------------------------------------
# presets


def _default_risk_fg(risk):
    f = lambda t, x, v: f_default_risk(risk, t, x, v)
    return f, g_min


def make_bs_default_model(d, mu0=-0.01, sigma0=0.15, risk=None, x0=30.0, T=1.0 / 3.0):
    if sigma0 <= 0:
        raise ParameterError("sigma0 must be positive")
    risk = risk or DefaultRiskParams()
    b = mu0 + 0.5 * sigma0**2
    f, g = _default_risk_fg(risk)
    return PideProblem(
        d=d, T=T,
        mu=lambda t, x: b * x,
        sigma=lambda t, x: sigma0 * x,
        sigma_kind="diag",
        f=f, g=g, initial=x0,
        name="bs_default",
        params=dict(mu0=mu0, sigma0=sigma0, risk=risk, drift_rate=b),
    )


def make_merton_model(d, mu0=-0.01, sigma0=0.15, lam=0.2, mu_z=-0.05, sigma_z=0.1,
                      risk=None, x0=30.0, T=1.0 / 3.0):
    if lam <= 0 or sigma_z <= 0:
        raise ParameterError("lambda and sigma_z must be positive")
    risk = risk or DefaultRiskParams()
    b = mu0 + 0.5 * sigma0**2 + lam * (math.exp(mu_z + 0.5 * sigma_z**2) - 1.0 - mu_z)
    f, g = _default_risk_fg(risk)
    return PideProblem(
        d=d, T=T,
        mu=lambda t, x: b * x,
        sigma=lambda t, x: sigma0 * x,
        sigma_kind="diag",
        eta=_eta_exp,
        jumps=GaussianJumpMeasure(d, lam, mu_z, sigma_z),
        f=f, g=g, initial=x0,
        name="merton_default",
        params=dict(mu0=mu0, sigma0=sigma0, lam=lam, mu_z=mu_z, sigma_z=sigma_z,
                    risk=risk, drift_rate=b),
    )


def make_vasicek_jump_model(d, alpha_rev=0.01, mu0=100.0, sigma0=2.0, lam=0.2, zeta=0.03,
                            K1=80.0, K2=100.0, L=5.0, x0=100.0, T=0.5):
    if lam <= 0:
        raise ParameterError("lambda must be positive")
    if not K1 < K2:
        raise ParameterError("need K1 < K2")
    return PideProblem(
        d=d, T=T,
        mu=lambda t, x: alpha_rev * (mu0 - x),
        sigma=lambda t, x: np.full(x.shape[:-1], sigma0),
        sigma_kind="scalar",
        eta=_eta_identity,
        jumps=UniformCubeMeasure(d, lam),
        f=lambda t, x, v: f_counterparty(zeta, v),
        g=lambda x: g_call_spread(x, K1, K2, L),
        initial=x0,
        name="vasicek_cc",
        params=dict(alpha_rev=alpha_rev, mu0=mu0, sigma0=sigma0, lam=lam, zeta=zeta,
                    K1=K1, K2=K2, L=L),
    )


def make_expvg_model(d, mu0=-0.0001, sigma0=0.01, alpha_g=0.1, kappa=0.0001, zeta=0.03,
                     K1=80.0, K2=100.0, L=5.0, x0=100.0, T=0.5):
    if not (alpha_g > 0 and kappa > 0):
        raise ParameterError("alpha_g and kappa must be positive")
    if kappa >= alpha_g / 2:
        raise ParameterError("need kappa < alpha_g / 2 for exponential moments")
    if not K1 < K2:
        raise ParameterError("need K1 < K2")
    nu = GammaSubordinatedMeasure(d, alpha_g, kappa)
    b = mu0 + 0.5 * sigma0**2 + nu.exp_integral
    return PideProblem(
        d=d, T=T,
        mu=lambda t, x: b * x,
        sigma=lambda t, x: sigma0 * x,
        sigma_kind="diag",
        eta=_eta_exp,
        jumps=nu,
        f=lambda t, x, v: f_counterparty(zeta, v),
        g=lambda x: g_call_spread(x, K1, K2, L),
        initial=x0,
        name="expvg_cc",
        params=dict(mu0=mu0, sigma0=sigma0, alpha_g=alpha_g, kappa=kappa, zeta=zeta,
                    K1=K1, K2=K2, L=L, drift_rate=b, I_nu=nu.exp_integral),
    )


_RISK_KEYS = {"gamma_h", "gamma_l", "v_h", "v_l", "alpha", "R_rate"}

PRESETS = {
    "bs_default": make_bs_default_model,
    "merton_default": make_merton_model,
    "vasicek_cc": make_vasicek_jump_model,
    "expvg_cc": make_expvg_model,
}

# Euler settings used with each preset unless overridden
PRESET_EULER = {
    "bs_default": dict(N=12, delta=0.1, m_comp=1),
    "merton_default": dict(N=12, delta=0.1, m_comp=200),
    "vasicek_cc": dict(N=12, delta=0.1, m_comp=200),
    "expvg_cc": dict(N=12, delta=0.1, m_comp=200),
}


def make_preset(name: str, d: int, **overrides) -> PideProblem:
    """Build a named preset; default-risk parameters may be overridden flat."""
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ParameterError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    risk_over = {k: overrides.pop(k) for k in list(overrides) if k in _RISK_KEYS}
    if risk_over:
        if name not in ("bs_default", "merton_default"):
            raise ParameterError(f"preset {name!r} has no default-risk parameters")
        overrides["risk"] = DefaultRiskParams(**risk_over)
    try:
        return factory(d, **overrides)
    except TypeError as exc:
        raise ParameterError(f"bad override for preset {name!r}: {exc}") from None
