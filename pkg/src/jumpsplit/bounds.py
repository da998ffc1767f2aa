"""Explicit error-budget constants and the a-priori parameter selection.

All constants are evaluated in log space because they overflow double
precision already for moderate L and T (e.g. exp(9 (1 + 150 L) T)).  The
``value`` views return ``inf`` once the log exceeds the float range.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, ParameterError

_LOG_MAX = math.log(np.finfo(float).max)

N_CAP = 10**9
M_CAP = 10**12
J_CAP = 10**12
THETA_CAP = 2.0**100
DELTA_FLOOR = 2.0**-60


def _lse(*logs: float) -> float:
    return float(np.logaddexp.reduce(np.array(logs, dtype=float)))


def _exp(v: float) -> float:
    return math.exp(v) if v < _LOG_MAX else math.inf


@dataclass(frozen=True)
class TheoryParams:
    L: float
    L1: float
    L2: float
    C_eta: float
    T: float
    p: float
    q: float
    d: int
    xi_second_moment: float
    xi_q_moment: float

    def __post_init__(self):
        for name in ("L", "L1", "L2", "C_eta", "T", "p", "q", "d"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if self.xi_second_moment < 0 or self.xi_q_moment < 0:
            raise ParameterError("moments must be non-negative")

    @property
    def dp(self) -> float:
        return float(self.d) ** self.p

    @classmethod
    def for_fixed_start(cls, x0, **kw) -> "TheoryParams":
        """Moments of a deterministic initial value x0."""
        x0 = np.asarray(x0, dtype=float)
        d = x0.size
        s2 = float(x0 @ x0)
        dp = float(d) ** kw["p"]
        return cls(d=d, xi_second_moment=s2, xi_q_moment=(dp + s2) ** (kw["q"] / 2), **kw)


@dataclass(frozen=True)
class BoundConstants:
    """Natural logs of c, c1, c2, c3, C_tilde, C_hat, C_bar, C0."""

    log_c: float
    log_c1: float
    log_c2: float
    log_c3: float
    log_C_tilde: float
    log_C_hat: float
    log_C_bar: float
    log_C0: float

    NAMES = ("c", "c1", "c2", "c3", "C_tilde", "C_hat", "C_bar", "C0")

    def value(self, name: str) -> float:
        return _exp(getattr(self, "log_" + name))

    def as_dict(self) -> dict:
        return {n: self.value(n) for n in self.NAMES}

    def log_dict(self) -> dict:
        return {n: getattr(self, "log_" + n) for n in self.NAMES}


def constants(params: TheoryParams) -> BoundConstants:
    L, L1, L2, Ce, T, q = params.L, params.L1, params.L2, params.C_eta, params.T, params.q
    sL = math.sqrt(L)
    lL, lT = math.log(L), math.log(T)

    # Lipschitz constant of u in x
    log_c = math.log(4) + 0.5 * lL - 0.5 * lT + sL * T * (1 + 2 * sL * (T + 2))

    # c1 = L^1/2 (2 L^1/2 e^{L^1/2 T} + T^-1/2) e^{(L^1/2+L)T}
    #      + L^1/2 (2 T^-1/2 + c T) 3 e^{3LT(T+4)} (3 L^1/2 + 1)
    a1 = 0.5 * lL + _lse(math.log(2) + 0.5 * lL + sL * T, -0.5 * lT) + (sL + L) * T
    a2 = (0.5 * lL + _lse(math.log(2) - 0.5 * lT, log_c + lT) + math.log(3)
          + 3 * L * T * (T + 4) + math.log(3 * sL + 1))
    log_c1 = _lse(a1, a2)

    log_c2 = math.log(12) + lL + math.log1p(6 * L * T) + (1 + 6 * L) * T

    # c3 = L^1/2 (1 + [c1 e^{(L^1/2+L)T} + c2^1/2 c] + c2^1/2 T^-3/2)
    log_c3 = 0.5 * lL + _lse(0.0, log_c1 + (sL + L) * T, 0.5 * log_c2 + log_c,
                             0.5 * log_c2 - 1.5 * lT)

    t1 = (math.log(27) + 2 * lT
          + _lse(math.log(38 * L1), math.log(37 * L2),
                 math.log(150 * 12) + 2 * lL + math.log1p(6 * L * T) + (1 + 6 * L) * T + math.log(T + 1))
          + (1 + 225 * L) * T)
    t2 = (math.log(24) + math.log(9 * max(150 * L * T, 1.0) + 1) + math.log(Ce) + lT
          + 9 * (1 + 150 * L) * T + 3 * (T + 12) * L)
    t3 = math.log(16) + lL + 2 * lT + math.log(5) + math.log(max(1.0, 4 * L * T * (T + 8))) + 8 * L * (16 + T)
    log_Ct = max(t1, t2, t3)

    h1 = (math.log(4) + 2 * log_c3 + 2 * math.log(1 / sL + T) + lT + 2 * math.log1p(math.sqrt(T))
          + 6 * (sL + L) * T)
    h2 = log_Ct + math.log(2 * T**-3 + L / T) + (1 + 2 * L * (T + 1)) * T
    log_Ch = math.log(2) + _lse(h1, h2)

    log_Cb = (math.log(34) + q * math.log(2) + 0.5 * q * lL + q * sL * T
              + (2 * (L + 1)) ** ((q - 2) / 2) * 2 * (L + sL) * q * (q - 1) * T)

    log_C0 = math.log(8 + 8 * 2304 * math.log(36 * math.e))
    return BoundConstants(log_c, log_c1, log_c2, log_c3, log_Ct, log_Ch, log_Cb, log_C0)


def euler_error_term(d, p, q, N, delta, m_comp) -> float:
    """1/N + delta^q d^p + d^p / (delta^2 m_comp)."""
    dp = float(d) ** p
    return 1.0 / N + delta**q * dp + dp / (delta**2 * m_comp)


@dataclass(frozen=True)
class ErrorBudget:
    truncation: float
    discr: float
    uat: float
    gen: float
    total: float

    def as_dict(self) -> dict:
        return {"truncation": self.truncation, "discr": self.discr, "uat": self.uat,
                "gen": self.gen, "total": self.total}


def _check_m(params, delta, m_comp):
    need = params.C_eta * params.dp / delta**2
    if m_comp < need:
        raise ParameterError(
            f"m_comp >= C_eta * d^p / delta^2 violated: m_comp={m_comp}, required >= {need:.6g}"
        )


def _log_disc_factor(params, k):
    return math.log(64) + k.log_C_hat + math.log(params.dp) + math.log(params.dp + params.xi_second_moment)


def _log_trunc(params, k, theta):
    if params.xi_q_moment == 0:
        return -math.inf
    return k.log_C_bar - (params.q - 2) * math.log(theta) + math.log(params.xi_q_moment)


def _log_gen(k, theta, J, K):
    return math.log(2) + k.log_C0 + 2 * math.log(theta) + math.log(math.log(J) + 1) + math.log(K) - math.log(J)


def budget(params: TheoryParams, N, delta, m_comp, K, J, theta, epsilon_uat) -> ErrorBudget:
    """Four-term a-priori bound on the sup-over-steps mean squared error."""
    if not 0 < delta < 1:
        raise ParameterError("delta must lie in (0, 1)")
    if N < 1 or K < 1 or J < 1 or not theta > 0 or epsilon_uat < 0:
        raise ParameterError("need N, K, J >= 1, theta > 0, epsilon_uat >= 0")
    _check_m(params, delta, m_comp)
    k = constants(params)
    e = euler_error_term(params.d, params.p, params.q, N, delta, m_comp)
    trunc = _exp(_log_trunc(params, k, theta)) if params.xi_q_moment > 0 else 0.0
    discr = _exp(_log_disc_factor(params, k) + math.log(e))
    gen = _exp(_log_gen(k, theta, J, K))
    uat = 64.0 * epsilon_uat
    return ErrorBudget(trunc, discr, uat, gen, trunc + discr + gen + uat)


@dataclass(frozen=True)
class SelectedParameters:
    theta: float
    N: int
    delta: float
    m_comp: int
    J: int

    def as_dict(self) -> dict:
        return {"theta": self.theta, "N": self.N, "delta": self.delta, "m_comp": self.m_comp, "J": self.J}


def _first(grid, ok, what):
    for v in grid:
        if ok(v):
            return v
    raise InfeasibleError(f"no feasible {what} within the search caps")


def _pow2(cap):
    v = 1
    while v <= cap:
        yield v
        v *= 2


def select_parameters(params: TheoryParams, epsilon_target: float, K_given: int) -> SelectedParameters:
    """Grid search for theta, N, delta, m_comp and J meeting each budget share."""
    if not 0 < epsilon_target < 1:
        raise ParameterError("epsilon_target must lie in (0, 1)")
    if K_given < 1:
        raise ParameterError("K must be >= 1")
    k = constants(params)
    le4 = math.log(epsilon_target / 4)
    le12 = math.log(epsilon_target / 12)
    disc = _log_disc_factor(params, k)

    theta = _first((2.0**i for i in range(101)), lambda t: _log_trunc(params, k, t) <= le4, "theta")
    N = _first(_pow2(N_CAP), lambda n: disc - math.log(n) <= le12, "N")
    delta = _first((2.0**-i for i in range(1, 61)),
                   lambda dl: disc + params.q * math.log(dl) + math.log(params.dp) <= le12, "delta")
    m_need = params.C_eta * params.dp / delta**2
    m_comp = _first(_pow2(M_CAP),
                    lambda m: m >= m_need and disc + math.log(params.dp) - 2 * math.log(delta) - math.log(m) <= le12,
                    "m_comp")
    J = _first(_pow2(J_CAP), lambda j: _log_gen(k, theta, j, K_given) <= le4, "J")
    return SelectedParameters(theta, N, delta, m_comp, J)
