"""Reference values: plain Monte Carlo and nested Picard Monte Carlo.

The Picard estimator of u^(k)(t_i, x) averages, over paths started at
(t_i, x),

    g(X_T) + (T - t_i) * f(t_tau, X_tau, u^(k-1)(t_tau, X_tau))

with tau uniform on the remaining grid indices {i+1, ..., N}; this is an
unbiased estimate of the right-endpoint Riemann sum of the time integral.
The inner value u^(k-1) is itself estimated by the same rule from
``inner_samples`` fresh paths started at (t_tau, X_tau).  All iterates
k = 0..K are computed on one tree of paths, so successive iterates use
common random numbers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceeded, ParameterError
from .model import PideProblem
from .numkit import substream
from .sde_sim import EulerConfig, _block_size, euler_block, simulate_terminal

LANE_ORACLE = 31
_TAU_TAG = (1 << 32) + 1
_INNER_TAG = (1 << 32) + 2
_TREE_PATHS = 1 << 18


@dataclass(frozen=True)
class OracleConfig:
    samples: int = 100_000
    picard_iters: int = 3
    grid_N: int = 96
    seed: int = 0
    inner_samples: int = 8
    delta: float = 0.1
    m_comp: int = 200
    max_evals: float = 1e9

    def __post_init__(self):
        if min(self.samples, self.grid_N, self.inner_samples, self.m_comp) < 1 or self.picard_iters < 0:
            raise ParameterError("oracle counts must be positive")
        if not 0 < self.delta < 1:
            raise ParameterError("delta must lie in (0, 1)")


def mc_terminal(problem: PideProblem, config: OracleConfig) -> dict:
    """Mean and standard error of g(X_T) from the Euler engine on ``grid_N`` steps."""
    cfg = EulerConfig(N=config.grid_N, delta=config.delta, m_comp=config.m_comp, J=config.samples)
    xT, evals = simulate_terminal(problem, cfg, config.seed, lane=(LANE_ORACLE, 0))
    gT = np.asarray(problem.g(xT), dtype=float)
    n = gT.size
    mean = float(np.mean(gT))
    stderr = float(np.std(gT, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return {"mean": mean, "stderr": stderr, "evals": int(evals + n), "samples": n}


def projected_picard_evals(problem: PideProblem, config: OracleConfig) -> float:
    K, m, N = config.picard_iters, config.inner_samples, config.grid_N
    paths = config.samples * sum(m**i for i in range(K + 1))
    per_step = 2.0
    if problem.jumps is not None:
        lam = problem.jumps.intensity_above(config.delta)
        per_step += config.m_comp + lam * problem.T / N
    return paths * (N * per_step + 1 + K)


def _tree(problem, config, kmax, start, x, stream):
    """Per-path estimator samples of u^(0..kmax) at (start, x); shape (kmax+1, P)."""
    N = config.grid_N
    dt = problem.T / N
    P = x.shape[0]
    rem = N - start
    u = stream.child(_TAU_TAG).uniform(1)[:, 0]
    tau = np.minimum(start + 1 + np.floor(u * rem).astype(np.int64), N)
    xT = np.empty_like(x)
    xtau = np.empty_like(x)
    evals = 0
    bs = _block_size(problem, config.m_comp)
    for lo in range(0, P, bs):
        sl = slice(lo, min(P, lo + bs))
        a, b, ev = euler_block(problem, N, config.delta, config.m_comp, x[sl], stream.take(sl),
                               start=start[sl], capture=tau[sl])
        xT[sl], xtau[sl] = a, b
        evals += ev
    gT = np.asarray(problem.g(xT), dtype=float)
    evals += P
    out = np.empty((kmax + 1, P))
    out[0] = gT
    if kmax >= 1:
        m = config.inner_samples
        inner_stream = stream.reshape(P, 1).child(_INNER_TAG, np.arange(m)[None, :]).reshape(-1)
        inner, ev = _tree(problem, config, kmax - 1, np.repeat(tau, m), np.repeat(xtau, m, axis=0), inner_stream)
        evals += ev
        u_in = inner.reshape(kmax, P, m).mean(axis=-1)
        weight = rem * dt
        for k in range(1, kmax + 1):
            fv = np.asarray(problem.f(tau * dt, xtau, u_in[k - 1]), dtype=float)
            out[k] = gT + weight * fv
            evals += P
    return out, evals


def picard_mc(problem: PideProblem, config: OracleConfig) -> dict:
    """Nested Picard Monte-Carlo estimate of u(0, x0) after ``picard_iters`` iterations."""
    if problem.d > 3:
        raise ParameterError("picard_mc is limited to d <= 3")
    if config.picard_iters > 4:
        raise ParameterError("picard_mc is limited to 4 iterations")
    proj = projected_picard_evals(problem, config)
    if proj > config.max_evals:
        raise BudgetExceeded(
            f"projected {proj:.3e} coefficient evaluations exceed the limit {config.max_evals:.1e}", proj
        )
    K, S = config.picard_iters, config.samples
    chunk = max(1, _TREE_PATHS // sum(config.inner_samples**i for i in range(K + 1)))
    base = substream(config.seed, (LANE_ORACLE, 0))
    samples = np.empty((K + 1, S))
    evals = 0
    for lo in range(0, S, chunk):
        hi = min(S, lo + chunk)
        st = base.child(np.arange(lo, hi))
        x = np.broadcast_to(problem.x0, (hi - lo, problem.d)).copy()
        out, ev = _tree(problem, config, K, np.zeros(hi - lo, dtype=np.int64), x, st)
        samples[:, lo:hi] = out
        evals += ev
    iterates = samples.mean(axis=1)
    stderr = samples.std(axis=1, ddof=1) / math.sqrt(S) if S > 1 else np.full(K + 1, math.inf)
    return {
        "u0_estimate": float(iterates[-1]),
        "stderr": float(stderr[-1]),
        "iterates": iterates.tolist(),
        "iterate_stderr": stderr.tolist(),
        "evals": int(evals),
        "projected_evals": float(proj),
    }
