"""Truncated-jump Euler-Maruyama path engine.

One step on the grid t_k = k T / N reads

    X_{k+1} = X_k + mu(t_k, X_k) dt + sigma(t_k, X_k) sqrt(dt) G_k
              + sum_{i <= P_k} eta(t_k, X_k, Z_i)
              - dt * lam_delta * mean_{i <= m_comp} eta(t_k, X_k, V_i)

with P_k ~ Poisson(lam_delta dt) and Z_i, V_i drawn from the jump measure
restricted to norms >= delta.  Every random quantity lives on its own lane
(path j, step k, channel[, index]) so blocks of paths can be simulated in
any order, on any number of threads, with identical results.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError
from .model import GammaSubordinatedMeasure, PideProblem, simulate_vg_exact_increment
from .numkit import sample_poisson, substream

# lane purposes
LANE_PATHS = 1
LANE_VG_EXACT = 2
# per-step channels
CH_NORMAL = 0
CH_POISSON = 1
CH_JUMP = 2
CH_COMP = 3
CH_INIT = 1 << 31

_BLOCK_PATHS = 8192
_BLOCK_FLOATS = 4_000_000


@dataclass(frozen=True)
class EulerConfig:
    N: int = 12
    delta: float = 0.1
    m_comp: int = 200
    J: int = 500

    def __post_init__(self):
        if int(self.N) < 1:
            raise ParameterError("N must be >= 1")
        if not 0 < self.delta < 1:
            raise ParameterError("delta must lie in (0, 1)")
        if int(self.m_comp) < 1:
            raise ParameterError("m_comp must be >= 1")
        if int(self.J) < 1:
            raise ParameterError("J must be >= 1")


@dataclass(frozen=True)
class PathBatch:
    values: np.ndarray  # (J, N+1, d)
    seed_lineage: tuple
    eval_count: int
    T: float

    @property
    def J(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * (self.T / self.N)

    def at(self, n: int) -> np.ndarray:
        """States at grid index n, shape (J, d)."""
        return self.values[:, n, :]


def count_evaluations(batch: PathBatch) -> int:
    return int(batch.eval_count)


def default_workers() -> int:
    env = os.environ.get("JUMPSPLIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ParameterError(f"JUMPSPLIT_THREADS must be an integer, got {env!r}") from None
    return 1


def _block_size(problem: PideProblem, m_comp: int) -> int:
    per_path = problem.d * (m_comp + 2 if problem.jumps is not None else 2)
    return int(max(1, min(_BLOCK_PATHS, _BLOCK_FLOATS // per_path)))


def _initial_states(problem, stream, n):
    if callable(problem.initial):
        x = np.asarray(problem.initial(stream.child(CH_INIT)), dtype=float)
        if x.shape != (n, problem.d):
            raise ParameterError(f"initial sampler returned shape {x.shape}, expected {(n, problem.d)}")
        return x
    return np.broadcast_to(problem.x0, (n, problem.d)).copy()


def euler_block(problem, N, delta, m_comp, x, stream, start=None, capture=None,
                path_out=None, normals=None, row_ids=None):
    """Advance a block of paths from their start index to T.

    Parameters
    ----------
    x : (B, d) states at the start indices (modified copy is returned).
    stream : batch stream of shape (B,), one lane per path.
    start : optional (B,) integer start indices (default 0).
    capture : optional (B,) grid indices whose states are returned as well.
    path_out : optional (B, N+1, d) array filled with every grid state.
    normals : optional (B, N, d) standard normals replacing the Gaussian draws.
    row_ids : optional (B,) global path ids used in error messages.

    Returns
    -------
    x_T, captured (or None), evals
    """
    B, d = x.shape
    T = problem.T
    dt = T / N
    sdt = math.sqrt(dt)
    x = np.array(x, dtype=float)
    start = np.zeros(B, dtype=np.int64) if start is None else np.asarray(start, dtype=np.int64)
    jumps = problem.jumps
    lam = jumps.intensity_above(delta) if jumps is not None else 0.0
    captured = None
    if capture is not None:
        capture = np.asarray(capture, dtype=np.int64)
        captured = np.full((B, d), np.nan)
        hit = capture == start
        captured[hit] = x[hit]
    if path_out is not None:
        path_out[:, 0] = x
    evals = 0
    comp_idx = np.arange(m_comp)[None, :]
    k0 = int(start.min()) if B else N
    for k in range(k0, N):
        t = k * dt
        act = np.flatnonzero(start <= k)
        full = act.size == B
        xa = x if full else x[act]
        sa = stream if full else stream.take(act)
        n = xa.shape[0]
        step = sa.child(k)
        drift = problem.mu(t, xa)
        if normals is None:
            g = step.child(CH_NORMAL).normal(d)
        else:
            g = normals[:, k] if full else normals[act, k]
        xn = xa + drift * dt + problem.sigma_apply(t, xa, sdt * g)
        evals += 2 * n
        if jumps is not None and lam > 0:
            P = sample_poisson(step.child(CH_POISSON), lam * dt)
            tot = int(P.sum())
            if tot:
                rows = np.repeat(np.arange(n), P)
                idx = np.arange(tot) - np.repeat(np.cumsum(P) - P, P)
                z = jumps.sample_above(sa.take(rows).child(k, CH_JUMP, idx), delta)
                jsum = np.zeros((n, d))
                np.add.at(jsum, rows, problem.eta(t, xa[rows], z))
                xn += jsum
                evals += tot
            v = jumps.sample_above(sa.take((Ellipsis, None)).child(k, CH_COMP, comp_idx), delta)
            comp = problem.eta(t, xa[:, None, :], v).mean(axis=1)
            xn -= dt * lam * comp
            evals += n * m_comp
        if not np.all(np.isfinite(xn)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(xn), axis=1))[0])
            j = int(act[bad]) if row_ids is None else int(np.asarray(row_ids)[act[bad]])
            raise NumericError(f"non-finite state on path {j} at step {k + 1}")
        if full:
            x = xn
        else:
            x[act] = xn
        if path_out is not None:
            path_out[act, k + 1] = xn
        if capture is not None:
            hit = capture[act] == k + 1
            captured[act[hit]] = xn[hit]
    return x, captured, evals


def _run(problem, config, master_seed, lane, workers, normals, keep_path):
    J, N, d = int(config.J), int(config.N), problem.d
    if normals is not None:
        normals = np.asarray(normals, dtype=float)
        if normals.shape != (J, N, d):
            raise ParameterError(f"normals must have shape {(J, N, d)}")
    if problem.jumps is not None:
        lam = problem.jumps.intensity_above(config.delta)
        if not math.isfinite(lam):
            raise ParameterError("jump intensity above delta must be finite")
    values = np.empty((J, N + 1, d)) if keep_path else None
    terminal = np.empty((J, d))
    bs = _block_size(problem, config.m_comp)
    blocks = [(lo, min(J, lo + bs)) for lo in range(0, J, bs)]
    base = substream(master_seed, lane)

    def work(block):
        lo, hi = block
        ids = np.arange(lo, hi)
        st = base.child(ids)
        x = _initial_states(problem, st, hi - lo)
        out = values[lo:hi] if keep_path else None
        nrm = normals[lo:hi] if normals is not None else None
        xT, _, ev = euler_block(problem, N, config.delta, config.m_comp, x, st,
                                path_out=out, normals=nrm, row_ids=ids)
        terminal[lo:hi] = xT
        return ev

    workers = default_workers() if workers is None else max(1, int(workers))
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            evals = list(pool.map(work, blocks))
    else:
        evals = [work(b) for b in blocks]
    return values, terminal, int(sum(evals))


def simulate_paths(problem: PideProblem, config: EulerConfig, master_seed: int, *,
                   lane=(LANE_PATHS, 0), workers=None, normals=None) -> PathBatch:
    """Simulate ``config.J`` Euler paths over the full grid.

    ``lane`` is the purpose prefix; path j uses lane ``lane + (j,)``.
    ``normals`` optionally supplies the Gaussian increments (J, N, d),
    which is how common random numbers across grids are built.
    """
    values, _, evals = _run(problem, config, master_seed, tuple(lane), workers, normals, True)
    values.setflags(write=False)
    return PathBatch(values, (int(master_seed), tuple(lane)), evals, problem.T)


def simulate_terminal(problem: PideProblem, config: EulerConfig, master_seed: int, *,
                      lane=(LANE_PATHS, 0), workers=None):
    """Terminal states only (same lanes as ``simulate_paths``); returns (X_T, evals)."""
    _, terminal, evals = _run(problem, config, master_seed, tuple(lane), workers, None, False)
    return terminal, evals


def simulate_paths_vg_exact(problem: PideProblem, config: EulerConfig, master_seed: int, *,
                            lane=(LANE_VG_EXACT, 0)) -> PathBatch:
    """Exact exponential-VG paths on the Euler grid (validation engine)."""
    nu = problem.jumps
    if not isinstance(nu, GammaSubordinatedMeasure) or problem.name != "expvg_cc":
        raise ParameterError("simulate_paths_vg_exact needs the exponential-VG model")
    J, N, d = int(config.J), int(config.N), problem.d
    mu0, sigma0 = problem.params["mu0"], problem.params["sigma0"]
    dt = problem.T / N
    base = substream(master_seed, tuple(lane))
    values = np.empty((J, N + 1, d))
    for lo in range(0, J, _BLOCK_PATHS):
        hi = min(J, lo + _BLOCK_PATHS)
        st = base.child(np.arange(lo, hi))
        logx = np.log(_initial_states(problem, st, hi - lo))
        values[lo:hi, 0] = np.exp(logx)
        for k in range(N):
            sk = st.child(k)
            dz = simulate_vg_exact_increment(sk.child(CH_JUMP), d, nu.kappa, nu.alpha, dt)
            dw = math.sqrt(dt) * sk.child(CH_NORMAL).normal(d)
            logx = logx + mu0 * dt + sigma0 * dw + dz
            values[lo:hi, k + 1] = np.exp(logx)
    values.setflags(write=False)
    return PathBatch(values, (int(master_seed), tuple(lane)), 0, problem.T)


def dump_paths_csv(batch: PathBatch, fh) -> None:
    """Write ``j,k,x_1..x_d`` rows; only for d <= 16."""
    J, N1, d = batch.values.shape
    if d > 16:
        raise ParameterError("path dumps are limited to d <= 16")
    fh.write(",".join(["j", "k"] + [f"x_{i + 1}" for i in range(d)]) + "\n")
    for j in range(J):
        for k in range(N1):
            fh.write(f"{j},{k}," + ",".join(repr(float(v)) for v in batch.values[j, k]) + "\n")
