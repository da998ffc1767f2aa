"""Backward deep-splitting recursion with random-feature or dense networks."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ParameterError
from .model import PideProblem
from .nets import (
    AdamState,
    LANE_DENSE_INIT,
    DenseNet,
    RandomFeatureNet,
    adam_step,
    dense_eval,
    dense_grad,
    freeze_norm,
    init_dense,
    init_random_features,
    net_to_dict,
    readout_residual,
    rf_eval,
    rf_features,
    rf_fit_readout,
    set_standardization,
)
from .numkit import substream
from .sde_sim import LANE_PATHS, EulerConfig, PathBatch, simulate_paths

LANE_TRAIN = 21
DIVERGENCE_LOSS = 1e12

DEFAULT_SCHEDULE = ((0, 1e-2), (500, 1e-3), (1000, 1e-4))


@dataclass(frozen=True)
class SgdConfig:
    epochs: int = 2000
    minibatch: int | None = None  # None: full batch, one Adam step per epoch
    schedule: tuple = DEFAULT_SCHEDULE

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if self.minibatch is not None and self.minibatch < 1:
            raise ParameterError("minibatch must be >= 1")
        starts = [s for s, _ in self.schedule]
        if not starts or starts[0] != 0 or starts != sorted(starts):
            raise ParameterError("schedule must start at epoch 0 and be sorted")
        if any(lr <= 0 for _, lr in self.schedule):
            raise ParameterError("learning rates must be positive")

    def lr(self, epoch: int) -> float:
        rate = self.schedule[0][1]
        for start, r in self.schedule:
            if epoch >= start:
                rate = r
        return rate


@dataclass(frozen=True)
class SplittingConfig:
    method: str = "random"
    euler: EulerConfig = field(default_factory=EulerConfig)
    K: int | None = None  # None: min(d, 2000)
    truncation_theta: float | None = None
    sgd: SgdConfig | None = None
    runs: int = 1
    master_seed: int = 0
    depth: int = 1
    warm_start: bool = True
    streaming: bool = False
    activation: str = "tanh"
    workers: int | None = None

    def __post_init__(self):
        if self.method not in ("random", "deterministic"):
            raise ParameterError("method must be 'random' or 'deterministic'")
        if self.K is not None and self.K < 1:
            raise ParameterError("K must be >= 1")
        if self.truncation_theta is not None and not self.truncation_theta > 0:
            raise ParameterError("truncation_theta must be positive")
        if self.method == "deterministic" and self.sgd is None:
            object.__setattr__(self, "sgd", SgdConfig())
        if self.runs < 1:
            raise ParameterError("runs must be >= 1")

    def neurons(self, d: int) -> int:
        return int(self.K) if self.K is not None else min(d, 2000)


@dataclass
class SplittingSolution:
    """nets[n] approximates u(t_n, .) for n < N; slot N is g itself."""

    nets: list
    problem: PideProblem
    u0: float
    diagnostics: dict

    @property
    def N(self) -> int:
        return len(self.nets)

    def to_dict(self, include_nets: bool = True) -> dict:
        out = {"u0": self.u0, "N": self.N, "problem": self.problem.name, "d": self.problem.d,
               "diagnostics": self.diagnostics}
        if include_nets:
            out["nets"] = [net_to_dict(n) for n in self.nets]
        return out

    def save(self, path, include_nets: bool = True) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(include_nets), fh, indent=1)


def truncate(theta: float, s):
    if not theta > 0:
        raise ParameterError("theta must be positive")
    out = np.clip(s, -theta, theta)
    return out if np.ndim(out) else float(out)


def build_targets(problem: PideProblem, n: int, next_value, paths: PathBatch) -> np.ndarray:
    """Q_j = V_{n+1}(X_{n+1}) + dt * f(t_{n+1}, X_{n+1}, V_{n+1}(X_{n+1}))."""
    N = paths.N
    if not 0 <= n < N:
        raise ParameterError(f"step index {n} outside [0, {N})")
    dt = problem.T / N
    x1 = paths.at(n + 1)
    v = np.asarray(next_value(x1), dtype=float)
    Q = v + dt * np.asarray(problem.f((n + 1) * dt, x1, v), dtype=float)
    if not np.all(np.isfinite(Q)):
        j = int(np.flatnonzero(~np.isfinite(Q))[0])
        raise NumericError(f"non-finite regression target for path {j} at step {n}")
    return Q


def _initial_points(problem, solution_eval, master_seed):
    if callable(problem.initial):
        st = substream(master_seed, (LANE_PATHS, 99)).child(np.arange(4096))
        return np.asarray(problem.initial(st), dtype=float)
    return problem.x0[None, :]


def solve_random(problem: PideProblem, config: SplittingConfig) -> SplittingSolution:
    """Random-feature splitting: one path batch, one frozen hidden layer."""
    if config.method != "random":
        raise ParameterError("solve_random needs method='random'")
    t0 = time.perf_counter()
    N = config.euler.N
    seed = config.master_seed
    paths = simulate_paths(problem, config.euler, seed, lane=(LANE_PATHS, 0), workers=config.workers)
    K = config.neurons(problem.d)
    base = init_random_features(problem.d, K, seed, activation=config.activation)
    nets = [None] * N
    next_value = problem.g
    evals = paths.eval_count
    steps = []
    for n in range(N - 1, -1, -1):
        Q = build_targets(problem, n, next_value, paths)
        evals += 2 * paths.J if n == N - 1 else paths.J
        if config.truncation_theta is not None:
            Q = truncate(config.truncation_theta, Q)
        xn = paths.at(n)
        net = freeze_norm(base, xn)
        R = rf_features(net, xn)
        y, ridge = rf_fit_readout(R, Q)
        net = RandomFeatureNet(net.A, net.B, y, net.norm_mean, net.norm_std, net.activation)
        fit = R @ y
        steps.append({"n": n, "mse": float(np.mean((fit - Q) ** 2)), "mse_zero": float(np.mean(Q**2)),
                      "target_var": float(np.var(Q)), "ridge": ridge,
                      "orthogonality": readout_residual(R, Q, y, ridge)})
        nets[n] = net
        next_value = lambda x, net=net: rf_eval(net, x)
    xs = _initial_points(problem, None, seed)
    u0 = float(np.mean(rf_eval(nets[0], xs)))
    diag = {"method": "random", "K": K, "steps": steps[::-1], "eval_count": int(evals),
            "wall_time_s": time.perf_counter() - t0}
    return SplittingSolution(nets, problem, u0, diag)


def _train_dense(net: DenseNet, X, Q, sgd: SgdConfig, stream, data_fn=None):
    """Adam over ``sgd.epochs`` epochs; returns the per-epoch loss history."""
    state = AdamState.for_net(net)
    J = X.shape[0]
    mb = sgd.minibatch or J
    losses = np.empty(sgd.epochs)
    for m in range(sgd.epochs):
        if data_fn is not None:
            X, Q = data_fn(m)
        lr = sgd.lr(m)
        if mb >= J:
            loss, grads = dense_grad(net, X, Q)
            adam_step(net, state, grads, lr)
        else:
            order = np.argsort(stream.child(m).uniform(J))
            loss = 0.0
            for lo in range(0, J, mb):
                sel = order[lo:lo + mb]
                lb, grads = dense_grad(net, X[sel], Q[sel])
                adam_step(net, state, grads, lr)
                loss += lb * sel.size / J
        if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
            raise NumericError(f"training diverged at epoch {m} (loss={loss:.3e}, lr={lr:g})")
        losses[m] = loss
    return losses


def solve_deterministic(problem: PideProblem, config: SplittingConfig) -> SplittingSolution:
    """Dense-network splitting trained by Adam, fresh path batch per step."""
    if config.method != "deterministic":
        raise ParameterError("solve_deterministic needs method='deterministic'")
    t0 = time.perf_counter()
    N = config.euler.N
    seed = config.master_seed
    sgd = config.sgd
    K = config.neurons(problem.d)
    nets = [None] * N
    next_value = problem.g
    evals = 0
    steps = []
    prev = None
    for n in range(N - 1, -1, -1):
        paths = simulate_paths(problem, config.euler, seed, lane=(LANE_PATHS, n + 1), workers=config.workers)
        evals += paths.eval_count
        Q = build_targets(problem, n, next_value, paths)
        evals += 2 * paths.J if n == N - 1 else paths.J
        if config.truncation_theta is not None:
            Q = truncate(config.truncation_theta, Q)
        X = np.ascontiguousarray(paths.at(n))
        if prev is None or not config.warm_start:
            net = init_dense(problem.d, K, seed, depth=config.depth, lane=(LANE_DENSE_INIT, n), activation=config.activation)
        else:
            net = prev.copy()
        set_standardization(net, X, Q)
        data_fn = None
        if config.streaming:
            def data_fn(m, n=n, next_value=next_value):
                nonlocal evals
                b = simulate_paths(problem, config.euler, seed, lane=(LANE_PATHS, n + 1, m + 1),
                                   workers=config.workers)
                evals += b.eval_count + b.J
                q = build_targets(problem, n, next_value, b)
                if config.truncation_theta is not None:
                    q = truncate(config.truncation_theta, q)
                return np.ascontiguousarray(b.at(n)), q
        losses = _train_dense(net, X, Q, sgd, substream(seed, (LANE_TRAIN, n)), data_fn)
        steps.append({"n": n, "mse": float(losses[-1]), "target_var": float(np.var(Q)),
                      "loss_history": losses.tolist()})
        nets[n] = net
        prev = net
        next_value = lambda x, net=net: dense_eval(net, x)
    xs = _initial_points(problem, None, seed)
    u0 = float(np.mean(dense_eval(nets[0], xs)))
    diag = {"method": "deterministic", "K": K, "steps": steps[::-1], "eval_count": int(evals),
            "wall_time_s": time.perf_counter() - t0}
    return SplittingSolution(nets, problem, u0, diag)


def solve(problem: PideProblem, config: SplittingConfig) -> SplittingSolution:
    if config.method == "random":
        return solve_random(problem, config)
    return solve_deterministic(problem, config)


def evaluate_solution(solution: SplittingSolution, n: int, x):
    N = solution.N
    if not 0 <= n <= N:
        raise ParameterError(f"time index {n} outside [0, {N}]")
    x = np.asarray(x, dtype=float)
    if n == N:
        g = solution.problem.g
        return g(x)
    net = solution.nets[n]
    if isinstance(net, RandomFeatureNet):
        return rf_eval(net, x)
    return dense_eval(net, x)
