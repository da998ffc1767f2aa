"""Random-feature networks (least-squares readout) and dense tanh MLPs (Adam)."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError
from .numkit import SpdSystem, cholesky_solve, substream

NORM_FLOOR = 1e-8
LANE_RF_INIT = 11
LANE_DENSE_INIT = 12

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
}


def _act(name):
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ParameterError(f"unknown activation {name!r}") from None


# --------------------------------------------------------------------------
# random features


@dataclass(frozen=True)
class RandomFeatureNet:
    """x -> sum_k y_k rho((A_k x - B_k - m_k) / s_k) + y_{K+1}."""

    A: np.ndarray  # (K, d)
    B: np.ndarray  # (K,)
    y: np.ndarray  # (K+1,)
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None
    activation: str = "tanh"

    @property
    def K(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @property
    def frozen(self) -> bool:
        return self.norm_mean is not None


def init_random_features(d: int, K: int, master_seed: int, lane=(LANE_RF_INIT,),
                         activation: str = "tanh") -> RandomFeatureNet:
    """Hidden weights and biases i.i.d. standard normal; neuron k uses its own lane."""
    if d < 1 or K < 1:
        raise ParameterError("d and K must be >= 1")
    _act(activation)
    st = substream(master_seed, tuple(lane)).child(np.arange(K))
    ab = st.normal(d + 1)
    A = np.ascontiguousarray(ab[:, :d])
    B = ab[:, d].copy()
    for a in (A, B):
        a.setflags(write=False)
    return RandomFeatureNet(A, B, np.zeros(K + 1), activation=activation)


def _preact(net, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != net.d:
        raise ParameterError(f"expected inputs of shape (n, {net.d}), got {X.shape}")
    return X @ net.A.T - net.B


def freeze_norm(net: RandomFeatureNet, X) -> RandomFeatureNet:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ParameterError("freeze_norm needs a batch of at least 2 points")
    h = _preact(net, X)
    mean = h.mean(axis=0)
    std = np.maximum(h.std(axis=0), NORM_FLOOR)
    return replace(net, norm_mean=mean, norm_std=std)


def rf_features(net: RandomFeatureNet, X) -> np.ndarray:
    if not net.frozen:
        raise ParameterError("normalization statistics are not frozen")
    h = _preact(net, X)
    h -= net.norm_mean
    h /= net.norm_std
    rho, _ = _act(net.activation)
    R = np.empty((h.shape[0], net.K + 1))
    R[:, :-1] = rho(h)
    R[:, -1] = 1.0
    return R


def default_ridge(gram: np.ndarray) -> float:
    """1e-8 * trace / (K + 1) for the full (K+1)-column Gram matrix."""
    return 1e-8 * float(np.trace(gram)) / gram.shape[0]


def rf_fit_readout(features: np.ndarray, targets: np.ndarray, ridge: float | None = None):
    """Ridge least squares for the readout; returns ``(y, ridge_used)``.

    The last column is the intercept and is not penalized: the feature
    weights solve the ridge system on centered columns and the intercept
    absorbs the means, so constant targets are reproduced exactly.
    """
    R = np.asarray(features, dtype=float)
    Q = np.asarray(targets, dtype=float)
    if R.ndim != 2 or Q.shape != (R.shape[0],) or R.shape[1] < 1:
        raise ParameterError("features must be (J, K+1) and targets (J,)")
    if not (np.all(np.isfinite(R)) and np.all(np.isfinite(Q))):
        raise ParameterError("features and targets must be finite")
    F = R[:, :-1]
    if ridge is None:
        rho = 1e-8 * (float(np.einsum("ij,ij->", F, F)) + float(R[:, -1] @ R[:, -1])) / R.shape[1]
    else:
        rho = float(ridge)
    y = np.zeros(R.shape[1])
    if F.shape[1]:
        fm = F.mean(axis=0)
        qm = Q.mean()
        Fc = F - fm
        gram = Fc.T @ Fc
        gram = 0.5 * (gram + gram.T)
        w, rho = cholesky_solve(SpdSystem(gram, Fc.T @ (Q - qm), rho))
        y[:-1] = w
        y[-1] = qm - fm @ w
    else:
        y[-1] = Q.mean()
    return y, rho


def readout_residual(features: np.ndarray, targets: np.ndarray, y: np.ndarray, ridge: float) -> float:
    """Relative first-order residual ||R^T(Ry - Q) + rho*P y|| / (1 + ||R^T Q||).

    ``P`` zeroes the (unpenalized) intercept coordinate.
    """
    R = np.asarray(features, dtype=float)
    Q = np.asarray(targets, dtype=float)
    py = np.array(y, dtype=float, copy=True)
    py[-1] = 0.0
    g = R.T @ (R @ y - Q) + ridge * py
    return float(np.linalg.norm(g) / (1.0 + np.linalg.norm(R.T @ Q)))


def rf_eval(net: RandomFeatureNet, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    out = rf_features(net, x[None, :] if single else x) @ net.y
    return float(out[0]) if single else out


def rf_lipschitz_bound(net: RandomFeatureNet) -> float:
    """sum_k |y_k| ||A_k|| / s_k (tanh is 1-Lipschitz)."""
    return float(np.sum(np.abs(net.y[:-1]) * np.linalg.norm(net.A, axis=1) / net.norm_std))


# --------------------------------------------------------------------------
# dense networks


@dataclass
class DenseNet:
    """tanh MLP with frozen input/output standardization.

    ``params`` alternates weight matrices (fan_out, fan_in) and bias vectors.
    Inputs are standardized with ``in_mean``/``in_std`` and the raw output is
    mapped back as ``out_mean + out_std * raw``; the four statistics are set
    from the training batch of a step and are not trained.
    """

    params: list
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: float = 0.0
    out_std: float = 1.0
    activation: str = "tanh"

    @property
    def widths(self) -> list:
        ws = [self.params[0].shape[1]]
        ws += [W.shape[0] for W in self.params[0::2]]
        return ws

    @property
    def d(self) -> int:
        return self.params[0].shape[1]

    def copy(self) -> "DenseNet":
        return DenseNet([p.copy() for p in self.params], self.in_mean.copy(), self.in_std.copy(),
                        self.out_mean, self.out_std, self.activation)


def init_dense(d: int, K: int, master_seed: int, depth: int = 1, lane=(LANE_DENSE_INIT,),
               activation: str = "tanh") -> DenseNet:
    """Weights N(0, 1/fan_in), zero biases; widths [d, K, ..., K, 1]."""
    if d < 1 or K < 1 or depth < 1:
        raise ParameterError("d, K and depth must be >= 1")
    _act(activation)
    widths = [d] + [K] * depth + [1]
    st = substream(master_seed, tuple(lane))
    params = []
    for layer, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
        W = st.child(layer).normal(fo * fi).reshape(fo, fi) / np.sqrt(fi)
        params += [W, np.zeros(fo)]
    return DenseNet(params, np.zeros(d), np.ones(d), 0.0, 1.0, activation)


def set_standardization(net: DenseNet, X, Q) -> None:
    X = np.asarray(X, dtype=float)
    Q = np.asarray(Q, dtype=float)
    net.in_mean = X.mean(axis=0)
    net.in_std = np.maximum(X.std(axis=0), NORM_FLOOR)
    net.out_mean = float(Q.mean())
    net.out_std = float(max(Q.std(), NORM_FLOOR))


def _forward(net: DenseNet, X):
    rho, _ = _act(net.activation)
    h = (np.asarray(X, dtype=float) - net.in_mean) / net.in_std
    acts = [h]
    n_layers = len(net.params) // 2
    for i in range(n_layers):
        W, b = net.params[2 * i], net.params[2 * i + 1]
        z = h @ W.T + b
        h = rho(z) if i < n_layers - 1 else z
        acts.append(h)
    return acts


def dense_eval(net: DenseNet, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != net.d:
        raise ParameterError(f"expected inputs with {net.d} columns, got {X.shape}")
    out = net.out_mean + net.out_std * _forward(net, X)[-1][:, 0]
    return float(out[0]) if single else out


def dense_grad(net: DenseNet, X, Q):
    """Loss (1/J) sum (net(x_j) - Q_j)^2 and its exact gradient w.r.t. ``params``."""
    X = np.asarray(X, dtype=float)
    Q = np.asarray(Q, dtype=float)
    _, drho = _act(net.activation)
    acts = _forward(net, X)
    out = net.out_mean + net.out_std * acts[-1][:, 0]
    resid = out - Q
    J = X.shape[0]
    loss = float(resid @ resid / J)
    delta = (2.0 * net.out_std / J) * resid[:, None]
    grads = [None] * len(net.params)
    n_layers = len(net.params) // 2
    for i in range(n_layers - 1, -1, -1):
        grads[2 * i] = delta.T @ acts[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            delta = (delta @ net.params[2 * i]) * drho(acts[i])
    return loss, grads


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: DenseNet, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in net.params], [np.zeros_like(p) for p in net.params], **kw)


def adam_step(net: DenseNet, state: AdamState, grads, lr: float):
    """In-place Adam update with bias correction; returns ``(net, state)``."""
    if len(grads) != len(net.params):
        raise ParameterError("gradient does not match network parameters")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(net.params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state


# --------------------------------------------------------------------------
# serialization


def _arr(a):
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _unarr(o):
    return np.asarray(o["data"], dtype=float).reshape(o["shape"])


def net_to_dict(net) -> dict:
    if isinstance(net, RandomFeatureNet):
        return {
            "kind": "random_features",
            "activation": net.activation,
            "A": _arr(net.A),
            "B": _arr(net.B),
            "y": _arr(net.y),
            "norm_mean": None if net.norm_mean is None else _arr(net.norm_mean),
            "norm_std": None if net.norm_std is None else _arr(net.norm_std),
        }
    if isinstance(net, DenseNet):
        return {
            "kind": "dense",
            "activation": net.activation,
            "widths": net.widths,
            "params": [_arr(p) for p in net.params],
            "in_mean": _arr(net.in_mean),
            "in_std": _arr(net.in_std),
            "out_mean": net.out_mean,
            "out_std": net.out_std,
        }
    raise ParameterError(f"cannot serialize {type(net).__name__}")


def net_from_dict(o: dict):
    if o["kind"] == "random_features":
        nm = o.get("norm_mean")
        ns = o.get("norm_std")
        return RandomFeatureNet(_unarr(o["A"]), _unarr(o["B"]), _unarr(o["y"]),
                                None if nm is None else _unarr(nm),
                                None if ns is None else _unarr(ns), o["activation"])
    if o["kind"] == "dense":
        return DenseNet([_unarr(p) for p in o["params"]], _unarr(o["in_mean"]), _unarr(o["in_std"]),
                        float(o["out_mean"]), float(o["out_std"]), o["activation"])
    raise ParameterError(f"unknown network kind {o.get('kind')!r}")


def save_net(net, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(net_to_dict(net), fh)


def load_net(path):
    with open(path, encoding="utf-8") as fh:
        return net_from_dict(json.load(fh))
