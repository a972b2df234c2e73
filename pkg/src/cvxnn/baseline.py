"""Nonconvex reference training by (stochastic) subgradient descent."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .core import ActivationSpec, apply_activation
from .mapping import NetworkParams, nonconvex_objective


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    m: int = 50
    lr: float = 1e-2
    batch_size: Optional[int] = None
    """Mini-batch size; ``None`` means full batch."""
    epochs: int = 1000
    init_scale: float = 1.0
    seed: int = 0
    optimizer: str = "gd"

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.optimizer not in ("gd", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainResult:
    params: NetworkParams
    trajectory: np.ndarray
    """Full-batch regularized objective before training and after each epoch."""
    config: TrainConfig

    @property
    def objective(self) -> float:
        return float(self.trajectory[-1])


def init_network(d: int, cfg: TrainConfig, bias: bool = False, C: int = 1,
                 activation: Optional[ActivationSpec] = None) -> NetworkParams:
    """Gaussian fan-in initialization: ``init_scale/sqrt(d)`` hidden, ``init_scale/sqrt(m)`` output."""
    rng = np.random.default_rng(cfg.seed)
    fan = d + (1 if bias else 0)
    H = rng.standard_normal((fan, cfg.m)) * cfg.init_scale / np.sqrt(fan)
    w2 = rng.standard_normal((cfg.m, C)) * cfg.init_scale / np.sqrt(cfg.m)
    activation = activation or ActivationSpec.relu()
    if bias:
        return NetworkParams(H[:-1], w2, H[-1], activation)
    return NetworkParams(H, w2, None, activation)


def _grads(H, w2, Xa, Y, beta, kappa, weight):
    """Gradients and the (batch) regularized objective at ``(H, w2)``."""
    Z = Xa @ H
    pos = Z >= 0
    A = np.where(pos, Z, kappa * Z)
    E = A @ w2 - Y
    f = 0.5 * weight * float(np.sum(E * E)) + 0.5 * beta * float(np.sum(H * H) + np.sum(w2 * w2))
    R = E * weight
    gw2 = A.T @ R + beta * w2
    S = np.where(pos, 1.0, kappa)  # slope 1 at the kink
    gH = Xa.T @ ((R @ w2.T) * S) + beta * H
    return gH, gw2, f


def _gd_stacked(Xa, Y, beta, kappa, H, w2, lr, epochs):
    """Full-batch GD on a stack of ``S`` independent networks.

    ``H`` is (S, fan, m) and ``w2`` is (S, m, C); both are updated in place.
    Returns the (S, epochs + 1) objective trajectories (NaN-free unless the
    run diverged, in which case the first bad epoch is reported).
    """
    S = H.shape[0]
    traj = np.empty((S, epochs + 1))
    XaT = Xa.T
    for epoch in range(epochs + 1):
        Z = Xa @ H  # (S, n, m)
        slope = np.where(Z >= 0, 1.0, kappa)  # slope 1 at the kink
        A = Z * slope
        E = A @ w2 - Y
        traj[:, epoch] = 0.5 * np.einsum("snc,snc->s", E, E) + 0.5 * beta * (
            np.einsum("sdm,sdm->s", H, H) + np.einsum("smc,smc->s", w2, w2))
        if epoch == epochs:
            break
        if not np.all(np.isfinite(traj[:, epoch])):
            return traj[:, :epoch + 1]
        gw2 = A.transpose(0, 2, 1) @ E + beta * w2
        gH = XaT @ ((E @ w2.transpose(0, 2, 1)) * slope) + beta * H
        H -= lr * gH
        w2 -= lr * gw2
    return traj


def _prepare(X, y, bias):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    Y = np.asarray(y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    Xa = np.hstack([X, np.ones((X.shape[0], 1))]) if bias else X
    return X, Y, Xa


def _unpack(H, w2, bias, activation):
    if bias:
        return NetworkParams(H[:-1].copy(), w2.copy(), H[-1].copy(), activation)
    return NetworkParams(H.copy(), w2.copy(), None, activation)


def _check(traj, cfg):
    bad = np.flatnonzero(~np.isfinite(traj))
    if bad.size or traj.shape[0] < cfg.epochs + 1:
        epoch = int(bad[0]) if bad.size else traj.shape[0] - 1
        raise TrainingDiverged(f"objective became non-finite at epoch {epoch} "
                               f"(lr={cfg.lr}, seed={cfg.seed})")


def train_nonconvex(X, y, beta: float, activation: Optional[ActivationSpec] = None,
                    cfg: TrainConfig = TrainConfig(), bias: bool = False,
                    init: Optional[NetworkParams] = None) -> TrainResult:
    """Minimize ``0.5 ||phi(X W1 + 1 b^T) w2 - y||^2 + (beta/2)(||W1||^2 + ||b||^2 + ||w2||^2)``.

    ``gd`` takes full-batch steps; ``sgd`` shuffles each epoch and takes
    steps on mini-batches whose loss is scaled by ``n / batch`` so that the
    step is an unbiased estimate of the full gradient.
    """
    activation = activation or ActivationSpec.relu()
    X, Y, Xa = _prepare(X, y, bias)
    n, d = X.shape
    params = init or init_network(d, cfg, bias, Y.shape[1], activation)
    H = params.hidden().copy()
    w2 = params.w2.copy()
    kappa = activation.kappa
    batch = n if cfg.optimizer == "gd" or cfg.batch_size is None else min(cfg.batch_size, n)
    if batch == n:
        Hs, w2s = H[None].copy(), w2[None].copy()
        traj = _gd_stacked(Xa, Y, beta, kappa, Hs, w2s, cfg.lr, cfg.epochs)[0]
        _check(traj, cfg)
        return TrainResult(_unpack(Hs[0], w2s[0], bias, activation), traj, cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    traj = np.empty(cfg.epochs + 1)
    traj[0] = _grads(H, w2, Xa, Y, beta, kappa, 1.0)[2]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch):
            idx = order[s:s + batch]
            gH, gw2, _ = _grads(H, w2, Xa[idx], Y[idx], beta, kappa, n / len(idx))
            H -= cfg.lr * gH
            w2 -= cfg.lr * gw2
        traj[epoch + 1] = _grads(H, w2, Xa, Y, beta, kappa, 1.0)[2]
        if not np.isfinite(traj[epoch + 1]):
            _check(traj[:epoch + 2], cfg)
    return TrainResult(_unpack(H, w2, bias, activation), traj, cfg)


@dataclass
class RestartSummary:
    rows: List[dict] = field(default_factory=list)
    convex_optimum: Optional[float] = None

    @property
    def best(self) -> dict:
        return min(self.rows, key=lambda r: r["objective"])

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r["objective"] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["seed", "m", "lr", "objective", "gap"]
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(cols)
        for r in self.rows:
            wr.writerow([r["seed"], r["m"], f"{r['lr']:.17g}", f"{r['objective']:.17g}",
                         "" if r["gap"] is None else f"{r['gap']:.17g}"])
        return buf.getvalue()


def multi_restart(X, y, beta: float, cfgs: Sequence[TrainConfig],
                  activation: Optional[ActivationSpec] = None, bias: bool = False,
                  convex_optimum: Optional[float] = None) -> RestartSummary:
    """Run one training per config and tabulate final objectives and gaps."""
    if not cfgs:
        raise ValueError("multi_restart needs at least one config")
    activation = activation or ActivationSpec.relu()
    out = RestartSummary(convex_optimum=convex_optimum)
    results = {}
    # full-batch runs sharing (m, lr, epochs) advance together as one stack
    groups = {}
    for i, cfg in enumerate(cfgs):
        if cfg.optimizer == "gd" or cfg.batch_size is None:
            groups.setdefault((cfg.m, cfg.lr, cfg.epochs), []).append(i)
        else:
            results[i] = train_nonconvex(X, y, beta, activation, cfg, bias)
    Xv, Y, Xa = _prepare(X, y, bias)
    for (m, lr, epochs), idx in groups.items():
        inits = [init_network(Xv.shape[1], cfgs[i], bias, Y.shape[1], activation) for i in idx]
        Hs = np.stack([p.hidden() for p in inits])
        w2s = np.stack([p.w2 for p in inits])
        trajs = _gd_stacked(Xa, Y, beta, activation.kappa, Hs, w2s, lr, epochs)
        for k, i in enumerate(idx):
            _check(trajs[k], cfgs[i])
            results[i] = TrainResult(_unpack(Hs[k], w2s[k], bias, activation), trajs[k], cfgs[i])
    for i, cfg in enumerate(cfgs):
        res = results[i]
        gap = None if convex_optimum is None else res.objective - convex_optimum
        out.rows.append({"seed": cfg.seed, "m": cfg.m, "lr": cfg.lr,
                         "objective": res.objective, "gap": gap, "result": res})
    return out


def seeded_configs(base: TrainConfig, seeds: Sequence[int]) -> List[TrainConfig]:
    return [replace(base, seed=int(s)) for s in seeds]


# ---------------------------------------------------------------------------
# Linear convolutional network
# ---------------------------------------------------------------------------


@dataclass
class LinearCNNResult:
    W1: np.ndarray
    """(d, m) filters."""
    W2: np.ndarray
    """(m, K) per-position output weights."""
    trajectory: np.ndarray

    @property
    def objective(self) -> float:
        return float(self.trajectory[-1])


def linear_cnn_objective(patches, y, W1, W2, beta: float) -> float:
    Xs = np.asarray(patches, dtype=float)
    pred = np.einsum("knd,dj,jk->n", Xs, W1, W2)
    r = pred - np.asarray(y, dtype=float)
    return 0.5 * float(r @ r) + 0.5 * beta * float(np.sum(W1 ** 2) + np.sum(W2 ** 2))


def train_linear_cnn(patches, y, beta: float, m: int, lr: float, epochs: int,
                     seed: int = 0, init_scale: float = 1.0) -> LinearCNNResult:
    """Full-batch gradient descent on ``0.5||sum_k X_k W1 W2[:, k] - y||^2 + (beta/2)(||W1||^2 + ||W2||^2)``."""
    Xs = np.asarray(patches, dtype=float)
    K, n, d = Xs.shape
    y = np.asarray(y, dtype=float)
    rng = np.random.default_rng(seed)
    W1 = rng.standard_normal((d, m)) * init_scale / np.sqrt(d)
    W2 = rng.standard_normal((m, K)) * init_scale / np.sqrt(m)
    traj = [linear_cnn_objective(Xs, y, W1, W2, beta)]
    for epoch in range(epochs):
        XW = np.einsum("knd,dj->knj", Xs, W1)  # (K, n, m)
        r = np.einsum("knj,jk->n", XW, W2) - y
        g2 = np.einsum("knj,n->jk", XW, r) + beta * W2
        g1 = np.einsum("knd,n,jk->dj", Xs, r, W2) + beta * W1
        W1 -= lr * g1
        W2 -= lr * g2
        f = linear_cnn_objective(Xs, y, W1, W2, beta)
        if not np.isfinite(f):
            raise TrainingDiverged(f"objective became {f} at epoch {epoch + 1} (lr={lr})")
        traj.append(f)
    return LinearCNNResult(W1, W2, np.asarray(traj))
