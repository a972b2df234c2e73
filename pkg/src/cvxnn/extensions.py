"""Architectural variants built on the core lifted program.

* :func:`lowrank_train` replaces the arrangement of ``X`` by that of its
  rank-k truncation and reports the certified approximation ratio.
* :func:`spike_free_train` solves the two-block program valid for whitened data.
* :func:`vector_output_train` splits a C-output problem into C scalar programs.
* :func:`cnn_gap_reduce`, :func:`linear_cnn_train` and
  :func:`circular_cnn_train` cover convolutional networks.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .arrangements import (PatternSet, count_bound, enumerate_exact,
                           sample_gaussian)
from .core import (ActivationSpec, DataMatrix, Loss, PooledLoss, SquaredLoss,
                   as_data, svd_decompose)
from .mapping import NetworkParams, convex_to_network, nonconvex_objective
from .program import GroupWeights, build_program, objective
from .solvers import (SolverConfig, SolveReport, dft_matrix, nuclear_apply,
                      nuclear_certificate, solve_admm, solve_circular_fourier,
                      solve_nuclear)


# ---------------------------------------------------------------------------
# Low-rank arrangements
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LowRankPlan:
    """Certificate data for a rank-k approximated arrangement.

    ``lipschitz_L`` is the loss Lipschitz constant estimated on the instance
    (``||y||`` for squared loss, the residual norm of the zero predictor).
    """

    k: int
    sigma_kplus1: float
    lipschitz_L: float
    lipschitz_R: float
    beta: float
    n_patterns: int = 0
    pattern_bound: int = 0

    def __post_init__(self):
        if self.sigma_kplus1 < 0:
            raise ValueError("sigma_{k+1} must be nonnegative")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @property
    def ratio(self) -> float:
        return (1.0 + self.lipschitz_L * self.lipschitz_R * self.sigma_kplus1 / self.beta) ** 2

    def to_dict(self) -> dict:
        return {"k": self.k, "sigma_kplus1": self.sigma_kplus1,
                "lipschitz_L": self.lipschitz_L, "lipschitz_R": self.lipschitz_R,
                "beta": self.beta, "ratio": self.ratio,
                "n_patterns": self.n_patterns, "pattern_bound": self.pattern_bound}


def truncate_rank(X, k: int) -> Tuple[np.ndarray, float]:
    """Best rank-k approximation of ``X`` and the first discarded singular value."""
    A = as_data(X).values
    U, s, V, r = svd_decompose(A)
    if not 1 <= k <= r:
        raise ValueError(f"target rank {k} must lie in [1, rank(X) = {r}]")
    Xk = (U[:, :k] * s[:k]) @ V[:, :k].T
    return Xk, float(s[k]) if k < r else 0.0


@dataclass
class LowRankResult:
    weights: GroupWeights
    plan: LowRankPlan
    objective: float
    """Nonconvex objective of the reconstructed network on the original data."""
    convex_objective: float
    network: NetworkParams
    report: SolveReport


def lowrank_train(X, y, k: int, beta: float, cfg: SolverConfig = SolverConfig(),
                  activation: Optional[ActivationSpec] = None,
                  sample_count: Optional[int] = None, seed: int = 0) -> LowRankResult:
    """Train on the arrangement of the rank-k truncation ``Xk`` of ``X``.

    The gates and cone constraints come from ``Xk`` while the features and
    the loss use ``X`` itself. Patterns are enumerated exactly unless
    ``sample_count`` is given, in which case Gaussian directions are drawn.

    The returned objective is the training objective of the reconstructed
    network evaluated on ``X``; it is never below the global optimum and at
    most ``plan.ratio`` times it.
    """
    activation = activation or ActivationSpec.relu()
    A = as_data(X).values
    yv = np.asarray(y, dtype=float).ravel()
    Xk, sigma = truncate_rank(A, k)
    if sample_count is None:
        pats = enumerate_exact(Xk)
    else:
        pats = sample_gaussian(Xk, sample_count, seed)
    L = float(np.linalg.norm(yv))
    R = float(max(1.0, abs(activation.kappa)))
    plan = LowRankPlan(k, sigma, L, R, float(beta), pats.P, count_bound(A.shape[0], k))
    prog = build_program(A, yv, pats, beta, activation)
    prog = replace(prog, constraint_X=DataMatrix.from_array(Xk))
    w, rep = solve_admm(prog, cfg)
    net = convex_to_network(w, activation)
    val = nonconvex_objective(net, A, yv, beta)
    return LowRankResult(w, plan, float(val), float(objective(prog, w)), net, rep)


# ---------------------------------------------------------------------------
# Spike-free data
# ---------------------------------------------------------------------------


class SpikeFreeError(ValueError):
    pass


def is_whitened(X, tol: float = 1e-8) -> bool:
    A = as_data(X).values
    return bool(np.max(np.abs(A @ A.T - np.eye(A.shape[0]))) <= tol)


def spike_free_train(X, y, beta: float, cfg: SolverConfig = SolverConfig(),
                     assert_spike_free: bool = False):
    """Two-block program ``min L(X(w' - w), y) + beta(||w|| + ||w'||)``, ``Xw, Xw' >= 0``.

    Only valid for spike-free data. Whitened matrices (``X X^T = I``) are
    certified automatically; anything else needs ``assert_spike_free=True``.

    Returns
    -------
    w : GroupWeights
        Block 0 is ``w'`` (positive output), block 1 is ``w``.
    report : SolveReport
    """
    if not (assert_spike_free or is_whitened(X)):
        raise SpikeFreeError(
            "X is not whitened (X X^T != I within 1e-8); the single-pattern program is only "
            "exact for spike-free data. Pass assert_spike_free=True to override.")
    A = as_data(X).values
    ones = PatternSet.from_bits(np.ones((1, A.shape[0]), dtype=bool), source="spike-free")
    prog = build_program(A, y, ones, beta)
    return solve_admm(prog, cfg)


# ---------------------------------------------------------------------------
# Vector output
# ---------------------------------------------------------------------------


@dataclass
class VectorOutputResult:
    columns: List[GroupWeights]
    objectives: np.ndarray
    reports: List[SolveReport]
    network: NetworkParams

    @property
    def total_objective(self) -> float:
        return float(self.objectives.sum())


def vector_output_train(X, Y, beta: float, patterns: PatternSet,
                        cfg: SolverConfig = SolverConfig(),
                        activation: Optional[ActivationSpec] = None,
                        bias: bool = False, threads: int = 1) -> VectorOutputResult:
    """Solve one scalar program per output column and assemble the network.

    Every neuron of column ``c`` gets an output row that is zero except at
    ``c``, so the assembled network's penalty
    ``(beta/2) sum_j (||w1_j||^2 + ||w2_j||_1^2)`` splits over the columns.
    """
    activation = activation or ActivationSpec.relu()
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    C = Y.shape[1]
    if C < 1:
        raise ValueError("need at least one output column")

    def one(c):
        prog = build_program(X, Y[:, c], patterns, beta, activation, bias=bias)
        w, rep = solve_admm(prog, cfg)
        return w, float(objective(prog, w)), rep

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            outs = list(pool.map(one, range(C)))
    else:
        outs = [one(c) for c in range(C)]
    nets = [convex_to_network(w, activation) for w, _, _ in outs]
    H = np.hstack([nt.hidden() for nt in nets])
    w2 = np.zeros((H.shape[1], C))
    start = 0
    for c, nt in enumerate(nets):
        w2[start:start + nt.m, c] = nt.w2[:, 0]
        start += nt.m
    net = NetworkParams(H[:-1], w2, H[-1], activation) if bias else NetworkParams(H, w2, None, activation)
    return VectorOutputResult([o[0] for o in outs], np.array([o[1] for o in outs]),
                              [o[2] for o in outs], net)


def vector_output_objective(params: NetworkParams, X, Y, beta: float) -> float:
    """``0.5||f(X) - Y||_F^2 + (beta/2) sum_j (||w1_j||^2 + ||w2_j||_1^2)``."""
    from .mapping import network_forward
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    r = network_forward(params, X) - Y
    hid = np.sum(params.hidden() ** 2)
    out = np.sum(np.abs(params.w2).sum(axis=1) ** 2)
    return 0.5 * float(np.sum(r * r)) + 0.5 * beta * float(hid + out)


# ---------------------------------------------------------------------------
# Convolutional networks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PatchSet:
    """K patch matrices of shape (n, d) plus the geometry that produced them."""

    patches: np.ndarray
    """(K, n, d)"""
    stride: int = 1
    padding: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        P = np.asarray(self.patches, dtype=float)
        if P.ndim == 2:
            P = P[None]
        if P.ndim != 3 or P.shape[0] < 1:
            raise ValueError("patches must be K matrices of equal shape (n, d)")
        object.__setattr__(self, "patches", P)

    @property
    def K(self) -> int:
        return self.patches.shape[0]

    @property
    def n(self) -> int:
        return self.patches.shape[1]

    @property
    def d(self) -> int:
        return self.patches.shape[2]

    @classmethod
    def from_signals(cls, signals, size: int, stride: int = 1, padding: int = 0) -> "PatchSet":
        """Patches of length ``size`` from an (n, length) array of 1-D signals."""
        S = np.asarray(signals, dtype=float)
        if S.ndim == 1:
            S = S[None]
        if padding:
            S = np.pad(S, ((0, 0), (padding, padding)))
        starts = range(0, S.shape[1] - size + 1, stride)
        P = np.stack([S[:, s:s + size] for s in starts])
        if P.shape[0] == 0:
            raise ValueError("patch size exceeds the padded signal length")
        return cls(P, stride, padding, {"size": size, "length": S.shape[1] - 2 * padding})

    @classmethod
    def from_images(cls, images, filter_shape, stride: int = 1, padding: int = 0) -> "PatchSet":
        """Flattened patches from an (n, H, W) image stack."""
        I = np.asarray(images, dtype=float)
        if I.ndim == 2:
            I = I[None]
        if padding:
            I = np.pad(I, ((0, 0), (padding, padding), (padding, padding)))
        fh, fw = filter_shape
        H, W = I.shape[1:]
        P = [I[:, r:r + fh, c:c + fw].reshape(I.shape[0], -1)
             for r in range(0, H - fh + 1, stride) for c in range(0, W - fw + 1, stride)]
        if not P:
            raise ValueError("filter larger than the padded image")
        return cls(np.stack(P), stride, padding, {"filter": list(filter_shape)})


def cnn_gap_reduce(patches: PatchSet, y, loss: Optional[Loss] = None):
    """Stack the patches into an (nK, d) matrix and pool the loss over the K blocks.

    A network ``f`` applied to the stacked rows and passed through the
    returned loss reproduces ``L((1/K) sum_k f(X_k), y)``.
    """
    loss = loss or SquaredLoss()
    if not isinstance(patches, PatchSet):
        patches = PatchSet(patches)
    stacked = DataMatrix.from_array(patches.patches.reshape(-1, patches.d))
    if patches.K == 1:
        return stacked, loss
    return stacked, PooledLoss(loss, patches.K)


@dataclass
class LinearCNNSolution:
    Z: np.ndarray
    """(d, K) convex solution."""
    filters: np.ndarray
    """(d, m) unit-norm filters."""
    output_weights: np.ndarray
    """(m, K) per-position output weights."""
    certificate: float
    report: SolveReport

    def reconstruction_error(self, patches) -> float:
        Xs = patches.patches if isinstance(patches, PatchSet) else np.asarray(patches, dtype=float)
        a = nuclear_apply(Xs, self.Z)
        b = np.einsum("knd,dj,jk->n", Xs, self.filters, self.output_weights)
        return float(np.max(np.abs(a - b), initial=0.0))


def linear_cnn_train(patches, y, beta: float, cfg: SolverConfig = SolverConfig(),
                     rank_tol: float = 1e-10) -> LinearCNNSolution:
    """Solve the nuclear-norm program and factor ``Z = sum_j s_j u_j v_j^T``.

    Filter ``j`` is ``u_j`` and its output weights over positions are
    ``s_j v_j``. Singular values at or below ``rank_tol * s_1`` are discarded.
    """
    Xs = patches.patches if isinstance(patches, PatchSet) else np.asarray(patches, dtype=float)
    Z, rep = solve_nuclear(Xs, y, beta, cfg)
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    keep = s > rank_tol * s[0] if s.size and s[0] > 0 else np.zeros(s.shape, dtype=bool)
    filters = U[:, keep]
    out = s[keep, None] * Vt[keep]
    return LinearCNNSolution(Z, filters, out, nuclear_certificate(Xs, y, Z), rep)


def subspace_distance(A, B, rank: Optional[int] = None) -> float:
    """Spectral norm of the difference of the orthogonal projectors onto range(A), range(B).

    With ``rank`` set, each range is replaced by its leading ``rank`` left
    singular directions; otherwise singular values below ``1e-10 s_1`` are dropped.
    """
    def proj(M):
        U, s, _ = np.linalg.svd(np.asarray(M, dtype=float), full_matrices=False)
        if rank is not None:
            r = min(rank, s.size)
        else:
            r = int(np.sum(s > 1e-10 * s[0])) if s.size and s[0] > 0 else 0
        return U[:, :r] @ U[:, :r].T
    return float(np.linalg.norm(proj(A) - proj(B), 2))


# ---------------------------------------------------------------------------
# Circular convolution
# ---------------------------------------------------------------------------


@dataclass
class CircularSolution:
    z: np.ndarray
    """Complex Fourier-domain weights, conjugate-symmetric."""
    report: SolveReport

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(np.abs(self.z) > 0)

    def circulant(self) -> np.ndarray:
        """Real circulant first layer ``W = F diag(z) F^H``."""
        d = self.z.size
        F = dft_matrix(d)
        W = (F * self.z) @ F.conj().T
        return np.real(W)

    def network_output(self, X) -> np.ndarray:
        """Circular linear network ``X W (sqrt(d) e_0)`` with all output weight on position 0."""
        W = self.circulant()
        return np.sqrt(self.z.size) * (np.asarray(X, dtype=float) @ W[:, 0])


def circular_cnn_train(X, y, beta: float, cfg: SolverConfig = SolverConfig()) -> CircularSolution:
    z, rep = solve_circular_fourier(X, y, beta, cfg)
    return CircularSolution(z, rep)
