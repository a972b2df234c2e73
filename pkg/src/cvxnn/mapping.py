"""Translation between lifted convex solutions and two-layer networks.

A network with hidden weights ``W1`` (d x m), output weights ``w2`` (m x C)
and optional per-neuron bias computes ``phi(X W1 + 1 b^T) w2`` and is
trained with weight decay ``(beta / 2) (||W1||_F^2 + ||b||^2 + ||w2||_F^2)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy.optimize import lsq_linear

from .arrangements import PatternSet
from .core import ActivationSpec, Loss, SquaredLoss, apply_activation
from .program import GroupWeights, build_program


@dataclass(frozen=True)
class NetworkParams:
    """Two-layer network parameters.

    ``w2`` is stored as an (m, C) array; scalar-output networks have ``C = 1``.
    """

    W1: np.ndarray
    w2: np.ndarray
    bias: Optional[np.ndarray] = None
    activation: ActivationSpec = field(default_factory=ActivationSpec)

    def __post_init__(self):
        W1 = np.asarray(self.W1, dtype=float)
        w2 = np.asarray(self.w2, dtype=float)
        if W1.ndim != 2:
            raise ValueError("W1 must be d x m")
        if w2.ndim == 1:
            w2 = w2[:, None]
        if w2.shape[0] != W1.shape[1]:
            raise ValueError(f"W1 has {W1.shape[1]} neurons but w2 has {w2.shape[0]} rows")
        object.__setattr__(self, "W1", W1)
        object.__setattr__(self, "w2", w2)
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=float).ravel()
            if b.shape[0] != W1.shape[1]:
                raise ValueError("bias length must equal the neuron count")
            object.__setattr__(self, "bias", b)

    @property
    def d(self) -> int:
        return self.W1.shape[0]

    @property
    def m(self) -> int:
        return self.W1.shape[1]

    @property
    def C(self) -> int:
        return self.w2.shape[1]

    def hidden(self) -> np.ndarray:
        """Stacked ``[W1; b]`` ((d+1) x m with bias, d x m otherwise)."""
        if self.bias is None:
            return self.W1
        return np.vstack([self.W1, self.bias[None, :]])


def _augment(params: NetworkParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != params.d:
        raise ValueError(f"X has {X.shape[1]} columns, network expects {params.d}")
    if params.bias is None:
        return X
    return np.hstack([X, np.ones((X.shape[0], 1))])


def network_forward(params: NetworkParams, X) -> np.ndarray:
    """``phi(X W1 + 1 b^T) w2`` as an (n, C) array."""
    Xa = _augment(params, X)
    return apply_activation(params.activation, Xa @ params.hidden()) @ params.w2


def nonconvex_objective(params: NetworkParams, X, y, beta: float,
                        loss: Optional[Loss] = None) -> float:
    """Loss plus ``(beta/2)(||W1||^2 + ||b||^2 + ||w2||^2)``."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    loss = loss or SquaredLoss()
    out = network_forward(params, X)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    reg = 0.5 * beta * (np.sum(params.hidden() ** 2) + np.sum(params.w2 ** 2))
    return loss.evaluate(out, y) + float(reg)


def rescale_balanced(params: NetworkParams) -> NetworkParams:
    """Rescale each neuron so that ``||[w1_j; b_j]||_2 = ||w2_j||_2``.

    Positive homogeneity leaves the network output unchanged; by AM-GM the
    weight-decay penalty can only decrease. Neurons with a zero hidden weight
    but nonzero output weight contribute nothing and are dropped.
    """
    H = params.hidden()
    a = np.linalg.norm(H, axis=0)
    c = np.linalg.norm(params.w2, axis=1)
    dead = (a == 0) & (c > 0)
    if np.any(dead):
        warnings.warn(f"dropping {int(dead.sum())} neuron(s) with zero hidden weights")
    keep = ~dead
    a, c = a[keep], c[keep]
    gamma = np.ones_like(a)
    live = (a > 0) & (c > 0)
    gamma[live] = np.sqrt(c[live] / a[live])
    H = H[:, keep] * gamma
    w2 = params.w2[keep] / np.where(gamma > 0, gamma, 1.0)[:, None]
    zero = (a > 0) & (c == 0)
    H[:, zero] = 0.0
    if params.bias is None:
        return NetworkParams(H, w2, None, params.activation)
    return NetworkParams(H[:-1], w2, H[-1], params.activation)


def convex_to_network(w: GroupWeights, activation: Optional[ActivationSpec] = None,
                      tol: float = 0.0) -> NetworkParams:
    """One neuron per nonzero block: ``(w_b / sqrt(||w_b||), sign_b sqrt(||w_b||))``.

    With a bias-augmented program the last block coordinate becomes the
    neuron's bias.
    """
    activation = activation or ActivationSpec.relu()
    norms = w.norms(2)
    idx = np.flatnonzero(norms > tol)
    root = np.sqrt(norms[idx])
    H = (w.blocks[idx] / root[:, None]).T  # (d, m)
    w2 = (w.sign[idx] * root)[:, None]
    if w.with_bias:
        return NetworkParams(H[:-1], w2, H[-1], activation)
    return NetworkParams(H, w2, None, activation)


def network_to_convex(params: NetworkParams, X, tol: float = 0.0):
    """Map a scalar-output network to lifted weights over its own patterns.

    Each neuron with nonzero output weight becomes one block
    ``[w1_j; b_j] |w2_j|`` (invariant under balanced rescaling) attached to
    the pattern ``1[X w1_j + b_j >= 0]``. Neurons sharing a pattern keep
    separate blocks; the pattern set is deduplicated and canonically ordered.

    Returns
    -------
    w : GroupWeights
        Non-canonical layout: ``pattern_index`` points into ``patterns``.
    patterns : PatternSet
    """
    if params.C != 1:
        raise ValueError("network_to_convex handles scalar-output networks")
    Xa = _augment(params, X)
    H = params.hidden()
    w2 = params.w2[:, 0]
    keep = np.flatnonzero(np.abs(w2) > tol)
    bits = (Xa @ H[:, keep] >= 0).T
    pats = PatternSet.from_bits(bits.reshape(-1, Xa.shape[0]), source="user")
    index = np.array([pats.index_of(b) for b in bits], dtype=int)
    blocks = (H[:, keep] * np.abs(w2[keep])).T
    sign = np.sign(w2[keep]).astype(float)
    return GroupWeights(blocks.reshape(len(keep), H.shape[0]), index, sign,
                        params.bias is not None), pats


def subsampled_program(params: NetworkParams, X, y, beta: float, **kw):
    """The lifted program over a network's own patterns, and the network's point in it.

    Returns ``(prog, w)`` where ``objective(prog, w)`` is at most the
    network's weight-decay objective (equal after balanced rescaling).
    """
    w, pats = network_to_convex(params, X)
    prog = build_program(X, y, pats, beta, params.activation, bias=params.bias is not None,
                         drop_zero=False, **kw)
    return prog, w


@dataclass
class NeuronResidual:
    """Stationarity residuals of one neuron (absolute values).

    ``output`` is ``|beta w2_j + g^T phi(X w1_j)|``; ``hidden`` is the
    smallest achievable ``||beta w1_j + w2_j X^T (D_j + S_j diag(delta)) g||``
    over boundary multipliers ``delta``; ``balance`` is ``| |w2_j| - ||w1_j|| |``.
    """

    neuron: int
    output: float
    hidden: float
    balance: float
    boundary: int
    failures: List[str] = field(default_factory=list)


@dataclass
class StationarityReport:
    is_stationary: bool
    tol: float
    scale: float
    neurons: List[NeuronResidual]

    def max_residual(self) -> float:
        vals = [max(r.output, r.hidden, r.balance) for r in self.neurons]
        return max(vals, default=0.0)


def stationarity_check(params: NetworkParams, X, y, beta: float, tol: float = 1e-5,
                       boundary_rtol: float = 1e-7, inactive_tol: float = 1e-8) -> StationarityReport:
    """Clarke stationarity of the weight-decay objective with squared loss.

    For each neuron with nonzero hidden weight, with ``g = f(X) - y``, checks

    (a) ``|beta w2_j + g^T phi(X w1_j)| <= tol * scale``,
    (b) there are ``delta_i`` in ``[kappa, 1]`` on the boundary rows
        ``S_j = {i : |x_i^T w1_j| <= boundary_rtol ||x_i|| ||w1_j||}`` with
        ``||beta w1_j + w2_j X^T (D_j g + S_j diag(delta) g)|| <= tol * scale``,
        found by bounded least squares,
    (c) ``| |w2_j| - ||w1_j|| | <= tol * scale``,

    where ``scale = max(1, ||y||)``. Bias entries are treated as an extra
    hidden coordinate on a ones column. Neurons whose weights are below
    ``inactive_tol`` times the largest neuron are treated as removed.
    """
    if params.C != 1:
        raise ValueError("stationarity_check handles scalar-output networks")
    kappa = params.activation.kappa
    Xa = _augment(params, X)
    y = np.asarray(y, dtype=float).ravel()
    H = params.hidden()
    w2 = params.w2[:, 0]
    pre = Xa @ H
    g = (apply_activation(params.activation, pre) @ w2) - y
    scale = max(1.0, float(np.linalg.norm(y)))
    bound = tol * scale
    size = np.maximum(np.linalg.norm(H, axis=0), np.abs(w2))
    active = size > inactive_tol * max(size.max(initial=0.0), 1e-300)
    rnorm = np.linalg.norm(Xa, axis=1)
    lo = min(kappa, 1.0)
    out: List[NeuronResidual] = []
    for j in np.flatnonzero(active):
        h = H[:, j]
        z = pre[:, j]
        on = np.abs(z) <= boundary_rtol * rnorm * np.linalg.norm(h)
        slope = np.where(z >= 0, 1.0, kappa)
        slope[on] = 0.0
        r_out = abs(beta * w2[j] + g @ apply_activation(params.activation, z))
        base = beta * h + w2[j] * (Xa.T @ (slope * g))
        if np.any(on) and w2[j] != 0:
            M = w2[j] * (Xa[on].T * g[on])  # columns scale delta_i
            if lo < 1.0:
                res = lsq_linear(M, -base, bounds=(lo, 1.0), method="bvls", tol=1e-14)
                delta = res.x
            else:
                delta = np.ones(int(on.sum()))
            r_hid = float(np.linalg.norm(base + M @ delta))
        else:
            r_hid = float(np.linalg.norm(base))
        r_bal = abs(abs(w2[j]) - float(np.linalg.norm(h)))
        fails = [name for name, v in (("output", r_out), ("hidden", r_hid), ("balance", r_bal))
                 if v > bound]
        out.append(NeuronResidual(int(j), float(r_out), r_hid, float(r_bal), int(on.sum()), fails))
    ok = all(not r.failures for r in out)
    return StationarityReport(ok, tol, scale, out)


# ---------------------------------------------------------------------------
# Weight files
# ---------------------------------------------------------------------------


def save_network(params: NetworkParams, path) -> None:
    """Write a plain-text weight file.

    Header ``# network d=<d> m=<m> C=<C> kappa=<k> bias=<0|1>``, then one
    value per line at 17 significant digits: ``W1`` column-major (neuron by
    neuron), then ``w2`` row-major, then the bias.
    """
    vals = [params.W1.ravel(order="F"), params.w2.ravel()]
    if params.bias is not None:
        vals.append(params.bias)
    lines = [f"# network d={params.d} m={params.m} C={params.C} "
             f"kappa={params.activation.kappa!r} bias={int(params.bias is not None)}"]
    lines += [f"{v:.17g}" for v in np.concatenate(vals)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_network(path) -> NetworkParams:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# network"):
        raise ValueError(f"{path}: missing network header")
    meta = dict(tok.split("=", 1) for tok in text[0].split()[2:])
    d, m, C = int(meta["d"]), int(meta["m"]), int(meta["C"])
    has_bias = meta.get("bias", "0") == "1"
    vals = np.array([float(s) for s in text[1:] if s.strip()])
    need = d * m + m * C + (m if has_bias else 0)
    if vals.size != need:
        raise ValueError(f"{path}: expected {need} values, found {vals.size}")
    W1 = vals[:d * m].reshape((d, m), order="F")
    w2 = vals[d * m:d * m + m * C].reshape(m, C)
    bias = vals[d * m + m * C:] if has_bias else None
    return NetworkParams(W1, w2, bias, ActivationSpec(float(meta["kappa"])))
