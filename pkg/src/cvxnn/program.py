"""The lifted convex training program over a fixed set of activation patterns.

For patterns ``D_1, ..., D_P`` the program is::

    min_w  L(sum_i D_i X (w_i - w_{i+P}), y) + beta * sum_j ||w_j||_p
    s.t.   (2 Dhat_i - I) X w_i >= 0,  (2 Dhat_i - I) X w_{i+P} >= 0

where ``Dhat_i`` is the binary pattern and ``D_i`` its activation-valued gate
(1 on active rows, ``kappa`` elsewhere).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterator, Optional

import numpy as np

from .arrangements import PatternSet
from .core import (ActivationSpec, DataMatrix, LabelData, Loss, PooledLoss,
                   SquaredLoss, as_data)

DENSE_CAP = 10_000_000


@dataclass(frozen=True)
class GroupWeights:
    """Per-block weights. Block ``b`` belongs to pattern ``pattern_index[b]``
    and enters the prediction with sign ``sign[b]``.

    The canonical layout has ``2P`` blocks: patterns ``0..P-1`` with sign +1
    followed by the same patterns with sign -1. When the program has a bias,
    the last column of ``blocks`` holds the per-block bias.
    """

    blocks: np.ndarray
    pattern_index: np.ndarray
    sign: np.ndarray
    with_bias: bool = False

    @classmethod
    def zeros(cls, P: int, d: int, with_bias: bool = False) -> "GroupWeights":
        return cls.from_pair(np.zeros((P, d)), np.zeros((P, d)), with_bias)

    @classmethod
    def from_pair(cls, pos, neg, with_bias: bool = False) -> "GroupWeights":
        pos = np.asarray(pos, dtype=float)
        neg = np.asarray(neg, dtype=float)
        if pos.shape != neg.shape:
            raise ValueError("positive and negative blocks differ in shape")
        P = pos.shape[0]
        idx = np.concatenate([np.arange(P), np.arange(P)])
        sign = np.concatenate([np.ones(P), -np.ones(P)])
        return cls(np.vstack([pos, neg]), idx, sign, with_bias)

    def with_blocks(self, blocks) -> "GroupWeights":
        return replace(self, blocks=np.asarray(blocks, dtype=float))

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]

    @property
    def d(self) -> int:
        return self.blocks.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return self.blocks[:, :-1] if self.with_bias else self.blocks

    @property
    def bias(self) -> Optional[np.ndarray]:
        return self.blocks[:, -1] if self.with_bias else None

    def norms(self, p: float = 2) -> np.ndarray:
        if p == 1:
            return np.abs(self.blocks).sum(axis=1)
        return np.linalg.norm(self.blocks, axis=1)

    def nonzero(self, tol: float = 0.0) -> np.ndarray:
        return np.flatnonzero(self.norms() > tol)


@dataclass(frozen=True)
class ConvexProgram:
    """Immutable description of one lifted convex program.

    ``X`` already carries the ones column when ``with_bias`` is set. With a
    :class:`~cvxnn.core.PooledLoss` the rows of ``X`` are stacked patches and
    ``y`` has ``X.n / groups`` entries.
    """

    X: DataMatrix
    y: np.ndarray
    patterns: PatternSet
    activation: ActivationSpec = field(default_factory=ActivationSpec)
    loss: Loss = field(default_factory=SquaredLoss)
    beta: float = 1e-3
    reg_p: float = 2
    with_bias: bool = False
    constrained: bool = True
    interpolation: bool = False
    constraint_patterns: Optional[PatternSet] = None
    """Patterns defining the constraint cones when they differ from the gates."""
    constraint_X: Optional[DataMatrix] = None
    """Matrix defining the constraint cones (defaults to ``X``)."""

    def __post_init__(self):
        if self.reg_p not in (1, 2):
            raise ValueError(f"reg_p must be 1 or 2, got {self.reg_p}")
        if self.interpolation:
            if self.beta != 0:
                raise ValueError("interpolation programs carry beta = 0")
        elif not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.patterns.P and self.patterns.n != self.X.n:
            raise ValueError(f"pattern length {self.patterns.n} != rows {self.X.n}")
        groups = self.loss.groups if isinstance(self.loss, PooledLoss) else 1
        if self.y.shape[0] * groups != self.X.n:
            raise ValueError(f"{self.y.shape[0]} labels for {self.X.n} rows")

    # -- cached pattern-derived arrays --------------------------------------
    @property
    def P(self) -> int:
        return self.patterns.P

    @property
    def n(self) -> int:
        return self.X.n

    @property
    def d(self) -> int:
        return self.X.d

    @cached_property
    def gates(self) -> np.ndarray:
        """(P, n) activation-valued diagonals (read-only)."""
        G = self.activation.gate(self.patterns.bits)
        G.flags.writeable = False
        return G

    @cached_property
    def cone_signs(self) -> np.ndarray:
        """(P, n) entries of ``2 Dhat - I`` defining the constraint cones (read-only)."""
        pats = self.constraint_patterns or self.patterns
        S = np.where(pats.bits, 1.0, -1.0)
        S.flags.writeable = False
        return S

    @property
    def cone_matrix(self) -> np.ndarray:
        return (self.constraint_X or self.X).values

    def zeros(self) -> GroupWeights:
        return GroupWeights.zeros(self.P, self.d, self.with_bias)

    def summary(self) -> dict:
        return {
            "n": int(self.n), "d": int(self.d), "P": int(self.P),
            "beta": float(self.beta), "kappa": float(self.activation.kappa),
            "p": int(self.reg_p), "bias": bool(self.with_bias),
            "loss": self.loss.kind,
            "mode": "interpolation" if self.interpolation
            else ("constrained" if self.constrained else "penalized"),
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def build_program(X, y, patterns: PatternSet, beta: float,
                  activation: Optional[ActivationSpec] = None, loss: Optional[Loss] = None,
                  reg_p: float = 2, bias: bool = False, constrained: bool = True,
                  drop_zero: bool = True) -> ConvexProgram:
    """Assemble a :class:`ConvexProgram`.

    The all-zero pattern contributes identically zero features under ReLU and
    is dropped when ``drop_zero`` is set and ``kappa == 0``.
    """
    activation = activation or ActivationSpec.relu()
    loss = loss or SquaredLoss()
    Xd = as_data(X)
    if bias and not Xd.bias_augmented:
        Xd = DataMatrix.from_array(Xd.values, bias=True)
    yv = _label_vector(y)
    if drop_zero and activation.kappa == 0 and patterns.P:
        patterns = patterns.without_all_zero()
    return ConvexProgram(Xd, yv, patterns, activation, loss, float(beta), reg_p,
                         bool(bias), constrained)


def build_interpolation_program(X, y, patterns: PatternSet,
                                activation: Optional[ActivationSpec] = None,
                                bias: bool = False) -> ConvexProgram:
    """Minimum group-norm program subject to exact fit ``Xhat w = y``."""
    prog = build_program(X, y, patterns, 1.0, activation, SquaredLoss(), 2, bias)
    return replace(prog, beta=0.0, interpolation=True)


def _label_vector(y) -> np.ndarray:
    if isinstance(y, LabelData):
        if y.n_outputs != 1:
            raise ValueError("scalar program needs one label column")
        return y.column(0)
    v = np.asarray(y, dtype=float)
    if v.ndim == 2 and v.shape[1] == 1:
        v = v[:, 0]
    if v.ndim != 1:
        raise ValueError("scalar program needs one label column")
    return v.copy()


# ---------------------------------------------------------------------------
# Linear maps
# ---------------------------------------------------------------------------


def feature_blocks(prog: ConvexProgram) -> Iterator[np.ndarray]:
    """Yield ``D_i X`` for each pattern, lazily."""
    Xv = prog.X.values
    for g in prog.gates:
        yield g[:, None] * Xv


def dense_features(prog: ConvexProgram, w: Optional[GroupWeights] = None) -> np.ndarray:
    """Materialize ``Xhat`` (n x B*d) in the block order of ``w`` (canonical by default)."""
    w = w or prog.zeros()
    n, d = prog.X.shape
    if n * d * w.n_blocks > DENSE_CAP:
        raise MemoryError("lifted feature matrix exceeds the dense cap")
    G = prog.gates[w.pattern_index]  # (B, n)
    blocks = (w.sign[:, None, None] * G[:, :, None]) * prog.X.values[None]
    return np.concatenate(list(blocks), axis=1)


def lifted_apply(prog: ConvexProgram, w: GroupWeights) -> np.ndarray:
    """Raw lifted output ``Xhat w`` (before any pooling)."""
    XW = prog.X.values @ w.blocks.T  # (n, B)
    G = prog.gates[w.pattern_index]  # (B, n)
    return np.einsum("bn,nb,b->n", G, XW, w.sign)


def lifted_adjoint(prog: ConvexProgram, r: np.ndarray, w: GroupWeights) -> np.ndarray:
    """``Xhat^T r`` arranged as blocks shaped like ``w.blocks``."""
    G = prog.gates[w.pattern_index]
    return w.sign[:, None] * ((G * r[None, :]) @ prog.X.values)


def predict(prog: ConvexProgram, w: GroupWeights) -> np.ndarray:
    """Model output; pooled programs return the averaged (n/groups) prediction."""
    z = lifted_apply(prog, w)
    return prog.loss.pool(z) if isinstance(prog.loss, PooledLoss) else z


def regularizer(prog: ConvexProgram, w: GroupWeights) -> float:
    return float(prog.beta * np.sum(w.norms(prog.reg_p)))


def loss_value(prog: ConvexProgram, w: GroupWeights) -> float:
    return prog.loss.evaluate(lifted_apply(prog, w), prog.y)


def objective(prog: ConvexProgram, w: GroupWeights) -> float:
    """Loss plus group regularizer; for interpolation programs, the group norm."""
    if prog.interpolation:
        return float(np.sum(w.norms(prog.reg_p)))
    return loss_value(prog, w) + regularizer(prog, w)


def loss_gradient(prog: ConvexProgram, w: GroupWeights) -> np.ndarray:
    g = prog.loss.gradient(lifted_apply(prog, w), prog.y)
    return lifted_adjoint(prog, g, w)


def cone_slacks(prog: ConvexProgram, w: GroupWeights) -> np.ndarray:
    """(B, n) values ``(2 Dhat_i - I) X w_b``; nonnegative iff feasible."""
    S = prog.cone_signs[w.pattern_index]
    return S * (w.blocks @ prog.cone_matrix.T)


def constraint_violation(prog: ConvexProgram, w: GroupWeights):
    """Per-block sup-norm of the negative part of the cone slacks, and its max."""
    if not prog.P:
        return np.zeros(0), 0.0
    per = np.maximum(0.0, -cone_slacks(prog, w)).max(axis=1)
    return per, float(per.max(initial=0.0))


def penalized_objective(prog: ConvexProgram, w: GroupWeights, rho: float) -> float:
    if not rho > 0:
        raise ValueError("rho must be positive")
    hinge = np.maximum(0.0, -cone_slacks(prog, w)).sum()
    return objective(prog, w) + rho * float(hinge)


def interpolation_residual(prog: ConvexProgram, w: GroupWeights) -> float:
    return float(np.linalg.norm(predict(prog, w) - prog.y))
