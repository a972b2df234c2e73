"""Shared domain types, losses and numerical primitives."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class ActivationSpec:
    """Piecewise-linear activation ``phi(x) = x`` for ``x >= 0`` and ``kappa * x`` otherwise."""

    kappa: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.kappa) or self.kappa >= 0.5:
            raise ValueError(f"kappa must be finite and < 0.5, got {self.kappa}")

    @classmethod
    def relu(cls) -> "ActivationSpec":
        return cls(0.0)

    @classmethod
    def leaky(cls, slope: float = 0.1) -> "ActivationSpec":
        return cls(slope)

    @classmethod
    def absolute(cls) -> "ActivationSpec":
        return cls(-1.0)

    def apply(self, m):
        return apply_activation(self, m)

    def gate(self, bits: np.ndarray) -> np.ndarray:
        """Map binary activation bits to diagonal gate values in ``{1, kappa}``."""
        return np.where(np.asarray(bits, dtype=bool), 1.0, self.kappa)

    def slope(self, pre: np.ndarray) -> np.ndarray:
        # kink at 0 takes the x >= 0 branch
        return np.where(pre >= 0, 1.0, self.kappa)


def apply_activation(spec: ActivationSpec, m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.where(m >= 0, m, spec.kappa * m)


def svd_decompose(X, tol: float = RANK_RTOL):
    """Thin SVD with a relative numerical-rank threshold.

    Parameters
    ----------
    X : DataMatrix or array_like, shape (n, d)
    tol : float
        Singular values ``<= tol * sigma_1`` are treated as zero.

    Returns
    -------
    U : ndarray, shape (n, r)
    s : ndarray, shape (r,)
    V : ndarray, shape (d, r)
    rank : int
        ``r``. All factors are empty when ``X`` is identically zero.
    """
    A = X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=float)
    if A.ndim != 2 or A.size == 0:
        raise ValueError("svd_decompose needs a nonempty 2-D matrix")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        n, d = A.shape
        return np.zeros((n, 0)), np.zeros(0), np.zeros((d, 0)), 0
    r = int(np.sum(s > tol * s[0]))
    return U[:, :r], s[:r], Vt[:r].T, r


@dataclass(frozen=True)
class DataMatrix:
    """Training matrix ``X`` (n x d) with cached spectrum.

    Use :meth:`from_array` to build one; it validates entries and optionally
    appends the all-ones bias column.
    """

    values: np.ndarray
    bias_augmented: bool = False
    rank: int = field(default=0)
    singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def from_array(cls, X, bias: bool = False, tol: float = RANK_RTOL) -> "DataMatrix":
        A = np.array(X, dtype=float)
        if A.ndim == 1:
            A = A[:, None]
        if A.ndim != 2:
            raise ValueError("data matrix must be 2-D")
        if not np.all(np.isfinite(A)):
            raise ValueError("data matrix has non-finite entries")
        if bias:
            A = np.hstack([A, np.ones((A.shape[0], 1))])
        if A.size:
            s = np.linalg.svd(A, compute_uv=False)
            r = int(np.sum(s > tol * s[0])) if s[0] > 0 else 0
        else:
            s, r = np.zeros(0), 0
        A.setflags(write=False)
        s.setflags(write=False)
        return cls(A, bias, r, s)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape


def as_data(X) -> DataMatrix:
    return X if isinstance(X, DataMatrix) else DataMatrix.from_array(X)


@dataclass(frozen=True)
class LabelData:
    values: np.ndarray

    @classmethod
    def from_array(cls, y, n: Optional[int] = None) -> "LabelData":
        Y = np.array(y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if n is not None and Y.shape[0] != n:
            raise ValueError(f"label rows {Y.shape[0]} != data rows {n}")
        if not np.all(np.isfinite(Y)):
            raise ValueError("labels have non-finite entries")
        Y.setflags(write=False)
        return cls(Y)

    @property
    def n_outputs(self) -> int:
        return self.values.shape[1]

    def column(self, c: int = 0) -> np.ndarray:
        return np.array(self.values[:, c])


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


class Loss:
    """Convex loss ``L(prediction, labels)`` with gradient in the prediction."""

    kind = "custom"
    #: curvature bound of the gradient map, used for step sizes
    smoothness = 1.0

    def evaluate(self, z, y) -> float:
        raise NotImplementedError

    def gradient(self, z, y) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, z, y) -> float:
        return self.evaluate(z, y)


class SquaredLoss(Loss):
    """``0.5 * ||z - y||^2`` (Frobenius for matrix outputs)."""

    kind = "squared"

    def evaluate(self, z, y) -> float:
        r = np.asarray(z, dtype=float) - np.asarray(y, dtype=float)
        return 0.5 * float(np.sum(r * r))

    def gradient(self, z, y) -> np.ndarray:
        return np.asarray(z, dtype=float) - np.asarray(y, dtype=float)


@dataclass
class CustomLoss(Loss):
    """User-supplied convex loss. ``smoothness`` bounds the gradient's Lipschitz constant."""

    fn: Callable[[np.ndarray, np.ndarray], float]
    grad: Callable[[np.ndarray, np.ndarray], np.ndarray]
    smoothness: float = 1.0
    kind: str = "custom"

    def evaluate(self, z, y) -> float:
        return float(self.fn(np.asarray(z, dtype=float), np.asarray(y, dtype=float)))

    def gradient(self, z, y) -> np.ndarray:
        return np.asarray(self.grad(np.asarray(z, dtype=float), np.asarray(y, dtype=float)), dtype=float)


@dataclass
class PooledLoss(Loss):
    """Loss applied after averaging predictions over ``groups`` stacked row blocks.

    Predictions have ``groups * n`` rows ordered block-major (all rows of the
    first patch, then the second, ...); labels have ``n`` rows.
    """

    base: Loss
    groups: int

    @property
    def kind(self):
        return f"pooled-{self.base.kind}"

    @property
    def smoothness(self):
        # averaging has operator norm 1/sqrt(K)
        return self.base.smoothness / self.groups

    def pool(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return z.reshape(self.groups, -1, *z.shape[1:]).mean(axis=0)

    def unpool(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        return np.concatenate([g / self.groups] * self.groups, axis=0)

    def evaluate(self, z, y) -> float:
        return self.base.evaluate(self.pool(z), y)

    def gradient(self, z, y) -> np.ndarray:
        return self.unpool(self.base.gradient(self.pool(z), y))


def hinge_loss() -> CustomLoss:
    """Smooth-free hinge example; only usable with subgradient-tolerant callers."""

    def fn(z, y):
        return float(np.sum(np.maximum(0.0, 1.0 - y * z)))

    def grad(z, y):
        return np.where(1.0 - y * z > 0, -y, 0.0)

    return CustomLoss(fn, grad, smoothness=np.inf, kind="hinge")


def logistic_loss() -> CustomLoss:
    def fn(z, y):
        return float(np.sum(np.logaddexp(0.0, -y * z)))

    def grad(z, y):
        return -y / (1.0 + np.exp(y * z))

    return CustomLoss(fn, grad, smoothness=0.25, kind="logistic")


def is_quadratic(loss: Loss) -> bool:
    if isinstance(loss, SquaredLoss):
        return True
    return isinstance(loss, PooledLoss) and isinstance(loss.base, SquaredLoss)
