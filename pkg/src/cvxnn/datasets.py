"""Dataset ingestion and the synthetic generators used by the experiments."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .core import DataMatrix, LabelData


class DataError(ValueError):
    """Malformed or missing input data."""


def _is_label(name: str) -> bool:
    name = name.strip().lower()
    return name == "y" or name.startswith("label") or (name[:1] == "y" and name[1:].isdigit())


def read_csv(path) -> Tuple[np.ndarray, np.ndarray, list]:
    """Read a headed numeric CSV into ``(X, Y, header)``.

    Label columns are those named ``y``, ``y<digits>`` or ``label*``; when
    none is named so, the last column is the label. Errors cite the 1-based
    line number of the offending row.
    """
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{p}: no such file")
    text = p.read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DataError(f"{p}: empty file")
    header = [h.strip() for h in rows[0]]
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{p}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            values.append([float(c) for c in row])
        except ValueError as exc:
            raise DataError(f"{p}:{lineno}: {exc}") from None
    if not values:
        raise DataError(f"{p}: no data rows")
    A = np.asarray(values)
    lab = [j for j, h in enumerate(header) if _is_label(h)]
    if not lab:
        lab = [len(header) - 1]
    feat = [j for j in range(len(header)) if j not in lab]
    return A[:, feat], A[:, lab], header


def read_matrix(path) -> np.ndarray:
    """A headed CSV read entirely as a feature matrix (no label columns)."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{p}: no such file")
    rows = list(csv.reader(io.StringIO(p.read_text())))
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            out.append([float(c) for c in row])
        except ValueError as exc:
            raise DataError(f"{p}:{lineno}: {exc}") from None
    if not out or len({len(r) for r in out}) != 1:
        raise DataError(f"{p}: ragged or empty matrix")
    return np.asarray(out)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def toy1d():
    """Five points on a line with alternating labels; used with a bias column."""
    X = np.array([[-2.0], [-1.0], [0.0], [1.0], [2.0]])
    y = np.array([1.0, -1.0, 1.0, 1.0, -1.0])
    return X, y


def planted_relu(n: int = 50, d: int = 5, seed: int = 0, hidden: int = 5, noise: float = 0.1):
    """``y = relu(X W1) w2 + noise * eps`` with Gaussian ``X``, ``W1``, ``w2``, ``eps``."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    W1 = rng.standard_normal((d, hidden))
    w2 = rng.standard_normal(hidden)
    y = np.maximum(X @ W1, 0.0) @ w2 + noise * rng.standard_normal(n)
    return X, y


def rank_deficient_gaussian(n: int = 10, d: int = 8, k: int = 4, seed: int = 0):
    """Gaussian ``X`` whose trailing singular values ``sigma_{k+1..d}`` are set to 1.

    Labels are standard Gaussian.
    """
    if not 1 <= k <= min(n, d):
        raise ValueError("need 1 <= k <= min(n, d)")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, d))
    U, s, Vt = np.linalg.svd(G, full_matrices=False)
    s = s.copy()
    s[k:] = 1.0
    X = (U * s) @ Vt
    y = rng.standard_normal(n)
    return X, y


def synthetic_series(length: int = 400, seed: int = 0) -> np.ndarray:
    """Quasi-periodic pulse train with baseline wander and noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=float)
    beat = np.exp(-0.5 * ((t % 25.0) - 6.0) ** 2 / 1.5 ** 2)
    wander = 0.3 * np.sin(2 * np.pi * t / 97.0)
    return beat + wander + 0.05 * rng.standard_normal(length)


def ar3(series, lags: int = 3):
    """Windows of the previous ``lags`` samples predicting the next one."""
    s = np.asarray(series, dtype=float).ravel()
    if s.size <= lags:
        raise ValueError(f"series of length {s.size} is too short for {lags} lags")
    X = np.lib.stride_tricks.sliding_window_view(s[:-1], lags).copy()
    return X, s[lags:].copy()


def linear_cnn_signals(n: int = 50, d: int = 6, K: int = 4, seed: int = 0, noise: float = 0.1):
    """1-D signals of length ``d K`` cut into K non-overlapping patches of size d.

    Labels come from a rank-two planted linear CNN plus Gaussian noise.
    Returns the (n, d K) signals and the labels.
    """
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((n, d * K))
    Xs = S.reshape(n, K, d).transpose(1, 0, 2)
    Zp = rng.standard_normal((d, 2)) @ rng.standard_normal((2, K))
    y = np.einsum("knd,dk->n", Xs, Zp) + noise * rng.standard_normal(n)
    return S, y


def circular_planted(n: int = 40, d: int = 16, freq: int = 3, seed: int = 0,
                     amplitude: float = 2.0):
    """Labels ``y = X F z`` from a conjugate-symmetric ``z`` supported on ``{freq, -freq}``."""
    if not 0 < freq < d / 2:
        raise ValueError("freq must lie strictly between 0 and d/2")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    z = np.zeros(d, dtype=complex)
    z[freq] = amplitude * np.exp(1j * rng.uniform(0, 2 * np.pi))
    z[d - freq] = np.conj(z[freq])
    y = np.real(X @ np.fft.fft(z, norm="ortho"))
    return X, y


GENERATORS = {
    "toy1d": lambda seed=0, **kw: toy1d(),
    "planted_relu": lambda seed=0, **kw: planted_relu(seed=seed, **kw),
    "rank_deficient_gaussian": lambda seed=0, **kw: rank_deficient_gaussian(seed=seed, **kw),
    "ar3": lambda seed=0, length=400, **kw: ar3(synthetic_series(length, seed), **kw),
    "linear_cnn": lambda seed=0, **kw: linear_cnn_signals(seed=seed, **kw),
    "circular": lambda seed=0, **kw: circular_planted(seed=seed, **kw),
}


def load_dataset(spec, seed: int = 0, **params) -> Tuple[DataMatrix, LabelData]:
    """Load a CSV path or run a named generator.

    ``toy1d`` comes back with its ones column appended.
    """
    name = str(spec)
    if name in GENERATORS:
        X, y = GENERATORS[name](seed=seed, **params)
        return DataMatrix.from_array(X, bias=(name == "toy1d")), LabelData.from_array(y)
    X, Y, _ = read_csv(spec)
    return DataMatrix.from_array(X), LabelData.from_array(Y[:, 0] if Y.shape[1] == 1 else Y)
