"""Hyperplane-arrangement patterns of a data matrix: exact enumeration,
counting bound, random sampling and zonotope solid-angle estimates.

A pattern is the binary vector ``1[X u >= 0]`` for some direction ``u``. Exact
enumeration returns the patterns of the full-dimensional cells of the central
arrangement ``{u : x_i^T u = 0}``; boundary directions never produce a gate
configuration that a closed cell does not already cover.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .core import DataMatrix, as_data, svd_decompose

R_MAX_DEFAULT = 8
_ZERO_TOL = 1e-9


class ArrangementError(RuntimeError):
    """Raised when enumeration is refused or an LP certificate cannot be computed."""


@dataclass(frozen=True)
class ArrangementPattern:
    bits: tuple
    witness: Optional[np.ndarray] = field(default=None, compare=False)

    @property
    def n(self) -> int:
        return len(self.bits)

    def as_array(self) -> np.ndarray:
        return np.array(self.bits, dtype=bool)

    def __str__(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)


def _canonical(bits: np.ndarray, witnesses: Optional[np.ndarray]):
    bits = np.asarray(bits, dtype=bool)
    if bits.shape[0] == 0:
        return bits, witnesses
    uniq, idx = np.unique(bits.astype(np.uint8), axis=0, return_index=True)
    w = None if witnesses is None else np.asarray(witnesses)[idx]
    return uniq.astype(bool), w


@dataclass(frozen=True)
class PatternSet:
    """Deduplicated, lexicographically ordered patterns (rows of ``bits``)."""

    bits: np.ndarray
    source: str = "user"
    seed: Optional[int] = None
    witnesses: Optional[np.ndarray] = None

    @classmethod
    def from_bits(cls, bits, source="user", seed=None, witnesses=None) -> "PatternSet":
        b = np.atleast_2d(np.asarray(bits, dtype=bool))
        b, w = _canonical(b, witnesses)
        b.setflags(write=False)
        return cls(b, source, seed, w)

    @classmethod
    def from_strings(cls, strings: Iterable[str], **kw) -> "PatternSet":
        rows = [[c == "1" for c in s.strip()] for s in strings]
        return cls.from_bits(np.array(rows, dtype=bool), **kw)

    @property
    def P(self) -> int:
        return self.bits.shape[0]

    @property
    def n(self) -> int:
        return self.bits.shape[1]

    def __len__(self) -> int:
        return self.P

    def __iter__(self) -> Iterator[ArrangementPattern]:
        for i in range(self.P):
            yield self[i]

    def __getitem__(self, i) -> ArrangementPattern:
        w = None if self.witnesses is None else self.witnesses[i]
        return ArrangementPattern(tuple(bool(b) for b in self.bits[i]), w)

    def strings(self) -> List[str]:
        return ["".join("1" if b else "0" for b in row) for row in self.bits]

    def as_set(self) -> set:
        return set(self.strings())

    def index_of(self, bits) -> int:
        key = np.asarray(bits, dtype=bool)
        hit = np.flatnonzero(np.all(self.bits == key, axis=1))
        return int(hit[0]) if hit.size else -1

    def without_all_zero(self) -> "PatternSet":
        keep = self.bits.any(axis=1)
        w = None if self.witnesses is None else self.witnesses[keep]
        return PatternSet(self.bits[keep], self.source, self.seed, w)

    # -- text format -------------------------------------------------------
    def to_text(self) -> str:
        seed = "-" if self.seed is None else str(self.seed)
        lines = [f"# patterns n={self.n} P={self.P} source={self.source} seed={seed}"]
        for i, s in enumerate(self.strings()):
            if self.witnesses is not None:
                lines.append(s + " " + ",".join(f"{v:.17g}" for v in self.witnesses[i]))
            else:
                lines.append(s)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PatternSet":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("# patterns"):
            raise ValueError("missing pattern-file header")
        meta = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
        seed = None if meta.get("seed", "-") == "-" else int(meta["seed"])
        rows, wits = [], []
        for ln in lines[1:]:
            parts = ln.split()
            rows.append([c == "1" for c in parts[0]])
            if len(parts) > 1:
                wits.append([float(v) for v in parts[1].split(",")])
        n = int(meta["n"])
        bits = np.array(rows, dtype=bool).reshape(len(rows), n)
        w = np.array(wits) if wits and len(wits) == len(rows) else None
        return cls.from_bits(bits, source=meta.get("source", "user"), seed=seed, witnesses=w)


def merge(sets: Sequence[PatternSet], source: Optional[str] = None, seed=None) -> PatternSet:
    """Union of pattern sets in canonical order (first witness wins on ties)."""
    sets = [s for s in sets if s.P]
    if not sets:
        raise ValueError("nothing to merge")
    bits = np.vstack([s.bits for s in sets])
    wit = None
    if all(s.witnesses is not None for s in sets):
        wit = np.vstack([s.witnesses for s in sets])
    return PatternSet.from_bits(bits, source or sets[0].source, seed, wit)


# ---------------------------------------------------------------------------
# Counting
# ---------------------------------------------------------------------------


def count_bound(n: int, r: int) -> int:
    """Upper bound ``2 * sum_{k<r} C(n-1, k)`` on the number of patterns of a rank-r matrix."""
    if r < 1 or n < 1:
        raise ValueError("need 1 <= r <= n")
    if r > n:
        raise ValueError(f"rank {r} exceeds row count {n}")
    return 2 * sum(math.comb(n - 1, k) for k in range(r))


def sample_size_threshold(P: int, theta_bar: float, epsilon: float) -> int:
    """Number of Gaussian draws sufficient to see all ``P`` patterns w.p. ``1 - epsilon``."""
    if P < 1:
        raise ValueError("P must be >= 1")
    if not theta_bar > 0:
        raise ValueError("theta_bar must be positive")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must be in (0, 1)")
    return int(math.ceil(P * math.log(P / epsilon) / theta_bar))


# ---------------------------------------------------------------------------
# Exact enumeration
# ---------------------------------------------------------------------------


def _null_directions(A: np.ndarray, r: int, tol: float):
    """Unit null vectors of every rank-(r-1) subset of r-1 rows of ``A``."""
    m = A.shape[0]
    combos = np.array(list(itertools.combinations(range(m), r - 1)), dtype=int)
    out = []
    for chunk in np.array_split(combos, max(1, len(combos) // 20000 + 1)):
        sub = A[chunk]  # (S, r-1, r)
        _, s, vt = np.linalg.svd(sub, full_matrices=True)
        ok = s[:, -1] > tol
        out.append(vt[ok, -1, :])
    return np.vstack(out) if out else np.zeros((0, r))


def _cells(A: np.ndarray, tol: float = _ZERO_TOL):
    """Sign vectors and interior witnesses of the open cells of ``{z : a_i^T z = 0}``.

    ``A`` has unit-norm rows and full column rank ``r``. Every open cell is a
    pointed cone, so it touches an extreme ray cut out by ``r - 1`` rows; the
    cells around a ray are the cells of the sub-arrangement of rows vanishing
    on it, one dimension lower.
    """
    m, r = A.shape
    if r == 1:
        s = np.sign(A[:, 0])
        return [(s, np.ones(1)), (-s, -np.ones(1))]
    if m == r:
        # independent hyperplanes: every orthant is a cell
        S = np.array(list(itertools.product((1.0, -1.0), repeat=r)))
        Z = np.linalg.solve(A, S.T).T
        return [(sig, z / np.linalg.norm(z)) for sig, z in zip(S, Z)]

    rays = _null_directions(A, r, tol)
    flats = {}
    for v in rays:
        Z = np.flatnonzero(np.abs(A @ v) <= 1e3 * tol)
        flats.setdefault(Z.tobytes(), (Z, v))

    found = {}
    for Z, v in flats.values():
        # orthonormal basis of v-perp
        q, _ = np.linalg.qr(np.column_stack([v, np.eye(r)]))
        Q = q[:, 1:r]
        B = A[Z] @ Q
        B = B / np.linalg.norm(B, axis=1, keepdims=True)
        sub = _cells(B, tol)
        SZ = np.array([c[0] for c in sub])
        Dfull = np.array([c[1] for c in sub]) @ Q.T  # (S, r)
        dots = A @ v
        rest = np.ones(m, dtype=bool)
        rest[Z] = False
        dd = np.abs(Dfull @ A[rest].T)  # (S, m - |Z|)
        with np.errstate(divide="ignore"):
            ratios = np.abs(dots[rest])[None, :] / dd
        eps = 0.5 * np.minimum(1.0, ratios.min(axis=1, initial=np.inf))
        for s_ray in (1.0, -1.0):
            signs = np.tile(np.sign(s_ray * dots), (len(sub), 1))
            signs[:, Z] = SZ
            W = s_ray * v[None, :] + eps[:, None] * Dfull
            for sig, z in zip(signs, W):
                found.setdefault((sig > 0).tobytes(), (sig, z / np.linalg.norm(z)))
    return list(found.values())


def enumerate_exact(X, r_max: int = R_MAX_DEFAULT, certify: bool = False) -> PatternSet:
    """All patterns ``1[X u >= 0]`` of full-dimensional cells, with witnesses ``u``.

    Enumeration runs in the rank-reduced coordinates ``U_r Sigma_r`` of ``X``.
    Rows that vanish identically always get bit 1.

    Raises
    ------
    ArrangementError
        If the numerical rank exceeds ``r_max``.
    """
    X = as_data(X)
    n, d = X.shape
    if n == 0:
        return PatternSet(np.zeros((0, 0), dtype=bool), "exact", None, np.zeros((0, d)))
    U, s, V, r = svd_decompose(X)
    if r > r_max:
        raise ArrangementError(
            f"rank {r} exceeds r_max={r_max}; use sample_gaussian for high-rank data")
    if r == 0:
        return PatternSet.from_bits(np.ones((1, n), dtype=bool), "exact", None, np.zeros((1, d)))

    Xr = U * s
    norms = np.linalg.norm(Xr, axis=1)
    live = norms > 1e-12 * norms.max()
    A = Xr[live] / norms[live, None]

    cells = _cells(A)
    P = len(cells)
    bits = np.ones((P, n), dtype=bool)
    wits = np.zeros((P, d))
    for k, (signs, z) in enumerate(cells):
        bits[k, live] = signs > 0
        wits[k] = V @ z
    pats = PatternSet.from_bits(bits, "exact", None, wits)

    # the constructive witnesses double as certificates; fall back to LP on misfit
    Xv = X.values
    scale = np.linalg.norm(Xv, axis=1) + 1e-300
    fixed_w = np.array(pats.witnesses)
    for k in range(pats.P):
        pre = Xv @ fixed_w[k] / scale
        good = np.all(np.where(pats.bits[k], pre >= 0, pre < 0)) and np.all(np.abs(pre[live]) > 1e-13)
        if certify or not good:
            res = realizability_check(pats[k], X)
            if not res.realizable:
                raise ArrangementError(f"enumerated pattern {pats[k]} failed LP certification")
            fixed_w[k] = res.witness
    return PatternSet(pats.bits, "exact", None, fixed_w)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _pattern_of(Xv: np.ndarray, U: np.ndarray) -> np.ndarray:
    return (Xv @ U >= 0).T


def _gaussian_shard(Xv, count, seed):
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((Xv.shape[1], count))
    bits = _pattern_of(Xv, U)
    b, w = _canonical(bits, U.T)
    return b, w


def sample_gaussian(X, count: int, seed: int, shards: int = 1, threads: int = 1) -> PatternSet:
    """Patterns of ``count`` i.i.d. standard-normal directions, deduplicated.

    With ``shards > 1`` the draws are split over independently seeded shards
    (``SeedSequence(seed).spawn``) and merged in canonical order, so the result
    depends on ``(seed, shards)`` but not on ``threads``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    Xv = as_data(X).values
    if shards <= 1:
        b, w = _gaussian_shard(Xv, count, seed)
        return PatternSet(b, "gaussian", seed, w)
    seqs = np.random.SeedSequence(seed).spawn(shards)
    sizes = [count // shards + (1 if i < count % shards else 0) for i in range(shards)]
    jobs = [(Xv, c, sq) for c, sq in zip(sizes, seqs) if c > 0]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(lambda a: _gaussian_shard(*a), jobs))
    else:
        parts = [_gaussian_shard(*a) for a in jobs]
    return merge([PatternSet(b, "gaussian", seed, w) for b, w in parts], "gaussian", seed)


def sample_convolutional(X, image_shape, filter_shape, count: int, seed: int) -> PatternSet:
    """Patterns of random convolutional filters placed at random image positions.

    Rows of ``X`` are flattened images of shape ``image_shape`` = ``(H, W)`` or
    ``(C, H, W)``; a ``(fh, fw)`` filter spans all channels. Each draw puts
    Gaussian weights on the support of one filter placement and zeros elsewhere.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    Xv = as_data(X).values
    shape = tuple(int(s) for s in image_shape)
    if len(shape) == 2:
        shape = (1,) + shape
    if len(shape) != 3:
        raise ValueError("image_shape must be (H, W) or (C, H, W)")
    C, H, W = shape
    fh, fw = (int(s) for s in filter_shape)
    if C * H * W != Xv.shape[1]:
        raise ValueError(f"image shape {image_shape} does not match d={Xv.shape[1]}")
    if not (1 <= fh <= H and 1 <= fw <= W):
        raise ValueError(f"filter {filter_shape} does not fit in image {image_shape}")
    rng = np.random.default_rng(seed)
    U = np.zeros((count, C, H, W))
    rows = rng.integers(0, H - fh + 1, size=count)
    cols = rng.integers(0, W - fw + 1, size=count)
    vals = rng.standard_normal((count, C, fh, fw))
    for k in range(count):
        U[k, :, rows[k]:rows[k] + fh, cols[k]:cols[k] + fw] = vals[k]
    U = U.reshape(count, -1)
    b, w = _canonical(_pattern_of(Xv, U.T), U)
    return PatternSet(b, "convolutional", seed, w)


# ---------------------------------------------------------------------------
# Certificates and zonotope geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Realizability:
    realizable: bool
    witness: Optional[np.ndarray]
    margin: float
    """Optimal slack of the strict (bit-0) rows; ``inf`` when there are none."""
    interior: bool
    """True when the pattern's cell is full-dimensional (all nonzero rows strict)."""


def _max_slack(S: np.ndarray, strict: np.ndarray):
    # maximize t  s.t.  S[~strict] u >= 0,  S[strict] u >= t,  |u|_inf <= 1, t <= 1
    m, d = S.shape
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A = np.hstack([-S, strict[:, None].astype(float)])
    res = linprog(c, A_ub=A, b_ub=np.zeros(m),
                  bounds=[(-1, 1)] * d + [(None, 1)], method="highs")
    if res.status != 0:
        raise ArrangementError(f"LP solver failed: {res.message}")
    return float(res.x[-1]), res.x[:d]


def realizability_check(pattern, X, tol: float = 1e-9) -> Realizability:
    """Decide whether ``bits`` equals ``1[X u >= 0]`` for some ``u`` via LP.

    Rows with bit 1 need ``x_i^T u >= 0``; rows with bit 0 need ``x_i^T u < 0``,
    certified by a positive optimal slack.
    """
    bits = pattern.as_array() if isinstance(pattern, ArrangementPattern) else np.asarray(pattern, dtype=bool)
    Xv = as_data(X).values
    if bits.shape[0] != Xv.shape[0]:
        raise ValueError("pattern length differs from row count")
    norms = np.linalg.norm(Xv, axis=1)
    live = norms > 0
    S = np.where(bits, 1.0, -1.0)[:, None] * Xv
    S[live] /= norms[live, None]
    if np.any(~bits & ~live):
        return Realizability(False, None, -np.inf, False)
    zero_rows = ~bits
    if not zero_rows.any():
        margin, u = np.inf, np.zeros(Xv.shape[1])
        t, u_int = _max_slack(S[live], np.ones(live.sum(), dtype=bool)) if live.any() else (0.0, u)
        return Realizability(True, u_int if t > tol else u, margin, t > tol)
    t, u = _max_slack(S, zero_rows)
    if t <= tol:
        return Realizability(False, None, t, False)
    t_int, u_int = _max_slack(S[live], np.ones(live.sum(), dtype=bool))
    interior = t_int > tol
    return Realizability(True, u_int if interior else u, t, interior)


def zonotope_vertex(X, v) -> np.ndarray:
    """Extreme point ``X^T 1[X v >= 0]`` of the zonotope generated by the rows of ``X``."""
    Xv = as_data(X).values
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        raise ValueError("direction must be nonzero")
    return Xv.T @ (Xv @ v >= 0).astype(float)


@dataclass(frozen=True)
class ZonotopeReport:
    vertex_count_estimate: int
    solid_angle_estimates: np.ndarray
    standard_errors: np.ndarray
    theta_bar_estimate: float
    mc_samples: int
    unreachable: tuple = ()
    """Indices of patterns never hit by the Monte-Carlo draws."""


def estimate_solid_angles(X, patterns: PatternSet, mc_samples: int, seed: int,
                          batch: int = 100_000) -> ZonotopeReport:
    """Gaussian measure of each pattern's cell (= normal cone of its zonotope vertex)."""
    if mc_samples < 1000:
        raise ValueError("mc_samples must be >= 1000")
    Xv = as_data(X).values
    lookup = {row.tobytes(): i for i, row in enumerate(patterns.bits.astype(np.uint8))}
    counts = np.zeros(patterns.P, dtype=np.int64)
    seen = set()
    rng = np.random.default_rng(seed)
    left = mc_samples
    while left:
        k = min(batch, left)
        bits = _pattern_of(Xv, rng.standard_normal((Xv.shape[1], k))).astype(np.uint8)
        uniq, cnt = np.unique(bits, axis=0, return_counts=True)
        for row, c in zip(uniq, cnt):
            key = row.tobytes()
            seen.add(key)
            i = lookup.get(key)
            if i is not None:
                counts[i] += c
        left -= k
    theta = counts / mc_samples
    se = np.sqrt(theta * (1 - theta) / mc_samples)
    hit = theta > 0
    theta_bar = float(patterns.P * theta[hit].min()) if hit.any() else 0.0
    return ZonotopeReport(len(seen), theta, se, theta_bar, mc_samples,
                          tuple(int(i) for i in np.flatnonzero(~hit)))
