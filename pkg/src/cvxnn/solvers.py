"""First-order solvers for the lifted programs.

* :func:`solve_admm` handles the cone-constrained group-Lasso exactly (squared
  or pooled-squared loss, or the interpolation form).
* :func:`solve_penalized` runs FISTA on the hinge-penalized form;
  :func:`solve_penalized_continuation` drives the hinge weight upward.
* :func:`solve_nuclear` and :func:`solve_circular_fourier` cover the linear
  and circular convolutional programs.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import lsq_linear

from .core import Loss, PooledLoss, SquaredLoss, is_quadratic
from .program import (ConvexProgram, GroupWeights, constraint_violation,
                      lifted_adjoint, lifted_apply, objective,
                      penalized_objective)


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 20000
    abs_tol: float = 1e-9
    rel_tol: float = 1e-9
    rho_admm: float = 1.0
    rho_hinge: float = 0.01
    step_rule: str = "backtracking"
    seed: int = 0
    inner_iters: int = 50
    polish: bool = True
    log_every: int = 50

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.step_rule not in ("fixed", "backtracking"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")


@dataclass
class SolveReport:
    status: str
    objective_history: np.ndarray
    final_violation: float
    iterations: int
    wall_time: float
    objective: float = float("nan")
    records: List[dict] = field(default_factory=list)
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def prox_group(v, t: float, p: int = 2) -> np.ndarray:
    """Proximal map of ``t * ||.||_p`` (rows of a 2-D input are separate groups)."""
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    v = np.asarray(v, dtype=float)
    if p == 1:
        return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    if p != 2:
        raise ValueError("p must be 1 or 2")
    nrm = np.sqrt(np.einsum("...i,...i->...", v, v))[..., None]
    return np.maximum(1.0 - t / np.maximum(nrm, 1e-300), 0.0) * v


def _nonneg_lsq(M: np.ndarray, b: np.ndarray, max_iter: int = 0) -> Optional[np.ndarray]:
    """Lawson-Hanson active set for ``min_{x >= 0} ||M x - b||``.

    Meant for the small systems of the cone computations (few rows). The
    result is returned only when its KKT conditions verify; otherwise None.
    """
    m, k = M.shape
    tol = 1e-12 * max(1.0, float(np.abs(b).max(initial=0.0))) * max(1.0, float(np.abs(M).max(initial=0.0)))
    x = np.zeros(k)
    passive = np.zeros(k, dtype=bool)
    g = M.T @ b
    for _ in range(max_iter or 3 * k + 10):
        cand = np.where(passive, -np.inf, g)
        j = int(np.argmax(cand))
        if cand[j] <= tol:
            break
        passive[j] = True
        while True:
            idx = np.flatnonzero(passive)
            s = np.zeros(k)
            s[idx] = np.linalg.lstsq(M[:, idx], b, rcond=None)[0]
            if np.all(s[idx] > 0):
                break
            neg = idx[s[idx] <= 0]
            alpha = np.min(x[neg] / (x[neg] - s[neg]))
            x = x + alpha * (s - x)
            passive &= x > tol
            x[~passive] = 0.0
            if not passive.any():
                s = np.zeros(k)
                break
        x = s
        g = M.T @ (b - M @ x)
    g = M.T @ (b - M @ x)
    if np.all(x >= 0) and np.all(g <= 1e3 * tol) and np.all(np.abs(g[x > 0]) <= 1e3 * tol):
        return x
    return None


def _bounded_lsq(M: np.ndarray, b: np.ndarray, ub: float = np.inf) -> np.ndarray:
    """``argmin_{0 <= x <= ub} ||M x - b||``: verified active set first, BVLS otherwise.

    A verified nonnegative solution that also respects ``ub`` satisfies the
    box KKT conditions, so it is returned as is.
    """
    x = _nonneg_lsq(M, b)
    if x is not None and (np.isinf(ub) or x.max(initial=0.0) <= ub):
        return x
    return np.clip(lsq_linear(M, b, bounds=(0, ub), method="bvls", tol=1e-14).x, 0.0, ub)


def project_cone(v: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{w : A w >= 0}``.

    The dual of the projection is a nonnegative least-squares problem:
    ``P(v) = v + A^T lam`` with ``lam = argmin_{lam >= 0} ||A^T lam + v||``,
    solved by an active-set nonnegative least squares.
    """
    if np.all(A @ v >= 0):
        return v.copy()
    return v + A.T @ _bounded_lsq(A.T, -v)


def prox_cone_group(v: np.ndarray, t: float, A: np.ndarray, p: int = 2) -> np.ndarray:
    """Prox of ``t ||w||_2 + indicator{A w >= 0}``: shrink the cone projection."""
    if p != 2:
        raise ValueError("exact cone prox is available for p = 2 only")
    return prox_group(project_cone(v, A), t, 2)


def _project_blocks(prog: ConvexProgram, blocks: np.ndarray, idx: np.ndarray) -> np.ndarray:
    S = prog.cone_signs
    C = prog.cone_matrix
    out = blocks.copy()
    for b in np.flatnonzero(np.any(blocks != 0, axis=1)):
        out[b] = project_cone(blocks[b], S[idx[b]][:, None] * C)
    return out


def _power_norm_sq(apply, adjoint, shape, iters=20, seed=0) -> float:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        u = adjoint(apply(v))
        lam = float(np.linalg.norm(u))
        if lam == 0:
            return 0.0
        v = u / lam
    return lam


def _finalize_report(status, hist, viol, it, t0, obj, records, msg="") -> SolveReport:
    return SolveReport(status, np.asarray(hist), float(viol), int(it),
                       time.perf_counter() - t0, float(obj), records, msg)


# ---------------------------------------------------------------------------
# ADMM
# ---------------------------------------------------------------------------


class _AdmmSystem:
    """Cached solver for ``(F^T F + rho (I + A^T A)) w = rhs``.

    Every block has ``A_b^T A_b = C^T C`` because the cone signs square to
    one, so the block-diagonal part shares one ``d x d`` inverse and the
    low-rank correction reduces to an ``n x n`` Cholesky factorization.
    """

    def __init__(self, prog: ConvexProgram, w: GroupWeights, rho: float):
        self.prog = prog
        self.w = w
        C = prog.cone_matrix
        d = prog.d
        self.Minv = np.linalg.inv(rho * (np.eye(d) + C.T @ C))
        Xv = prog.X.values
        G = prog.gates[w.pattern_index]
        core = (Xv @ self.Minv @ Xv.T) * (G.T @ G)
        pooled = isinstance(prog.loss, PooledLoss)
        if pooled:
            K = prog.loss.groups
            n0 = prog.n // K
            Rm = np.kron(np.ones((1, K)) / K, np.eye(n0))
            core = Rm @ core @ Rm.T
        self.core = core
        m = core.shape[0]
        self.interp = prog.interpolation
        jitter = 0.0
        base = core if self.interp else np.eye(m) + core
        while True:
            try:
                self.chol = cho_factor(base + jitter * np.eye(m))
                break
            except np.linalg.LinAlgError:
                jitter = 1e-10 * max(1.0, np.trace(base) / m) if jitter == 0 else 10 * jitter
                warnings.warn(f"ADMM system singular, adding jitter {jitter:.1e}")
                if jitter > 1e3:
                    raise

    def F(self, blocks):
        z = lifted_apply(self.prog, self.w.with_blocks(blocks))
        return self.prog.loss.pool(z) if isinstance(self.prog.loss, PooledLoss) else z

    def Ft(self, r):
        if isinstance(self.prog.loss, PooledLoss):
            r = self.prog.loss.unpool(r)
        return lifted_adjoint(self.prog, r, self.w)

    def solve(self, rhs, y=None):
        a = rhs @ self.Minv
        if self.interp:
            # minimize the quadratic subject to F w = y
            mu = cho_solve(self.chol, self.F(a) - y)
            return a - self.Ft(mu) @ self.Minv
        corr = cho_solve(self.chol, self.F(a))
        return a - self.Ft(corr) @ self.Minv


def solve_admm(prog: ConvexProgram, cfg: SolverConfig = SolverConfig(),
               w0: Optional[GroupWeights] = None):
    """ADMM for the cone-constrained program.

    Splitting: ``u = w`` carries the group penalty and ``s = A w >= 0`` the
    cone constraints. The penalty parameter adapts by residual balancing
    (factor 2 when the residuals differ by more than 10x). The returned point
    is the group-prox iterate projected exactly onto the cones, optionally
    polished on its support.
    """
    if not (is_quadratic(prog.loss) or prog.interpolation):
        raise ValueError("solve_admm needs a squared (or pooled squared) loss; use solve_penalized")
    if prog.reg_p != 2 and prog.interpolation:
        raise ValueError("interpolation programs use the group l2 norm")
    t0 = time.perf_counter()
    w = w0 or prog.zeros()
    idx = w.pattern_index
    B, d = w.blocks.shape
    n = prog.n
    C = prog.cone_matrix
    S = prog.cone_signs[idx]
    y = prog.y

    def A(blocks):
        return S * (blocks @ C.T)

    def At(s):
        return (S * s) @ C

    rho = cfg.rho_admm
    sys_ = _AdmmSystem(prog, w, rho)
    Fty = sys_.Ft(y) if not prog.interpolation else 0.0
    x = w.blocks.copy()
    u = x.copy()
    s = np.maximum(A(x), 0.0)
    lam = np.zeros_like(x)
    nu = np.zeros_like(s)
    beta_t = prog.beta if not prog.interpolation else 1.0

    hist, records = [], []
    status = "max_iters"
    polish = cfg.polish and not prog.interpolation and prog.reg_p == 2 and is_quadratic(prog.loss)
    polished = None
    next_check = 1000
    it = 0
    for it in range(1, cfg.max_iters + 1):
        rhs = Fty + rho * (u - lam) + rho * At(s - nu)
        x = sys_.solve(rhs, y)
        Ax = A(x)
        u_old, s_old = u, s
        u = prox_group(x + lam, beta_t / rho, prog.reg_p)
        s = np.maximum(Ax + nu, 0.0)
        lam += x - u
        nu += Ax - s

        r_pri = np.sqrt(np.sum((x - u) ** 2) + np.sum((Ax - s) ** 2))
        r_dual = rho * np.linalg.norm((u - u_old) + At(s - s_old))
        e_pri = np.sqrt(B * (d + n)) * cfg.abs_tol + cfg.rel_tol * max(
            np.sqrt(np.sum(x ** 2) + np.sum(Ax ** 2)), np.sqrt(np.sum(u ** 2) + np.sum(s ** 2)))
        e_dual = np.sqrt(B * d) * cfg.abs_tol + cfg.rel_tol * rho * np.linalg.norm(lam + At(nu))

        if it % cfg.log_every == 0 or it == 1:
            wu = w.with_blocks(u)
            obj = objective(prog, wu)
            hist.append(obj)
            records.append({"iter": it, "objective": obj,
                            "violation": constraint_violation(prog, wu)[1],
                            "r_pri": float(r_pri), "r_dual": float(r_dual)})
        if r_pri <= e_pri and r_dual <= e_dual:
            status = "converged"
            break
        if polish and it == next_check:
            next_check *= 2
            cand, ok = polish_support(prog, w.with_blocks(_project_blocks(prog, u, idx)))
            if ok:
                polished = cand
                status = "converged"
                break
        if it % 10 == 0:
            if r_pri > 10 * r_dual:
                rho *= 2
            elif r_dual > 10 * r_pri:
                rho /= 2
            else:
                continue
            lam *= 0.5 if r_pri > 10 * r_dual else 2.0
            nu *= 0.5 if r_pri > 10 * r_dual else 2.0
            sys_ = _AdmmSystem(prog, w, rho)

    if polished is not None:
        out = polished
    else:
        out = w.with_blocks(_project_blocks(prog, u, idx))
        if polish:
            out, ok = polish_support(prog, out)
            if ok:
                status = "converged"
    obj = objective(prog, out)
    hist.append(obj)
    viol = constraint_violation(prog, out)[1]
    return out, _finalize_report(status, hist, viol, it, t0, obj, records)


def _null_basis(M: np.ndarray, d: int) -> np.ndarray:
    if M.shape[0] == 0:
        return np.eye(d)
    _, sv, vt = np.linalg.svd(M, full_matrices=True)
    r = int(np.sum(sv > 1e-10 * max(sv[0], 1e-300)))
    return vt[r:].T


def _box_dual_residual(g: np.ndarray, A: np.ndarray, rho: Optional[float]):
    """``min_{0 <= mu <= rho} ||g - A^T mu||``, the residual vector and the minimizer.

    With ``rho = None`` the box is the nonnegative orthant and the norm equals
    ``||P_K(-g)||`` for the cone ``K = {w : A w >= 0}``.
    """
    mu = _bounded_lsq(A.T, g, np.inf if rho is None else rho)
    v = g - A.T @ mu
    return float(np.linalg.norm(v)), v, mu


def refine_active_set(prog: ConvexProgram, w: GroupWeights, rho: Optional[float] = None,
                      max_rounds: int = 100, kkt_tol: float = 1e-10,
                      prune: float = 1e-3):
    """Active-set Newton refinement of a near-optimal point.

    Minimizes the constrained objective (``rho=None``) or the hinge-penalized
    objective with weight ``rho``. Each nonzero block's cone rows are split
    into tight rows (held at zero), violated rows (penalized linearly; empty
    in the constrained case) and slack rows. On that face the objective is
    smooth in the null-space coordinates of the tight rows and is minimized
    by damped Newton steps that stop where a row changes class. Tight rows
    whose multipliers leave ``[0, rho]`` are released, and zero blocks that
    violate their optimality condition are added by exact line search, until
    the KKT conditions of the full problem hold. Blocks below ``prune`` times
    the largest block norm start at zero.

    Returns
    -------
    w : GroupWeights
        The refined point, or the input if refinement did not lower the
        objective (or, when constrained, lost feasibility).
    kkt_ok : bool
        True when the KKT conditions were verified at the returned point.
    """
    if not is_quadratic(prog.loss) or prog.reg_p != 2 or prog.interpolation:
        return w, False
    penalized = rho is not None
    Xv = prog.X.values
    C = prog.cone_matrix
    y = prog.y
    G = prog.gates[w.pattern_index]
    pooled = isinstance(prog.loss, PooledLoss)
    beta = prog.beta
    B, d = w.blocks.shape
    cones = prog.cone_signs[w.pattern_index][:, :, None] * C[None]  # (B, n, d)
    cnorm = np.linalg.norm(C, axis=1) + 1e-300
    ynorm = max(1.0, float(np.linalg.norm(y)))
    lam_hi = np.inf if rho is None else rho
    stat_tol = 1e-7 * beta

    def feat(b):
        Fb = w.sign[b] * G[b][:, None] * Xv
        return prog.loss.pool(Fb) if pooled else Fb

    # only nonzero blocks contribute, and there are few of them
    def resid(blocks):
        nz = np.flatnonzero(blocks.any(axis=1))
        z = np.einsum("bn,nb,b->n", G[nz], Xv @ blocks[nz].T, w.sign[nz])
        return (prog.loss.pool(z) if pooled else z) - y

    def fval(blocks):
        nz = np.flatnonzero(blocks.any(axis=1))
        r = resid(blocks)
        val = 0.5 * float(r @ r) + beta * float(np.linalg.norm(blocks[nz], axis=1).sum())
        if penalized:
            sl = np.einsum("bnd,bd->bn", cones[nz], blocks[nz])
            val += rho * float(np.maximum(0.0, -sl).sum())
        return val

    def classify(b, direction):
        sl = cones[b] @ direction / (cnorm * np.linalg.norm(direction))
        tight = np.abs(sl) <= 1e-9 if penalized else sl <= 1e-9
        return tight, (sl < -1e-9) if penalized else np.zeros_like(tight)

    f_start = fval(w.blocks)
    blocks = w.blocks.copy()
    scale = np.linalg.norm(blocks, axis=1)
    supp = np.flatnonzero(scale > prune * max(scale.max(initial=0), 1e-300))
    # an extreme optimum has at most n + 1 nonzero blocks; missing ones are added back below
    supp = [int(b) for b in sorted(supp[np.argsort(-scale[supp], kind="stable")][:y.size + 1])]
    keep = np.zeros(B, dtype=bool)
    keep[supp] = True
    blocks[~keep] = 0.0
    tight, neg = {}, {}
    for b in supp:
        sl = cones[b] @ blocks[b] / (cnorm * np.linalg.norm(blocks[b]))
        if penalized:
            tight[b] = np.abs(sl) <= 1e-7
            neg[b] = sl < -1e-7
        else:
            tight[b] = sl <= 1e-7
            neg[b] = np.zeros_like(tight[b])
    faces = {}

    def face(b):
        key = tight[b].tobytes()
        hit = faces.get(b)
        if hit is None or hit[0] != key:
            N = _null_basis(cones[b][tight[b]], d)
            hit = (key, N, feat(b) @ N)
            faces[b] = hit
        return hit[1], hit[2]

    kkt_ok = False
    mult = np.zeros((B, C.shape[0]))
    for _ in range(max_rounds):
        # --- Newton on the current face -----------------------------------
        damp = None
        for _newton in range(500):
            if not supp:
                break
            fs = [face(b) for b in supp]
            empty = [b for b, (N, _) in zip(supp, fs) if N.shape[1] == 0]
            if empty:
                for b in empty:
                    blocks[b] = 0.0
                supp = [b for b in supp if b not in empty]
                continue
            thetas = []
            for (N, _), b in zip(fs, supp):
                th = N.T @ blocks[b]
                blocks[b] = N @ th
                thetas.append(th)
            norms = [np.linalg.norm(th) for th in thetas]
            floor = 1e-12 * max(norms)
            if min(norms) <= floor:
                for b, nt in zip(supp, norms):
                    if nt <= floor:
                        blocks[b] = 0.0
                supp = [b for b, nt in zip(supp, norms) if nt > floor]
                continue
            J = np.hstack([FN for _, FN in fs])
            r = resid(blocks)
            grad = J.T @ r
            H = J.T @ J
            off = 0
            for (N, _), b, th, nt in zip(fs, supp, thetas, norms):
                k = th.size
                u = th / nt
                grad[off:off + k] += beta * u
                if penalized and neg[b].any():
                    grad[off:off + k] -= rho * N.T @ cones[b][neg[b]].sum(axis=0)
                H[off:off + k, off:off + k] += beta * (np.eye(k) - np.outer(u, u)) / nt
                off += k
            gnorm = np.linalg.norm(grad)
            if gnorm <= 1e-13 * ynorm:
                break
            hscale = max(np.trace(H) / H.shape[0], 1e-300)
            f0 = fval(blocks)
            eye = np.eye(H.shape[0])
            if damp is None:
                damp = 1e-14 * hscale
            accepted = False
            while damp < 1e12 * hscale:
                try:
                    step = -np.linalg.solve(H + damp * eye, grad)
                except np.linalg.LinAlgError:
                    damp = max(10 * damp, 1e-12 * hscale)
                    continue
                dws, off = [], 0
                for (N, _), th in zip(fs, thetas):
                    dws.append(N @ step[off:off + th.size])
                    off += th.size
                # largest step before some row changes class
                amax, hit = 1.0, None
                for k, b in enumerate(supp):
                    ds = cones[b] @ dws[k]
                    sl = cones[b] @ blocks[b]
                    free = ~tight[b] & ~neg[b]
                    for rows, ratio in (
                            (free & (ds < 0), lambda m: np.maximum(sl[m], 0.0) / -ds[m]),
                            (neg[b] & (ds > 0), lambda m: np.maximum(-sl[m], 0.0) / ds[m])):
                        if np.any(rows):
                            rr = ratio(rows)
                            j = int(np.argmin(rr))
                            if rr[j] < amax:
                                amax, hit = float(rr[j]), (b, int(np.flatnonzero(rows)[j]))
                trial = blocks.copy()
                for k, b in enumerate(supp):
                    trial[b] = blocks[b] + amax * dws[k]
                f1 = fval(trial)
                if f1 <= f0:
                    accepted = True
                    break
                damp = max(10 * damp, 1e-12 * hscale)
            if not accepted:
                break
            damp = max(damp / 10, 1e-14 * hscale)
            blocks = trial
            if hit is not None:
                b, i = hit
                tight[b] = tight[b].copy()
                neg[b] = neg[b].copy()
                tight[b][i] = True
                neg[b][i] = False
            elif f0 - f1 <= 1e-16 * max(1.0, abs(f0)):
                break

        # --- KKT checks -------------------------------------------------------
        r = resid(blocks)
        grads = lifted_adjoint(prog, prog.loss.unpool(r) if pooled else r, w)
        changed = stalled = False
        for b in supp:
            E = np.flatnonzero(tight[b])
            rhs = grads[b] + beta * blocks[b] / np.linalg.norm(blocks[b])
            if penalized and neg[b].any():
                rhs = rhs - rho * cones[b][neg[b]].sum(axis=0)
            if E.size == 0:
                stalled |= bool(np.linalg.norm(rhs) > stat_tol)
                continue
            mu = _bounded_lsq(cones[b][E].T, rhs, lam_hi)
            if np.linalg.norm(rhs - cones[b][E].T @ mu) <= stat_tol:
                continue
            lam = np.linalg.lstsq(cones[b][E].T, rhs, rcond=None)[0]
            tol_l = kkt_tol * max(1.0, np.abs(lam).max())
            lo, hi = int(np.argmin(lam)), int(np.argmax(lam))
            if lam[lo] < -tol_l:
                tight[b] = tight[b].copy()
                tight[b][E[lo]] = False
                changed = True
            elif lam[hi] > lam_hi + tol_l:
                tight[b] = tight[b].copy()
                neg[b] = neg[b].copy()
                tight[b][E[hi]] = False
                neg[b][E[hi]] = True
                changed = True
            else:
                stalled = True
        in_supp = np.zeros(B, dtype=bool)
        in_supp[supp] = True
        # the dual residual never exceeds ||g||, so small gradients are optimal at zero
        cand = np.flatnonzero(~in_supp & (np.linalg.norm(grads, axis=1) > beta * (1 + 1e-9)))
        # any admissible multiplier bounds the residual from above, so the
        # last exact multipliers of a block certify it cheaply when still valid
        # (zero rows of ``mult`` give the plain bound ||g||)
        upper = np.linalg.norm(grads[cand] - np.einsum("bnd,bn->bd", cones[cand], mult[cand]), axis=1)
        open_ = upper > beta * (1 + 1e-9)
        cand, upper = cand[open_], upper[open_]
        added = 0
        for b in cand[np.argsort(-upper, kind="stable")] if cand.size else []:
            nv, v, mult[b] = _box_dual_residual(grads[b], cones[b], rho)
            if nv <= beta * (1 + 1e-9):
                continue
            direction = -v / nv
            slope_h = beta
            if penalized:
                slope_h += rho * float(np.maximum(0.0, -(cones[b] @ direction)).sum())
            # exact line search along the steepest descent direction from zero
            Fd = feat(b) @ direction
            t = -(r @ Fd + slope_h) / max(Fd @ Fd, 1e-300)
            if t <= 0:
                continue
            blocks[b] = t * direction
            r = r + t * Fd
            grads = lifted_adjoint(prog, prog.loss.unpool(r) if pooled else r, w)
            supp.append(int(b))
            tight[b], neg[b] = classify(b, direction)
            changed = True
            added += 1
            if added >= 5:
                break
        if not changed:
            kkt_ok = not stalled
            break

    if not penalized:
        blocks = _project_blocks(prog, blocks, w.pattern_index)
        out = w.with_blocks(blocks)
        if objective(prog, out) <= objective(prog, w) and constraint_violation(prog, out)[1] <= 1e-12:
            return out, kkt_ok
        return w, False
    if fval(blocks) <= f_start:
        return w.with_blocks(blocks), kkt_ok
    return w, False


def polish_support(prog: ConvexProgram, w: GroupWeights, **kw):
    """Constrained-objective refinement; see :func:`refine_active_set`."""
    return refine_active_set(prog, w, None, **kw)


# ---------------------------------------------------------------------------
# Penalized form
# ---------------------------------------------------------------------------


def _prox_penalized(v, t, beta, rho, S, C, p, mu, inner, eta):
    """Prox of ``t (beta ||w||_p + rho * sum max(0, -s_i * c_i^T w))`` per block.

    Projected gradient ascent on the box-constrained dual variable
    ``mu in [0, t rho]^n``; ``w(mu) = prox(v + A^T mu)``. ``mu`` is updated in place.
    """
    hi = t * rho
    w = prox_group(v + (S * mu) @ C, t * beta, p)
    # blocks are independent; each one leaves the loop once its multipliers settle
    act = np.arange(len(v))
    for _ in range(inner):
        Sa, ma = S[act], mu[act]
        new = np.minimum(np.maximum(ma - eta * (Sa * (w[act] @ C.T)), 0.0), hi)
        moving = np.abs(new - ma).max(axis=1, initial=0.0) > 1e-15 * max(hi, 1e-300)
        mu[act] = new
        w[act] = prox_group(v[act] + (Sa * new) @ C, t * beta, p)
        act = act[moving]
        if not act.size:
            break
    return w


def solve_penalized(prog: ConvexProgram, cfg: SolverConfig = SolverConfig(),
                    w0: Optional[GroupWeights] = None, rho: Optional[float] = None,
                    first_check: int = 500):
    """FISTA on ``L(Xhat w) + beta sum ||w_j||_p + rho * sum hinge(-A w)``.

    Step sizes start at ``1/Lhat`` (power iteration) and backtrack; the
    momentum restarts whenever the composite objective increases. The
    composite prox is evaluated by up to ``cfg.inner_iters`` dual ascent
    steps with warm starts. With ``cfg.polish`` (squared losses) the iterate
    is periodically handed to :func:`refine_active_set` on the same penalized
    objective (first after ``first_check`` iterations, then at doubling
    counts), and the run stops once that refinement certifies the KKT
    conditions.
    """
    rho = cfg.rho_hinge if rho is None else rho
    if not rho > 0:
        raise ValueError("rho must be positive")
    if prog.interpolation:
        raise ValueError("interpolation programs need solve_admm")
    t0 = time.perf_counter()
    w = w0 or prog.zeros()
    idx = w.pattern_index
    S = prog.cone_signs[idx]
    C = prog.cone_matrix
    eta = 1.0 / max(np.linalg.norm(C, 2) ** 2, 1e-300)

    def smooth(blocks):
        return prog.loss.evaluate(lifted_apply(prog, w.with_blocks(blocks)), prog.y)

    def grad(blocks):
        z = lifted_apply(prog, w.with_blocks(blocks))
        return lifted_adjoint(prog, prog.loss.gradient(z, prog.y), w)

    def total(blocks):
        return penalized_objective(prog, w.with_blocks(blocks), rho)

    Lhat = prog.loss.smoothness * _power_norm_sq(
        lambda b: lifted_apply(prog, w.with_blocks(b)),
        lambda r: lifted_adjoint(prog, r, w), w.blocks.shape, seed=cfg.seed)
    t = 1.0 / max(Lhat, 1e-12)
    x = w.blocks.copy()
    yk, tk = x.copy(), 1.0
    mu = np.zeros_like(S)
    fx = total(x)
    hist, records = [fx], []
    status, msg = "max_iters", ""
    window = [fx]
    ups = 0
    polish = cfg.polish and is_quadratic(prog.loss) and prog.reg_p == 2
    next_check = max(1, first_check)
    it = 0
    for it in range(1, cfg.max_iters + 1):
        if polish and it == next_check:
            next_check *= 2
            cand, ok = refine_active_set(prog, w.with_blocks(x), rho)
            if ok:
                x, fx = cand.blocks, total(cand.blocks)
                hist.append(fx)
                status = "converged"
                break
        g = grad(yk)
        fy = smooth(yk)
        while True:
            mu_try = mu.copy()
            xn = _prox_penalized(yk - t * g, t, prog.beta, rho, S, C, prog.reg_p,
                                 mu_try, cfg.inner_iters, eta)
            if cfg.step_rule == "fixed":
                break
            diff = xn - yk
            if smooth(xn) <= fy + np.sum(g * diff) + np.sum(diff * diff) / (2 * t) + 1e-15 * abs(fy):
                break
            t *= 0.5
        mu = mu_try
        fn = total(xn)
        if fn > fx:
            ups += 1
            yk, tk = x.copy(), 1.0
            if ups >= 100:
                msg = "objective increased for 100 consecutive iterations"
                break
            continue
        ups = 0
        tn = 0.5 * (1 + np.sqrt(1 + 4 * tk * tk))
        yk = xn + ((tk - 1) / tn) * (xn - x)
        x, fx, tk = xn, fn, tn
        hist.append(fx)
        window.append(fx)
        if it % cfg.log_every == 0:
            records.append({"iter": it, "objective": fx,
                            "violation": constraint_violation(prog, w.with_blocks(x))[1]})
        if len(window) > 10:
            window.pop(0)
            if abs(window[0] - window[-1]) <= cfg.rel_tol * max(1.0, abs(fx)):
                status = "converged"
                break
    if polish and status != "converged" or (polish and it < first_check):
        cand, ok = refine_active_set(prog, w.with_blocks(x), rho)
        if total(cand.blocks) <= fx:
            x, fx = cand.blocks, total(cand.blocks)
            hist.append(fx)
            status = "converged" if ok else status
    out = w.with_blocks(x)
    viol = constraint_violation(prog, out)[1]
    return out, _finalize_report(status, hist, viol, it, t0, fx, records, msg)


def solve_penalized_continuation(prog: ConvexProgram, cfg: SolverConfig = SolverConfig(),
                                 rhos: Sequence[float] = (0.01, 0.1, 1.0, 10.0),
                                 stage_iters: int = 50):
    """Penalized solves with increasing hinge weight, each warm-started.

    Early stages only supply warm starts and are capped at ``stage_iters``
    iterations; the last stage (largest weight) runs to convergence and, with
    ``cfg.polish``, is refined on its own penalized objective from iteration
    ``stage_iters`` on.
    """
    w, rep = None, None
    hist, iters = [], 0
    t0 = time.perf_counter()
    early = replace(cfg, polish=False, max_iters=min(cfg.max_iters, stage_iters))
    for k, r in enumerate(rhos):
        last = k == len(rhos) - 1
        w, rep = solve_penalized(prog, cfg if last else early, w, rho=r, first_check=stage_iters)
        hist.extend(rep.objective_history)
        iters += rep.iterations
    return w, replace(rep, objective_history=np.asarray(hist), iterations=iters,
                      wall_time=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Generic accelerated proximal gradient (real or complex variables)
# ---------------------------------------------------------------------------


def _inner(a, b) -> float:
    return float(np.real(np.vdot(a, b)))


def _fista(value, grad, penalty, prox, x0, lipschitz, cfg: SolverConfig):
    """FISTA with backtracking, monotone restart and a gradient-mapping stop.

    Stops once ``||x - prox(x - t grad(x))|| / t`` falls below
    ``abs_tol * scale`` where ``scale = max(1, ||grad(x0)||)``; this residual
    vanishes exactly at minimizers.
    """
    t0 = time.perf_counter()
    t = 1.0 / max(lipschitz, 1e-12)
    x = x0.copy()
    yk, tk = x.copy(), 1.0
    fx = value(x) + penalty(x)
    hist, records = [fx], []
    scale = max(1.0, float(np.linalg.norm(grad(x0))))
    status, msg, ups = "max_iters", "", 0
    it = 0
    for it in range(1, cfg.max_iters + 1):
        g = grad(yk)
        fy = value(yk)
        while True:
            xn = prox(yk - t * g, t)
            if cfg.step_rule == "fixed":
                break
            diff = xn - yk
            if value(xn) <= fy + _inner(g, diff) + _inner(diff, diff) / (2 * t) + 1e-15 * abs(fy):
                break
            t *= 0.5
        fn = value(xn) + penalty(xn)
        if fn > fx:
            if tk == 1.0 and fn - fx <= 1e-12 * max(1.0, abs(fx)):
                # a plain prox-gradient step from x cannot descend: rounding floor
                gm = np.linalg.norm(x - xn) / t
                if gm <= 1e-6 * scale:
                    status = "converged"
                    msg = "stopped at the rounding floor"
                    break
            ups += 1
            yk, tk = x.copy(), 1.0
            if ups >= 100:
                msg = "objective increased for 100 consecutive iterations"
                break
            continue
        ups = 0
        tn = 0.5 * (1 + np.sqrt(1 + 4 * tk * tk))
        yk = xn + ((tk - 1) / tn) * (xn - x)
        x, fx, tk = xn, fn, tn
        hist.append(fx)
        if it % cfg.log_every == 0:
            records.append({"iter": it, "objective": fx})
        if it % 10 == 0:
            gm = np.linalg.norm(x - prox(x - t * grad(x), t)) / t
            if gm <= cfg.abs_tol * scale:
                status = "converged"
                break
    return x, _finalize_report(status, hist, 0.0, it, t0, fx, records, msg)


# ---------------------------------------------------------------------------
# Nuclear-norm program for linear convolutional networks
# ---------------------------------------------------------------------------


def _stack_patches(patches) -> np.ndarray:
    Xs = np.asarray([np.asarray(p, dtype=float) for p in patches])
    if Xs.ndim != 3 or Xs.shape[0] < 1:
        raise ValueError("patches must be a nonempty list of equally shaped matrices")
    return Xs


def prox_nuclear(Z: np.ndarray, t: float) -> np.ndarray:
    """Singular value soft-thresholding."""
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    return (U * np.maximum(s - t, 0.0)) @ Vt


def nuclear_apply(patches, Z) -> np.ndarray:
    """``sum_k X_k z_k`` for ``Z = [z_1 ... z_K]``."""
    return np.einsum("knd,dk->n", _stack_patches(patches), Z)


def nuclear_certificate(patches, y, Z, loss: Optional[Loss] = None) -> float:
    """``sigma_max([X_1^T g ... X_K^T g])`` with ``g`` the loss gradient at ``Z``.

    At a minimizer this is ``<= beta``, with equality whenever ``Z != 0``.
    """
    loss = loss or SquaredLoss()
    Xs = _stack_patches(patches)
    g = loss.gradient(np.einsum("knd,dk->n", Xs, Z), np.asarray(y, dtype=float))
    return float(np.linalg.norm(np.einsum("knd,n->dk", Xs, g), 2))


def solve_nuclear(patches, y, beta: float, cfg: SolverConfig = SolverConfig(),
                  loss: Optional[Loss] = None, Z0: Optional[np.ndarray] = None):
    """Minimize ``L(sum_k X_k z_k, y) + beta ||Z||_*`` by FISTA with SVT.

    Parameters
    ----------
    patches : sequence of K arrays, each (n, d)
    y : ndarray, shape (n,)
    beta : float
        Nuclear-norm weight, positive.

    Returns
    -------
    Z : ndarray, shape (d, K)
    report : SolveReport
        ``records`` ends with the dual certificate value.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    loss = loss or SquaredLoss()
    Xs = _stack_patches(patches)
    y = np.asarray(y, dtype=float)
    K, n, d = Xs.shape
    if y.shape != (n,):
        raise ValueError(f"labels must have shape ({n},)")
    A = Xs.transpose(1, 2, 0).reshape(n, d * K)  # column (j, k) <-> Z[j, k]

    def value(Z):
        return loss.evaluate(A @ Z.ravel(), y)

    def grad(Z):
        return (A.T @ loss.gradient(A @ Z.ravel(), y)).reshape(d, K)

    def penalty(Z):
        return beta * float(np.linalg.svd(Z, compute_uv=False).sum())

    L = loss.smoothness * np.linalg.norm(A, 2) ** 2
    Z0 = np.zeros((d, K)) if Z0 is None else np.asarray(Z0, dtype=float)
    Z, rep = _fista(value, grad, penalty, lambda V, t: prox_nuclear(V, t * beta), Z0, L, cfg)
    rep.records.append({"certificate": nuclear_certificate(Xs, y, Z, loss), "beta": beta})
    return Z, rep


# ---------------------------------------------------------------------------
# Circular convolution: complex Lasso in the Fourier domain
# ---------------------------------------------------------------------------


def dft_matrix(d: int) -> np.ndarray:
    """Unitary DFT matrix ``F[j, k] = exp(-2 pi i j k / d) / sqrt(d)``."""
    return np.fft.fft(np.eye(d), norm="ortho")


def prox_complex_l1(z: np.ndarray, t: float) -> np.ndarray:
    """Complex soft-thresholding: shrink magnitudes by ``t``, keep phases."""
    mag = np.abs(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mag > t, 1.0 - t / mag, 0.0)
    return scale * z


def fourier_features(X) -> np.ndarray:
    """``Xhat = X F`` with the unitary DFT (row-wise transform)."""
    return np.fft.fft(np.asarray(X, dtype=float), axis=1, norm="ortho")


def solve_circular_fourier(X, y, beta: float, cfg: SolverConfig = SolverConfig()):
    """Minimize ``0.5 ||Xhat z - y||^2 + (beta / sqrt(d)) ||z||_1`` over complex ``z``.

    Starting from zero, every iterate is conjugate-symmetric
    (``z[k] = conj(z[-k])``) when ``X`` and ``y`` are real, so ``Xhat z`` is
    real. The symmetry is enforced once more on the returned point to remove
    rounding drift.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    lam = beta / np.sqrt(d)

    def fwd(z):
        return X @ np.fft.fft(z, norm="ortho")

    def adj(r):
        return np.fft.ifft(X.T @ r, norm="ortho")

    def value(z):
        r = fwd(z) - y
        return 0.5 * float(np.real(np.vdot(r, r)))

    def grad(z):
        return adj(fwd(z) - y)

    def penalty(z):
        return lam * float(np.abs(z).sum())

    L = np.linalg.norm(X, 2) ** 2
    z, rep = _fista(value, grad, penalty, lambda v, t: prox_complex_l1(v, t * lam),
                    np.zeros(d, dtype=complex), L, cfg)
    z = 0.5 * (z + np.conj(np.roll(z[::-1], 1)))
    return z, rep


def conjugate_symmetry_error(z: np.ndarray) -> float:
    return float(np.max(np.abs(z - np.conj(np.roll(z[::-1], 1))), initial=0.0))
