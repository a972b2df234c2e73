"""Independent reference solvers used only by the test-suite."""

import cvxpy as cp
import numpy as np


def socp_optimum(prog):
    """Optimal value of a lifted program via a generic conic solver."""
    X = prog.X.values
    G = prog.gates
    S = prog.cone_signs
    C = prog.cone_matrix
    P, d = prog.P, prog.d
    Wp = cp.Variable((P, d))
    Wn = cp.Variable((P, d))
    pred = 0
    for i in range(P):
        pred = pred + cp.multiply(G[i], X @ (Wp[i] - Wn[i]))
    cons = []
    for i in range(P):
        A = S[i][:, None] * C
        cons += [A @ Wp[i] >= 0, A @ Wn[i] >= 0]
    if prog.reg_p == 1:
        reg = cp.sum(cp.abs(Wp)) + cp.sum(cp.abs(Wn))
    else:
        reg = cp.sum(cp.norm(Wp, 2, axis=1)) + cp.sum(cp.norm(Wn, 2, axis=1))
    if prog.interpolation:
        problem = cp.Problem(cp.Minimize(reg), cons + [pred == prog.y])
    else:
        if hasattr(prog.loss, "groups"):
            K = prog.loss.groups
            n0 = prog.n // K
            Rm = np.kron(np.ones((1, K)) / K, np.eye(n0))
            pred = Rm @ pred
        problem = cp.Problem(cp.Minimize(0.5 * cp.sum_squares(pred - prog.y) + prog.beta * reg), cons)
    problem.solve(solver=cp.CLARABEL, tol_gap_abs=1e-11, tol_gap_rel=1e-11, tol_feas=1e-11)
    return float(problem.value)
