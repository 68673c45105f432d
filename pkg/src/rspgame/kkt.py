"""First-order optimality check for a :class:`QuadraticProgram`, from scratch.

Works in minimization form ``f = -(0.5 x'Qx + q'x)``.  Stationarity reads
``grad f + A_eq' lam + A_in' mu + nu = 0`` with ``mu >= 0`` and ``nu`` signed
by which bound is active.  When no multipliers are supplied they are
estimated by a sign-constrained least-squares fit over the active set.

Residual normalization: constraint violations are divided by
``max(1, ||row||_inf, |rhs|)``; stationarity by ``max(1, ||grad f||_inf)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import lsq_linear

from .qp import QuadraticProgram


@dataclass
class KktReport:
    primal_residual: float
    stationarity_residual: float
    complementarity_residual: float
    passed: bool
    worst_tag: str | None = None
    violations: dict[str, float] = field(default_factory=dict)

    @property
    def kkt_residual(self) -> float:
        return max(self.stationarity_residual, self.complementarity_residual)


def _row_inf_norms(A) -> np.ndarray:
    A = sp.csr_matrix(A)
    if A.shape[0] == 0:
        return np.zeros(0)
    return np.asarray(abs(A).max(axis=1).todense()).ravel()


def constraint_violations(program: QuadraticProgram, x) -> tuple[float, dict[str, float]]:
    """Normalized worst violation, overall and per tag."""
    x = np.asarray(x, dtype=float)
    per_tag: dict[str, float] = {}

    def record(tags, viol):
        for tag, v in zip(tags, viol):
            if v > per_tag.get(tag, 0.0):
                per_tag[tag] = float(v)

    if program.A_eq.shape[0]:
        scale = np.maximum.reduce([np.ones(len(program.b_eq)), _row_inf_norms(program.A_eq),
                                   np.abs(program.b_eq)])
        record(program.eq_tags, np.abs(program.A_eq @ x - program.b_eq) / scale)
    if program.A_in.shape[0]:
        scale = np.maximum.reduce([np.ones(len(program.b_in)), _row_inf_norms(program.A_in),
                                   np.abs(program.b_in)])
        record(program.in_tags, np.maximum(program.A_in @ x - program.b_in, 0) / scale)
    lo = np.where(np.isfinite(program.lower), program.lower, -np.inf)
    hi = np.where(np.isfinite(program.upper), program.upper, np.inf)
    bscale = np.maximum(1.0, np.maximum(np.abs(np.where(np.isfinite(lo), lo, 0)),
                                        np.abs(np.where(np.isfinite(hi), hi, 0))))
    record(program.bound_tags, (np.maximum(lo - x, 0) + np.maximum(x - hi, 0)) / bscale)
    worst = max(per_tag.values(), default=0.0)
    return worst, per_tag


def _estimate_multipliers(program, x, active_tol):
    """Sign-constrained least squares for the multipliers of the active set."""
    g = -program.gradient(x)
    n = program.n
    cols, lb, ub, where = [], [], [], []
    me = program.A_eq.shape[0]
    if me:
        cols.append(program.A_eq.T)
        lb.append(np.full(me, -np.inf))
        ub.append(np.full(me, np.inf))
        where.append(("eq", np.arange(me)))
    if program.A_in.shape[0]:
        slack = program.b_in - program.A_in @ x
        scale = np.maximum(1.0, np.abs(program.b_in))
        act = np.flatnonzero(slack <= active_tol * scale)
        if len(act):
            cols.append(program.A_in[act].T)
            lb.append(np.zeros(len(act)))
            ub.append(np.full(len(act), np.inf))
            where.append(("in", act))
    at_lo = np.flatnonzero(np.isfinite(program.lower)
                           & (x - program.lower <= active_tol * np.maximum(1, np.abs(program.lower))))
    at_hi = np.flatnonzero(np.isfinite(program.upper)
                           & (program.upper - x <= active_tol * np.maximum(1, np.abs(program.upper))))
    for idx, lo_b, hi_b, sign in ((at_lo, -np.inf, 0.0, -1), (at_hi, 0.0, np.inf, 1)):
        if len(idx):
            cols.append(sp.csc_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))),
                                      shape=(n, len(idx))))
            lb.append(np.full(len(idx), lo_b))
            ub.append(np.full(len(idx), hi_b))
            where.append(("lo" if sign < 0 else "hi", idx))
    y_eq = np.zeros(me)
    y_in = np.zeros(program.A_in.shape[0])
    y_b = np.zeros(n)
    if not cols:
        return y_eq, y_in, y_b
    M = sp.hstack(cols, format="csc")
    lbv, ubv = np.concatenate(lb), np.concatenate(ub)
    if M.shape[1] <= 2000 and M.shape[0] <= 4000:
        res = lsq_linear(M.toarray(), -g, bounds=(lbv, ubv), method="bvls", tol=1e-14)
    else:
        res = lsq_linear(M, -g, bounds=(lbv, ubv), method="trf", tol=1e-14,
                         lsmr_tol=1e-14, max_iter=2000)
    sol = res.x
    pos = 0
    for kind, idx in where:
        vals = sol[pos:pos + len(idx)]
        pos += len(idx)
        if kind == "eq":
            y_eq[idx] = vals
        elif kind == "in":
            y_in[idx] = vals
        else:
            y_b[idx] += vals
    return y_eq, y_in, y_b


def check_kkt(program: QuadraticProgram, x, tol: float, duals=None) -> KktReport:
    """Check feasibility and stationarity of ``x`` to within ``tol``.

    ``duals`` may be a tuple ``(y_eq, y_in, y_bounds)`` in minimization sign
    convention; otherwise multipliers are estimated from the active set.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (program.n,):
        raise ValueError(f"x has shape {x.shape}, program has {program.n} variables")
    primal, per_tag = constraint_violations(program, x)

    if duals is None:
        y_eq, y_in, y_b = _estimate_multipliers(program, x, active_tol=max(tol, 1e-12))
    else:
        y_eq, y_in, y_b = (np.asarray(d, dtype=float) for d in duals)
        if (y_eq.shape != (program.A_eq.shape[0],) or y_in.shape != (program.A_in.shape[0],)
                or y_b.shape != (program.n,)):
            raise ValueError("dual vector dimensions do not match the program")

    grad_f = -program.gradient(x)
    r = grad_f + program.A_eq.T @ y_eq + program.A_in.T @ y_in + y_b
    stat = float(np.abs(r).max(initial=0.0)) / max(1.0, float(np.abs(grad_f).max(initial=0.0)))

    # dual sign and complementarity, both scaled like stationarity
    yscale = max(1.0, float(np.abs(grad_f).max(initial=0.0)))
    sign_viol = max(float(np.maximum(-y_in, 0).max(initial=0.0)),
                    float(np.maximum(y_b, 0)[~np.isfinite(program.upper)].max(initial=0.0)),
                    float(np.maximum(-y_b, 0)[~np.isfinite(program.lower)].max(initial=0.0)))
    comp = 0.0
    if len(y_in):
        slack = np.abs(program.b_in - program.A_in @ x)
        comp = max(comp, float((np.maximum(y_in, 0) * slack).max()))
    # multipliers on infinite bounds are already counted as sign violations
    fin_up, fin_lo = np.isfinite(program.upper), np.isfinite(program.lower)
    up_slack = np.abs(np.where(fin_up, program.upper, 0.0) - x)
    lo_slack = np.abs(x - np.where(fin_lo, program.lower, 0.0))
    comp_b = np.maximum(np.where((y_b > 0) & fin_up, y_b * up_slack, 0.0),
                        np.where((y_b < 0) & fin_lo, -y_b * lo_slack, 0.0))
    comp = max(comp, float(comp_b.max(initial=0.0)))
    comp = max(comp, sign_viol) / yscale

    worst_tag = max(per_tag, key=per_tag.get) if per_tag and primal > 0 else None
    passed = primal <= tol and stat <= tol and comp <= tol
    return KktReport(primal, stat, comp, passed, worst_tag,
                     {k: v for k, v in per_tag.items() if v > 0})
