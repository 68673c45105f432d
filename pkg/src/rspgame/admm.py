"""Operator-splitting (ADMM) solver for concave quadratic programs.

The program is handed to the iteration in minimization form

    minimize 0.5 x'Px + c'x   subject to  l <= A x <= u

with ``P = -Q``, ``c = -q`` and the box bounds appended to ``A`` as identity
rows.  Each iteration solves one linear system with the fixed matrix
``P + sigma I + A' diag(rho) A`` (sparse LU, refactored only when ``rho``
changes), then projects onto the constraint box.  Once the iterates are
moderately accurate, an active-set polish solves the reduced KKT system
exactly; the polished point is accepted only if it meets the requested
tolerances, otherwise ADMM resumes at a tighter tolerance.

Primal infeasibility is reported when successive dual differences form a
certificate (``A' dy ~ 0`` with negative support value).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .kkt import check_kkt
from .qp import QuadraticProgram, stack_constraints

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITERATIONS = "max_iterations"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class SolverSettings:
    feas_tol: float = 1e-7
    opt_tol: float = 1e-6
    max_iterations: int = 200_000
    scaling: bool = True
    scaling_iterations: int = 10
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    adaptive_rho: bool = True
    adaptive_rho_interval: int = 50
    check_interval: int = 10
    polish: bool = True
    eps_start: float = 1e-3
    infeasibility_tol: float = 1e-6
    record_trace: bool = False

    def __post_init__(self):
        if not (self.feas_tol > 0 and self.opt_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    primal_residual: float
    stationarity_residual: float
    status: str
    iterations: int
    duals: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    polished: bool = False
    trace: list[float] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _col_norms(M: sp.csc_matrix) -> np.ndarray:
    if M.shape[0] == 0:
        return np.zeros(M.shape[1])
    return np.asarray(abs(M).max(axis=0).todense()).ravel()


def _row_norms(M: sp.csc_matrix) -> np.ndarray:
    if M.shape[1] == 0:
        return np.zeros(M.shape[0])
    return np.asarray(abs(M).max(axis=1).todense()).ravel()


def _limit(v, lo=1e-4, hi=1e4):
    v = np.where(v < lo, 1.0, v)
    return np.minimum(v, hi)


def ruiz_scale(P, c, A, iterations):
    """Modified Ruiz equilibration of the KKT matrix plus cost scaling.

    Returns the scaled data and ``(D, E, cost)`` with ``x = D xs``,
    ``z = zs / E`` and ``y = E ys / cost``.
    """
    n, m = A.shape[1], A.shape[0]
    D, E, cost = np.ones(n), np.ones(m), 1.0
    P, A, c = P.copy(), A.copy(), c.copy()
    for _ in range(iterations):
        d = 1 / np.sqrt(_limit(np.maximum(_col_norms(P), _col_norms(A))))
        e = 1 / np.sqrt(_limit(_row_norms(A))) if m else np.ones(0)
        Dm, Em = sp.diags(d), sp.diags(e)
        P = (Dm @ P @ Dm).tocsc()
        A = (Em @ A @ Dm).tocsc()
        c = d * c
        D *= d
        E *= e
        gamma = max(float(_col_norms(P).mean()) if n else 0.0, float(np.abs(c).max(initial=0.0)))
        gamma = 1 / _limit(np.array([gamma]))[0]
        P = (gamma * P).tocsc()
        c = gamma * c
        cost *= gamma
    return P, c, A, D, E, cost


class _Workspace:
    def __init__(self, program: QuadraticProgram, settings: SolverSettings):
        self.program = program
        self.settings = settings
        A, l, u, self.bound_vars = stack_constraints(program)
        P = sp.csc_matrix(-program.Q)
        c = -program.q
        if settings.scaling:
            P, c, A, D, E, cost = ruiz_scale(P, c, A, settings.scaling_iterations)
        else:
            D, E, cost = np.ones(program.n), np.ones(A.shape[0]), 1.0
        self.P, self.c, self.A, self.At = P, c, A, A.T.tocsc()
        self.D, self.E, self.cost = D, E, cost
        with np.errstate(invalid="ignore"):
            self.l = l * E
            self.u = u * E
        self.n, self.m = A.shape[1], A.shape[0]
        self.is_eq = np.isfinite(self.l) & (self.l == self.u)
        self.free = ~np.isfinite(self.l) & ~np.isfinite(self.u)
        self.x = np.zeros(self.n)
        # start on the constraint box so the fixed-point residual is monotone from step one
        self.z = np.clip(np.zeros(self.m), self.l, self.u)
        self.y = np.zeros(self.m)
        self.set_rho(settings.rho)

    def set_rho(self, rho):
        self.rho = float(np.clip(rho, 1e-6, 1e6))
        rv = np.full(self.m, self.rho)
        rv[self.is_eq] = 1e3 * self.rho
        rv[self.free] = 1e-6
        self.rho_vec = rv
        K = self.P + self.settings.sigma * sp.eye(self.n, format="csc") \
            + (self.At @ sp.diags(rv) @ self.A)
        self.lu = splu(sp.csc_matrix(K), permc_spec="MMD_AT_PLUS_A",
                       diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))

    def step(self):
        s = self.settings
        rhs = s.sigma * self.x - self.c + self.At @ (self.rho_vec * self.z - self.y)
        xt = self.lu.solve(rhs)
        zt = self.A @ xt
        x_new = s.alpha * xt + (1 - s.alpha) * self.x
        zr = s.alpha * zt + (1 - s.alpha) * self.z
        z_new = np.clip(zr + self.y / self.rho_vec, self.l, self.u)
        y_new = self.y + self.rho_vec * (zr - z_new)
        dx, dz, dy = x_new - self.x, z_new - self.z, y_new - self.y
        self.x, self.z, self.y = x_new, z_new, y_new
        return dx, dz, dy

    # residuals in unscaled space, used for termination and rho adaptation
    def residuals(self):
        Ax = self.A @ self.x
        Einv = 1 / self.E
        prim = np.abs(Einv * (Ax - self.z)).max(initial=0.0)
        prim_scale = max(np.abs(Einv * Ax).max(initial=0.0), np.abs(Einv * self.z).max(initial=0.0))
        Px = self.P @ self.x
        Aty = self.At @ self.y
        Dinv = 1 / self.D
        dual = np.abs(Dinv * (Px + self.c + Aty)).max(initial=0.0) / self.cost
        dual_scale = max(np.abs(Dinv * Px).max(initial=0.0), np.abs(Dinv * Aty).max(initial=0.0),
                         np.abs(Dinv * self.c).max(initial=0.0)) / self.cost
        return prim, prim_scale, dual, dual_scale

    def unscaled(self, x, y):
        x_un = self.D * x
        y_un = self.E * y / self.cost
        me, mi = self.program.A_eq.shape[0], self.program.A_in.shape[0]
        y_b = np.zeros(self.program.n)
        y_b[self.bound_vars] = y_un[me + mi:]
        return x_un, (y_un[:me], y_un[me:me + mi], y_b)

    def primal_infeasible(self, dy) -> bool:
        Edy = self.E * dy
        norm = np.abs(Edy).max(initial=0.0)
        if norm < 1e-30:
            return False
        tol = self.settings.infeasibility_tol * norm
        if np.abs((self.At @ dy) / self.D).max(initial=0.0) > tol:
            return False
        pos, neg = np.maximum(dy, 0), np.minimum(dy, 0)
        if np.any((pos > 0) & ~np.isfinite(self.u)) or np.any((neg < 0) & ~np.isfinite(self.l)):
            return False
        with np.errstate(invalid="ignore"):
            support = np.sum(np.where(pos > 0, self.u * pos, 0.0)) \
                + np.sum(np.where(neg < 0, self.l * neg, 0.0))
        return bool(support < -tol)

    def polish(self, delta=1e-7, refine=25):
        """Solve the equality-constrained problem on the guessed active set."""
        low = np.isfinite(self.l) & (self.z - self.l < -self.y)
        upp = np.isfinite(self.u) & (self.u - self.z < self.y)
        act = low | upp | self.is_eq
        rows = np.flatnonzero(act)
        b = np.where(upp[rows] | self.is_eq[rows], self.u[rows], self.l[rows])
        Ar = self.A[rows]
        k = len(rows)
        K0 = sp.bmat([[self.P, Ar.T], [Ar, None]], format="csc")
        if K0.shape[0] != self.n + k:
            K0 = sp.csc_matrix(K0, shape=(self.n + k, self.n + k))
        reg = sp.diags(np.concatenate([np.full(self.n, delta), np.full(k, -delta)]))
        try:
            lu = splu(sp.csc_matrix(K0 + reg), permc_spec="COLAMD")
        except RuntimeError:
            return None
        rhs = np.concatenate([-self.c, b])
        sol = lu.solve(rhs)
        for _ in range(refine):
            r = rhs - K0 @ sol
            if np.abs(r).max(initial=0.0) < 1e-13 * max(1.0, np.abs(rhs).max(initial=0.0)):
                break
            sol = sol + lu.solve(r)
        y = np.zeros(self.m)
        y[rows] = sol[self.n:]
        return sol[:self.n], y


def _evaluate(program, x, duals, settings):
    rep = check_kkt(program, x, tol=max(settings.feas_tol, settings.opt_tol), duals=duals)
    ok = rep.primal_residual <= settings.feas_tol and rep.kkt_residual <= settings.opt_tol
    return ok, rep


def solve_qp(program: QuadraticProgram, settings: SolverSettings | None = None) -> QpSolution:
    """Maximize a concave quadratic program; deterministic for fixed inputs."""
    settings = settings or SolverSettings()
    n = program.n
    if np.any(program.lower > program.upper):
        return QpSolution(np.clip(np.zeros(n), program.lower, program.upper), np.nan,
                          np.inf, np.inf, INFEASIBLE, 0)
    ws = _Workspace(program, settings)
    eps = settings.eps_start
    # below this the plain iterate is checked directly against the tolerances
    eps_floor = 0.1 * min(settings.feas_tol, settings.opt_tol)
    polished_at, polished_k = None, 0
    rho_cap, last_direction = 1e6, 0
    trace: list[float] = []
    k = 0
    while k < settings.max_iterations:
        dx, dz, dy = ws.step()
        k += 1
        if settings.record_trace:
            # fixed-point residual of the underlying averaged operator, in the
            # metric where it is nonincreasing while rho stays fixed
            ds = dz + dy / ws.rho_vec
            trace.append(float(np.sqrt(settings.sigma * dx @ dx + ds @ (ws.rho_vec * ds))))
        if k % settings.check_interval:
            continue
        prim, prim_scale, dual, dual_scale = ws.residuals()
        if ws.primal_infeasible(dy):
            log.info("primal infeasibility certificate at iteration %d", k)
            x_un, duals = ws.unscaled(ws.x, ws.y)
            return QpSolution(x_un, program.objective(x_un), prim, dual, INFEASIBLE, k,
                              duals, False, trace)
        converged = prim <= eps * (1 + prim_scale) and dual <= eps * (1 + dual_scale)
        # at the floor the dual residual measure can stall above eps while the
        # KKT check already passes, so test the iterate itself
        at_floor = eps == eps_floor and prim <= settings.feas_tol * (1 + prim_scale)
        if converged or at_floor:
            x_un, duals = ws.unscaled(ws.x, ws.y)
            ok, rep = _evaluate(program, x_un, duals, settings)
            if ok:
                return QpSolution(x_un, program.objective(x_un), rep.primal_residual,
                                  rep.kkt_residual, OPTIMAL, k, duals, False, trace)
            # one polish per accuracy level, retried now and then at the floor
            if settings.polish and (polished_at != eps or k - polished_k >= 500):
                polished_at, polished_k = eps, k
                pol = ws.polish()
                if pol is not None:
                    xp, dp = ws.unscaled(*pol)
                    ok, rep = _evaluate(program, xp, dp, settings)
                    log.debug("polish at k=%d eps=%.1e: prim=%.2e kkt=%.2e", k, eps,
                              rep.primal_residual, rep.kkt_residual)
                    if ok:
                        return QpSolution(xp, program.objective(xp), rep.primal_residual,
                                          rep.kkt_residual, OPTIMAL, k, dp, True, trace)
            eps = max(eps / 10, eps_floor)
        if settings.adaptive_rho and k % settings.adaptive_rho_interval == 0:
            pn = prim / (prim_scale + 1e-10)
            dn = dual / (dual_scale + 1e-10)
            if pn > 0 and dn > 0:
                factor = np.clip(np.sqrt(pn / dn), 1 / rho_cap, rho_cap)
                if factor > 5 or factor < 1 / 5:
                    # rho can flip between two values forever; every reversal
                    # narrows the allowed step until updates stop
                    direction = 1 if factor > 1 else -1
                    if direction == -last_direction:
                        rho_cap = np.sqrt(rho_cap)
                        factor = np.clip(factor, 1 / rho_cap, rho_cap)
                    last_direction = direction
                    if factor > 5 or factor < 1 / 5:
                        ws.set_rho(ws.rho * factor)
    x_un, duals = ws.unscaled(ws.x, ws.y)
    ok, rep = _evaluate(program, x_un, duals, settings)
    if settings.polish:
        pol = ws.polish()
        if pol is not None:
            xp, dp = ws.unscaled(*pol)
            ok_p, rep_p = _evaluate(program, xp, dp, settings)
            if ok_p or rep_p.kkt_residual + rep_p.primal_residual < rep.kkt_residual + rep.primal_residual:
                x_un, duals, ok, rep = xp, dp, ok_p, rep_p
    status = OPTIMAL if ok else MAX_ITERATIONS
    return QpSolution(x_un, program.objective(x_un), rep.primal_residual, rep.kkt_residual,
                      status, k, duals, False, trace)
