"""Concave quadratic programs over polyhedra.

A program maximizes ``0.5 x'Qx + q'x + constant`` subject to
``A_eq x = b_eq``, ``A_in x <= b_in`` and ``lower <= x <= upper``.  Every
constraint row and every variable bound carries a string tag so residuals
can be reported per constraint family.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO

import numpy as np
import scipy.sparse as sp


@dataclass
class QuadraticProgram:
    variable_names: list[str]
    Q: sp.csc_matrix
    q: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_in: sp.csr_matrix
    b_in: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    eq_tags: list[str] = field(default_factory=list)
    in_tags: list[str] = field(default_factory=list)
    bound_tags: list[str] = field(default_factory=list)
    constant: float = 0.0

    def __post_init__(self):
        n = len(self.variable_names)
        self.Q = sp.csc_matrix(self.Q, shape=(n, n))
        self.q = np.asarray(self.q, dtype=float)
        self.A_eq = sp.csr_matrix(self.A_eq, shape=(len(self.b_eq), n))
        self.b_eq = np.asarray(self.b_eq, dtype=float)
        self.A_in = sp.csr_matrix(self.A_in, shape=(len(self.b_in), n))
        self.b_in = np.asarray(self.b_in, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if not self.eq_tags:
            self.eq_tags = ["eq"] * len(self.b_eq)
        if not self.in_tags:
            self.in_tags = ["in"] * len(self.b_in)
        if not self.bound_tags:
            self.bound_tags = ["bound"] * n

    @property
    def n(self) -> int:
        return len(self.variable_names)

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ (self.Q @ x) + self.q @ x + self.constant)

    def gradient(self, x) -> np.ndarray:
        return self.Q @ np.asarray(x, dtype=float) + self.q

    def validate(self, check_concavity: bool = True) -> list[str]:
        n = self.n
        out = []
        if self.q.shape != (n,):
            out.append(f"q: expected length {n}")
        for name in ("lower", "upper"):
            if getattr(self, name).shape != (n,):
                out.append(f"{name}: expected length {n}")
        if len(self.eq_tags) != self.A_eq.shape[0] or len(self.in_tags) != self.A_in.shape[0]:
            out.append("tags: one tag per constraint row required")
        if len(self.bound_tags) != n:
            out.append("bound_tags: one tag per variable required")
        if abs(self.Q - self.Q.T).max() > 1e-12 * max(1.0, abs(self.Q).max()):
            out.append("Q: not symmetric")
        elif check_concavity and not is_negative_semidefinite(self.Q):
            out.append("Q: not negative semidefinite")
        return out

    def dump(self, fh: IO[str]) -> None:
        """Plain-text dump: variable names, then COO triplets per block."""
        fh.write(f"# quadratic program: maximize 0.5 x'Qx + q'x + {self.constant!r}\n")
        fh.write(f"variables {self.n}\n")
        for k, name in enumerate(self.variable_names):
            fh.write(f"{k} {name} {self.lower[k]!r} {self.upper[k]!r} {self.bound_tags[k]}\n")
        Q = sp.coo_matrix(self.Q)
        fh.write(f"Q {Q.nnz}\n")
        for i, j, v in zip(Q.row, Q.col, Q.data):
            fh.write(f"{i} {j} {v!r}\n")
        fh.write(f"q {self.n}\n")
        for k, v in enumerate(self.q):
            fh.write(f"{k} {v!r}\n")
        for label, A, b, tags in (("A_eq", self.A_eq, self.b_eq, self.eq_tags),
                                  ("A_in", self.A_in, self.b_in, self.in_tags)):
            M = sp.coo_matrix(A)
            fh.write(f"{label} {A.shape[0]} {M.nnz}\n")
            for r in range(A.shape[0]):
                fh.write(f"row {r} {b[r]!r} {tags[r]}\n")
            for i, j, v in zip(M.row, M.col, M.data):
                fh.write(f"{i} {j} {v!r}\n")


def is_negative_semidefinite(Q, tol: float = 1e-10) -> bool:
    Q = sp.csr_matrix(Q)
    diag = Q.diagonal()
    offdiag = np.asarray(abs(Q).sum(axis=1)).ravel() - np.abs(diag)
    scale = max(1.0, np.abs(diag).max(initial=0.0))
    # Gershgorin disc test covers every program assembled in this package
    if np.all(-diag - offdiag >= -tol * scale):
        return True
    if Q.shape[0] <= 3000:
        return bool(np.linalg.eigvalsh(Q.toarray()).max() <= tol * scale)
    from scipy.sparse.linalg import eigsh
    top = eigsh(Q.astype(float), k=1, which="LA", return_eigenvectors=False)
    return bool(top[0] <= tol * scale)


def stack_constraints(program: QuadraticProgram):
    """Single-range form ``l <= A x <= u`` used by the solver.

    Rows are ordered equalities, inequalities, then one identity row per
    variable with at least one finite bound.  Returns ``(A, l, u, bound_vars)``.
    """
    n = program.n
    finite = np.isfinite(program.lower) | np.isfinite(program.upper)
    bound_vars = np.flatnonzero(finite)
    I = sp.csr_matrix((np.ones(len(bound_vars)), (np.arange(len(bound_vars)), bound_vars)),
                      shape=(len(bound_vars), n))
    A = sp.vstack([program.A_eq, program.A_in, I], format="csc")
    l = np.concatenate([program.b_eq, np.full(len(program.b_in), -np.inf),
                        program.lower[bound_vars]])
    u = np.concatenate([program.b_eq, program.b_in, program.upper[bound_vars]])
    return A, l, u, bound_vars


def fix_variables(program: QuadraticProgram, cols, values) -> tuple[QuadraticProgram, np.ndarray]:
    """Substitute fixed values for some variables and drop their columns.

    Returns the reduced program and the indices of the kept variables; its
    objective agrees with the original at every completion of ``values``.
    """
    cols = np.asarray(cols, dtype=int).ravel()
    values = np.asarray(values, dtype=float).ravel()
    keep = np.setdiff1d(np.arange(program.n), cols)
    Q = sp.csc_matrix(program.Q)
    Qkf = Q[keep][:, cols]
    const = (program.constant + float(program.q[cols] @ values)
             + 0.5 * float(values @ (Q[cols][:, cols] @ values)))
    A_eq, A_in = sp.csc_matrix(program.A_eq), sp.csc_matrix(program.A_in)
    reduced = QuadraticProgram(
        [program.variable_names[k] for k in keep], Q[keep][:, keep], program.q[keep] + Qkf @ values,
        A_eq[:, keep], program.b_eq - A_eq[:, cols] @ values,
        A_in[:, keep], program.b_in - A_in[:, cols] @ values,
        program.lower[keep], program.upper[keep], list(program.eq_tags), list(program.in_tags),
        [program.bound_tags[k] for k in keep], const)
    return reduced, keep
