"""Canonical concave-maximization problems solved with Clarabel.

A :class:`ConvexSubproblem` maximizes a :class:`ConcaveExpr` subject to
linear (in)equalities, variable bounds, Euclidean balls and hypograph
constraints ``f(z) >= 0`` on further concave expressions.  Concave
expressions are sums of an affine part, negated weighted squared norms and
weighted ``log2`` of affine functions; they compile to second-order and
exponential cones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

LN2 = math.log(2.0)


class BackendError(RuntimeError):
    pass


class Infeasible(BackendError):
    def __init__(self, msg, witness=None):
        super().__init__(msg)
        self.witness = witness


class Unbounded(BackendError):
    pass


class IterationLimit(BackendError):
    pass


@dataclass
class ConcaveExpr:
    """``const + lin.z - sum w ||z[idx] - c||^2 + sum w log2(b + a.z)``."""

    n: int
    const: float = 0.0
    lin: np.ndarray = None
    quads: list = field(default_factory=list)  # (weight >= 0, idx, center)
    logs: list = field(default_factory=list)  # (weight >= 0, a (n,), b)

    def __post_init__(self):
        self.lin = np.zeros(self.n) if self.lin is None else np.asarray(self.lin, float).copy()

    def add_quad(self, weight, idx, center):
        if weight < 0:
            raise ValueError("quadratic weight must be nonnegative")
        if weight > 0:
            self.quads.append((float(weight), np.asarray(idx, int), np.asarray(center, float)))

    def add_log(self, weight, a, b):
        if weight < 0:
            raise ValueError("log weight must be nonnegative")
        if weight > 0:
            self.logs.append((float(weight), np.asarray(a, float), float(b)))

    def value(self, z) -> float:
        z = np.asarray(z, float)
        v = self.const + float(self.lin @ z)
        for w, idx, c in self.quads:
            v -= w * float(np.sum((z[idx] - c) ** 2))
        for w, a, b in self.logs:
            arg = b + float(a @ z)
            v += w * (math.log2(arg) if arg > 0 else -math.inf)
        return v


@dataclass
class ConvexSubproblem:
    n: int
    objective: ConcaveExpr
    lb: np.ndarray = None
    ub: np.ndarray = None
    hypographs: list = field(default_factory=list)  # (label, ConcaveExpr) meaning expr >= 0
    ineqs: list = field(default_factory=list)  # (label, g (n,), h) meaning g.z <= h
    eqs: list = field(default_factory=list)  # (label, a (n,), b) meaning a.z == b
    balls: list = field(default_factory=list)  # (label, idx, center, radius)

    def __post_init__(self):
        self.lb = np.full(self.n, -np.inf) if self.lb is None else np.asarray(self.lb, float)
        self.ub = np.full(self.n, np.inf) if self.ub is None else np.asarray(self.ub, float)

    def max_violation(self, z) -> float:
        z = np.asarray(z, float)
        v = [0.0]
        v.append(float(np.max(np.maximum(self.lb - z, 0), initial=0)))
        v.append(float(np.max(np.maximum(z - self.ub, 0), initial=0)))
        v += [max(-e.value(z), 0.0) for _, e in self.hypographs]
        v += [max(float(g @ z) - h, 0.0) for _, g, h in self.ineqs]
        v += [abs(float(a @ z) - b) for _, a, b in self.eqs]
        v += [max(float(np.linalg.norm(z[idx] - c)) - r, 0.0) for _, idx, c, r in self.balls]
        return max(v)


@dataclass
class Certificate:
    status: str
    duality_gap: float
    primal_residual: float
    dual_residual: float
    iterations: int


@dataclass
class Solution:
    z: np.ndarray
    value: float
    certificate: Certificate


class _Builder:
    """Accumulates rows of ``s = b - A x`` grouped by cone type."""

    def __init__(self, n):
        self.n = n
        self.n_aux = 0
        self.groups = {"zero": [], "nonneg": [], "soc": [], "exp": []}

    def aux(self) -> int:
        i = self.n + self.n_aux
        self.n_aux += 1
        return i

    def add(self, kind, rows, label):
        # rows: list of (dict col->A value, b value)
        self.groups[kind].append((rows, label))

    def expr_linear(self, expr: ConcaveExpr, label):
        """Introduce cone-backed auxiliaries; return (coef dict, const) of the linear form."""
        coef = {i: float(v) for i, v in enumerate(expr.lin) if v != 0}
        for w, idx, c in expr.quads:
            r = self.aux()
            rows = [({r: -1.0}, 1.0), ({r: -1.0}, -1.0)]
            rows += [({int(i): -2.0}, -2.0 * ci) for i, ci in zip(idx, c)]
            self.add("soc", rows, label)
            coef[r] = coef.get(r, 0.0) - w
        const = expr.const
        for w, a, b in expr.logs:
            # log(b + a.z) = log(s) + log(b/s + (a/s).z) keeps the cone rows O(1)
            s = max(abs(b), float(np.max(np.abs(a), initial=0.0)), 1e-300)
            u = self.aux()
            row2 = {i: -float(v) / s for i, v in enumerate(a) if v != 0}
            self.add("exp", [({u: -1.0}, 0.0), ({}, 1.0), (row2, b / s)], label)
            coef[u] = coef.get(u, 0.0) + w / LN2
            const += w * math.log2(s)
        return coef, const


def backend_solve(problem: ConvexSubproblem, tol: float = 1e-8, max_iter: int = 200) -> Solution:
    """Solve to optimality and return the point with its duality-gap certificate."""
    n = problem.n
    bld = _Builder(n)
    for i in range(n):
        if np.isfinite(problem.lb[i]):
            bld.add("nonneg", [({i: -1.0}, -problem.lb[i])], f"lower bound z[{i}]")
        if np.isfinite(problem.ub[i]):
            bld.add("nonneg", [({i: 1.0}, problem.ub[i])], f"upper bound z[{i}]")
    for label, g, h in problem.ineqs:
        bld.add("nonneg", [({i: float(v) for i, v in enumerate(g) if v != 0}, float(h))], label)
    for label, a, b in problem.eqs:
        bld.add("zero", [({i: float(v) for i, v in enumerate(a) if v != 0}, float(b))], label)
    for label, idx, c, r in problem.balls:
        rows = [({}, float(r))] + [({int(i): -1.0}, -float(ci)) for i, ci in zip(idx, c)]
        bld.add("soc", rows, label)
    for label, expr in problem.hypographs:
        coef, const = bld.expr_linear(expr, label)
        bld.add("nonneg", [({i: -v for i, v in coef.items()}, const)], label)
    obj_coef, obj_const = bld.expr_linear(problem.objective, "objective")

    nv = n + bld.n_aux
    q = np.zeros(nv)
    for i, v in obj_coef.items():
        q[i] -= v

    data, ri, ci, b = [], [], [], []
    cones, labels = [], []
    row = 0
    for kind in ("zero", "nonneg", "soc", "exp"):
        groups = bld.groups[kind]
        if not groups:
            continue
        if kind in ("zero", "nonneg"):
            total = sum(len(rows) for rows, _ in groups)
            cones.append(clarabel.ZeroConeT(total) if kind == "zero" else clarabel.NonnegativeConeT(total))
        for rows, label in groups:
            if kind == "soc":
                cones.append(clarabel.SecondOrderConeT(len(rows)))
            elif kind == "exp":
                cones.append(clarabel.ExponentialConeT())
            for cols, bv in rows:
                for j, v in cols.items():
                    ri.append(row)
                    ci.append(j)
                    data.append(v)
                b.append(bv)
                labels.append(label)
                row += 1
    A = sp.csc_matrix((data, (ri, ci)), shape=(row, nv))
    P = sp.csc_matrix((nv, nv))

    st = clarabel.DefaultSettings()
    st.verbose = False
    st.max_iter = max_iter
    st.tol_gap_abs = tol
    st.tol_gap_rel = tol
    st.tol_feas = min(1e-8, tol)
    st.max_threads = 1
    solver = clarabel.DefaultSolver(P, q, A, np.asarray(b, float), cones, st)
    sol = solver.solve()
    status = str(sol.status)

    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        z = np.abs(np.asarray(sol.z))
        witness = labels[int(np.argmax(z))] if len(z) else None
        raise Infeasible(f"subproblem infeasible (largest dual weight on: {witness})", witness)
    if status in ("DualInfeasible", "AlmostDualInfeasible"):
        raise Unbounded("subproblem unbounded")
    if status not in ("Solved", "AlmostSolved"):
        raise IterationLimit(f"backend stopped with status {status}")

    x = np.asarray(sol.x)[:n].copy()
    cert = Certificate(
        status=status,
        duality_gap=abs(sol.obj_val - sol.obj_val_dual),
        primal_residual=float(sol.r_prim),
        dual_residual=float(sol.r_dual),
        iterations=int(sol.iterations),
    )
    return Solution(z=x, value=problem.objective.value(x), certificate=cert)
