"""LMI problems, solving and independent residual checks."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .backends import make_backend
from .expr import AffineExpr, DecisionVar, as_expr, symmetrize

__all__ = ["Constraint", "LmiProblem", "SolveOutcome", "solve", "SYM_TOL"]

SYM_TOL = 1e-9
MARGIN_CAP = 1.0


@dataclass
class Constraint:
    """``expr ⪰ εI`` (sense ``'>'``) or ``expr ⪯ −εI`` (sense ``'<'``)."""

    expr: AffineExpr
    sense: str
    name: str = ""

    @property
    def sign(self):
        return 1.0 if self.sense == ">" else -1.0

    @property
    def size(self):
        return self.expr.shape[0]

    def margin(self, assignment):
        """Smallest eigenvalue of ``sign·expr`` at ``assignment``."""
        V = self.sign * self.expr.value(assignment)
        return float(np.linalg.eigvalsh(0.5 * (V + V.T))[0])


class LmiProblem:
    """Affine matrix inequalities over declared decision variables.

    Parameters
    ----------
    strictness : float, optional
        ε in ``⪰ εI``. ``None`` uses ``1e-7·scale``.
    name : str
    scale : float, optional
        Data scale for ε and the residual re-check. ``None`` uses the largest
        constant entry over all constraints (at least 1). Assemblers pin it to
        the plant data so that ε does not move with γ.
    """

    def __init__(self, strictness=None, name="", scale=None):
        self.variables: list[DecisionVar] = []
        self.constraints: list[Constraint] = []
        self.objective: AffineExpr | None = None
        self.objective_sense = "min"
        self._strictness = strictness
        self._scale = scale
        self.name = name
        self.meta = {}

    # -- declaration
    def var(self, name, rows, cols=None, structure="symmetric"):
        v = DecisionVar(name, rows, cols, structure)
        self.declare(v)
        return v

    def declare(self, v):
        if any(u is v for u in self.variables):
            return v
        if any(u.name == v.name for u in self.variables):
            raise ValueError(f"duplicate variable name {v.name!r}")
        self.variables.append(v)
        return v

    def add(self, expr, sense=">", name=""):
        """Add ``expr ⪰ εI`` (``'>'``) or ``expr ⪯ −εI`` (``'<'``)."""
        if sense not in (">", "<"):
            raise ValueError("sense must be '>' or '<'")
        e = as_expr(expr)
        if e.shape[0] != e.shape[1]:
            raise ValueError(f"constraint {name!r} is not square: {e.shape}")
        asym = e.asymmetry()
        scale = max(1.0, float(np.max(np.abs(e.const), initial=0.0)))
        if asym > SYM_TOL * scale:
            raise ValueError(f"constraint {name!r} is not symmetric (asymmetry {asym:.3g})")
        e = symmetrize(e)
        for v in e.variables:
            if not any(u is v for u in self.variables):
                raise ValueError(f"constraint {name!r} uses undeclared variable {v.name!r}")
        self.constraints.append(Constraint(e, sense, name))
        return self.constraints[-1]

    def minimize(self, expr):
        self.objective = as_expr(expr)
        self.objective_sense = "min"
        self._check_objective()

    def maximize(self, expr):
        self.objective = as_expr(expr)
        self.objective_sense = "max"
        self._check_objective()

    def _check_objective(self):
        if self.objective.shape != (1, 1):
            raise ValueError("objective must be a scalar (1×1) expression")
        for v in self.objective.variables:
            if not any(u is v for u in self.variables):
                raise ValueError(f"objective uses undeclared variable {v.name!r}")

    # -- layout
    @property
    def strictness(self):
        if self._strictness is not None:
            return float(self._strictness)
        return 1e-7 * self.scale

    @property
    def scale(self):
        if self._scale is not None:
            return float(self._scale)
        s = 1.0
        for c in self.constraints:
            s = max(s, float(np.max(np.abs(c.expr.const), initial=0.0)))
        return s

    def offsets(self):
        out, k = {}, 0
        for v in self.variables:
            out[v] = k
            k += v.size
        return out

    @property
    def n_scalars(self):
        return sum(v.size for v in self.variables)

    def var_by_name(self, name):
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def coefficient_tensors(self, constraint):
        """``(F0, [F_1..F_m])`` of ``sign·expr`` over all scalars, in declaration order."""
        e = constraint.expr
        m = e.shape[0]
        Fs = np.zeros((self.n_scalars, m, m))
        off = self.offsets()
        for v, c in e.terms.items():
            Fs[off[v]:off[v] + v.size] = c
        return constraint.sign * e.const, constraint.sign * Fs

    def objective_vector(self):
        c = np.zeros(self.n_scalars)
        if self.objective is None:
            return c, 0.0
        off = self.offsets()
        for v, cf in self.objective.terms.items():
            c[off[v]:off[v] + v.size] = cf[:, 0, 0]
        s = 1.0 if self.objective_sense == "min" else -1.0
        return s * c, float(self.objective.const[0, 0])

    def assignment_from_vector(self, x):
        off = self.offsets()
        return {v: np.asarray(x[off[v]:off[v] + v.size], dtype=float) for v in self.variables}

    def summary(self):
        return {"name": self.name, "variables": len(self.variables), "scalars": self.n_scalars,
                "constraints": [(c.name, c.size) for c in self.constraints]}


@dataclass
class SolveOutcome:
    """Result of `solve`.

    Attributes
    ----------
    status : {'feasible', 'infeasible', 'inaccurate', 'failed'}
    assignment : dict
        Variable name → dense matrix; pair variables are stored as
        ``name.d`` and ``name.i``.
    residual : float
        Worst violation ``max(0, ε − λ_min)`` over constraints, recomputed
        from the assignment.
    margins : dict
        Constraint name → smallest eigenvalue of the signed expression.
    margin : float or None
        Optimal common margin ``t`` in margin mode.
    objective : float or None
    """

    status: str
    assignment: dict = field(default_factory=dict)
    residual: float = 0.0
    margins: dict = field(default_factory=dict)
    margin: float | None = None
    objective: float | None = None
    strictness: float = 0.0
    message: str = ""
    seconds: float = 0.0
    values: dict = field(default_factory=dict, repr=False)

    @property
    def feasible(self):
        return self.status == "feasible"

    def value(self, var):
        """Matrix (or ``(d, i)`` tuple) of ``var`` in this solution."""
        return var.unpack(self.values[var])

    def min_margin(self):
        return min(self.margins.values()) if self.margins else np.inf


def _assignment_dict(problem, x):
    out, raw = {}, {}
    for v, xv in problem.assignment_from_vector(x).items():
        raw[v] = xv
        val = v.unpack(xv)
        if v.is_pair:
            out[v.name + ".d"], out[v.name + ".i"] = val
        else:
            out[v.name] = val
    return out, raw


def solve(problem: LmiProblem, backend=None, *, margin=False, tol=1e-8, max_iter=200) -> SolveOutcome:
    """Solve an LMI problem and re-check every constraint independently.

    Parameters
    ----------
    problem : LmiProblem
    backend : str, Backend subclass or instance, optional
        Defaults to ``"auto"`` (Clarabel, CVXOPT for large blocks). A fresh
        handle is built for every call.
    margin : bool
        If true, maximise a common margin ``t ≤ 1`` with every constraint
        ``⪰ tI`` and declare feasibility iff ``t ≥ ε``. The problem objective
        must be empty in this mode.
    tol : float
        Solver tolerance; the residual re-check allows ``10·tol·scale``.
    """
    t0 = time.perf_counter()
    eps = problem.strictness
    if not problem.constraints:
        assignment, raw = _assignment_dict(problem, np.zeros(problem.n_scalars))
        return SolveOutcome("feasible", assignment, 0.0, {}, None, None, eps, "no constraints",
                            time.perf_counter() - t0, raw)
    if margin and problem.objective is not None:
        raise ValueError("margin mode needs a problem without objective")

    nvar = problem.n_scalars
    c_full, c0 = problem.objective_vector()
    tensors = [problem.coefficient_tensors(c) for c in problem.constraints]

    # eliminate scalars that no constraint touches
    used = np.zeros(nvar, dtype=bool)
    for _, Fs in tensors:
        used |= np.any(Fs != 0, axis=(1, 2))
    if np.any(c_full[~used] != 0):
        return SolveOutcome("failed", message="objective depends on an unconstrained scalar (unbounded)",
                            strictness=eps, seconds=time.perf_counter() - t0)
    cols = np.flatnonzero(used)

    bk = make_backend(backend, tol=tol, max_iter=max_iter)
    xi = bk.add_free(len(cols))
    ti = bk.add_free(1)[0] if margin else None
    for F0, Fs in tensors:
        m = F0.shape[0]
        Fu = Fs[cols]
        if margin:
            # F0 + Σ x F − t I ⪰ 0
            bk.add_psd(F0, np.append(xi, ti), np.concatenate([Fu, -np.eye(m)[None]], axis=0))
        else:
            bk.add_psd(F0 - eps * np.eye(m), xi, Fu)
    if margin:
        # t ≤ cap keeps homogeneous problems bounded
        bk.add_psd(np.array([[MARGIN_CAP]]), [ti], -np.ones((1, 1, 1)))
        c = np.zeros(bk.n)
        c[ti] = -1.0
    else:
        c = np.zeros(bk.n)
        c[xi] = c_full[cols]
    bk.set_objective(c)
    res = bk.solve()
    secs = time.perf_counter() - t0

    if res.x is None:
        st = {"infeasible": "infeasible", "unbounded": "failed"}.get(res.status, "failed")
        return SolveOutcome(st, strictness=eps, message=res.message, seconds=secs)

    x = np.zeros(nvar)
    x[cols] = res.x[xi]
    assignment, raw = _assignment_dict(problem, x)
    margins = {}
    worst = np.inf
    for k, con in enumerate(problem.constraints):
        mk = con.margin(raw)
        key = con.name or f"c{k}"
        margins[key] = min(mk, margins.get(key, np.inf))
        worst = min(worst, mk)
    residual = max(0.0, eps - worst)
    t_opt = float(res.x[ti]) if margin else None
    obj = None
    if problem.objective is not None:
        obj = float(problem.objective.value(raw)[0, 0])

    slack = 10.0 * tol * problem.scale
    if res.status == "solved":
        if margin and t_opt < eps:
            status = "infeasible"
        elif residual <= slack:
            status = "feasible"
        else:
            status = "inaccurate"
    elif res.status == "inaccurate":
        # accept only if the independent check certifies it
        status = "feasible" if (residual <= slack and (not margin or t_opt >= eps)) else "inaccurate"
        if margin and t_opt is not None and t_opt < 0.5 * eps and residual > slack:
            status = "infeasible"
    else:
        status = "failed"
    return SolveOutcome(status, assignment, residual, margins, t_opt, obj, eps, res.message, secs, raw)
