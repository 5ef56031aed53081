"""Controller synthesis drivers: γ bisection, gain recovery, verification."""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import StateSpace, hinf_sweep, spectral_abscissa, verify_certificate
from .lmi import assemble_decomposed_efbsp, assemble_dual_efbsp, solve
from .model import (ControllerGains, Dimensions, HomogeneousSystem, ModelError, PatternGraph,
                    expand, validate)
from .slalg import sym_eig

__all__ = ["SynthesisOptions", "SynthesisResult", "Probe", "BisectionTrace",
           "SynthesisError", "InfeasibleError", "SingularSlackError", "VerificationError",
           "NonMonotoneWarning", "bisect_gamma", "recover_gains", "synth_decomposed",
           "synth_full_dual", "synth_blockdiag_baseline", "find_commuting_pattern",
           "default_gamma_hi", "decomposed_margins"]

COND_LIMIT = 1e12
FULL_GUARD = 12

_MULT = {"per-eigenvalue": "all", "all": "all",
         "convexified-extremes": "extremes", "extremes": "extremes"}
_STRUCT = {"kron-structured": "kron", "kron": "kron",
           "blockdiag-baseline": "blockdiag", "blockdiag": "blockdiag"}


class SynthesisError(RuntimeError):
    """Base class for synthesis failures."""


class InfeasibleError(SynthesisError):
    """No certificate at the upper end of the γ bracket."""

    def __init__(self, msg, gamma_hi=None, trace=None):
        super().__init__(msg)
        self.gamma_hi = gamma_hi
        self.trace = trace


class SingularSlackError(SynthesisError):
    """The slack ``F̃ᵈ`` is too ill-conditioned to recover gains."""


class VerificationError(SynthesisError):
    """The recovered controller does not meet the certified γ."""

    def __init__(self, msg, result=None, report=None):
        super().__init__(msg)
        self.result = result
        self.report = report


class NonMonotoneWarning(RuntimeWarning):
    """Feasibility was not monotone in γ along the bisection."""


@dataclass
class SynthesisOptions:
    """Options shared by all synthesis drivers.

    ``gamma_hi = None`` means ``10³·‖T_zw‖∞`` of the open loop when it is
    stable and ``10⁶`` otherwise. ``epsilon = None`` uses the problem's
    automatic strictness ``1e-7·scale``.
    """

    gamma_lo: float = 1e-4
    gamma_hi: float | None = None
    bisect_tol: float = 1e-4
    epsilon: float | None = None
    multiplier_mode: str = "per-eigenvalue"
    structure_mode: str = "kron-structured"
    backend: object = "auto"
    variant: str = "corrected"
    use_rho: bool = False
    solver_tol: float = 1e-8
    dedup_tol: float | None = None
    confirm_monotone: bool = True
    verify: bool = True
    lmi_checks: bool = False

    def __post_init__(self):
        if self.multiplier_mode not in _MULT:
            raise ValueError(f"unknown multiplier_mode {self.multiplier_mode!r}")
        if self.structure_mode not in _STRUCT:
            raise ValueError(f"unknown structure_mode {self.structure_mode!r}")
        if not 0 < self.bisect_tol < 1:
            raise ValueError("bisect_tol must lie in (0, 1)")
        if not self.gamma_lo > 0:
            raise ValueError("gamma_lo must be positive")
        if self.gamma_hi is not None and not self.gamma_hi > self.gamma_lo:
            raise ValueError("gamma_hi must exceed gamma_lo")


@dataclass
class Probe:
    gamma: float
    feasible: bool
    margin: float | None = None
    status: str = ""
    seconds: float = 0.0


class BisectionTrace(list):
    """List of probes with a monotonicity flag."""

    monotone: bool = True

    def decisions(self):
        return [(p.gamma, p.feasible) for p in self]


@dataclass
class SynthesisResult:
    gains: ControllerGains
    gamma_certified: float
    gamma_verified: float
    per_eigenvalue: list
    iterations: BisectionTrace
    variables: dict
    mode: str = ""
    status: str = "success"
    abscissa: float = float("nan")
    timings: dict = field(default_factory=dict)
    verification: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)


# ------------------------------------------------------------------ bisection

def _as_probe(gamma, out):
    if isinstance(out, Probe):
        return out
    if isinstance(out, tuple):
        ok, info = out
        return Probe(gamma, bool(ok), **(info or {}))
    return Probe(gamma, bool(out))


def bisect_gamma(feasible_at, lo, hi, tol=1e-4, confirm=True):
    """Smallest feasible γ in ``[lo, hi]`` to relative accuracy ``tol``.

    Parameters
    ----------
    feasible_at : callable
        ``γ ↦ bool`` (or ``(bool, info)``), assumed monotone.
    lo, hi : float
        Bracket, ``0 < lo < hi``.
    tol : float
        Stop when ``hi/lo ≤ 1 + tol``; geometric midpoints.
    confirm : bool
        Probe once more at ``γ*(1 + 10·tol)``; an infeasible answer there
        means the predicate is not monotone (warning, ``trace.monotone =
        False``).

    Returns
    -------
    gamma_star : float
    trace : BisectionTrace
    """
    if not 0 < lo < hi:
        raise ValueError("need 0 < lo < hi")
    trace = BisectionTrace()

    def probe(g):
        p = _as_probe(g, feasible_at(g))
        p.gamma = g
        trace.append(p)
        return p.feasible

    if not probe(hi):
        raise InfeasibleError(f"infeasible at gamma_hi = {hi:.6g}", hi, trace)
    if probe(lo):
        star = lo
    else:
        a, b = lo, hi
        while b / a > 1 + tol:
            mid = math.sqrt(a * b)
            if probe(mid):
                b = mid
            else:
                a = mid
        star = b
    if confirm and star < hi:
        probe(min(hi, star * (1 + 10 * tol)))
    feas = [p.gamma for p in trace if p.feasible]
    infeas = [p.gamma for p in trace if not p.feasible]
    if feas and infeas and min(feas) < max(infeas):
        trace.monotone = False
        warnings.warn("feasibility is not monotone in gamma along the bisection trace",
                      NonMonotoneWarning, stacklevel=2)
    return star, trace


# ------------------------------------------------------------------ gains

def recover_gains(M_d, F_d, dims: Dimensions, cond_limit=COND_LIMIT) -> ControllerGains:
    """``K̂ = Mᵈ (F̃ᵈ)⁻¹`` split into ``Kᵈ`` (first ``n_u`` rows) and ``Kⁱ``."""
    M_d = np.atleast_2d(np.asarray(M_d, dtype=float))
    F_d = np.atleast_2d(np.asarray(F_d, dtype=float))
    if F_d.shape != (dims.n, dims.n) or M_d.shape != (2 * dims.n_u, dims.n):
        raise ModelError(f"shapes M {M_d.shape}, F {F_d.shape} do not match dims")
    c = np.linalg.cond(F_d)
    if not np.isfinite(c) or c > cond_limit:
        raise SingularSlackError(f"slack matrix condition number {c:.3g} exceeds {cond_limit:.1g}")
    Kh = np.linalg.solve(F_d.T, M_d.T).T
    return ControllerGains(Kh[:dims.n_u], Kh[dims.n_u:])


# ------------------------------------------------------------------ drivers

def _opts(opts, overrides):
    opts = SynthesisOptions() if opts is None else opts
    return replace(opts, **overrides) if overrides else opts


def _check_system(sys):
    rep = validate(sys)
    if not rep.ok:
        raise ModelError("; ".join(rep.violations))
    bad = sys.unsupported_blocks()
    if bad:
        raise ModelError(f"nonzero interconnected blocks {bad} are not supported by the closed loop")


def default_gamma_hi(sys: HomogeneousSystem) -> float:
    """``10³·‖T_zw‖∞`` of the open loop if stable, else ``10⁶``."""
    g = sys.pattern
    ss = StateSpace(expand(sys.A, g), expand(sys.B_w, g), expand(sys.C_z, g), expand(sys.D_zw, g))
    if spectral_abscissa(ss.A) < 0:
        h = hinf_sweep(ss).norm
        return max(1e3 * h, 1.0)
    return 1e6


def _values(outcome, problem):
    out = {}
    for v in problem.variables:
        val = outcome.value(v)
        if v.is_pair:
            out[v.name + "^d"], out[v.name + "^i"] = val
        else:
            out[v.name + ("" if v.name in ("rho",) else "^d")] = val
    return out


def decomposed_margins(sys, values, lambdas, gamma, opts):
    """Per-eigenvalue margins of the decomposed conditions at given variable values.

    ``values`` maps ``Y^d``, ``Y^i``, ``F^d``, ... to matrices. Returns a list
    of ``(λ, margin)`` with the margin the smallest eigenvalue over that
    eigenvalue's blocks (positive means strictly satisfied).
    """
    p = assemble_decomposed_efbsp(sys, lambdas, gamma, structure=_STRUCT[opts.structure_mode],
                                  multiplier=_MULT[opts.multiplier_mode], variant=opts.variant)
    assign = {}
    for v in p.variables:
        if v.is_pair:
            assign[v] = (values.get(v.name + "^d"), values.get(v.name + "^i",
                                                                np.zeros(v.shape)))
        else:
            assign[v] = values[v.name + "^d"]
    out = []
    for lam in lambdas:
        tag = f"lam={lam:.12g}"
        m = min(c.margin(assign) for c in p.constraints if c.name.endswith(f"[{tag}]"))
        out.append((lam, m))
    return out


def _run(sys, opts, build, mode, lambdas):
    t0 = time.perf_counter()
    _check_system(sys)
    lo = opts.gamma_lo
    hi = default_gamma_hi(sys) if opts.gamma_hi is None else opts.gamma_hi
    hi = max(hi, 10 * lo)
    last = {}
    solve_time = [0.0]

    def feasible_at(g):
        p = build(g)
        out = solve(p, opts.backend, margin=True, tol=opts.solver_tol)
        solve_time[0] += out.seconds
        if out.feasible:
            last[g] = (p, out)
        return Probe(g, out.feasible, out.margin, out.status, out.seconds)

    if opts.use_rho:
        p = build(None)
        out = solve(p, opts.backend, tol=opts.solver_tol)
        solve_time[0] += out.seconds
        trace = BisectionTrace()
        if not out.feasible or out.objective is None or out.objective <= 0:
            trace.append(Probe(float("nan"), False, None, out.status, out.seconds))
            raise InfeasibleError(f"rho maximisation returned {out.status}", None, trace)
        star = 1.0 / math.sqrt(out.objective)
        trace.append(Probe(star, True, None, out.status, out.seconds))
        last[star] = (p, out)
    else:
        star, trace = bisect_gamma(feasible_at, lo, hi, opts.bisect_tol, opts.confirm_monotone)
    p, out = last[star]
    values = _values(out, p)
    dims = sys.dims
    gains = recover_gains(values["M^d"], values["F^d"], dims)
    t_synth = time.perf_counter() - t0
    per_eig = []
    if lambdas is not None:
        per_eig = decomposed_margins(sys, values, lambdas, star, opts)
    res = SynthesisResult(gains=gains, gamma_certified=float(star), gamma_verified=float("nan"),
                          per_eigenvalue=per_eig, iterations=trace, variables=values, mode=mode,
                          timings={"synthesis": t_synth, "solver": solve_time[0]},
                          solver={"backend": str(opts.backend), "margin": out.margin,
                                  "residual": out.residual, "strictness": out.strictness})
    t1 = time.perf_counter()
    rep = verify_certificate(sys, gains, star, lmi_checks=opts.lmi_checks, backend=opts.backend)
    res.timings["verification"] = time.perf_counter() - t1
    res.timings["total"] = time.perf_counter() - t0
    res.gamma_verified = float(rep.hinf)
    res.abscissa = float(rep.abscissa)
    res.verification = rep.as_dict()
    if opts.verify and not rep.passed:
        res.status = "verification-failed"
        raise VerificationError("certificate verification failed: " + "; ".join(rep.failures), res, rep)
    return res


def _lambdas(sys, opts):
    return sym_eig(sys.pattern, opts.dedup_tol).distinct_values


def synth_decomposed(sys: HomogeneousSystem, opts: SynthesisOptions | None = None, **overrides):
    """γ-bisection over the per-eigenvalue conditions with shared variables.

    Raises
    ------
    InfeasibleError, SingularSlackError, VerificationError, ModelError
    """
    opts = _opts(opts, overrides)
    lams = _lambdas(sys, opts)
    struct, mult = _STRUCT[opts.structure_mode], _MULT[opts.multiplier_mode]

    def build(g):
        return assemble_decomposed_efbsp(sys, lams, g, structure=struct, multiplier=mult,
                                         variant=opts.variant, strictness=opts.epsilon,
                                         rho=opts.use_rho, rho_cap=1.0 / opts.gamma_lo ** 2)

    return _run(sys, opts, build, f"decomposed/{struct}/{mult}", lams)


def synth_blockdiag_baseline(sys: HomogeneousSystem, opts: SynthesisOptions | None = None, **overrides):
    """Decomposed synthesis with ``Yⁱ = Q̃ⁱ = S̃ⁱ = R̃ⁱ = 0`` (block-diagonal variables)."""
    opts = _opts(opts, overrides)
    opts = replace(opts, structure_mode="blockdiag-baseline")
    return synth_decomposed(sys, opts)


def synth_full_dual(sys: HomogeneousSystem, opts: SynthesisOptions | None = None, *, structured=True,
                    max_subsystems=FULL_GUARD, **overrides):
    """Same pipeline on the undecomposed network-size conditions (N ≤ 12)."""
    opts = _opts(opts, overrides)
    if sys.N > max_subsystems:
        raise ValueError(f"full-size synthesis is guarded to N ≤ {max_subsystems} (got {sys.N})")
    if _MULT[opts.multiplier_mode] != "all" or _STRUCT[opts.structure_mode] != "kron":
        raise ValueError("the full-size path supports the per-eigenvalue, kron-structured setting only")

    def build(g):
        return assemble_dual_efbsp(sys, g, structured, variant=opts.variant, strictness=opts.epsilon,
                                   rho=opts.use_rho, rho_cap=1.0 / opts.gamma_lo ** 2,
                                   max_subsystems=max_subsystems)

    lams = _lambdas(sys, opts) if structured else None
    return _run(sys, opts, build, "full" if structured else "full/unstructured", lams)


# ------------------------------------------------------------------ patterns

def _commuting_system(P):
    N = P.shape[0]
    idx = [(i, j) for i in range(N) for j in range(i + 1, N)]
    rows = []
    for a in range(N):
        for b in range(N):
            # (P P1 − P1 P)[a, b] as a linear form in the upper-triangle bits
            r = np.zeros(len(idx))
            for k, (i, j) in enumerate(idx):
                # P1 = Σ x_k (e_i e_jᵀ + e_j e_iᵀ)
                r[k] += P[a, i] * (b == j) + P[a, j] * (b == i)
                r[k] -= (a == i) * P[j, b] + (a == j) * P[i, b]
            if np.any(r):
                rows.append(r)
    L = np.array(rows) if rows else np.zeros((0, len(idx)))
    return idx, L


def _rref(L, tol=1e-9):
    L = L.astype(float).copy()
    m, n = L.shape
    pivots, r = [], 0
    for c in range(n):
        if r >= m:
            break
        k = r + int(np.argmax(np.abs(L[r:, c])))
        if abs(L[k, c]) <= tol:
            continue
        L[[r, k]] = L[[k, r]]
        L[r] /= L[r, c]
        for i in range(m):
            if i != r and L[i, c] != 0:
                L[i] -= L[i, c] * L[r]
        pivots.append(c)
        r += 1
    return L[:r], pivots


def find_commuting_pattern(g: PatternGraph, max_n=8) -> PatternGraph:
    """Densest binary symmetric zero-diagonal ``P₁ ≠ P`` commuting with ``P``.

    Exact search: the commuting condition is linear in the upper-triangle bits,
    so the pivot bits are functions of the free bits; a depth-first search over
    the free bits prunes with interval bounds on the pivots. Ties are broken by
    the lexicographically smallest upper-triangle bit string.
    """
    P = g.P if isinstance(g, PatternGraph) else np.asarray(g, dtype=float)
    N = P.shape[0]
    if N > max_n:
        raise ValueError(f"commuting-pattern search is limited to N ≤ {max_n}")
    idx, L = _commuting_system(P)
    m = len(idx)
    if m == 0:
        raise ValueError("no candidate other than the pattern itself")
    R, pivots = _rref(L) if L.shape[0] else (np.zeros((0, m)), [])
    free = [k for k in range(m) if k not in pivots]
    # x_pivot[r] = −Σ_f R[r, f] x_f
    coef = -R[:, free] if len(pivots) else np.zeros((0, len(free)))
    Pbits = np.array([P[i, j] for i, j in idx])
    best = {"count": -1, "bits": None}
    nf = len(free)
    pos = np.clip(coef, 0, None)
    neg = np.clip(coef, None, 0)
    # suffix sums for interval bounds over the unfixed free bits
    pos_suf = np.zeros((nf + 1, coef.shape[0]))
    neg_suf = np.zeros((nf + 1, coef.shape[0]))
    for k in range(nf - 1, -1, -1):
        pos_suf[k] = pos_suf[k + 1] + pos[:, k]
        neg_suf[k] = neg_suf[k + 1] + neg[:, k]
    tol = 1e-7

    def leaf(xf):
        x = np.zeros(m)
        x[free] = xf
        if len(pivots):
            xp = coef @ xf
            rx = np.round(xp)
            if np.any(np.abs(xp - rx) > tol) or np.any((rx != 0) & (rx != 1)):
                return
            x[pivots] = rx
        if np.array_equal(x, Pbits):
            return
        cnt = int(x.sum())
        if cnt > best["count"] or (cnt == best["count"] and tuple(x) < tuple(best["bits"])):
            best["count"], best["bits"] = cnt, x.copy()

    xf = np.zeros(nf)

    def dfs(k, partial, ones):
        if len(pivots):
            lo_b = partial + neg_suf[k]
            hi_b = partial + pos_suf[k]
            if np.any(hi_b < -tol) or np.any(lo_b > 1 + tol):
                return
            piv_possible = int(np.sum(hi_b >= 1 - tol))
        else:
            piv_possible = 0
        if ones + (nf - k) + piv_possible < best["count"]:
            return
        if k == nf:
            leaf(xf.copy())
            return
        for bit in (1.0, 0.0):
            xf[k] = bit
            dfs(k + 1, partial + bit * coef[:, k] if len(pivots) else partial, ones + int(bit))
        xf[k] = 0.0

    dfs(0, np.zeros(coef.shape[0]), 0)
    if best["bits"] is None:
        raise ValueError("no commuting pattern other than P exists")
    P1 = np.zeros((N, N), dtype=int)
    for k, (i, j) in enumerate(idx):
        P1[i, j] = P1[j, i] = int(best["bits"][k])
    return PatternGraph(P1)
