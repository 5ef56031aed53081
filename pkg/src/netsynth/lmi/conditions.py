"""Assembly of the analysis and synthesis matrix inequalities.

Every condition is built as a quadratic form ``Oᵀ M O`` from its middle
matrix and outer factor through `quad_form`. Two variants exist for the dual
(synthesis) conditions:

``"corrected"`` (default)
    Multiplier condition on ``[I; −𝒫]``; middle blocks ``(3,4) = F̃ᵀ − Y`` and
    ``(4,3) = F̃ − Y``; performance rows ``−[ℬ₁ᵀ, 0, 𝒟₁₁ᵀ, 𝒟₂₁ᵀ]`` and
    ``−[ℬ₂ᵀ, 0, 𝒟₁₂ᵀ, 𝒟₂₂ᵀ]``. Feasibility implies the ``γ`` bound.
``"printed"``
    Multiplier condition on ``[I; 𝒫]`` and ``(3,4) = F̃ − Y``,
    ``(4,3) = F̃ᵀ − Y``. Kept for comparison only; it is not a sufficient
    condition and may certify ``γ`` below the true norm.

In both variants the slack ``F̃`` of the middle blocks (1,3) and (2,4) is
absorbed into the first two outer rows, which is where the substitution
``M = K̂ F̃`` makes the outer factor affine.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import (ClosedLoopSystem, HomogeneousSystem,
                     UnsupportedCouplingError, channel_maps, subsystem_plant)
from .expr import AffineExpr, DecisionVar, kron, quad_form
from .problem import LmiProblem

__all__ = ["VARIANTS", "LocalData", "local_data", "DualVars", "declare_dual_vars",
           "eigen_multiplier_polynomial", "multiplier_condition", "dual_nominal",
           "add_eigenvalue_conditions", "assemble_decomposed_efbsp",
           "assemble_dual_efbsp", "assemble_fbsp_analysis", "assemble_primal_efbsp",
           "structured_multiplier_matrix"]

VARIANTS = ("corrected", "printed")


def _check_variant(variant):
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")


@dataclass(frozen=True, eq=False)
class LocalData:
    """Constant subsystem-level closed-loop pieces (everything except ``K̂``)."""

    n: int
    n_u: int
    n_q: int
    n_w: int
    n_z: int
    A_d: np.ndarray      # A^d
    B_hat: np.ndarray    # [B_u^d, B_u^i]
    C_q: np.ndarray
    D_qu: np.ndarray     # n_q × 2n_u
    C_zd: np.ndarray
    D_zu_hat: np.ndarray  # [D_zu^d, D_zu^i]
    B1: np.ndarray
    B2: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    D21: np.ndarray
    D22: np.ndarray


def _data_scale(*arrays):
    return max([1.0] + [float(np.max(np.abs(a), initial=0.0)) for a in arrays])


def data_scale(ld: LocalData) -> float:
    """Largest plant entry (at least 1); fixes ε independently of γ."""
    return _data_scale(ld.A_d, ld.B_hat, ld.C_zd, ld.D_zu_hat, ld.B1, ld.B2, ld.D21)


def local_data(plant) -> LocalData:
    """Closed-loop building blocks from a SubsystemPlant (or a HomogeneousSystem)."""
    if isinstance(plant, HomogeneousSystem):
        bad = plant.unsupported_blocks()
        if bad:
            raise UnsupportedCouplingError(f"nonzero interconnected blocks {bad} are not supported")
        plant = subsystem_plant(plant)
    dm = plant.dims
    n, nu = dm.n, dm.n_u
    B_ui = plant.B_ph[:, n:]
    D_zui = plant.D_zph[:, n:]
    if np.any(B_ui) or np.any(D_zui):
        raise UnsupportedCouplingError("B_u^i and D_zu^i must be zero")
    Cq, Dq = channel_maps(dm)
    return LocalData(
        n=n, n_u=nu, n_q=dm.n_q, n_w=dm.n_w, n_z=dm.n_z,
        A_d=plant.A_h, B_hat=np.hstack([plant.B_uh, B_ui]), C_q=Cq, D_qu=Dq,
        C_zd=plant.C_zh, D_zu_hat=np.hstack([plant.D_zuh, D_zui]),
        B1=np.hstack([plant.B_ph[:, :n], plant.B_uh]), B2=plant.B_wh,
        D11=np.zeros((dm.n_q, dm.n_q)), D12=np.zeros((dm.n_q, dm.n_w)),
        D21=np.hstack([plant.D_zph[:, :n], plant.D_zuh]), D22=np.zeros((dm.n_z, dm.n_w)),
    )


@dataclass
class DualVars:
    """Decision variables shared by all eigenvalue blocks."""

    Y: DecisionVar
    F: DecisionVar
    M: DecisionVar
    Q: DecisionVar
    S: DecisionVar
    R: DecisionVar
    rho: DecisionVar | None = None

    def all(self):
        return [v for v in (self.Y, self.F, self.M, self.Q, self.S, self.R, self.rho) if v is not None]


def declare_dual_vars(problem, ld: LocalData, structure="kron", multiplier="all", rho=False):
    """Declare ``Y, F̃ᵈ, Mᵈ, Q̃, S̃, R̃`` on ``problem``.

    ``structure='kron'`` uses pair variables (``Xᵈ, Xⁱ``); ``'blockdiag'``
    declares the diagonal blocks only. ``multiplier='extremes'`` drops
    ``R̃ⁱ``.
    """
    if structure not in ("kron", "blockdiag"):
        raise ValueError("structure must be 'kron' or 'blockdiag'")
    if multiplier not in ("all", "extremes"):
        raise ValueError("multiplier must be 'all' or 'extremes'")
    pair = structure == "kron"
    sp, fp = ("symmetric-pair", "full-pair") if pair else ("symmetric", "full")
    Y = problem.var("Y", ld.n, structure=sp)
    F = problem.var("F", ld.n, ld.n, structure="full")
    M = problem.var("M", 2 * ld.n_u, ld.n, structure="full")
    Q = problem.var("Q", ld.n_q, structure=sp)
    S = problem.var("S", ld.n_q, ld.n_q, structure=fp)
    R = problem.var("R", ld.n_q, structure=sp if multiplier == "all" else "symmetric")
    r = problem.var("rho", 1, structure="symmetric") if rho else None
    return DualVars(Y, F, M, Q, S, R, r)


def eigen_multiplier_polynomial(v: DualVars, lam):
    """``Q̃ᵈ + λ(Q̃ⁱ − S̃ᵈᵀ − S̃ᵈ) + λ²(−S̃ⁱᵀ − S̃ⁱ + R̃ᵈ) + λ³R̃ⁱ``."""
    Q, S, R = v.Q, v.S, v.R
    return (Q.d + lam * (Q.i - S.d.T - S.d) + lam ** 2 * (-S.i.T - S.i + R.d)
            + lam ** 3 * R.i)


def structured_multiplier_matrix(Qd, Qi, Sd, Si, Rd, Ri, P):
    """Dense ``[[Q̃, S̃], [S̃ᵀ, R̃]]`` with ``X̃ = I⊗Xᵈ + P⊗Xⁱ``."""
    N = P.shape[0]
    I = np.eye(N)
    Q = np.kron(I, Qd) + np.kron(P, Qi)
    S = np.kron(I, Sd) + np.kron(P, Si)
    R = np.kron(I, Rd) + np.kron(P, Ri)
    return np.block([[Q, S], [S.T, R]])


def multiplier_condition(Q, S, R, Pmat, variant="corrected"):
    """``⋆ᵀ [[Q̃, S̃], [S̃ᵀ, R̃]] [I; ∓𝒫]`` (must be ≺ 0)."""
    _check_variant(variant)
    sgn = -1.0 if variant == "corrected" else 1.0
    nq = Pmat.shape[0]
    outer = [[np.eye(nq)], [sgn * Pmat]]
    return quad_form(outer, {(0, 0): Q, (0, 1): S, (1, 0): S.T, (1, 1): R})


def dual_nominal(AF, C1F, C2F, B1, D11, D12, B2, D21, D22, F, Y, Q, S, R, perf, variant="corrected"):
    """Dual nominal quadratic form (must be ≻ 0).

    Parameters
    ----------
    AF, C1F, C2F : AffineExpr
        ``𝒜F̃``, ``𝒞₁F̃``, ``𝒞₂F̃`` after the substitution ``M = K̂F̃``.
    B1, D11, D12, B2, D21, D22 : ndarray
    F, Y, Q, S, R : AffineExpr
        Slack, Lyapunov and multiplier blocks (already λ-instantiated for the
        decomposed form, or Kronecker-expanded for the full form).
    perf : float or AffineExpr
        ``1/γ²`` (scalar) or a ``1×1`` expression (``ρ``).
    """
    _check_variant(variant)
    n = F.shape[0]
    nq, nz, nw = C1F.shape[0], C2F.shape[0], B2.shape[1]
    Z = np.zeros
    I = np.eye
    # rows 1-2 carry F̃ᵀ·[−𝒜ᵀ, 0, −𝒞₁ᵀ, −𝒞₂ᵀ]
    r1 = [-AF.T, Z((n, n)), -C1F.T, -C2F.T]
    # the performance rows pair 𝒟₂₁ with the p-column and 𝒟₁₂ with the w-column
    r5 = [-B1.T, Z((B1.shape[1], n)), -D11.T, -D21.T]
    r7 = [-B2.T, Z((nw, n)), -D12.T, -D22.T]
    if variant == "corrected":
        m34, m43 = F.T - Y, F - Y
    else:
        m34, m43 = F - Y, F.T - Y
    outer = [
        r1, r1,
        [I(n), Z((n, n)), Z((n, nq)), Z((n, nz))],
        [Z((n, n)), I(n), Z((n, nq)), Z((n, nz))],
        r5,
        [Z((nq, n)), Z((nq, n)), I(nq), Z((nq, nz))],
        r7,
        [Z((nz, n)), Z((nz, n)), Z((nz, nq)), I(nz)],
    ]
    if isinstance(perf, AffineExpr):
        pblk = -kron(np.eye(nw), perf)
    else:
        pblk = -float(perf) * np.eye(nw)
    middle = {
        (0, 2): np.eye(n), (2, 0): np.eye(n),
        (1, 3): np.eye(n), (3, 1): np.eye(n),
        (2, 3): m34, (3, 2): m43, (3, 3): F + F.T,
        (4, 4): Q, (4, 5): S, (5, 4): S.T, (5, 5): R,
        (6, 6): pblk, (7, 7): np.eye(nz),
    }
    return quad_form(outer, middle)


def _perf(gamma, v):
    if v.rho is not None:
        return v.rho.expr
    if gamma is None or not gamma > 0:
        raise ValueError("gamma must be positive")
    return 1.0 / float(gamma) ** 2


def add_eigenvalue_conditions(problem, v: DualVars, ld: LocalData, lam, gamma,
                              variant="corrected", multiplier=True, tag=None):
    """Add the nominal, Lyapunov and (optionally) multiplier blocks for one λ."""
    tag = f"lam={lam:.12g}" if tag is None else tag
    F = v.F.d
    AF = ld.A_d @ F + ld.B_hat @ v.M.d
    C1F = ld.C_q @ F + ld.D_qu @ v.M.d
    C2F = ld.C_zd @ F + ld.D_zu_hat @ v.M.d
    nom = dual_nominal(AF, C1F, C2F, ld.B1, ld.D11, ld.D12, ld.B2, ld.D21, ld.D22,
                       F, v.Y.at(lam), v.Q.at(lam), v.S.at(lam), v.R.at(lam),
                       _perf(gamma, v), variant)
    problem.add(nom, ">", f"nominal[{tag}]")
    problem.add(v.Y.at(lam), ">", f"lyapunov[{tag}]")
    if multiplier:
        problem.add(eigen_multiplier_polynomial(v, lam), "<", f"multiplier[{tag}]")


def _common(problem, v, ld, multiplier, rho_cap):
    problem.add(v.F.d + v.F.d.T, ">", "slack")
    if multiplier == "extremes" and v.S.is_pair:
        problem.add(-v.S.i - v.S.i.T + v.R.d, ">", "convexity")
    if v.rho is not None:
        problem.add(v.rho.expr, ">", "rho_pos")
        problem.add(rho_cap - v.rho.expr, ">", "rho_cap")
        problem.maximize(v.rho.expr)


def assemble_decomposed_efbsp(plant, lambdas, gamma, *, structure="kron", multiplier="all",
                              variant="corrected", strictness=None, rho=False, rho_cap=1e8):
    """Per-eigenvalue synthesis problem with shared subsystem-sized variables.

    Parameters
    ----------
    plant : SubsystemPlant or HomogeneousSystem
    lambdas : float or sequence of float
        Distinct eigenvalues of the pattern; each one gets a nominal block,
        a Lyapunov block and (per ``multiplier``) a multiplier block.
    gamma : float or None
        Fixed performance level; ignored when ``rho`` is true.
    structure : {'kron', 'blockdiag'}
    multiplier : {'all', 'extremes'}
        ``'extremes'`` fixes ``R̃ⁱ = 0``, adds ``−S̃ⁱ − S̃ⁱᵀ + R̃ᵈ ⪰ εI`` and
        imposes the multiplier polynomial at the smallest and largest λ only.
    rho : bool
        Maximise ``ρ = 1/γ²`` instead of fixing γ (single SDP).
    """
    _check_variant(variant)
    lams = [float(lambdas)] if np.isscalar(lambdas) else [float(x) for x in lambdas]
    if not lams:
        raise ValueError("need at least one eigenvalue")
    ld = local_data(plant)
    p = LmiProblem(strictness=strictness, name="decomposed-efbsp", scale=data_scale(ld))
    v = declare_dual_vars(p, ld, structure, multiplier, rho)
    lo, hi = min(lams), max(lams)
    for lam in lams:
        use_mult = multiplier == "all" or lam in (lo, hi)
        add_eigenvalue_conditions(p, v, ld, lam, gamma, variant, use_mult)
    _common(p, v, ld, multiplier, rho_cap)
    p.meta.update(vars=v, local=ld, lambdas=lams, gamma=gamma, structure=structure,
                  multiplier=multiplier, variant=variant)
    return p


def assemble_dual_efbsp(sys: HomogeneousSystem, gamma, structured=True, *, variant="corrected",
                        strictness=None, rho=False, rho_cap=1e8, max_subsystems=12):
    """Full-size (undecomposed) synthesis problem.

    With ``structured`` the Lyapunov matrix and multipliers are
    ``I⊗Xᵈ + P⊗Xⁱ``; otherwise they are free symmetric/full matrices of
    network size. ``F̃ = I⊗F̃ᵈ`` and ``M = I⊗Mᵈ`` in both cases.
    """
    _check_variant(variant)
    N = sys.N
    if N > max_subsystems:
        raise ValueError(f"full-size problem guarded to N ≤ {max_subsystems} (got {N})")
    ld = local_data(sys)
    P = sys.pattern.P
    Pm = np.kron(P, np.eye(ld.n_q))
    I_N = np.eye(N)
    p = LmiProblem(strictness=strictness, name="dual-efbsp", scale=data_scale(ld))
    if structured:
        v = declare_dual_vars(p, ld, "kron", "all", rho)
        Y, Q, S, R = (v.Y.kron(P), v.Q.kron(P), v.S.kron(P), v.R.kron(P))
    else:
        Yv = p.var("Y", N * ld.n)
        Fv = p.var("F", ld.n, ld.n, structure="full")
        Mv = p.var("M", 2 * ld.n_u, ld.n, structure="full")
        Qv = p.var("Q", N * ld.n_q)
        Sv = p.var("S", N * ld.n_q, N * ld.n_q, structure="full")
        Rv = p.var("R", N * ld.n_q)
        r = p.var("rho", 1) if rho else None
        v = DualVars(Yv, Fv, Mv, Qv, Sv, Rv, r)
        Y, Q, S, R = Yv.d, Qv.d, Sv.d, Rv.d
    F = v.F.d
    Ft = kron(I_N, F)
    AF = kron(I_N, ld.A_d @ F + ld.B_hat @ v.M.d)
    C1F = kron(I_N, ld.C_q @ F + ld.D_qu @ v.M.d)
    C2F = kron(I_N, ld.C_zd @ F + ld.D_zu_hat @ v.M.d)
    big = lambda m: np.kron(I_N, m)  # noqa: E731
    nom = dual_nominal(AF, C1F, C2F, big(ld.B1), big(ld.D11), big(ld.D12), big(ld.B2),
                       big(ld.D21), big(ld.D22), Ft, Y, Q, S, R, _perf(gamma, v), variant)
    p.add(nom, ">", "nominal")
    p.add(Y, ">", "lyapunov")
    p.add(multiplier_condition(Q, S, R, Pm, variant), "<", "multiplier")
    _common(p, v, ld, "all", rho_cap)
    p.meta.update(vars=v, local=ld, gamma=gamma, structured=structured, variant=variant)
    return p


def _cl_dense(cl: ClosedLoopSystem):
    e = cl.expanded()
    return e, cl.interconnection


def assemble_fbsp_analysis(cl: ClosedLoopSystem, gamma, strictness=None):
    """Full-size analysis problem with unstructured multipliers.

    Variables ``𝒳 ≻ 0``, ``Q``, ``R`` symmetric and ``S`` full; the
    multiplier condition on ``[𝒫; I]`` (≻ 0) and the nominal condition with
    performance block ``diag(−γ²I, I)`` (≺ 0).
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    e, Pm = _cl_dense(cl)
    A, B1, B2 = e["A_cl"], e["B1"], e["B2"]
    C1, D11, D12 = e["C1"], e["D11"], e["D12"]
    C2, D21, D22 = e["C2"], e["D21"], e["D22"]
    nx, nq, nw, nz = A.shape[0], Pm.shape[0], B2.shape[1], C2.shape[0]
    p = LmiProblem(strictness=strictness, name="fbsp-analysis", scale=_data_scale(A, B1, B2, C1, C2, D21))
    X = p.var("X", nx)
    Q = p.var("Q", nq)
    S = p.var("S", nq, nq, structure="full")
    R = p.var("R", nq)
    Z = np.zeros
    I = np.eye
    p.add(X.d, ">", "lyapunov")
    p.add(quad_form([[Pm], [I(nq)]], {(0, 0): Q.d, (0, 1): S.d, (1, 0): S.d.T, (1, 1): R.d}),
          ">", "multiplier")
    outer = [[I(nx), Z((nx, nq)), Z((nx, nw))],
             [A, B1, B2],
             [Z((nq, nx)), I(nq), Z((nq, nw))],
             [C1, D11, D12],
             [Z((nw, nx)), Z((nw, nq)), I(nw)],
             [C2, D21, D22]]
    middle = {(0, 1): X.d, (1, 0): X.d, (2, 2): Q.d, (2, 3): S.d, (3, 2): S.d.T, (3, 3): R.d,
              (4, 4): -float(gamma) ** 2 * I(nw), (5, 5): I(nz)}
    p.add(quad_form(outer, middle), "<", "nominal")
    p.meta.update(gamma=gamma)
    return p


def assemble_primal_efbsp(cl: ClosedLoopSystem, gamma, strictness=None):
    """Full-size primal extended analysis problem with slack ``F``.

    Variables ``X ≻ 0``, ``F`` (with ``F + Fᵀ ⪰ εI``), ``Q``, ``R``, ``S``;
    multiplier condition on ``[𝒫; I]`` and the eight-block nominal condition.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    e, Pm = _cl_dense(cl)
    A, B1, B2 = e["A_cl"], e["B1"], e["B2"]
    C1, D11, D12 = e["C1"], e["D11"], e["D12"]
    C2, D21, D22 = e["C2"], e["D21"], e["D22"]
    nx, nq, nw, nz = A.shape[0], Pm.shape[0], B2.shape[1], C2.shape[0]
    p = LmiProblem(strictness=strictness, name="primal-efbsp", scale=_data_scale(A, B1, B2, C1, C2, D21))
    X = p.var("X", nx)
    F = p.var("F", nx, nx, structure="full")
    Q = p.var("Q", nq)
    S = p.var("S", nq, nq, structure="full")
    R = p.var("R", nq)
    Z = np.zeros
    I = np.eye
    p.add(X.d, ">", "lyapunov")
    p.add(F.d + F.d.T, ">", "slack")
    p.add(quad_form([[Pm], [I(nq)]], {(0, 0): Q.d, (0, 1): S.d, (1, 0): S.d.T, (1, 1): R.d}),
          ">", "multiplier")
    zx = Z((nx, nx))
    outer = [[I(nx), zx, Z((nx, nq)), Z((nx, nw))],
             [zx, I(nx), Z((nx, nq)), Z((nx, nw))],
             [A, zx, B1, B2],
             [A, zx, B1, B2],
             [Z((nq, nx)), Z((nq, nx)), I(nq), Z((nq, nw))],
             [C1, Z((nq, nx)), D11, D12],
             [Z((nw, nx)), Z((nw, nx)), Z((nw, nq)), I(nw)],
             [C2, Z((nz, nx)), D21, D22]]
    Fd = F.d
    middle = {(0, 1): X.d - Fd, (0, 2): Fd,
              (1, 0): X.d - Fd.T, (1, 1): -Fd - Fd.T, (1, 3): Fd,
              (2, 0): Fd.T, (3, 1): Fd.T,
              (4, 4): Q.d, (4, 5): S.d, (5, 4): S.d.T, (5, 5): R.d,
              (6, 6): -float(gamma) ** 2 * I(nw), (7, 7): I(nz)}
    p.add(quad_form(outer, middle), "<", "nominal")
    p.meta.update(gamma=gamma)
    return p
