"""Independent verification: H∞ norm, stability, well-posedness, certificates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ClosedLoopSystem, ControllerGains, HomogeneousSystem, close_loop, dense_closed_loop

__all__ = ["StateSpace", "HinfReport", "hinf_norm", "hinf_sweep", "sigma_max_at",
           "spectral_abscissa", "dualize", "check_wellposed", "VerificationReport",
           "verify_certificate", "VERIFY_RTOL"]

VERIFY_RTOL = 1e-6


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Continuous-time realisation ``(A, B, C, D)``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float).reshape(A.shape[0], -1)
        C = np.asarray(self.C, dtype=float).reshape(-1, A.shape[0])
        D = np.zeros((C.shape[0], B.shape[1])) if self.D is None else np.asarray(self.D, dtype=float)
        D = D.reshape(C.shape[0], B.shape[1])
        if A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        for k, v in zip("ABCD", (A, B, C, D)):
            object.__setattr__(self, k, v)

    @property
    def n(self):
        return self.A.shape[0]


@dataclass
class HinfReport:
    norm: float
    method: str
    peak_frequency: float
    stable: bool
    iterations: int = 0


def spectral_abscissa(A) -> float:
    """Largest real part of the eigenvalues of ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if A.size == 0:
        return -np.inf
    return float(np.max(np.linalg.eigvals(A).real))


def dualize(ss: StateSpace) -> StateSpace:
    """``(Aᵀ, Cᵀ, Bᵀ, Dᵀ)``."""
    return StateSpace(ss.A.T, ss.C.T, ss.B.T, ss.D.T)


def sigma_max_at(ss: StateSpace, w) -> float:
    """Largest singular value of ``C (jωI − A)⁻¹ B + D``."""
    if ss.n == 0:
        return float(np.linalg.norm(ss.D, 2)) if ss.D.size else 0.0
    G = ss.C @ np.linalg.solve(1j * w * np.eye(ss.n) - ss.A, ss.B) + ss.D
    if G.size == 0:
        return 0.0
    return float(np.linalg.norm(G, 2))


def _freq_scale(A):
    ev = np.linalg.eigvals(A)
    r = float(np.max(np.abs(ev))) if ev.size else 1.0
    return r if r > 0 else 1.0


def hinf_sweep(ss: StateSpace, npoints=1000, refine=True) -> HinfReport:
    """Logarithmic frequency sweep plus golden-section refinement.

    The grid spans ``[1e-4, 1e4]·ρ(A)`` and is augmented with ``ω = 0`` and
    the imaginary parts of the eigenvalues of ``A`` so resonances are hit.
    """
    if spectral_abscissa(ss.A) >= 0:
        return HinfReport(np.inf, "frequency-sweep", np.nan, False)
    if not (ss.B.size and ss.C.size):
        return HinfReport(0.0, "frequency-sweep", 0.0, True)
    s = _freq_scale(ss.A)
    ev = np.linalg.eigvals(ss.A)
    grid = np.concatenate([[0.0], s * np.logspace(-4, 4, npoints), np.abs(ev.imag)])
    grid = np.unique(grid)
    vals = np.array([sigma_max_at(ss, w) for w in grid])
    k = int(np.argmax(vals))
    best_w, best = float(grid[k]), float(vals[k])
    if refine:
        # golden-section on every local maximum in the top few
        order = np.argsort(vals)[::-1][:5]
        for k in order:
            lo = grid[max(k - 1, 0)]
            hi = grid[min(k + 1, len(grid) - 1)]
            w, v = _golden_max(lambda w: sigma_max_at(ss, w), lo, hi)
            if v > best:
                best, best_w = v, w
    return HinfReport(best, "frequency-sweep", best_w, True)


def _golden_max(f, a, b, iters=80):
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
        if b - a <= 1e-12 * max(1.0, abs(b)):
            break
    return (c, fc) if fc > fd else (d, fd)


def _hamiltonian(ss, gamma):
    A, B, C, D = ss.A, ss.B, ss.C, ss.D
    R = gamma ** 2 * np.eye(B.shape[1]) - D.T @ D
    Ri = np.linalg.inv(R)
    Ah = A + B @ Ri @ D.T @ C
    return np.block([[Ah, B @ Ri @ B.T],
                     [-C.T @ (np.eye(C.shape[0]) + D @ Ri @ D.T) @ C, -Ah.T]])


def _imag_freqs(ss, gamma, axis_tol):
    H = _hamiltonian(ss, gamma)
    ev = np.linalg.eigvals(H)
    tol = axis_tol * max(1.0, np.linalg.norm(H, 1))
    on = ev[np.abs(ev.real) <= tol]
    return np.sort(np.unique(np.round(np.abs(on.imag), 14)))


def hinf_norm(ss: StateSpace, tol=1e-10, axis_tol=1e-8, max_iter=100) -> HinfReport:
    """H∞ norm by the Hamiltonian imaginary-axis test.

    For ``γ`` above the norm the Hamiltonian has no eigenvalues on the
    imaginary axis. Each iteration tests ``γ = (1 + 2·tol)·γ_lo``; the
    imaginary eigenvalues found bracket frequency intervals whose midpoints
    give the next lower bound (quadratic convergence).

    Parameters
    ----------
    ss : StateSpace
    tol : float
        Relative accuracy of the returned value.
    axis_tol : float
        ``|Re λ| ≤ axis_tol·‖H‖`` counts as imaginary.

    Returns
    -------
    HinfReport
        ``norm = ∞`` and ``stable = False`` if ``A`` is not Hurwitz.
    """
    A = ss.A
    if A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if spectral_abscissa(A) >= 0:
        return HinfReport(np.inf, "hamiltonian-bisection", np.nan, False)
    dnorm = float(np.linalg.norm(ss.D, 2)) if ss.D.size else 0.0
    if not (ss.B.size and ss.C.size) or (not np.any(ss.B) or not np.any(ss.C)):
        return HinfReport(dnorm, "hamiltonian-bisection", np.inf if dnorm else 0.0, True)
    ev = np.linalg.eigvals(A)
    # initial lower bound from ω = 0 and the pole frequencies
    cands = [0.0] + list(np.abs(ev.imag)) + list(np.abs(ev))
    lo, w_peak = dnorm, np.inf
    for w in cands:
        v = sigma_max_at(ss, w)
        if v > lo:
            lo, w_peak = v, w
    if lo == 0.0:
        return HinfReport(0.0, "hamiltonian-bisection", 0.0, True)
    it = 0
    for it in range(1, max_iter + 1):
        gamma = (1 + 2 * tol) * lo
        ws = _imag_freqs(ss, gamma, axis_tol)
        if ws.size == 0:
            break
        # midpoints of consecutive crossings (and the lone crossing itself)
        mids = [ws[0]] if ws.size == 1 else list(0.5 * (ws[:-1] + ws[1:]))
        improved = False
        for w in mids:
            v = sigma_max_at(ss, w)
            if v > lo:
                lo, w_peak, improved = v, w, True
        if not improved:
            # crossings from round-off only; accept
            break
    return HinfReport(float(lo), "hamiltonian-bisection", float(w_peak), True, it)


def check_wellposed(cl) -> bool:
    """``I − 𝒟₁₁𝒫`` invertible.

    Accepts a ClosedLoopSystem or a ``(D11, Pmat)`` pair of dense matrices.
    """
    if isinstance(cl, ClosedLoopSystem):
        e = cl.expanded()
        D11, Pm = e["D11"], cl.interconnection
    else:
        D11, Pm = cl
    M = np.eye(D11.shape[0]) - D11 @ Pm
    s = np.linalg.svd(M, compute_uv=False)
    return bool(s.size == 0 or s[-1] > 1e-12 * max(1.0, s[0]))


@dataclass
class VerificationReport:
    passed: bool
    gamma: float
    hinf: float
    abscissa: float
    stable: bool
    sweep_hinf: float = np.nan
    fbsp_check: str = "skipped"
    efbsp_check: str = "skipped"
    failures: list = field(default_factory=list)

    def as_dict(self):
        return {k: getattr(self, k) for k in
                ("passed", "gamma", "hinf", "abscissa", "stable", "sweep_hinf", "fbsp_check", "efbsp_check", "failures")}


def verify_certificate(sys: HomogeneousSystem, k: ControllerGains, gamma, *, lmi_checks="auto",
                       lmi_size_limit=32, backend=None) -> VerificationReport:
    """Check a controller against a claimed ``γ`` on the dense closed loop.

    The closed loop is formed by direct substitution of ``u = Kx`` into the
    network matrices (independent of `close_loop`). Passing requires a Hurwitz
    closed loop and ``‖T_zw‖∞ ≤ γ·(1 + 1e-6)``. With ``lmi_checks`` the
    unstructured analysis LMIs (full block S-procedure, primal extended form)
    are also solved at ``γ``; their status is reported but does not affect
    ``passed``. ``'auto'`` runs them when ``N·n_q ≤ lmi_size_limit``.
    """
    A, B, C, D = dense_closed_loop(sys, k)
    ss = StateSpace(A, B, C, D)
    a = spectral_abscissa(A)
    rep = VerificationReport(False, float(gamma), np.inf, a, a < 0)
    if a >= 0:
        rep.failures.append("unstable")
        return rep
    h = hinf_norm(ss)
    rep.hinf = h.norm
    rep.sweep_hinf = hinf_sweep(ss).norm
    if not h.norm <= gamma * (1 + VERIFY_RTOL):
        rep.failures.append(f"hinf {h.norm:.6g} exceeds gamma {gamma:.6g}")
    run = lmi_checks
    if lmi_checks == "auto":
        run = sys.N * sys.dims.n_q <= lmi_size_limit and not sys.unsupported_blocks()
    if run:
        from .lmi import assemble_fbsp_analysis, assemble_primal_efbsp, solve
        cl = close_loop(sys, k)
        rep.fbsp_check = solve(assemble_fbsp_analysis(cl, gamma), backend, margin=True).status
        rep.efbsp_check = solve(assemble_primal_efbsp(cl, gamma), backend, margin=True).status
    rep.passed = not rep.failures
    return rep
