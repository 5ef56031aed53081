"""Conic solver backends.

A backend exposes four calls: `add_free` (declare free scalars), `add_psd`
(declare ``F0 + Σ x_k F_k ⪰ 0``), `set_objective` (minimise ``cᵀx``) and
`solve`. Blocks of size one are passed to the solver as nonnegative cones.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = ["BackendResult", "Backend", "ClarabelBackend", "CvxoptBackend",
           "AutoBackend", "make_backend", "BACKENDS"]


@dataclass
class BackendResult:
    """Raw solver answer. ``status`` ∈ {solved, inaccurate, infeasible, unbounded, failed}."""

    status: str
    x: np.ndarray | None
    message: str = ""
    info: dict = field(default_factory=dict)


class Backend:
    """Base class collecting the conic data."""

    name = "base"

    def __init__(self, tol=1e-8, max_iter=200, verbose=False):
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self.verbose = verbose
        self.n = 0
        self.blocks = []  # (F0 (m×m), cols (k,), Fs (k×m×m))
        self.c = None

    def add_free(self, count):
        start = self.n
        self.n += int(count)
        return np.arange(start, self.n)

    def add_psd(self, F0, cols, Fs):
        F0 = np.asarray(F0, dtype=float)
        Fs = np.asarray(Fs, dtype=float).reshape((len(cols),) + F0.shape)
        self.blocks.append((F0, np.asarray(cols, dtype=int), Fs))

    def set_objective(self, c):
        self.c = np.asarray(c, dtype=float)

    def solve(self) -> BackendResult:
        raise NotImplementedError


def _svec_index(m):
    # upper triangle, column-major; off-diagonals scaled by √2
    rows, cols = [], []
    for j in range(m):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    rows, cols = np.array(rows), np.array(cols)
    scale = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return rows, cols, scale


class ClarabelBackend(Backend):
    """Clarabel interior-point solver (PSD triangle cones)."""

    name = "clarabel"

    def solve(self):
        import clarabel

        n = self.n
        c = np.zeros(n) if self.c is None else self.c
        Arows, b_parts, cones = [], [], []
        nonneg_A, nonneg_b = [], []
        for F0, cols, Fs in self.blocks:
            m = F0.shape[0]
            if m == 1:
                row = np.zeros(n)
                np.add.at(row, cols, -Fs[:, 0, 0])
                nonneg_A.append(row)
                nonneg_b.append(F0[0, 0])
                continue
            r, cc, s = _svec_index(m)
            A = np.zeros((len(r), n))
            # s = b - A x = svec(F0 + Σ x_k F_k)
            A[:, cols] = -(Fs[:, r, cc] * s).T
            Arows.append(A)
            b_parts.append(F0[r, cc] * s)
            cones.append(clarabel.PSDTriangleConeT(m))
        blocks_A, blocks_b, all_cones = [], [], []
        if nonneg_A:
            blocks_A.append(np.array(nonneg_A))
            blocks_b.append(np.array(nonneg_b))
            all_cones.append(clarabel.NonnegativeConeT(len(nonneg_A)))
        blocks_A += Arows
        blocks_b += b_parts
        all_cones += cones
        if not blocks_A:
            return BackendResult("solved", np.zeros(n), "no constraints")
        A = sp.csc_matrix(np.vstack(blocks_A))
        b = np.concatenate(blocks_b)
        st = clarabel.DefaultSettings()
        st.verbose = self.verbose
        st.max_iter = self.max_iter
        st.tol_gap_abs = st.tol_gap_rel = self.tol
        st.tol_feas = self.tol
        st.presolve_enable = False
        try:
            solver = clarabel.DefaultSolver(sp.csc_matrix((n, n)), c, A, b, all_cones, st)
            sol = solver.solve()
        except Exception as exc:  # noqa: BLE001 - surfaced as a status
            return BackendResult("failed", None, f"clarabel raised: {exc}")
        status = str(sol.status)
        x = np.array(sol.x, dtype=float)
        info = {"iterations": sol.iterations, "solve_time": sol.solve_time, "raw_status": status}
        mapping = {"Solved": "solved", "AlmostSolved": "inaccurate",
                   "PrimalInfeasible": "infeasible", "AlmostPrimalInfeasible": "infeasible",
                   "DualInfeasible": "unbounded", "AlmostDualInfeasible": "unbounded"}
        st_ = mapping.get(status, "inaccurate" if np.all(np.isfinite(x)) and len(x) else "failed")
        return BackendResult(st_, x if st_ in ("solved", "inaccurate") else None, status, info)


class CvxoptBackend(Backend):
    """CVXOPT ``solvers.sdp`` (full column-major matrix constraints)."""

    name = "cvxopt"
    fallback = True

    def solve(self):
        import cvxopt
        from cvxopt import solvers

        n = self.n
        c = np.zeros(n) if self.c is None else self.c
        # scalars that appear nowhere make the KKT system singular; pin them to 0
        used = np.zeros(n, dtype=bool)
        used[c != 0] = True
        for _, cols, Fs in self.blocks:
            used[np.asarray(cols)[np.any(Fs != 0, axis=(1, 2))]] = True
        keep = np.flatnonzero(used)
        pos = np.full(n, -1)
        pos[keep] = np.arange(len(keep))
        n, c = len(keep), c[keep]
        if n == 0:
            ok = all(np.linalg.eigvalsh(F0).min() >= -self.tol for F0, _, _ in self.blocks)
            return BackendResult("solved" if ok else "infeasible", np.zeros(self.n), "no variables")
        Gl, hl, Gs, hs = [], [], [], []
        for F0, cols, Fs in self.blocks:
            sel = pos[np.asarray(cols)] >= 0
            cols, Fs = pos[np.asarray(cols)][sel], Fs[sel]
            m = F0.shape[0]
            if m == 1:
                row = np.zeros(n)
                np.add.at(row, cols, -Fs[:, 0, 0])
                Gl.append(row)
                hl.append(F0[0, 0])
                continue
            G = np.zeros((m * m, n))
            # h - G x = F0 + Σ x_k F_k, column-major vec
            G[:, cols] = -Fs.transpose(0, 2, 1).reshape(len(cols), m * m).T
            Gs.append(cvxopt.matrix(G))
            hs.append(cvxopt.matrix(F0))
        kw = {}
        if Gl:
            kw["Gl"] = cvxopt.matrix(np.array(Gl))
            kw["hl"] = cvxopt.matrix(np.array(hl, dtype=float))
        if Gs:
            kw["Gs"], kw["hs"] = Gs, hs
        if not kw:
            return BackendResult("solved", np.zeros(n), "no constraints")
        opts = {"show_progress": self.verbose, "abstol": self.tol, "reltol": self.tol,
                "feastol": self.tol, "maxiters": self.max_iter}
        try:
            sol = solvers.sdp(cvxopt.matrix(c), options=opts, **kw)
        except Exception as exc:  # noqa: BLE001
            # cvxopt can break down when the dual residual stalls; Clarabel
            # (homogeneous embedding) is the fallback, recorded in info
            if not self.fallback:
                return BackendResult("failed", None, f"cvxopt raised: {exc}")
            inner = ClarabelBackend(tol=self.tol, max_iter=self.max_iter, verbose=self.verbose)
            inner.n, inner.blocks, inner.c = self.n, self.blocks, self.c
            res = inner.solve()
            res.info["fallback"] = f"clarabel after cvxopt raised: {exc}"
            return res
        status = sol["status"]
        x = None
        if sol["x"] is not None:
            x = np.zeros(self.n)
            x[keep] = np.array(sol["x"]).reshape(-1)
        mapping = {"optimal": "solved", "primal infeasible": "infeasible",
                   "dual infeasible": "unbounded", "unknown": "inaccurate"}
        return BackendResult(mapping.get(status, "failed"), x, status,
                             {"iterations": sol.get("iterations")})


class AutoBackend(Backend):
    """Clarabel for small blocks, CVXOPT once any block exceeds `switch` rows.

    Clarabel factors a KKT system whose PSD part grows with the square of the
    svec length, so large single blocks are cheaper through CVXOPT's Schur
    complement.
    """

    name = "auto"
    switch = 40

    def solve(self):
        big = max((F0.shape[0] for F0, _, _ in self.blocks), default=0)
        cls = CvxoptBackend if big > self.switch else ClarabelBackend
        inner = cls(tol=self.tol, max_iter=self.max_iter, verbose=self.verbose)
        inner.n, inner.blocks, inner.c = self.n, self.blocks, self.c
        res = inner.solve()
        res.info["backend"] = cls.name
        return res


BACKENDS = {"auto": AutoBackend, "clarabel": ClarabelBackend, "cvxopt": CvxoptBackend}


def make_backend(spec=None, **kw) -> Backend:
    """Fresh backend from a name, a Backend subclass, or an instance (reset)."""
    if spec is None:
        spec = "auto"
    if isinstance(spec, str):
        try:
            return BACKENDS[spec](**kw)
        except KeyError:
            raise ValueError(f"unknown backend {spec!r}; choose from {sorted(BACKENDS)}") from None
    if isinstance(spec, type) and issubclass(spec, Backend):
        return spec(**kw)
    if isinstance(spec, Backend):
        return type(spec)(tol=spec.tol, max_iter=spec.max_iter, verbose=spec.verbose)
    raise TypeError("backend must be a name, a Backend subclass or instance")
