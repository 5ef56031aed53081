"""Structured linear algebra on pattern matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DecomposableMatrix, PatternGraph, ModelError

__all__ = ["kron", "EigenStructure", "sym_eig", "congruence_diagonalize",
           "block_diag_assemble", "star", "default_dedup_tol"]


def kron(a, b):
    """Kronecker product ``a ⊗ b``."""
    return np.kron(np.atleast_2d(a), np.atleast_2d(b))


@dataclass(frozen=True, eq=False)
class EigenStructure:
    """Spectral data of a symmetric pattern.

    Attributes
    ----------
    eigenvalues : ndarray
        Ascending eigenvalues λ₁ ≤ … ≤ λ_N.
    basis : ndarray
        Orthonormal Z with ``Zᵀ P Z = diag(eigenvalues)``.
    distinct : list of (float, int)
        Representative value and multiplicity of each cluster of eigenvalues
        closer than ``tol``.
    tol : float
        Dedup tolerance used.
    """

    eigenvalues: np.ndarray
    basis: np.ndarray
    distinct: list
    tol: float

    @property
    def distinct_values(self):
        return [lam for lam, _ in self.distinct]

    @property
    def lambda_min(self):
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self):
        return float(self.eigenvalues[-1])


def default_dedup_tol(eigenvalues):
    rho = float(np.max(np.abs(eigenvalues))) if len(eigenvalues) else 0.0
    return 1e-9 * max(1.0, rho)


def sym_eig(g, tol=None) -> EigenStructure:
    """Eigendecomposition of the pattern matrix with eigenvalue dedup.

    Parameters
    ----------
    g : PatternGraph or array_like
        Symmetric pattern.
    tol : float, optional
        Values within ``tol`` of the previous cluster member are merged.
        Defaults to ``1e-9·max(1, ρ(P))``.
    """
    P = g.P if isinstance(g, PatternGraph) else np.asarray(g, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ModelError("pattern must be square")
    if not np.array_equal(P, P.T):
        raise ModelError("pattern matrix is not symmetric")
    if not np.any(P):
        N = P.shape[0]
        lam, Z = np.zeros(N), np.eye(N)
    else:
        lam, Z = np.linalg.eigh(P)
    # exact integer structure: clean tiny noise around zero
    lam = np.where(np.abs(lam) < 1e-14 * max(1.0, np.abs(lam).max()), 0.0, lam)
    if tol is None:
        tol = default_dedup_tol(lam)
    clusters = []
    for v in lam:
        if clusters and v - clusters[-1][-1] <= tol:
            clusters[-1].append(v)
        else:
            clusters.append([v])
    distinct = []
    for c in clusters:
        rep = float(np.mean(c))
        # snap to a nearby integer so zero eigenvalues are exactly zero
        if abs(rep - round(rep)) <= tol:
            rep = float(round(rep))
        distinct.append((rep, len(c)))
    return EigenStructure(lam, Z, distinct, float(tol))


def congruence_diagonalize(m: DecomposableMatrix, e: EigenStructure):
    """Diagonal blocks ``M^d + λ_h M^i`` of ``(Z⊗I)ᵀ expand(m) (Z⊗I)``.

    Returns one block per eigenvalue, in the order of ``e.eigenvalues``.
    """
    return [m.d + lam * m.i for lam in e.eigenvalues]


def block_diag_assemble(blocks):
    """Inverse helper: dense block-diagonal matrix from a list of blocks."""
    from scipy.linalg import block_diag
    return block_diag(*blocks)


def star(u, w):
    """``⋆ᵀ w u = uᵀ w u``."""
    u = np.atleast_2d(u)
    w = np.atleast_2d(w)
    if w.shape[0] != w.shape[1] or w.shape[1] != u.shape[0]:
        raise ValueError(f"star: shapes {u.shape} and {w.shape} do not conform")
    return u.T @ w @ u
