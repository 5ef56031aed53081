"""Structured decision variables and affine matrix expressions.

An `AffineExpr` is ``C + Σ_v Σ_k x_{v,k} E_{v,k}`` stored as a constant matrix
and, per variable, a dense coefficient stack of shape ``(k_v, rows, cols)``.
"""
from __future__ import annotations

import itertools

import numpy as np

__all__ = ["DecisionVar", "AffineExpr", "as_expr", "bmat", "kron", "quad_form",
           "symmetrize", "STRUCTURES"]

STRUCTURES = ("symmetric", "full", "symmetric-pair", "full-pair")
_ids = itertools.count()


def _basis(rows, cols, symmetric):
    if symmetric:
        idx = [(i, j) for i in range(rows) for j in range(i, rows)]
        E = np.zeros((len(idx), rows, rows))
        for k, (i, j) in enumerate(idx):
            E[k, i, j] = 1.0
            E[k, j, i] = 1.0
    else:
        E = np.zeros((rows * cols, rows, cols))
        for k in range(rows * cols):
            E[k, k // cols, k % cols] = 1.0
    return E


class DecisionVar:
    """Matrix decision variable.

    Parameters
    ----------
    name : str
    rows, cols : int
    structure : {'symmetric', 'full', 'symmetric-pair', 'full-pair'}
        Symmetric structures use the upper triangle (row-major) as free
        scalars. Pair structures carry two blocks ``X^d`` and ``X^i``; the
        scalars of ``X^d`` come first.
    """

    def __init__(self, name, rows, cols=None, structure="symmetric"):
        if structure not in STRUCTURES:
            raise ValueError(f"unknown structure {structure!r}")
        cols = rows if cols is None else cols
        if structure.startswith("symmetric") and rows != cols:
            raise ValueError("symmetric variables must be square")
        self.name = str(name)
        self.rows, self.cols = int(rows), int(cols)
        self.structure = structure
        self.uid = next(_ids)
        sym = structure.startswith("symmetric")
        self._E = _basis(self.rows, self.cols, sym)
        self.block_size = self._E.shape[0]

    @property
    def is_pair(self):
        return self.structure.endswith("pair")

    @property
    def is_symmetric(self):
        return self.structure.startswith("symmetric")

    @property
    def size(self):
        """Number of free scalars."""
        return self.block_size * (2 if self.is_pair else 1)

    @property
    def shape(self):
        return (self.rows, self.cols)

    def _part(self, which):
        k = self.block_size
        coef = np.zeros((self.size, self.rows, self.cols))
        off = 0 if which == "d" else k
        coef[off:off + k] = self._E
        return AffineExpr(np.zeros(self.shape), {self: coef})

    @property
    def d(self):
        """Diagonal block ``X^d`` (the whole variable when not a pair)."""
        return self._part("d")

    @property
    def i(self):
        """Interconnected block ``X^i``; zero for non-pair variables."""
        if not self.is_pair:
            return AffineExpr(np.zeros(self.shape))
        return self._part("i")

    @property
    def expr(self):
        if self.is_pair:
            raise TypeError(f"{self.name} is a pair; use .d, .i, .at(lam) or .kron(P)")
        return self.d

    def at(self, lam):
        """λ-instantiation ``X^d + λ X^i``."""
        return self.d + lam * self.i if self.is_pair else self.d

    def kron(self, P):
        """``I ⊗ X^d + P ⊗ X^i`` for a pattern matrix ``P``."""
        P = np.asarray(P, dtype=float)
        out = kron(np.eye(P.shape[0]), self.d)
        if self.is_pair:
            out = out + kron(P, self.i)
        return out

    def unpack(self, x):
        """Matrix value(s) from a scalar vector of length ``size``."""
        x = np.asarray(x, dtype=float)
        k = self.block_size
        d = np.tensordot(x[:k], self._E, axes=1)
        if self.is_pair:
            return d, np.tensordot(x[k:], self._E, axes=1)
        return d

    def pack(self, value):
        """Scalar vector from a matrix value (or a ``(d, i)`` tuple for pairs)."""
        parts = value if self.is_pair else (value,)
        out = []
        for v in parts:
            v = np.asarray(v, dtype=float)
            if self.is_symmetric:
                out.append(v[np.triu_indices(self.rows)])
            else:
                out.append(v.reshape(-1))
        return np.concatenate(out)

    def __repr__(self):
        return f"DecisionVar({self.name!r}, {self.rows}x{self.cols}, {self.structure})"

    # a plain variable takes part in arithmetic as its expression
    __array_ufunc__ = None

    def __add__(self, o):
        return self.expr + o

    def __radd__(self, o):
        return self.expr + o

    def __sub__(self, o):
        return self.expr - o

    def __rsub__(self, o):
        return o - self.expr

    def __neg__(self):
        return -self.expr

    def __mul__(self, s):
        return self.expr * s

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self.expr / s

    def __matmul__(self, o):
        return self.expr @ o

    def __rmatmul__(self, o):
        return o @ self.expr

    @property
    def T(self):
        return self.expr.T

    def __hash__(self):
        return self.uid

    def __eq__(self, other):
        return self is other


class AffineExpr:
    """Affine matrix-valued function of decision variables."""

    # make ndarray operators defer to the reflected methods below
    __array_ufunc__ = None

    def __init__(self, const, terms=None):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.terms = dict(terms or {})
        for v, c in self.terms.items():
            if c.shape[1:] != self.const.shape:
                raise ValueError(f"coefficient of {v.name} has shape {c.shape[1:]}, expected {self.const.shape}")

    @property
    def shape(self):
        return self.const.shape

    @property
    def variables(self):
        return list(self.terms)

    @property
    def is_constant(self):
        return not self.terms

    def _map(self, f):
        return AffineExpr(f(self.const), {v: f(c) for v, c in self.terms.items()})

    def __add__(self, other):
        other = as_expr(other, self.shape)
        if other.shape != self.shape:
            raise ValueError(f"shape mismatch {self.shape} + {other.shape}")
        terms = dict(self.terms)
        for v, c in other.terms.items():
            terms[v] = terms[v] + c if v in terms else c
        return AffineExpr(self.const + other.const, terms)

    __radd__ = __add__

    def __neg__(self):
        return self._map(lambda a: -a)

    def __sub__(self, other):
        return self + (-as_expr(other, self.shape))

    def __rsub__(self, other):
        return as_expr(other, self.shape) + (-self)

    def __mul__(self, s):
        if isinstance(s, AffineExpr):
            raise TypeError("product of two affine expressions is not affine")
        s = float(s)
        return self._map(lambda a: s * a)

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self * (1.0 / float(s))

    def __matmul__(self, other):
        if isinstance(other, DecisionVar):
            other = other.expr
        if isinstance(other, AffineExpr):
            if other.is_constant:
                other = other.const
            elif self.is_constant:
                return other.__rmatmul__(self.const)
            else:
                raise TypeError("product of two non-constant expressions is not affine")
        B = np.atleast_2d(np.asarray(other, dtype=float))
        return AffineExpr(self.const @ B, {v: c @ B for v, c in self.terms.items()})

    def __rmatmul__(self, other):
        A = np.atleast_2d(np.asarray(other, dtype=float))
        return AffineExpr(A @ self.const, {v: np.matmul(A, c) for v, c in self.terms.items()})

    @property
    def T(self):
        return AffineExpr(self.const.T, {v: c.transpose(0, 2, 1) for v, c in self.terms.items()})

    def sym(self):
        """``E + Eᵀ``."""
        return self + self.T

    def value(self, assignment):
        """Evaluate for ``assignment``: DecisionVar → scalar vector or matrix value."""
        out = self.const.copy()
        for v, c in self.terms.items():
            x = assignment[v]
            x = np.asarray(x, dtype=float)
            if x.ndim != 1 or x.shape[0] != v.size:
                x = v.pack(x)
            out += np.tensordot(x, c, axes=1)
        return out

    def asymmetry(self):
        """Largest entry of ``|E − Eᵀ|`` over the constant and all coefficients."""
        if self.shape[0] != self.shape[1]:
            return np.inf
        m = float(np.max(np.abs(self.const - self.const.T), initial=0.0))
        for c in self.terms.values():
            m = max(m, float(np.max(np.abs(c - c.transpose(0, 2, 1)), initial=0.0)))
        return m

    def __repr__(self):
        names = ", ".join(v.name for v in self.terms)
        return f"AffineExpr(shape={self.shape}, vars=[{names}])"


def as_expr(x, shape=None):
    if isinstance(x, AffineExpr):
        return x
    if isinstance(x, DecisionVar):
        return x.expr
    a = np.asarray(x, dtype=float)
    if a.ndim == 0 and shape is not None:
        if float(a) != 0.0 and tuple(shape) != (1, 1):
            raise ValueError("only the scalar 0 broadcasts to a matrix expression")
        a = np.full(shape, float(a))
    return AffineExpr(a)


def symmetrize(e):
    """``(E + Eᵀ)/2``; used after assembly to remove rounding asymmetry."""
    return (e + e.T) * 0.5


def kron(A, e):
    """``A ⊗ E`` for a constant ``A`` and expression ``E``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    e = as_expr(e)
    return AffineExpr(np.kron(A, e.const),
                      {v: np.stack([np.kron(A, ck) for ck in c]) if len(c) else
                       np.zeros((0,) + (A.shape[0] * e.shape[0], A.shape[1] * e.shape[1]))
                       for v, c in e.terms.items()})


def bmat(blocks):
    """Block matrix from a nested list of expressions, arrays, ``0`` or ``None``.

    Row heights and column widths are inferred from the non-scalar entries.
    """
    nr, nc = len(blocks), len(blocks[0])
    heights, widths = [None] * nr, [None] * nc
    for r, row in enumerate(blocks):
        if len(row) != nc:
            raise ValueError("ragged block matrix")
        for c, b in enumerate(row):
            if b is None or (np.isscalar(b) and not isinstance(b, AffineExpr)):
                continue
            shp = b.shape if isinstance(b, AffineExpr) else np.atleast_2d(b).shape
            if heights[r] is not None and heights[r] != shp[0]:
                raise ValueError(f"block row {r} height mismatch")
            if widths[c] is not None and widths[c] != shp[1]:
                raise ValueError(f"block column {c} width mismatch")
            heights[r], widths[c] = shp[0], shp[1]
    if None in heights or None in widths:
        raise ValueError("cannot infer block sizes from an all-zero row or column")
    ro = np.concatenate([[0], np.cumsum(heights)]).astype(int)
    co = np.concatenate([[0], np.cumsum(widths)]).astype(int)
    const = np.zeros((ro[-1], co[-1]))
    terms = {}
    for r, row in enumerate(blocks):
        for c, b in enumerate(row):
            if b is None or (np.isscalar(b) and not isinstance(b, AffineExpr)):
                if b not in (None, 0, 0.0):
                    raise ValueError("nonzero scalar blocks are ambiguous")
                continue
            e = as_expr(b)
            const[ro[r]:ro[r + 1], co[c]:co[c + 1]] = e.const
            for v, cf in e.terms.items():
                if v not in terms:
                    terms[v] = np.zeros((cf.shape[0], ro[-1], co[-1]))
                terms[v][:, ro[r]:ro[r + 1], co[c]:co[c + 1]] += cf
    return AffineExpr(const, terms)


def quad_form(outer, middle):
    """``⋆ᵀ M O = Oᵀ M O`` for block-partitioned factors.

    Parameters
    ----------
    outer : list of list
        Block rows of the outer factor ``O``; entries are arrays,
        expressions, ``0`` or ``None``.
    middle : dict
        ``{(i, j): block}`` nonzero blocks of the middle matrix ``M``,
        indexed by outer block rows.

    Each product ``O_iᵀ M_ij O_j`` may involve at most one non-constant
    factor, otherwise ``TypeError`` is raised.
    """
    O = bmat(outer)
    nrow = len(outer)
    # row offsets of the outer factor
    heights = []
    for row in outer:
        h = None
        for b in row:
            if b is None or (np.isscalar(b) and not isinstance(b, AffineExpr)):
                continue
            h = b.shape[0] if isinstance(b, AffineExpr) else np.atleast_2d(b).shape[0]
            break
        heights.append(h)
    off = np.concatenate([[0], np.cumsum(heights)]).astype(int)
    rows = [AffineExpr(O.const[off[i]:off[i + 1]],
                       {v: c[:, off[i]:off[i + 1]] for v, c in O.terms.items()
                        if np.any(c[:, off[i]:off[i + 1]])})
            for i in range(nrow)]
    n = O.shape[1]
    total = AffineExpr(np.zeros((n, n)))
    for (i, j), Mij in middle.items():
        Mij = as_expr(Mij)
        Ri, Rj = rows[i], rows[j]
        nonconst = sum(not e.is_constant for e in (Ri, Mij, Rj))
        if nonconst > 1:
            raise TypeError(f"middle block ({i},{j}) meets non-constant outer rows")
        if not Ri.is_constant:
            total = total + Ri.T @ (Mij.const @ Rj.const)
        elif not Rj.is_constant:
            total = total + (Ri.const.T @ Mij.const) @ Rj
        else:
            total = total + Ri.const.T @ Mij @ Rj.const
    return total
