"""Homogeneous decomposable systems, distributed gains and the closed loop.

Every network-level matrix is stored as a pair ``(M^d, M^i)`` standing for
``I_N ⊗ M^d + P ⊗ M^i`` where ``P`` is the binary pattern (adjacency) matrix.
The interconnection channel is fixed to ``q_h = [x_h; u_h]``.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "PatternGraph", "DecomposableMatrix", "Dimensions", "HomogeneousSystem",
    "SubsystemPlant", "ControllerGains", "ClosedLoopSystem", "ValidationReport",
    "ModelError", "UnsupportedCouplingError",
    "expand", "subsystem_plant", "interconnection_matrix", "close_loop",
    "validate", "dense_closed_loop", "load_system", "dump_system",
    "system_from_dict", "system_to_dict", "load_fixture", "FIXTURES", "random_system",
]

# blocks whose interconnected part cannot be expressed by the block-diagonal
# closed loop with the [x; u] channel (they would need two-hop terms)
UNSUPPORTED_INTER = ("B_u", "B_w", "D_zu", "D_zw")
BLOCKS = ("A", "B_u", "B_w", "C_y", "D_yw", "C_z", "D_zu", "D_zw")


class ModelError(ValueError):
    """Raised on malformed model data."""


class UnsupportedCouplingError(ModelError):
    """Raised when an interconnected block outside the channel is nonzero."""


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PatternGraph:
    """Symmetric binary adjacency matrix of the subsystem graph.

    Parameters
    ----------
    adjacency : array_like
        N×N integer matrix with entries in {0, 1}, zero diagonal, symmetric.
        Checks are skipped with ``check=False`` so that `validate` can
        report on bad data instead of raising.
    """

    adjacency: np.ndarray
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        raw = np.asarray(self.adjacency)
        if raw.ndim != 2 or raw.shape[0] != raw.shape[1] or raw.shape[0] < 1:
            raise ModelError("pattern must be a nonempty square matrix")
        if not np.all(np.equal(np.mod(raw, 1), 0)):
            raise ModelError("pattern entries must be integers (weighted graphs are not supported)")
        adj = raw.astype(np.int64)
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        if self.check:
            bad = pattern_violations(adj)
            if bad:
                raise ModelError("; ".join(bad))

    @property
    def n_subsystems(self) -> int:
        return self.adjacency.shape[0]

    @property
    def P(self) -> np.ndarray:
        return self.adjacency.astype(float)

    def __eq__(self, other):
        return isinstance(other, PatternGraph) and np.array_equal(self.adjacency, other.adjacency)

    def __hash__(self):
        return hash(self.adjacency.tobytes())

    @classmethod
    def ring(cls, n):
        """Cycle graph on ``n`` nodes (``n ≥ 3``; ``n = 2`` gives a single edge)."""
        P = np.zeros((n, n), dtype=int)
        for h in range(n):
            P[h, (h + 1) % n] = P[(h + 1) % n, h] = 1
        np.fill_diagonal(P, 0)
        return cls(P)

    @classmethod
    def empty(cls, n):
        return cls(np.zeros((n, n), dtype=int))


def pattern_violations(adj) -> list[str]:
    adj = np.asarray(adj)
    out = []
    if not np.array_equal(adj, adj.T):
        out.append("asymmetric pattern")
    if np.any(np.diag(adj) != 0):
        out.append("self-loop")
    if np.any((adj != 0) & (adj != 1)):
        out.append("non-binary pattern entry")
    return out


@dataclass(frozen=True, eq=False)
class DecomposableMatrix:
    """Pair ``(M^d, M^i)`` representing ``I ⊗ M^d + P ⊗ M^i``."""

    diag_block: np.ndarray
    inter_block: np.ndarray

    def __post_init__(self):
        d = _frozen(self.diag_block)
        i = _frozen(self.inter_block)
        if d.shape != i.shape:
            raise ModelError(f"diag block {d.shape} and inter block {i.shape} differ in shape")
        object.__setattr__(self, "diag_block", d)
        object.__setattr__(self, "inter_block", i)

    @classmethod
    def local(cls, m):
        m = _frozen(m)
        return cls(m, np.zeros_like(m))

    @classmethod
    def zeros(cls, rows, cols):
        return cls(np.zeros((rows, cols)), np.zeros((rows, cols)))

    @property
    def shape(self):
        return self.diag_block.shape

    @property
    def d(self):
        return self.diag_block

    @property
    def i(self):
        return self.inter_block

    def at(self, lam):
        """Block ``M^d + λ M^i`` seen by the eigenvalue ``λ`` of the pattern."""
        return self.diag_block + lam * self.inter_block

    def is_local(self):
        return not np.any(self.inter_block)

    def __add__(self, other):
        return DecomposableMatrix(self.d + other.d, self.i + other.i)

    def __rmul__(self, s):
        return DecomposableMatrix(s * self.d, s * self.i)

    def __eq__(self, other):
        return (isinstance(other, DecomposableMatrix)
                and np.array_equal(self.d, other.d) and np.array_equal(self.i, other.i))

    __hash__ = None


def expand(m: DecomposableMatrix, g: PatternGraph) -> np.ndarray:
    """Dense network matrix ``I_N ⊗ M^d + P ⊗ M^i``."""
    if not isinstance(m, DecomposableMatrix):
        raise ModelError("expand expects a DecomposableMatrix")
    N = g.n_subsystems
    return np.kron(np.eye(N), m.d) + np.kron(g.P, m.i)


@dataclass(frozen=True)
class Dimensions:
    """Per-subsystem sizes. The channel widths are ``n_q = n_p = n + n_u``."""

    n: int
    n_u: int
    n_w: int
    n_z: int
    n_y: int = 0

    def __post_init__(self):
        for k in ("n", "n_u", "n_w", "n_z", "n_y"):
            v = getattr(self, k)
            if int(v) != v or v < 0:
                raise ModelError(f"dimension {k} must be a nonnegative integer")
        if self.n < 1:
            raise ModelError("state dimension n must be at least 1")

    @property
    def n_q(self):
        return self.n + self.n_u

    @property
    def n_p(self):
        return self.n + self.n_u

    def block_shape(self, name):
        n, nu, nw, nz, ny = self.n, self.n_u, self.n_w, self.n_z, self.n_y
        return {"A": (n, n), "B_u": (n, nu), "B_w": (n, nw), "C_y": (ny, n),
                "D_yw": (ny, nw), "C_z": (nz, n), "D_zu": (nz, nu), "D_zw": (nz, nw)}[name]

    def as_dict(self):
        return {"n": self.n, "n_u": self.n_u, "n_w": self.n_w, "n_z": self.n_z, "n_y": self.n_y}


@dataclass(frozen=True, eq=False)
class HomogeneousSystem:
    """Network of identical subsystems coupled through a pattern graph.

    Unprovided blocks default to zero. Construction only coerces data; call
    `validate` for the structured list of violations, or use
    `HomogeneousSystem.build`, which raises on any violation.
    """

    pattern: PatternGraph
    dims: Dimensions
    A: DecomposableMatrix
    B_u: DecomposableMatrix
    B_w: DecomposableMatrix
    C_y: DecomposableMatrix
    D_yw: DecomposableMatrix
    C_z: DecomposableMatrix
    D_zu: DecomposableMatrix
    D_zw: DecomposableMatrix

    @classmethod
    def build(cls, pattern, dims=None, check=True, **blocks):
        """Assemble a system from ``(d, i)`` tuples, DecomposableMatrix or arrays.

        A bare array is taken as the diagonal block with a zero inter block.
        ``dims`` is inferred from ``A``, ``B_u``, ``B_w`` and ``C_z`` when omitted.
        """
        if not isinstance(pattern, PatternGraph):
            pattern = PatternGraph(np.asarray(pattern), check=check)
        unknown = set(blocks) - set(BLOCKS)
        if unknown:
            raise ModelError(f"unknown blocks: {sorted(unknown)}")
        mats = {k: _as_dm(v) for k, v in blocks.items() if v is not None}
        if dims is None:
            if "A" not in mats:
                raise ModelError("A is required")
            n = mats["A"].shape[0]
            nu = mats["B_u"].shape[1] if "B_u" in mats else 0
            nw = mats["B_w"].shape[1] if "B_w" in mats else 0
            nz = mats["C_z"].shape[0] if "C_z" in mats else 0
            ny = mats["C_y"].shape[0] if "C_y" in mats else 0
            dims = Dimensions(n, nu, nw, nz, ny)
        elif isinstance(dims, dict):
            dims = Dimensions(**dims)
        for k in BLOCKS:
            if k not in mats:
                mats[k] = DecomposableMatrix.zeros(*dims.block_shape(k))
        sys = cls(pattern=pattern, dims=dims, **mats)
        if check:
            rep = validate(sys)
            if not rep.ok:
                raise ModelError("; ".join(rep.violations))
        return sys

    @property
    def N(self):
        return self.pattern.n_subsystems

    def blocks(self):
        return {k: getattr(self, k) for k in BLOCKS}

    def replace(self, **kw):
        d = self.blocks()
        d.update({k: _as_dm(v) for k, v in kw.items() if k in BLOCKS})
        pattern = kw.get("pattern", self.pattern)
        return HomogeneousSystem(pattern=pattern, dims=self.dims, **d)

    def unsupported_blocks(self):
        """Interconnected blocks that the ``[x; u]`` channel closed loop cannot carry."""
        return [k for k in UNSUPPORTED_INTER if np.any(getattr(self, k).i)]


def _as_dm(v):
    if isinstance(v, DecomposableMatrix):
        return v
    if isinstance(v, tuple) and len(v) == 2:
        return DecomposableMatrix(v[0], v[1])
    return DecomposableMatrix.local(v)


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok


def validate(sys) -> ValidationReport:
    """Check pattern, shapes and feedthrough; never raises.

    Violations: pattern not symmetric/binary/zero-diagonal ("self-loop"),
    ``D_zw^d ≠ 0`` ("nonzero feedthrough"), shape mismatches. Nonzero
    interconnected ``B_u``, ``B_w``, ``D_zu``, ``D_zw`` blocks are reported
    as warnings, since the closed loop cannot be formed for them.
    """
    rep = ValidationReport()
    try:
        rep.violations += pattern_violations(sys.pattern.adjacency)
    except Exception as exc:  # noqa: BLE001 - report, never raise
        rep.violations.append(f"bad pattern: {exc}")
    dims = getattr(sys, "dims", None)
    for k in BLOCKS:
        m = getattr(sys, k, None)
        if not isinstance(m, DecomposableMatrix):
            rep.violations.append(f"{k}: missing block")
            continue
        if dims is not None and m.shape != dims.block_shape(k):
            rep.violations.append(f"{k}: shape {m.shape} != expected {dims.block_shape(k)}")
        if not (np.all(np.isfinite(m.d)) and np.all(np.isfinite(m.i))):
            rep.violations.append(f"{k}: non-finite entries")
    dzw = getattr(sys, "D_zw", None)
    if isinstance(dzw, DecomposableMatrix) and np.any(dzw.d):
        rep.violations.append("nonzero feedthrough D_zw^d")
    if not rep.violations:
        for k in sys.unsupported_blocks():
            rep.warnings.append(f"{k}^i nonzero: coupling outside the [x; u] channel is not supported")
    return rep


@dataclass(frozen=True, eq=False)
class SubsystemPlant:
    """Subsystem-level LFT blocks with the interconnection channel."""

    A_h: np.ndarray
    B_uh: np.ndarray
    B_wh: np.ndarray
    B_ph: np.ndarray
    C_yh: np.ndarray
    D_ywh: np.ndarray
    D_yph: np.ndarray
    C_zh: np.ndarray
    D_zuh: np.ndarray
    D_zph: np.ndarray
    C_qh: np.ndarray
    D_quh: np.ndarray
    D_qwh: np.ndarray
    A_i: np.ndarray
    dims: Dimensions


def subsystem_plant(sys: HomogeneousSystem) -> SubsystemPlant:
    """Local blocks and channel blocks for ``q_h = [x_h; u_h]``."""
    dm = sys.dims
    n, nu = dm.n, dm.n_u
    return SubsystemPlant(
        A_h=sys.A.d, B_uh=sys.B_u.d, B_wh=sys.B_w.d,
        B_ph=np.hstack([sys.A.i, sys.B_u.i]),
        C_yh=sys.C_y.d, D_ywh=sys.D_yw.d,
        D_yph=np.hstack([sys.C_y.i, np.zeros((dm.n_y, nu))]),
        C_zh=sys.C_z.d, D_zuh=sys.D_zu.d,
        D_zph=np.hstack([sys.C_z.i, sys.D_zu.i]),
        C_qh=np.vstack([np.eye(n), np.zeros((nu, n))]),
        D_quh=np.vstack([np.zeros((n, nu)), np.eye(nu)]),
        D_qwh=np.zeros((dm.n_q, dm.n_w)),
        A_i=sys.A.i, dims=dm,
    )


def interconnection_matrix(g: PatternGraph, n_q: int) -> np.ndarray:
    """``𝒫 = P ⊗ I_{n_q}``."""
    if n_q < 1:
        raise ModelError("n_q must be positive")
    return np.kron(g.P, np.eye(n_q))


@dataclass(frozen=True, eq=False)
class ControllerGains:
    """Distributed state feedback ``K = I ⊗ K^d + P ⊗ K^i``."""

    K_d: np.ndarray
    K_i: np.ndarray

    def __post_init__(self):
        kd, ki = _frozen(self.K_d), _frozen(self.K_i)
        if kd.shape != ki.shape:
            raise ModelError("K_d and K_i must have the same shape")
        object.__setattr__(self, "K_d", kd)
        object.__setattr__(self, "K_i", ki)

    @property
    def K_hat(self):
        return np.vstack([self.K_d, self.K_i])

    def as_matrix(self) -> DecomposableMatrix:
        return DecomposableMatrix(self.K_d, self.K_i)

    def expand(self, g):
        return expand(self.as_matrix(), g)

    @classmethod
    def zeros(cls, dims):
        return cls(np.zeros((dims.n_u, dims.n)), np.zeros((dims.n_u, dims.n)))


@dataclass(frozen=True, eq=False)
class ClosedLoopSystem:
    """Block-diagonal LFT of the closed loop with ``p = 𝒫 q``."""

    A_cl: DecomposableMatrix
    B1: DecomposableMatrix
    B2: DecomposableMatrix
    C1: DecomposableMatrix
    D11: DecomposableMatrix
    D12: DecomposableMatrix
    C2: DecomposableMatrix
    D21: DecomposableMatrix
    D22: DecomposableMatrix
    pattern: PatternGraph
    n_q: int

    def __post_init__(self):
        for k in ("A_cl", "B1", "B2", "C1", "D11", "D12", "C2", "D21", "D22"):
            if not getattr(self, k).is_local():
                raise ModelError(f"closed-loop block {k} must be block diagonal")

    @property
    def interconnection(self):
        return interconnection_matrix(self.pattern, self.n_q)

    def expanded(self):
        """Dense blocks as a dict, keyed like the fields."""
        g = self.pattern
        return {k: expand(getattr(self, k), g)
                for k in ("A_cl", "B1", "B2", "C1", "D11", "D12", "C2", "D21", "D22")}

    def local(self):
        return {k: getattr(self, k).d
                for k in ("A_cl", "B1", "B2", "C1", "D11", "D12", "C2", "D21", "D22")}


def channel_maps(dims):
    """``C_q = [I; 0]`` and ``D̂_qu = [[0, 0], [0, I]]`` acting on ``K̂``."""
    n, nu = dims.n, dims.n_u
    Cq = np.vstack([np.eye(n), np.zeros((nu, n))])
    Dq = np.zeros((n + nu, 2 * nu))
    Dq[n:, nu:] = np.eye(nu)
    return Cq, Dq


def close_loop(sys: HomogeneousSystem, k: ControllerGains) -> ClosedLoopSystem:
    """Block-diagonal closed loop under ``u = K x``.

    Raises
    ------
    UnsupportedCouplingError
        if ``B_u^i``, ``B_w^i``, ``D_zu^i`` or ``D_zw^i`` is nonzero.
    """
    dm = sys.dims
    if k.K_d.shape != (dm.n_u, dm.n):
        raise ModelError(f"gain shape {k.K_d.shape} != ({dm.n_u}, {dm.n})")
    bad = sys.unsupported_blocks()
    if bad:
        raise UnsupportedCouplingError(f"nonzero interconnected blocks {bad} are not supported")
    Kh = k.K_hat
    Cq, Dq = channel_maps(dm)
    L = DecomposableMatrix.local
    A_cl = sys.A.d + np.hstack([sys.B_u.d, sys.B_u.i]) @ Kh
    C2 = sys.C_z.d + np.hstack([sys.D_zu.d, sys.D_zu.i]) @ Kh
    return ClosedLoopSystem(
        A_cl=L(A_cl),
        B1=L(np.hstack([sys.A.i, sys.B_u.d])),
        B2=L(sys.B_w.d),
        C1=L(Cq + Dq @ Kh),
        D11=DecomposableMatrix.zeros(dm.n_q, dm.n_q),
        D12=DecomposableMatrix.zeros(dm.n_q, dm.n_w),
        C2=L(C2),
        D21=L(np.hstack([sys.C_z.i, sys.D_zu.d])),
        D22=DecomposableMatrix.zeros(dm.n_z, dm.n_w),
        pattern=sys.pattern, n_q=dm.n_q,
    )


def dense_closed_loop(sys: HomogeneousSystem, k: ControllerGains):
    """Network closed loop ``(A, B, C, D)`` by substituting ``u = K x`` directly.

    Works from the expanded network matrices, so it also covers blocks that
    `close_loop` rejects.
    """
    g = sys.pattern
    K = k.expand(g)
    A = expand(sys.A, g) + expand(sys.B_u, g) @ K
    B = expand(sys.B_w, g)
    C = expand(sys.C_z, g) + expand(sys.D_zu, g) @ K
    D = expand(sys.D_zw, g)
    return A, B, C, D


# ---------------------------------------------------------------- file I/O

def system_to_dict(sys: HomogeneousSystem) -> dict:
    out = {"pattern": sys.pattern.adjacency.tolist(), "dims": sys.dims.as_dict()}
    for k in BLOCKS:
        m = getattr(sys, k)
        if m.shape[0] * m.shape[1] == 0:
            continue
        entry = {"d": m.d.tolist()}
        if np.any(m.i):
            entry["i"] = m.i.tolist()
        out[k] = entry
    return out


def system_from_dict(doc: dict, check=True) -> HomogeneousSystem:
    """Parse the JSON document layout; omitted ``i`` blocks are zero."""
    if not isinstance(doc, dict):
        raise ModelError("system document must be an object")
    if "pattern" not in doc:
        raise ModelError("missing field 'pattern'")
    try:
        pattern = PatternGraph(np.asarray(doc["pattern"]), check=check)
    except (TypeError, ValueError) as exc:
        raise ModelError(f"bad pattern: {exc}") from exc
    dims = doc.get("dims")
    blocks = {}
    for k in BLOCKS:
        if k not in doc:
            continue
        entry = doc[k]
        if not isinstance(entry, dict) or "d" not in entry:
            raise ModelError(f"{k}: expected an object with a 'd' field")
        try:
            d = np.asarray(entry["d"], dtype=float)
            if d.ndim == 1:
                d = d.reshape(-1, 1)
            i = np.asarray(entry["i"], dtype=float) if "i" in entry else np.zeros_like(d)
            if i.ndim == 1:
                i = i.reshape(-1, 1)
            blocks[k] = DecomposableMatrix(d, i)
        except (TypeError, ValueError) as exc:
            raise ModelError(f"{k}: {exc}") from exc
    try:
        dims = Dimensions(**dims) if isinstance(dims, dict) else None
    except TypeError as exc:
        raise ModelError(f"bad dims: {exc}") from exc
    return HomogeneousSystem.build(pattern, dims=dims, check=check, **blocks)


def load_system(path, check=True) -> HomogeneousSystem:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: invalid JSON ({exc})") from exc
    return system_from_dict(doc, check=check)


def dump_system(sys: HomogeneousSystem, path=None) -> str:
    # float repr is the shortest round-tripping decimal, so files re-parse bit-exactly
    text = json.dumps(system_to_dict(sys), indent=1)
    # one matrix row per line
    text = re.sub(r"\[\s*([^\[\]]*?)\s*\]", lambda m: "[" + re.sub(r"\s*\n\s*", " ", m.group(1)) + "]",
                  text) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


FIXTURES = {"bipartite6": "bipartite6.json"}


def load_fixture(name: str) -> HomogeneousSystem:
    """Bundled example systems; ``"bipartite6"`` is the six-node bipartite network."""
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; available: {sorted(FIXTURES)}")
    text = resources.files("netsynth.data").joinpath(FIXTURES[name]).read_text()
    return system_from_dict(json.loads(text))


def random_system(pattern, n=3, n_u=1, n_w=1, n_z=2, *, coupling=0.3, rng=None) -> HomogeneousSystem:
    """Random homogeneous system with Gaussian blocks.

    Only ``A`` and ``C_z`` get interconnected parts (scaled by ``coupling``),
    the blocks for which the closed loop is exact. ``pattern`` is a
    PatternGraph, an adjacency matrix, or an int ``N`` for a ring.
    """
    rng = np.random.default_rng(rng)
    if isinstance(pattern, (int, np.integer)):
        pattern = PatternGraph.ring(int(pattern))
    elif not isinstance(pattern, PatternGraph):
        pattern = PatternGraph(np.asarray(pattern))
    g = rng.normal
    return HomogeneousSystem.build(
        pattern,
        A=(g(size=(n, n)), coupling * g(size=(n, n))),
        B_u=g(size=(n, n_u)), B_w=g(size=(n, n_w)),
        C_z=(g(size=(n_z, n)), coupling * g(size=(n_z, n))),
        D_zu=g(size=(n_z, n_u)))
