"""SDPA sparse format (``.dat-s``) export and import.

Convention: minimise ``cᵀx`` subject to ``Σ_k x_k F_k − F_0 ⪰ 0`` with one
block per constraint. A constraint ``E(x) ⪰ εI`` with ``E = C + Σ x_k E_k``
becomes ``F_k = E_k`` and ``F_0 = εI − C`` (signs flipped for ``'<'``).
Only upper-triangle entries are written.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SdpaData", "to_sdpa_data", "write_sdpa", "read_sdpa", "export_sdpa"]


@dataclass
class SdpaData:
    c: np.ndarray          # (m,)
    block_sizes: list      # positive ints
    F: list                # F[k][b] dense block, k = 0..m

    def __eq__(self, other):
        if not isinstance(other, SdpaData):
            return NotImplemented
        return (np.array_equal(self.c, other.c) and list(self.block_sizes) == list(other.block_sizes)
                and all(np.array_equal(a, b) for Fa, Fb in zip(self.F, other.F) for a, b in zip(Fa, Fb)))


def to_sdpa_data(problem) -> SdpaData:
    eps = problem.strictness
    m = problem.n_scalars
    c, _ = problem.objective_vector()
    sizes = [con.size for con in problem.constraints]
    F = [[None] * len(sizes) for _ in range(m + 1)]
    for b, con in enumerate(problem.constraints):
        F0, Fs = problem.coefficient_tensors(con)
        F[0][b] = eps * np.eye(con.size) - F0
        for k in range(m):
            F[k + 1][b] = Fs[k]
    return SdpaData(np.asarray(c, dtype=float), sizes, F)


def _fmt(v):
    return repr(float(v))


def write_sdpa(data: SdpaData, comment="") -> str:
    m = len(data.c)
    lines = [f'"{comment}"' if comment else '"netsynth LMI export"',
             f"{m} = mDIM", f"{len(data.block_sizes)} = nBLOCK",
             " ".join(str(s) for s in data.block_sizes) + " = bLOCKsTRUCT",
             " ".join(_fmt(v) for v in data.c) if m else "0"]
    for k in range(m + 1):
        for b, blk in enumerate(data.F[k]):
            iu, ju = np.triu_indices(blk.shape[0])
            vals = blk[iu, ju]
            nz = np.flatnonzero(vals)
            for t in nz:
                lines.append(f"{k} {b + 1} {iu[t] + 1} {ju[t] + 1} {_fmt(vals[t])}")
    return "\n".join(lines) + "\n"


def export_sdpa(problem, comment="") -> str:
    return write_sdpa(to_sdpa_data(problem), comment or problem.name)


def read_sdpa(text: str) -> SdpaData:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith(('"', "*"))]

    def head(ln):
        return ln.split("=")[0].replace(",", " ").replace("{", " ").replace("}", " ").split()

    m = int(head(lines[0])[0])
    nb = int(head(lines[1])[0])
    sizes = [abs(int(s)) for s in head(lines[2])[:nb]]
    c = np.array([float(s) for s in head(lines[3])[:m]]) if m else np.zeros(0)
    F = [[np.zeros((s, s)) for s in sizes] for _ in range(m + 1)]
    for ln in lines[4:]:
        k, b, i, j, v = ln.split()
        k, b, i, j = int(k), int(b) - 1, int(i) - 1, int(j) - 1
        v = float(v)
        F[k][b][i, j] = v
        F[k][b][j, i] = v
    return SdpaData(c, sizes, F)
