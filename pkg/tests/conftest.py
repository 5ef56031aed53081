import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from netsynth.lmi import LmiProblem, eigen_multiplier_polynomial, multiplier_condition
from netsynth.lmi.conditions import DualVars
from netsynth.model import HomogeneousSystem, PatternGraph, random_system

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

BIP6_P = np.array([[0, 1, 0, 0, 1, 0],
                   [1, 0, 1, 1, 0, 1],
                   [0, 1, 0, 0, 1, 0],
                   [0, 1, 0, 0, 1, 0],
                   [1, 0, 1, 1, 0, 1],
                   [0, 1, 0, 0, 1, 0]])


def random_pattern(rng, N, density=0.5):
    """Symmetric binary zero-diagonal matrix with Bernoulli edges."""
    U = np.triu((rng.random((N, N)) < density).astype(int), 1)
    return U + U.T


def random_full_system(rng, N, n=2, n_u=1, n_w=1, n_z=2, coupling=0.3, all_inter=False):
    """Random system; ``all_inter`` also fills the interconnected B/D blocks."""
    P = random_pattern(rng, N)
    g = rng.normal
    blocks = dict(A=(g(size=(n, n)), coupling * g(size=(n, n))),
                  B_u=(g(size=(n, n_u)), coupling * g(size=(n, n_u)) if all_inter else np.zeros((n, n_u))),
                  B_w=(g(size=(n, n_w)), coupling * g(size=(n, n_w)) if all_inter else np.zeros((n, n_w))),
                  C_z=(g(size=(n_z, n)), coupling * g(size=(n_z, n))),
                  D_zu=(g(size=(n_z, n_u)), coupling * g(size=(n_z, n_u)) if all_inter else np.zeros((n_z, n_u))))
    return HomogeneousSystem.build(PatternGraph(P), **blocks)


def brute_commuting(P):
    """Enumerate every symmetric binary zero-diagonal ``P₁ ≠ P`` commuting with ``P``.

    Returns the densest one, ties broken by the lexicographically smallest
    upper-triangle bit string, or ``None``.
    """
    P = np.asarray(P, dtype=int)
    N = P.shape[0]
    iu = np.triu_indices(N, 1)
    m = len(iu[0])
    codes = np.arange(2 ** m)
    # most significant bit first, so ascending codes are lexicographic
    bits = (codes[:, None] >> np.arange(m - 1, -1, -1)) & 1
    M = np.zeros((2 ** m, N, N), dtype=int)
    M[:, iu[0], iu[1]] = bits
    M = M + M.transpose(0, 2, 1)
    ok = np.all(P @ M == M @ P, axis=(1, 2)) & np.any(M != P, axis=(1, 2))
    if not ok.any():
        return None
    cnt = np.where(ok, bits.sum(1), -1)
    return M[int(np.flatnonzero(cnt == cnt.max())[0])]


def _random_multipliers(rng, nq, scale):
    def sym(a):
        return (a + a.T) / 2
    Qd = -sym(rng.normal(size=(nq, nq)) @ rng.normal(size=(nq, nq)).T) - rng.uniform(0.1, 2) * np.eye(nq)
    return (Qd, scale * sym(rng.normal(size=(nq, nq))), scale * rng.normal(size=(nq, nq)),
            scale * rng.normal(size=(nq, nq)), scale * sym(rng.normal(size=(nq, nq))),
            scale * sym(rng.normal(size=(nq, nq))))


def multiplier_decisions(rng, variant="corrected", P=None, s_sign=1.0):
    """(network max eig, max over λ of the polynomial max eig), S scaled by s_sign."""
    if P is None:
        P = random_pattern(rng, int(rng.integers(2, 7)))
    N = P.shape[0]
    nq = int(rng.integers(1, 4))
    Qd, Qi, Sd, Si, Rd, Ri = _random_multipliers(rng, nq, rng.uniform(0.01, 0.6))
    I = np.eye(N)
    Q = np.kron(I, Qd) + np.kron(P, Qi)
    S = np.kron(I, Sd) + np.kron(P, Si)
    R = np.kron(I, Rd) + np.kron(P, Ri)
    Pm = np.kron(P, np.eye(nq))
    net = multiplier_condition(Q, S, R, Pm, variant).const
    prob = LmiProblem()
    vs = {k: prob.var(k, nq, nq, structure="full-pair" if k == "S" else "symmetric-pair")
          for k in ("Q", "S", "R")}
    dv = DualVars(None, None, None, vs["Q"], vs["S"], vs["R"])
    assign = {vs["Q"]: (Qd, Qi), vs["S"]: (s_sign * Sd, s_sign * Si), vs["R"]: (Rd, Ri)}
    poly = max(np.linalg.eigvalsh(eigen_multiplier_polynomial(dv, lam).value(assign)).max()
               for lam in np.linalg.eigvalsh(P))
    return np.linalg.eigvalsh((net + net.T) / 2).max(), poly


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_system():
    """4-ring, n = 2, seeded; feasible for synthesis."""
    return random_system(4, n=2, rng=3)


# acceptance verdicts, echoed at the end of the run
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
