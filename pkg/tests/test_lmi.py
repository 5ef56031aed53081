import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import multiplier_decisions, random_pattern
from netsynth.analysis import StateSpace, hinf_norm, hinf_sweep
from netsynth.lmi import (AffineExpr, DecisionVar, LmiProblem, assemble_decomposed_efbsp,
                          assemble_dual_efbsp, assemble_fbsp_analysis, assemble_primal_efbsp,
                          export_sdpa, make_backend, quad_form, read_sdpa, solve, to_sdpa_data,
                          write_sdpa)
from netsynth.model import (ControllerGains, HomogeneousSystem, PatternGraph, close_loop,
                            dense_closed_loop, load_fixture, random_system)
from netsynth.slalg import sym_eig

seeds = st.integers(0, 2 ** 32 - 1)
BACKENDS = ["clarabel", "cvxopt"]


# -- decision variables and expressions

def test_symmetric_var_uses_upper_triangle():
    v = DecisionVar("X", 4)
    assert v.size == 10
    p = DecisionVar("Y", 3, structure="symmetric-pair")
    assert p.size == 12 and p.block_size == 6
    f = DecisionVar("F", 2, 3, structure="full")
    assert f.size == 6


@given(seeds, st.floats(-3, 3))
def test_pack_unpack_and_instantiation(seed, lam):
    rng = np.random.default_rng(seed)
    v = DecisionVar("S", 3, 3, structure="full-pair")
    d, i = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    x = v.pack((d, i))
    d2, i2 = v.unpack(x)
    assert np.allclose(d2, d) and np.allclose(i2, i)
    assert np.allclose(v.at(lam).value({v: x}), d + lam * i)
    s = DecisionVar("Q", 3, structure="symmetric-pair")
    q = rng.normal(size=(3, 3))
    q = q + q.T
    xs = s.pack((q, 2 * q))
    assert np.allclose(s.at(lam).value({s: xs}), q + 2 * lam * q)
    P = random_pattern(rng, 4)
    assert np.allclose(s.kron(P).value({s: xs}), np.kron(np.eye(4), q) + np.kron(P, 2 * q))


@given(seeds)
def test_expression_arithmetic_matches_numpy(seed):
    rng = np.random.default_rng(seed)
    X = DecisionVar("X", 3)
    F = DecisionVar("F", 3, 3, structure="full")
    A, B = rng.normal(size=(3, 3)), rng.normal(size=(2, 3))
    e = A @ F - 2.5 * X + F.expr.T / 4 - np.eye(3)
    g = B @ e @ B.T
    x = rng.normal(size=X.size)
    f = rng.normal(size=F.size)
    Xv, Fv = X.unpack(x), F.unpack(f)
    ref = A @ Fv - 2.5 * Xv + Fv.T / 4 - np.eye(3)
    assert np.allclose(e.value({X: x, F: f}), ref)
    assert np.allclose(g.value({X: Xv, F: Fv}), B @ ref @ B.T)


@given(seeds)
def test_quad_form_matches_dense(seed):
    rng = np.random.default_rng(seed)
    Q = DecisionVar("Q", 2)
    O1, O2 = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    S = rng.normal(size=(2, 2))
    e = quad_form([[O1], [O2]], {(0, 0): Q.expr, (0, 1): S, (1, 0): S.T})
    q = rng.normal(size=Q.size)
    Qv = Q.unpack(q)
    O = np.vstack([O1, O2])
    M = np.block([[Qv, S], [S.T, np.zeros((2, 2))]])
    assert np.allclose(e.value({Q: q}), O.T @ M @ O)


def test_quad_form_rejects_bilinear():
    X = DecisionVar("X", 2)
    with pytest.raises(TypeError):
        quad_form([[X.expr]], {(0, 0): X.expr})


def test_problem_rejects_asymmetric_and_undeclared():
    p = LmiProblem()
    F = p.var("F", 2, 2, structure="full")
    with pytest.raises(ValueError, match="symmetric"):
        p.add(F.d, ">")
    X = DecisionVar("X", 2)
    with pytest.raises(ValueError, match="undeclared"):
        p.add(X.expr, ">")
    with pytest.raises(ValueError, match="duplicate"):
        p.var("F", 2)


# -- solve

@pytest.mark.parametrize("backend", BACKENDS)
def test_solve_empty(backend):
    out = solve(LmiProblem(), backend)
    assert out.feasible and out.assignment == {}


@pytest.mark.parametrize("backend", BACKENDS)
def test_solve_scalar_sdp(backend):
    p = LmiProblem(strictness=0.0)
    x = p.var("x", 1)
    p.add(x.d - np.eye(1), ">")
    p.minimize(x.d)
    out = solve(p, backend)
    assert out.feasible
    assert abs(out.objective - 1.0) < 1e-6


@pytest.mark.parametrize("backend", BACKENDS)
def test_solve_infeasible_pair(backend):
    p = LmiProblem()
    x = p.var("x", 1)
    p.add(x.d - np.eye(1), ">")
    p.add(x.d, "<")
    assert solve(p, backend).status == "infeasible"
    assert solve(p, backend, margin=True).status == "infeasible"


def _random_sdp(rng, n=3, k=4):
    # minimise trace(C X) over X ⪰ I with a few linear bounds as 1×1 LMIs
    C = rng.normal(size=(n, n))
    C = C @ C.T + np.eye(n)
    A = [rng.normal(size=(n, n)) for _ in range(k)]
    A = [a + a.T for a in A]
    b = rng.normal(size=k) + 10
    return C, A, b


def _trace_coef(v, a):
    # d/dx_k trace(a X(x)) as a (k, 1, 1) stack
    eye = np.eye(v.size)
    return np.array([[[np.trace(a @ v.unpack(eye[k]))]] for k in range(v.size)])


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("backend", BACKENDS)
def test_solve_matches_cvxpy(seed, backend):
    rng = np.random.default_rng(seed)
    C, A, b = _random_sdp(rng)
    n = C.shape[0]
    p = LmiProblem(strictness=0.0)
    X = p.var("X", n)
    p.add(X.d - np.eye(n), ">")
    for a, bi in zip(A, b):
        p.add(AffineExpr(np.array([[bi]]), {X: -_trace_coef(X, a)}), ">")
    p.minimize(AffineExpr(np.zeros((1, 1)), {X: _trace_coef(X, C)}))
    out = solve(p, backend)
    Xc = cp.Variable((n, n), symmetric=True)
    cons = [Xc >> np.eye(n)] + [cp.trace(a @ Xc) <= bi for a, bi in zip(A, b)]
    ref = cp.Problem(cp.Minimize(cp.trace(C @ Xc)), cons).solve(solver="CLARABEL")
    assert out.feasible
    assert abs(out.objective - ref) <= 1e-5 * max(1.0, abs(ref))


def test_feasible_outcome_passes_recheck(small_system):
    lams = sym_eig(small_system.pattern).distinct_values
    p = assemble_decomposed_efbsp(small_system, lams, 5.0)
    out = solve(p, margin=True)
    assert out.feasible
    for c in p.constraints:
        assert c.margin(out.values) >= -10 * 1e-8 * p.scale


def test_backend_factory():
    with pytest.raises(ValueError):
        make_backend("nope")
    assert make_backend("cvxopt").name == "cvxopt"
    assert make_backend().name == "auto"


# -- assembled problems are symmetric

def _random_assignment(problem, rng):
    return {v: rng.normal(size=v.size) for v in problem.variables}


def test_assembled_expressions_symmetric(small_system):
    rng = np.random.default_rng(0)
    lams = sym_eig(small_system.pattern).distinct_values
    probs = [assemble_decomposed_efbsp(small_system, lams, 3.0),
             assemble_decomposed_efbsp(small_system, lams, 3.0, multiplier="extremes", structure="blockdiag"),
             assemble_dual_efbsp(small_system, 3.0)]
    for _ in range(1000 // len(probs) + 1):
        for p in probs:
            a = _random_assignment(p, rng)
            for c in p.constraints:
                V = c.expr.value(a)
                assert np.max(np.abs(V - V.T)) <= 1e-12


def test_decomposed_constraint_sets():
    s = load_fixture("bipartite6")
    lams = sym_eig(s.pattern).distinct_values
    assert len(lams) == 3
    p = assemble_decomposed_efbsp(s, lams, 10.0)
    tags = {c.name.split("[")[1] for c in p.constraints if "[" in c.name}
    assert len(tags) == 3
    # λ = 0: the multiplier block reduces to Q̃ᵈ
    rng = np.random.default_rng(1)
    a = _random_assignment(p, rng)
    v = p.meta["vars"]
    zero = [c for c in p.constraints if c.name == "multiplier[lam=0]"][0]
    assert np.allclose(zero.expr.value(a), v.Q.d.value(a))


# -- multiplier condition: network form vs eigenvalue polynomial

@pytest.mark.parametrize("seed", range(40))
def test_multiplier_network_vs_polynomial(seed):
    rng = np.random.default_rng(seed)
    net, poly = multiplier_decisions(rng)
    if min(abs(net), abs(poly)) > 1e-8:
        assert (net < 0) == (poly < 0)
    # the largest eigenvalues coincide (orthonormal congruence)
    assert abs(net - poly) <= 1e-9 * max(1.0, abs(net))


@pytest.mark.parametrize("seed", range(10))
def test_printed_multiplier_sign_flips_s(seed):
    rng = np.random.default_rng(seed)
    net, poly = multiplier_decisions(rng, "printed", s_sign=-1.0)
    assert abs(net - poly) <= 1e-9 * max(1.0, abs(net))
    # and it is not the eigenvalue polynomial itself
    rng = np.random.default_rng(seed)
    net_p, poly_c = multiplier_decisions(rng, "printed")
    assert abs(net_p - poly_c) > 1e-6


# -- nominal condition: network form vs per-eigenvalue forms

@pytest.mark.parametrize("seed", range(8))
def test_nominal_full_vs_decomposed(seed):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(2, 6))
    s = random_system(PatternGraph(random_pattern(rng, N)), n=2, rng=rng)
    lams = sym_eig(s.pattern).eigenvalues
    full = assemble_dual_efbsp(s, 2.0)
    dec = assemble_decomposed_efbsp(s, list(lams), 2.0)
    a = _random_assignment(full, rng)
    by_name = {v.name: x for v, x in a.items()}
    b = {v: by_name[v.name] for v in dec.variables}
    fn = [c for c in full.constraints if c.name == "nominal"][0].expr.value(a)
    ev_full = np.sort(np.linalg.eigvalsh(fn))
    # one nominal block per eigenvalue, repeats included
    blocks = [np.linalg.eigvalsh(c.expr.value(b)) for c in dec.constraints if c.name.startswith("nominal[")]
    assert len(blocks) == N
    ev_dec = np.sort(np.concatenate(blocks))
    assert np.allclose(ev_full, ev_dec, atol=1e-8 * max(1.0, np.abs(ev_full).max()))


# -- analysis problems

def _decoupled_stable(rng, N=2, n=2):
    A = rng.normal(size=(n, n))
    A = A - (np.max(np.linalg.eigvals(A).real) + 1.0) * np.eye(n)
    return HomogeneousSystem.build(PatternGraph.empty(N), A=A, B_u=rng.normal(size=(n, 1)),
                                   B_w=rng.normal(size=(n, 1)), C_z=rng.normal(size=(1, n)),
                                   D_zu=np.zeros((1, 1)))


def _cl_norm(s, k):
    return hinf_sweep(StateSpace(*dense_closed_loop(s, k))).norm


def test_fbsp_analysis_bracket(rng):
    s = _decoupled_stable(rng)
    k = ControllerGains.zeros(s.dims)
    h = _cl_norm(s, k)
    cl = close_loop(s, k)
    assert solve(assemble_fbsp_analysis(cl, 10 * h), margin=True).feasible
    assert not solve(assemble_fbsp_analysis(cl, 0.9 * h), margin=True).feasible


@pytest.mark.parametrize("seed", range(5))
def test_fbsp_sufficiency(seed):
    rng = np.random.default_rng(seed)
    s = random_system(PatternGraph.ring(3), n=2, rng=rng)
    k = ControllerGains(rng.normal(size=(1, 2)), 0.3 * rng.normal(size=(1, 2)))
    A, B, C, D = dense_closed_loop(s, k)
    ss = StateSpace(A, B, C, D)
    h = hinf_norm(ss).norm
    cl = close_loop(s, k)
    for g in (0.5, 1.2, 3.0):
        gamma = g * h if np.isfinite(h) else g
        if solve(assemble_fbsp_analysis(cl, gamma), margin=True).feasible:
            assert h <= gamma * (1 + 1e-6)
        if solve(assemble_primal_efbsp(cl, gamma), margin=True).feasible:
            assert h <= gamma * (1 + 1e-6)


def test_primal_extension_keeps_feasibility(rng):
    s = _decoupled_stable(rng)
    k = ControllerGains.zeros(s.dims)
    h = _cl_norm(s, k)
    cl = close_loop(s, k)
    for g in (1.5, 3.0, 10.0):
        assert solve(assemble_fbsp_analysis(cl, g * h), margin=True).feasible
        assert solve(assemble_primal_efbsp(cl, g * h), margin=True).feasible
    assert not solve(assemble_primal_efbsp(cl, 0.9 * h), margin=True).feasible


def test_dual_large_gamma_matches_decomposed():
    for seed in range(3):
        s = random_system(4, n=2, rng=seed)
        lams = sym_eig(s.pattern).distinct_values
        a = solve(assemble_dual_efbsp(s, 1e6), margin=True)
        b = solve(assemble_decomposed_efbsp(s, lams, 1e6), margin=True)
        assert a.feasible == b.feasible
        assert abs(a.margin - b.margin) < 1e-6


def test_dual_without_actuation_on_unstable_plant():
    # with B_u = D_zu = 0 the gains (hence M) have no effect; an unstable
    # open loop then admits no certificate at any γ
    s = HomogeneousSystem.build(PatternGraph.ring(3), A=([[0.5, 1.0], [0.0, 0.2]], [[0.1, 0], [0, 0.1]]),
                                B_u=np.zeros((2, 1)), B_w=[[1.0], [0.0]], C_z=[[1.0, 0.0]])
    for g in (1.0, 1e3, 1e6):
        assert not solve(assemble_dual_efbsp(s, g), margin=True).feasible


# -- SDPA export

def test_sdpa_scalar_problem():
    p = LmiProblem(strictness=0.0)
    x = p.var("x", 1)
    p.add(x.d - np.eye(1), ">")
    p.minimize(x.d)
    text = export_sdpa(p)
    d = read_sdpa(text)
    assert d.block_sizes == [1] and len(d.c) == 1


def test_sdpa_block_sizes_bipartite():
    s = load_fixture("bipartite6")
    lam = sym_eig(s.pattern).distinct_values[0]
    p = assemble_decomposed_efbsp(s, [lam], 10.0)
    d = read_sdpa(export_sdpa(p))
    n, nq, nz = 3, 4, 2
    # nominal: 2n + n_q + n_z; then Lyapunov, multiplier, slack
    assert d.block_sizes == [2 * n + nq + nz, n, nq, n]
    assert p.constraints[0].size == 2 * n + nq + nz


def test_sdpa_round_trip_bytes(small_system):
    lams = sym_eig(small_system.pattern).distinct_values
    p = assemble_decomposed_efbsp(small_system, lams, 3.0)
    t1 = export_sdpa(p)
    d = read_sdpa(t1)
    assert d == to_sdpa_data(p)
    assert write_sdpa(d, p.name) == t1
