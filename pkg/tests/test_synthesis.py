import cvxpy as cp
import numpy as np
import pytest
import scipy.linalg

from conftest import BIP6_P, brute_commuting, random_pattern
from netsynth.analysis import StateSpace, hinf_norm, spectral_abscissa
from netsynth.model import (Dimensions, HomogeneousSystem, ModelError, PatternGraph,
                            dense_closed_loop, load_fixture, random_system)
from netsynth.synthesis import (InfeasibleError, NonMonotoneWarning, SingularSlackError,
                                SynthesisOptions, VerificationError, bisect_gamma,
                                find_commuting_pattern, recover_gains, synth_blockdiag_baseline,
                                synth_decomposed, synth_full_dual)


# -- bisection

def test_bisect_threshold():
    g, tr = bisect_gamma(lambda x: x >= 5, 1, 16, tol=1e-3)
    assert abs(g - 5) <= 0.005 and g >= 5
    assert tr.monotone
    assert tr.decisions()[0] == (16, True) and tr.decisions()[1] == (1, False)


def test_bisect_always_true():
    g, tr = bisect_gamma(lambda x: True, 0.5, 8)
    assert g == 0.5 and len(tr) == 3          # hi, lo, confirmation
    g, tr = bisect_gamma(lambda x: True, 0.5, 8, confirm=False)
    assert g == 0.5 and len(tr) == 2


def test_bisect_infeasible_at_hi():
    with pytest.raises(InfeasibleError) as e:
        bisect_gamma(lambda x: False, 1, 2)
    assert e.value.gamma_hi == 2 and len(e.value.trace) == 1


def test_bisect_non_monotone_flagged():
    # the first midpoint √(1·16) = 4 lands in a narrow feasible island;
    # the confirmation probe at 4·1.01 falls in the gap above it
    d = 0.02

    def pred(x):
        return 4 <= x <= 4 + d or x >= 16

    with pytest.warns(NonMonotoneWarning):
        g, tr = bisect_gamma(pred, 1, 16, tol=1e-3)
    assert not tr.monotone
    assert 4 <= g <= 4 + d


def test_bisect_rejects_bad_bracket():
    with pytest.raises(ValueError):
        bisect_gamma(lambda x: True, 2, 1)


def test_options_invariants():
    with pytest.raises(ValueError):
        SynthesisOptions(gamma_lo=2, gamma_hi=1)
    with pytest.raises(ValueError):
        SynthesisOptions(bisect_tol=1.5)
    with pytest.raises(ValueError):
        SynthesisOptions(multiplier_mode="nope")


# -- gain recovery

def test_recover_gains_examples(rng):
    d = Dimensions(3, 2, 1, 1)
    M = rng.normal(size=(4, 3))
    k = recover_gains(M, np.eye(3), d)
    assert np.array_equal(np.vstack([k.K_d, k.K_i]), M)
    k = recover_gains(np.zeros((4, 3)), rng.normal(size=(3, 3)), d)
    assert not np.any(k.K_d) and not np.any(k.K_i)


@pytest.mark.parametrize("seed", range(10))
def test_recover_gains_round_trip(seed):
    rng = np.random.default_rng(seed)
    d = Dimensions(4, 2, 1, 1)
    Kh = rng.normal(size=(4, 4))
    F = rng.normal(size=(4, 4)) + 3 * np.eye(4)
    k = recover_gains(Kh @ F, F, d)
    assert np.allclose(np.vstack([k.K_d, k.K_i]), Kh, atol=1e-10)


def test_recover_gains_singular():
    d = Dimensions(2, 1, 1, 1)
    with pytest.raises(SingularSlackError):
        recover_gains(np.ones((2, 2)), np.diag([1.0, 1e-14]), d)
    with pytest.raises(ModelError):
        recover_gains(np.ones((3, 2)), np.eye(2), d)


# -- drivers

def _check_sound(res, sys):
    A, B, C, D = dense_closed_loop(sys, res.gains)
    assert spectral_abscissa(A) < 0
    assert hinf_norm(StateSpace(A, B, C, D)).norm <= res.gamma_certified * (1 + 1e-6)


def test_decomposed_small_system(small_system):
    r = synth_decomposed(small_system)
    assert r.status == "success"
    _check_sound(r, small_system)
    assert r.gamma_verified <= r.gamma_certified
    assert len(r.per_eigenvalue) == 3
    assert all(m > 0 for _, m in r.per_eigenvalue)
    assert {"Y^d", "Y^i", "F^d", "M^d", "Q^d", "Q^i", "S^d", "S^i", "R^d", "R^i"} <= set(r.variables)
    assert r.iterations.monotone


def test_decoupled_dead_output_reaches_gamma_lo():
    s = HomogeneousSystem.build(PatternGraph.ring(4), A=-np.eye(2), B_u=[[0.0], [1.0]],
                                B_w=[[1.0], [1.0]], C_z=np.zeros((1, 2)))
    r = synth_decomposed(s)
    assert r.gamma_certified == SynthesisOptions().gamma_lo
    assert r.gamma_verified == 0.0


def test_full_matches_decomposed_two_ring():
    s = random_system(2, n=2, rng=7)
    a = synth_decomposed(s, backend="cvxopt")
    b = synth_full_dual(s, backend="cvxopt")
    assert abs(a.gamma_certified - b.gamma_certified) <= 1e-4 * a.gamma_certified
    assert a.iterations.decisions() == b.iterations.decisions()
    _check_sound(b, s)


def test_full_guard_and_modes():
    with pytest.raises(ValueError, match="N ≤ 12"):
        synth_full_dual(random_system(13, n=2, rng=0))
    with pytest.raises(ValueError):
        synth_full_dual(random_system(3, n=2, rng=0), multiplier_mode="convexified-extremes")


def test_gamma_hi_below_optimum(small_system):
    with pytest.raises(InfeasibleError):
        synth_decomposed(small_system, gamma_hi=0.2)


def test_blockdiag_not_better(small_system):
    a = synth_decomposed(small_system)
    b = synth_blockdiag_baseline(small_system)
    assert b.gamma_certified >= a.gamma_certified * (1 - 1e-6)
    assert "Y^i" not in b.variables
    _check_sound(b, small_system)


def test_blockdiag_equals_kron_when_decoupled():
    rng = np.random.default_rng(11)
    s = HomogeneousSystem.build(PatternGraph.ring(4), A=rng.normal(size=(2, 2)),
                                B_u=rng.normal(size=(2, 1)), B_w=rng.normal(size=(2, 1)),
                                C_z=rng.normal(size=(2, 2)), D_zu=rng.normal(size=(2, 1)))
    a = synth_decomposed(s)
    b = synth_blockdiag_baseline(s)
    assert abs(a.gamma_certified - b.gamma_certified) <= 1e-6 * a.gamma_certified


@pytest.mark.parametrize("seed", range(6))
def test_soundness_random(seed):
    s = random_system(int(3 + seed % 3), n=2, rng=100 + seed)
    try:
        r = synth_decomposed(s)
    except InfeasibleError:
        pytest.skip("no certificate for this instance")
    _check_sound(r, s)


def test_permutation_invariance(small_system):
    perm = np.array([2, 0, 3, 1])
    Pp = small_system.pattern.P[np.ix_(perm, perm)]
    t = HomogeneousSystem.build(PatternGraph(Pp), **{k: (m.d, m.i) for k, m in small_system.blocks().items()})
    a, b = synth_decomposed(small_system), synth_decomposed(t)
    assert abs(a.gamma_certified - b.gamma_certified) <= 1e-6 * a.gamma_certified
    assert np.allclose(a.gains.K_d, b.gains.K_d, atol=1e-8)
    assert np.allclose(a.gains.K_i, b.gains.K_i, atol=1e-8)
    # the permuted network with permuted gains is the same closed loop
    Pi = np.kron(np.eye(4)[perm], np.eye(small_system.dims.n))
    A1 = dense_closed_loop(small_system, a.gains)[0]
    A2 = dense_closed_loop(t, a.gains)[0]
    assert np.allclose(Pi @ A1 @ Pi.T, A2, atol=1e-12)


def test_convexified_extremes_conservative(small_system):
    a = synth_decomposed(small_system)
    b = synth_decomposed(small_system, multiplier_mode="convexified-extremes")
    assert b.gamma_certified >= a.gamma_certified * (1 - 1e-6)
    _check_sound(b, small_system)


def test_rho_matches_bisection(small_system):
    a = synth_decomposed(small_system)
    b = synth_decomposed(small_system, use_rho=True)
    assert len(b.iterations) == 1
    assert abs(a.gamma_certified - b.gamma_certified) <= 1e-3 * a.gamma_certified
    _check_sound(b, small_system)


def test_printed_variant_caught_by_verification():
    # the printed middle-matrix orientation is not a certificate; verification must catch it
    caught = 0
    for seed in range(15):
        s = random_system(4, n=2, rng=np.random.default_rng(seed + 1))
        try:
            synth_decomposed(s, variant="printed", bisect_tol=1e-3)
        except VerificationError as e:
            caught += 1
            assert e.result.status == "verification-failed"
        except (InfeasibleError, SingularSlackError):
            pass
    assert caught > 0


def test_rejects_unsupported_coupling():
    s = HomogeneousSystem.build(PatternGraph.ring(3), A=-np.eye(2), B_u=([[1.0], [0.0]], [[0.5], [0.0]]),
                                B_w=[[1.0], [0.0]], C_z=[[1.0, 0.0]])
    with pytest.raises(ModelError, match="not supported"):
        synth_decomposed(s)


# -- the bundled six-node example

def test_bipartite_fixture_infeasible_at_gamma_hi():
    s = load_fixture("bipartite6")
    for f in (synth_decomposed, synth_blockdiag_baseline):
        with pytest.raises(InfeasibleError) as e:
            f(s)
        assert e.value.gamma_hi == 1e6


def _common_slack_margin(sys, lams):
    """Best margin of ``W_Bᵀ sym((Aᵈ + λAⁱ)F) W_B ≺ 0`` over one common ``F``.

    This is what remains of the per-eigenvalue nominal condition after the
    gain variable is eliminated; it is implied by every convex variant.
    """
    W = scipy.linalg.null_space(sys.B_u.d.T)
    n = sys.dims.n
    F = cp.Variable((n, n))
    t = cp.Variable()
    cons = [F + F.T >> 0, cp.abs(F) <= 1]
    for lam in lams:
        Al = sys.A.d + lam * sys.A.i
        G = W.T @ (Al @ F) @ W
        cons.append((G + G.T) / 2 << -t * np.eye(W.shape[1]))
    cp.Problem(cp.Maximize(t), cons).solve(solver=cp.CLARABEL)
    return float(t.value)


def test_bipartite_fixture_common_slack_infeasible():
    s = load_fixture("bipartite6")
    r = 2 * np.sqrt(2)
    assert _common_slack_margin(s, [-r, r]) < 1e-7
    # each eigenvalue on its own is fine
    assert _common_slack_margin(s, [r]) > 1e-3
    assert _common_slack_margin(s, [-r]) > 1e-3


def test_common_slack_oracle_positive_on_feasible(small_system):
    lams = [-2.0, 0.0, 2.0]
    assert _common_slack_margin(small_system, lams) > 1e-3


# -- commuting pattern search

def test_commuting_zero_pattern_gives_complete_graph():
    P1 = find_commuting_pattern(PatternGraph.empty(3))
    assert np.array_equal(P1.adjacency, np.ones((3, 3)) - np.eye(3))


def test_commuting_k2_gives_zero():
    P1 = find_commuting_pattern(PatternGraph.ring(2))
    assert not np.any(P1.adjacency)


def test_commuting_bipartite_matches_brute_force():
    P1 = find_commuting_pattern(PatternGraph(BIP6_P))
    ref = brute_commuting(BIP6_P)
    assert np.array_equal(P1.adjacency, ref)
    assert np.array_equal(BIP6_P @ ref, ref @ BIP6_P)


@pytest.mark.parametrize("seed", range(15))
def test_commuting_random_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(2, 6))
    P = random_pattern(rng, N)
    ref = brute_commuting(P)
    if ref is None:
        with pytest.raises(ValueError):
            find_commuting_pattern(PatternGraph(P))
    else:
        assert np.array_equal(find_commuting_pattern(PatternGraph(P)).adjacency, ref)


def test_commuting_guard():
    with pytest.raises(ValueError):
        find_commuting_pattern(PatternGraph.ring(9))
