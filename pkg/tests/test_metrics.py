import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmcrl.diffkit import DimensionError
from mmcrl.metrics import abs_correlations, collapse_slots, enshd, mcc, permutation_cycles, r2, r2_per_slot
from mmcrl.scmgen import SharingPattern, build_ground_truth_permutation

from oracles import exhaustive_max_assignment

WORKED = SharingPattern(5, ((0, 1, 3, 4), (3, 4, 2)), k=2.0)


def test_mcc_self_is_one():
    z = np.random.default_rng(0).normal(size=(100, 4))
    val, sigma = mcc(z, z)
    assert val == pytest.approx(1.0)
    np.testing.assert_array_equal(sigma, np.arange(4))


def test_mcc_sign_scale_swap():
    z = np.random.default_rng(1).normal(size=(500, 2))
    est = np.column_stack([-z[:, 1], 3 * z[:, 0]])
    val, sigma = mcc(z, est)
    assert val == pytest.approx(1.0)
    np.testing.assert_array_equal(sigma, [1, 0])


def test_mcc_independent_noise_is_low():
    rng = np.random.default_rng(2)
    val, _ = mcc(rng.normal(size=(10_000, 4)), rng.normal(size=(10_000, 4)))
    assert val < 0.1


def test_mcc_requires_samples_and_matching_shapes():
    with pytest.raises(ValueError):
        mcc(np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(DimensionError):
        mcc(np.zeros((5, 2)), np.zeros((5, 3)))


def test_constant_slot_correlation_is_zero_and_flagged():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(50, 3))
    est = z.copy()
    est[:, 1] = 4.0
    C, const = abs_correlations(z, est)
    assert const == [1]
    np.testing.assert_array_equal(C[:, 1], 0)


@pytest.mark.parametrize("L", [2, 3, 4, 5, 6])
def test_assignment_matches_exhaustive_search(L):
    rng = np.random.default_rng(L)
    for _ in range(5):
        z = rng.normal(size=(60, L))
        est = z @ rng.normal(size=(L, L)) + rng.normal(size=(60, L))
        val, sigma = mcc(z, est)
        C = np.abs(np.corrcoef(z.T, est.T)[:L, L:])
        _, best = exhaustive_max_assignment(C)
        assert val == pytest.approx(best / L)
        assert C[np.arange(L), sigma].sum() == pytest.approx(best)


@given(st.integers(2, 6), st.integers(0, 2**31))
def test_mcc_invariant_to_slotwise_affine_maps_and_permutations(L, seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(80, L))
    est = np.tanh(z @ rng.normal(size=(L, L))) + 0.1 * rng.normal(size=(80, L))
    base, _ = mcc(z, est)
    scale = rng.uniform(0.5, 3, L) * rng.choice([-1, 1], L)
    perm = rng.permutation(L)
    moved, _ = mcc(z, (est * scale + rng.normal(size=L))[:, perm])
    assert moved == pytest.approx(base, abs=1e-10)
    assert 0 <= base <= 1


def test_spearman_recovers_monotone_nonlinear_map():
    z = np.random.default_rng(4).normal(size=(300, 3))
    est = np.exp(z)
    assert mcc(z, est, method="spearman")[0] == pytest.approx(1.0)
    assert mcc(z, est)[0] < 0.99


def test_r2_affine_is_one():
    rng = np.random.default_rng(5)
    z = rng.normal(size=(400, 5))
    est = z @ rng.normal(size=(5, 5)) + rng.normal(size=5)
    assert r2(z, est) == pytest.approx(1.0, abs=1e-8)


def test_r2_one_noise_slot():
    rng = np.random.default_rng(6)
    z = rng.normal(size=(50_000, 4))
    est = z.copy()
    est[:, 2] = rng.normal(size=50_000)
    scores, _ = r2_per_slot(z, est)
    np.testing.assert_allclose(scores, [1, 1, 0, 1], atol=1e-3)
    assert r2(z, est) == pytest.approx(3 / 4, abs=1e-3)


def test_r2_constant_estimate_is_zero_with_ridge_flag():
    z = np.random.default_rng(7).normal(size=(100, 3))
    scores, ridge = r2_per_slot(z, np.ones((100, 3)))
    assert ridge
    np.testing.assert_allclose(scores, 0, atol=1e-6)
    with pytest.raises(ValueError):
        r2(np.zeros((3, 3)), np.zeros((3, 3)))


@given(st.integers(0, 2**31))
def test_r2_at_most_one(seed):
    rng = np.random.default_rng(seed)
    assert r2(rng.normal(size=(30, 3)), rng.normal(size=(30, 3))) <= 1 + 1e-12


def test_collapse_identity():
    p = SharingPattern(3, ((0, 1), (2,)))
    W = np.random.default_rng(8).random((3, 3))
    res = collapse_slots(W, np.eye(3), p)
    np.testing.assert_array_equal(res.matrix, W)
    assert res.consistent


def test_collapse_worked_layout_by_hand():
    rng = np.random.default_rng(9)
    W = rng.random((7, 7))
    W[4] = W[2]
    W[5] = W[3]
    W[:, 4] = W[:, 2]
    W[:, 5] = W[:, 3]
    res = collapse_slots(W, build_ground_truth_permutation(WORKED), WORKED)
    # latent order 0..4 lives at slots 0, 1, 6, (2, 4), (3, 5)
    rep = [0, 1, 6, 2, 3]
    np.testing.assert_allclose(res.matrix, W[np.ix_(rep, rep)])
    assert res.consistent


def test_collapse_averages_duplicates():
    p = SharingPattern(2, ((0, 1), (1,)))
    a, b = np.array([0.0, 1.0, 3.0]), np.array([2.0, 5.0, 1.0])
    W = np.zeros((3, 3))
    W[1], W[2] = a, b
    res = collapse_slots(W, build_ground_truth_permutation(p), p)
    # latent 1 = slots {1, 2}: row average, then column average over its duplicates
    assert res.matrix[1, 0] == pytest.approx((a[0] + b[0]) / 2)
    assert res.matrix[1, 1] == pytest.approx((a[1] + a[2] + b[1] + b[2]) / 4)


def test_collapse_flags_inconsistent_permutation():
    res = collapse_slots(np.zeros((7, 7)), np.eye(7), WORKED)
    assert not res.consistent and "disagree" in res.message
    with pytest.raises(ValueError):
        collapse_slots(np.zeros((7, 7)), np.full((7, 7), 1 / 7), WORKED)


def test_permutation_cycles():
    P = np.eye(4)[[1, 2, 0, 3]]
    assert sorted(map(sorted, permutation_cycles(P))) == [[0, 1, 2], [3]]


def lift(adj, pattern):
    lat = pattern.slot_latents
    return adj[np.ix_(lat, lat)]


def test_enshd_zero_on_identical_graph_and_one_per_spurious_edge():
    adj = np.zeros((5, 5))
    adj[3, 0] = adj[4, 2] = adj[0, 1] = 1.0
    Pstar = build_ground_truth_permutation(WORKED)
    est = lift(adj, WORKED)
    np.fill_diagonal(est, 0)
    assert enshd(adj, est, np.arange(7), Pstar, WORKED, tau=0.5).value == 0
    est2 = est.copy()
    est2[6, 0] = 1.0   # spurious z3 -> z1 edge
    assert enshd(adj, est2, np.arange(7), Pstar, WORKED, tau=0.5).value == 1


def test_enshd_uses_alignment():
    adj = np.zeros((5, 5))
    adj[0, 1] = 1.0
    Pstar = build_ground_truth_permutation(WORKED)
    est = lift(adj, WORKED)
    np.fill_diagonal(est, 0)
    # estimated slots 0 and 1 are swapped; sigma undoes it
    perm = np.array([1, 0, 2, 3, 4, 5, 6])
    shuffled = est[np.ix_(perm, perm)]
    assert enshd(adj, shuffled, perm, Pstar, WORKED, tau=0.5).value == 0
    assert enshd(adj, shuffled, np.arange(7), Pstar, WORKED, tau=0.5).value == 2


@given(st.integers(0, 2**31))
def test_enshd_zero_on_any_dag_fixture(seed):
    from mmcrl.scmgen import sample_dag
    adj = sample_dag(WORKED, 0.6, seed)
    est = lift(adj, WORKED)
    np.fill_diagonal(est, 0)
    r = enshd(adj, est, np.arange(7), build_ground_truth_permutation(WORKED), WORKED, tau=1e-9)
    assert r.value == 0


@given(st.integers(0, 2**31))
def test_enshd_range(seed):
    rng = np.random.default_rng(seed)
    adj = (rng.random((5, 5)) < 0.3).astype(float)
    W = rng.normal(size=(7, 7))
    v = enshd(adj, W, rng.permutation(7), build_ground_truth_permutation(WORKED), WORKED, tau=0.5).value
    assert 0 <= v <= 20


def test_enshd_rejects_non_bijection():
    with pytest.raises(ValueError):
        enshd(np.zeros((5, 5)), np.zeros((7, 7)), [0] * 7, np.eye(7), WORKED, 0.3)
