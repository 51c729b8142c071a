import dataclasses

import numpy as np
import pytest

from mmcrl.audit import audit_bundle
from mmcrl.benchmarks import BENCHMARKS, get_benchmark
from mmcrl.bundle import generate, load_bundle, save_bundle
from mmcrl.diffkit import MLPParams, Tensor
from mmcrl.mixing import ModalityMixer, mix
from mmcrl.scmgen import SharingPattern, build_ground_truth_permutation


@pytest.fixture(scope="module")
def mod2_small():
    b = get_benchmark("mod2")
    return generate(b.pattern, 300, seed=0, edge_density=b.edge_density, benchmark="mod2")


def test_bundle_round_trip(tmp_path, mod2_small):
    save_bundle(mod2_small, tmp_path / "b")
    back = load_bundle(tmp_path / "b")
    assert back.pattern == mod2_small.pattern
    np.testing.assert_array_equal(back.z, mod2_small.z)
    np.testing.assert_array_equal(back.P_star, mod2_small.P_star)
    np.testing.assert_array_equal(back.scm.adjacency, mod2_small.scm.adjacency)
    for a, b in zip(back.xs, mod2_small.xs):
        np.testing.assert_array_equal(a, b)


def test_bundle_regenerates_from_metadata(tmp_path, mod2_small):
    """Mixers and mechanisms rebuilt from the metadata reproduce the stored data."""
    from mmcrl.scmgen import ancestral_sample
    save_bundle(mod2_small, tmp_path / "b")
    back = load_bundle(tmp_path / "b")
    z = ancestral_sample(back.scm, mod2_small.n, mod2_small.recipe["sample_seed"])
    np.testing.assert_array_equal(z, mod2_small.z)
    for mixer, a, x in zip(back.mixers, back.pattern.modalities, back.xs):
        np.testing.assert_array_equal(mix(mixer, z[:, list(a)]), x)


def test_bundle_shapes_and_worked_permutation(mod2_small):
    p = mod2_small.pattern
    assert [x.shape for x in mod2_small.xs] == [(300, 10), (300, 8)]
    assert mod2_small.z_cat.shape == (300, 7)
    assert mod2_small.P_star.shape == (7, 7)
    np.testing.assert_array_equal(mod2_small.P_star, build_ground_truth_permutation(p))


def test_empty_bundle(tmp_path):
    b = get_benchmark("mod3")
    gt = generate(b.pattern, 0, seed=1)
    save_bundle(gt, tmp_path / "e")
    back = load_bundle(tmp_path / "e")
    assert back.n == 0 and back.xs[0].shape == (0, 8)


@pytest.mark.parametrize("name", sorted(BENCHMARKS))
def test_benchmarks_are_valid(name):
    b = BENCHMARKS[name]
    assert b.pattern.satisfies_b1()
    assert b.pattern.M == int(name[-1])
    with pytest.raises(KeyError):
        get_benchmark("mod9")


@pytest.mark.parametrize("name", sorted(BENCHMARKS))
def test_default_bundles_pass_structural_audits(name):
    b = BENCHMARKS[name]
    gt = generate(b.pattern, 200, seed=0, edge_density=b.edge_density, benchmark=name)
    rep = audit_bundle(gt, density_trials=20)
    for item in ("A1 linear independence", "A3 edge directions", "B1 non-overlap", "DAG"):
        assert rep.status(item) == "pass", rep.to_text()
    assert rep.status("A2 properness") == "heuristic"
    assert rep.status("B2 mixing density") == "heuristic"


def test_full_overlap_fails_b1():
    tri = SharingPattern(3, ((0, 1), (1, 2), (2, 0)), dims=(3, 3, 3))
    gt = generate(tri, 50, seed=0, enforce_b1=False)
    rep = audit_bundle(gt, density_trials=5)
    assert rep.status("B1 non-overlap") == "fail"


def test_rank_deficient_mixer_fails_a1(mod2_small):
    w = np.zeros((3, 8))
    w[0, 0] = w[1, 1] = 1.0
    w[2, 2] = 0.0   # third latent never reaches the output
    bad = ModalityMixer(1, 3, 8, MLPParams([Tensor(w)], [None]), seed=99)
    gt = dataclasses.replace(mod2_small, mixers=[mod2_small.mixers[0], bad])
    rep = audit_bundle(gt, density_trials=5)
    assert rep.status("A1 linear independence") == "fail"


def test_forbidden_edge_fails_a3(mod2_small):
    adj = np.zeros((5, 5))
    adj[0, 3] = 1.0    # modality-0 specific into a shared latent
    scm = dataclasses.replace(mod2_small.scm, adjacency=adj)
    rep = audit_bundle(dataclasses.replace(mod2_small, scm=scm), density_trials=5)
    assert rep.status("A3 edge directions") == "fail"
    assert "0->3" in rep.to_text()


def test_cycle_fails_dag(mod2_small):
    adj = np.zeros((5, 5))
    adj[3, 4] = adj[4, 3] = 1.0
    scm = dataclasses.replace(mod2_small.scm, adjacency=adj)
    assert audit_bundle(dataclasses.replace(mod2_small, scm=scm), density_trials=5).status("DAG") == "fail"


def test_bounded_mixer_fails_properness(mod2_small):
    sat = ModalityMixer(0, 4, 10, MLPParams([Tensor(np.eye(4, 10))], [Tensor(np.zeros(10))], slope=0.0,
                                            final_activation=True), seed=5)
    # slope 0 clips every negative coordinate to zero, so rays into the negative orthant stay at the origin
    rep = audit_bundle(dataclasses.replace(mod2_small, mixers=[sat, mod2_small.mixers[1]]), density_trials=5)
    assert rep.status("A2 properness") == "fail"
