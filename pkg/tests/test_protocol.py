import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from naturalcl.data import Dataset
from naturalcl.protocol import Scenario, eval_set_upto, make_class_il, make_domain_il


def _test_set(n_classes=10, per_class=100):
    labels = np.repeat(np.arange(n_classes), per_class)
    return Dataset(np.zeros((labels.size, 4), np.float32), labels)


class TestClassIL:
    def test_split_mnist_shape(self):
        sc = make_class_il(10, 5, seed=1)
        assert len(sc.groups) == 5 and all(len(g) == 2 for g in sc.groups)

    def test_cifar_shape(self):
        sc = make_class_il(100, 10, seed=1)
        assert [len(g) for g in sc.groups] == [10] * 10

    def test_singletons(self):
        sc = make_class_il(10, 10, seed=0)
        assert sorted(c for g in sc.groups for c in g) == list(range(10))

    def test_non_divisible(self):
        with pytest.raises(ValueError):
            make_class_il(10, 3, seed=0)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), phases=st.sampled_from([1, 2, 5, 10]))
    def test_partition(self, seed, phases):
        sc = make_class_il(10, phases, seed)
        flat = [c for g in sc.groups for c in g]
        assert sorted(flat) == list(range(10))

    def test_seeded(self):
        assert make_class_il(10, 5, 3).groups == make_class_il(10, 5, 3).groups


class TestDomainIL:
    def test_single_phase_identity(self):
        sc = make_domain_il(1, 16, seed=0)
        assert len(sc.perms) == 1 and sc.perms[0].is_identity

    def test_ten_phases(self):
        sc = make_domain_il(10, 1024, seed=5)
        assert len(sc.perms) == 10
        assert sc.perms[0].is_identity
        assert len({p.perm.tobytes() for p in sc.perms}) == 10

    def test_seeded(self):
        a, b = make_domain_il(4, 64, 2), make_domain_il(4, 64, 2)
        for p, q in zip(a.perms, b.perms):
            np.testing.assert_array_equal(p.perm, q.perm)


class TestEvalSet:
    def test_last_phase_is_full_test_set(self):
        sc = make_class_il(10, 5, 0)
        parts = eval_set_upto(sc, _test_set(), 5)
        assert sum(len(p) for p in parts) == 1000

    def test_first_phase(self):
        sc = make_class_il(10, 5, 0)
        parts = eval_set_upto(sc, _test_set(), 1)
        labels = np.concatenate([p.labels() for p in parts])
        assert set(labels.tolist()) == set(sc.groups[0])
        assert labels.size == 200

    def test_phase_two_has_four_classes(self):
        sc = make_class_il(10, 5, 0)
        labels = np.concatenate([p.labels() for p in eval_set_upto(sc, _test_set(), 2)])
        assert len(set(labels.tolist())) == 4

    def test_nested(self):
        sc = make_class_il(10, 5, 7)
        prev = set()
        for t in range(1, 6):
            cur = {c for p in eval_set_upto(sc, _test_set(), t) for c in p.labels().tolist()}
            assert prev <= cur
            prev = cur
        assert prev == set(range(10))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            eval_set_upto(make_class_il(10, 5, 0), _test_set(), 6)

    def test_domain_parts_are_permuted(self):
        rng = np.random.default_rng(0)
        test = Dataset(rng.random((5, 16)).astype(np.float32), np.arange(5))
        sc = make_domain_il(3, 16, seed=1)
        parts = eval_set_upto(sc, test, 3)
        assert [p.intro_phase for p in parts] == [1, 2, 3]
        np.testing.assert_array_equal(parts[0].features(), test.features)
        np.testing.assert_array_equal(parts[2].features(), test.features[:, sc.perms[2].perm])


def test_manifest_round_trip():
    for sc in (make_class_il(10, 5, 3), make_domain_il(4, 64, 9)):
        back = Scenario.from_manifest(sc.to_manifest())
        assert back.kind == sc.kind and back.n_phases == sc.n_phases
        assert back.groups == sc.groups
        for p, q in zip(back.perms, sc.perms):
            np.testing.assert_array_equal(p.perm, q.perm)
