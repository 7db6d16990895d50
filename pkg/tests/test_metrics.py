import itertools
import math

import numpy as np
import pytest
from sklearn.metrics import adjusted_mutual_info_score, adjusted_rand_score, rand_score

from segfusion import (
    ConstraintSet,
    DimensionMismatch,
    Ensemble,
    SoftConnectivity,
    adjusted_mutual_information,
    adjusted_rand_index,
    bregman_connectivity_distance,
    contingency,
    evaluate,
    pair_counts,
    rand_index,
    sdd,
)
from segfusion.metrics import (
    ConnectivityGram,
    bregman_divergence,
    connectivity_entry,
    expected_mutual_information,
    pairwise_d,
)
from conftest import brute_pair_counts, brute_sdd, random_seg, seg

A = seg([0, 0, 1, 1])
B = seg([0, 1, 1, 1])


class TestPairCounts:
    def test_worked_example(self):
        pc = pair_counts(contingency(A, B))
        assert (pc.n11, pc.n10, pc.n01, pc.n00) == (1, 1, 2, 2)

    def test_identity(self, rng):
        s = random_seg(rng, 20, 4)
        pc = pair_counts(contingency(s, s))
        assert pc.n10 == pc.n01 == 0

    def test_matches_enumeration(self, rng):
        for _ in range(30):
            a, b = random_seg(rng, 25, 4), random_seg(rng, 25, 3)
            pc = pair_counts(contingency(a, b))
            assert (pc.n11, pc.n10, pc.n01, pc.n00) == brute_pair_counts(a, b)
            assert pc.total == math.comb(25, 2)

    def test_large_counts_are_exact_python_ints(self):
        n = 3_000_000
        t = contingency(seg(np.zeros(n, dtype=int)), seg(np.zeros(n, dtype=int)))
        pc = pair_counts(t)
        assert isinstance(pc.n11, int) and pc.n11 == n * (n - 1) // 2


class TestSdd:
    def test_examples(self):
        assert sdd(A, B) == 3
        assert sdd(seg([0, 1]), seg([0, 0])) == 1
        assert sdd(A, A) == 0

    def test_relabeling_invariance(self, rng):
        a, b = random_seg(rng, 20, 4), random_seg(rng, 20, 4)
        perm = rng.permutation(4)
        assert sdd(a, b) == sdd(seg(perm[a.labels]), b) == sdd(a, seg(perm[b.labels]))

    def test_metric_axioms(self, rng):
        for _ in range(60):
            n = int(rng.integers(2, 21))
            a, b, c = (random_seg(rng, n, 3) for _ in range(3))
            assert sdd(a, b) == sdd(b, a) == brute_sdd(a, b)
            assert sdd(a, c) <= sdd(a, b) + sdd(b, c)
            # zero exactly for equal partitions, whatever the label names
            same_partition = all(
                (a.labels[m] == a.labels[l]) == (b.labels[m] == b.labels[l])
                for m, l in itertools.combinations(range(n), 2)
            )
            assert (sdd(a, b) == 0) == same_partition

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            sdd(seg([0, 1]), seg([0, 1, 0]))


class TestConnectivity:
    def test_entries(self):
        s = seg([0, 0, 1])
        assert connectivity_entry(s, 0, 1) == 1
        assert connectivity_entry(s, 0, 2) == 0
        assert all(connectivity_entry(s, m, m) == 1 for m in range(3))

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            connectivity_entry(seg([0, 1]), 0, 2)
        with pytest.raises(IndexError):
            pairwise_d(seg([0, 1]), seg([0, 1]), -1, 0)

    def test_pairwise_d(self):
        assert pairwise_d(A, B, 0, 1) == 1
        assert pairwise_d(A, A, 0, 3) == 0

    def test_pairwise_sum_is_sdd(self, rng):
        a, b = random_seg(rng, 20, 3), random_seg(rng, 20, 3)
        total = sum(pairwise_d(a, b, m, l) for m, l in itertools.combinations(range(20), 2))
        assert total == sdd(a, b)


class TestBregman:
    def test_divergence_scalar(self):
        assert bregman_divergence(0.25, 1.0) == pytest.approx(0.5625)
        assert bregman_divergence(3.0, 3.0) == 0.0

    def test_hard_consensus_of_itself_is_zero(self, rng):
        s = random_seg(rng, 15, 3)
        assert bregman_connectivity_distance(SoftConnectivity(Ensemble((s,)), [1.0]), s) == 0.0

    def test_hard_p_reduces_to_sdd(self, rng):
        for _ in range(10):
            a, s = random_seg(rng, 18, 3), random_seg(rng, 18, 4)
            p = SoftConnectivity(Ensemble((a,)), [1.0])
            assert bregman_connectivity_distance(p, s) == pytest.approx(sdd(a, s), abs=1e-9)

    def test_matches_dense_sum(self, rng):
        for trial in range(15):
            k = int(rng.integers(1, 5))
            e = Ensemble(tuple(random_seg(rng, 15, 3) for _ in range(k)))
            w = rng.dirichlet(np.ones(k))
            cons = ConstraintSet()
            if trial % 2:
                truth = random_seg(rng, 15, 3).labels
                pairs = [p for p in itertools.combinations(range(15), 2) if rng.random() < 0.1]
                ml = [p for p in pairs if truth[p[0]] == truth[p[1]]]
                cl = [p for p in pairs if truth[p[0]] != truth[p[1]]]
                cons = ConstraintSet.from_pairs(ml, cl)
            p = SoftConnectivity(e, w, cons)
            s = random_seg(rng, 15, 3)
            dense = p.dense()
            m_s = (s.labels[:, None] == s.labels[None, :]).astype(float)
            iu = np.triu_indices(15, 1)
            oracle = bregman_divergence(dense[iu], m_s[iu]).sum()
            assert bregman_connectivity_distance(p, s) == pytest.approx(oracle, abs=1e-9)

    def test_gram_member_distances(self, rng):
        e = Ensemble(tuple(random_seg(rng, 12, 3) for _ in range(4)))
        cons = ConstraintSet.from_pairs([(0, 1), (1, 5)], [(2, 9)])
        w = rng.dirichlet(np.ones(4))
        d = ConnectivityGram(e, cons).member_distances(w)
        p = SoftConnectivity(e, w, cons)
        # distance of each member's connectivity to the soft consensus, with
        # constrained pairs compared against their clamped values
        dense = p.dense()
        iu = np.triu_indices(12, 1)
        for i, s in enumerate(e):
            m_s = (s.labels[:, None] == s.labels[None, :]).astype(float)
            assert d[i] == pytest.approx(((dense[iu] - m_s[iu]) ** 2).sum(), abs=1e-9)

    def test_dimension_mismatch(self):
        p = SoftConnectivity(Ensemble((seg([0, 1]),)), [1.0])
        with pytest.raises(DimensionMismatch):
            bregman_connectivity_distance(p, seg([0, 1, 1]))


class TestIndices:
    def test_identity(self, rng):
        s = random_seg(rng, 40, 5)
        assert rand_index(s, s) == 1.0
        assert adjusted_rand_index(s, s) == 1.0
        assert adjusted_mutual_information(s, s) == 1.0

    def test_rand_worked_example(self):
        assert rand_index(A, B) == 0.5

    def test_single_segment_both_sides(self):
        s = seg([0] * 6)
        assert adjusted_rand_index(s, s) == 1.0
        assert adjusted_mutual_information(s, s) == 1.0

    def test_too_few_pixels(self):
        for f in (rand_index, adjusted_rand_index, adjusted_mutual_information):
            with pytest.raises(ValueError):
                f(seg([0]), seg([0]))

    def test_against_sklearn(self, rng):
        for _ in range(40):
            n = int(rng.integers(2, 80))
            a, b = random_seg(rng, n, int(rng.integers(1, 6))), random_seg(rng, n, int(rng.integers(1, 6)))
            assert rand_index(a, b) == pytest.approx(rand_score(a.labels, b.labels), abs=1e-12)
            assert adjusted_rand_index(a, b) == pytest.approx(
                adjusted_rand_score(a.labels, b.labels), abs=1e-10)
            assert adjusted_mutual_information(a, b) == pytest.approx(
                adjusted_mutual_info_score(a.labels, b.labels, average_method="max"), abs=1e-8)

    def test_expected_mi_by_enumeration(self):
        # exact expectation over every relabeling of b for a tiny instance
        a, b = seg([0, 0, 1, 1, 1]), seg([0, 1, 1, 2, 2])
        from segfusion.metrics import _mutual_information

        values = [
            _mutual_information(contingency(a, seg([b.labels[i] for i in perm])))
            for perm in itertools.permutations(range(5))
        ]
        assert expected_mutual_information(contingency(a, b)) == pytest.approx(np.mean(values), abs=1e-12)

    def test_permutation_invariance(self, rng):
        a, b = random_seg(rng, 50, 4), random_seg(rng, 50, 3)
        pa = seg(rng.permutation(4)[a.labels])
        for f in (rand_index, adjusted_rand_index, adjusted_mutual_information):
            assert f(a, b) == pytest.approx(f(pa, b), abs=1e-12)

    def test_evaluate_keys(self, rng):
        a, b = random_seg(rng, 30, 3), random_seg(rng, 30, 3)
        out = evaluate(a, b)
        assert set(out) == {"RI", "ARI", "AMI"}
        assert out["ARI"] == adjusted_rand_index(a, b)
