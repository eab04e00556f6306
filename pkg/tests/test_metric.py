import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import METRIC_ONLY_ROWS, as_lists, brute_isosceles, brute_triples, naive_lca_height
from ultramedian.errors import DomainError, FormatError
from ultramedian.generators import GenSpec, generate
from ultramedian.metric import (
    DendrogramSpace,
    DistanceMatrixSpace,
    DistanceOracle,
    dendrogram_to_matrix,
    isosceles_check,
    query,
    validate,
)


class TestQuery:
    def test_examples(self, d4):
        oracle = DistanceOracle(d4)
        assert query(oracle, 1, 1) == 0.0
        assert query(oracle, 1, 3) == 4.0
        assert query(oracle, 3, 4) == 2.0
        assert oracle.query_count == 3

    def test_identity_query_is_counted(self, d4):
        oracle = DistanceOracle(d4)
        query(oracle, 2, 2)
        assert oracle.query_count == 1

    @pytest.mark.parametrize("a, b", [(0, 1), (1, 5), (-1, 2), (1.0, 2), (True, 1)])
    def test_bad_point_ids(self, d4, a, b):
        oracle = DistanceOracle(d4)
        with pytest.raises(DomainError):
            query(oracle, a, b)
        assert oracle.query_count == 0

    def test_block_counts_every_pair(self, d4):
        oracle = DistanceOracle(d4)
        block = oracle.query_block([1, 3], [1, 2, 3])
        assert block.tolist() == [[0, 1, 4], [4, 4, 0]]
        assert oracle.query_count == 6
        oracle.query_row(4)
        assert oracle.query_count == 10

    def test_bit_exact_against_space(self):
        space = generate(GenSpec("random-dendrogram", 40, seed=3))
        oracle = DistanceOracle(space)
        for a in range(1, 41, 7):
            for b in range(1, 41, 3):
                assert oracle.query(a, b) == space.distance(a, b)

    @given(st.lists(st.one_of(st.just("q"), st.tuples(st.integers(0, 4), st.integers(0, 4))), max_size=30))
    def test_count_matches_calls_for_any_interleaving(self, ops):
        oracle = DistanceOracle(DistanceMatrixSpace([[0, 1, 4, 4], [1, 0, 4, 4], [4, 4, 0, 2], [4, 4, 2, 0]]))
        expected = 0
        for op in ops:
            if op == "q":
                oracle.query(1, 2)
                expected += 1
            else:
                r, c = op
                oracle.query_block([1] * r, [2] * c)
                expected += r * c
        assert oracle.query_count == expected

    def test_shared_oracle_across_threads(self, d4):
        oracle = DistanceOracle(d4)

        def work():
            for _ in range(2000):
                oracle.query(1, 3)

        threads = [threading.Thread(target=work) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert oracle.query_count == 8000


class TestValidate:
    def test_d4_is_ultrametric(self, d4):
        assert brute_triples(as_lists(d4)) == (True, True)
        verdict = validate(d4)
        assert verdict.ultrametric and verdict.valid
        assert str(verdict).startswith("Valid(Ultrametric)")

    def test_metric_only_witness(self):
        assert brute_triples(METRIC_ONLY_ROWS) == (False, True)
        verdict = validate(METRIC_ONLY_ROWS)
        assert verdict.kind == "metric-only"
        assert verdict.witness == (1, 2, 3)
        x, y, z = verdict.witness
        d = METRIC_ONLY_ROWS
        assert d[x - 1][z - 1] > max(d[x - 1][y - 1], d[y - 1][z - 1])

    def test_single_point(self):
        assert validate([[0]]).ultrametric

    def test_triangle_violation_is_invalid(self):
        verdict = validate([[0, 1, 5], [1, 0, 1], [5, 1, 0]])
        assert verdict.kind == "invalid"
        assert verdict.witness == (1, 2, 3)

    @pytest.mark.parametrize(
        "rows, witness",
        [
            ([[0, 1], [2, 0]], (1, 2)),
            ([[1, 1], [1, 0]], (1, 1)),
            ([[0, 0], [0, 0]], (1, 2)),
        ],
    )
    def test_invalid_pairs(self, rows, witness):
        verdict = validate(rows)
        assert verdict.kind == "invalid" and verdict.witness == witness

    def test_allow_pseudo_downgrades_zero_distance(self):
        with pytest.warns(UserWarning):
            verdict = validate([[0, 0, 1], [0, 0, 1], [1, 1, 0]], allow_pseudo=True)
        assert verdict.ultrametric

    @pytest.mark.parametrize(
        "rows",
        [
            [[0, 1, 2], [1, 0, 1]],
            [[0, -1], [-1, 0]],
            [[0, float("nan")], [float("nan"), 0]],
            [[0, float("inf")], [float("inf"), 0]],
            [],
            "abc",
        ],
    )
    def test_format_errors(self, rows):
        with pytest.raises(FormatError):
            validate(rows)

    def test_tolerance_absorbs_rounding(self):
        eps = 1e-12
        rows = [[0, 1, 1 + eps], [1, 0, 1], [1 + eps, 1, 0]]
        assert validate(rows).ultrametric

    def test_sampled_mode_above_cap(self):
        space = generate(GenSpec("perturbed-metric", 30, seed=2, delta=1.0))
        full = validate(space)
        sampled = validate(space, max_full=10, sample_budget=200_000, seed=1)
        assert sampled.sampled and not full.sampled
        assert sampled.kind == full.kind == "metric-only"
        ultra = dendrogram_to_matrix(generate(GenSpec("random-dendrogram", 30, seed=2)))
        assert validate(ultra, max_full=10, sample_budget=10_000).ultrametric

    def test_env_cap_switches_to_sampling(self, monkeypatch, d4):
        monkeypatch.setenv("ULTRAMEDIAN_MAX_N", "2")
        assert validate(d4).sampled
        monkeypatch.setenv("ULTRAMEDIAN_MAX_N", "zero")
        with pytest.raises(DomainError):
            validate(d4)

    def test_dendrogram_validated_structurally(self):
        assert validate(generate(GenSpec("random-dendrogram", 100, seed=1))).ultrametric

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32), st.sampled_from(["random-dendrogram", "perturbed-metric"]), st.randoms())
    def test_verdict_invariant_under_permutation(self, seed, family, rnd):
        spec = GenSpec(family, 12, seed=seed, delta=1.0 if family == "perturbed-metric" else 0.0)
        d = np.asarray(generate(spec).matrix())
        perm = list(range(12))
        rnd.shuffle(perm)
        assert validate(d).kind == validate(d[np.ix_(perm, perm)]).kind


class TestIsosceles:
    def test_d4_full_enumeration(self, d4):
        assert brute_isosceles(as_lists(d4))
        res = isosceles_check(d4)
        assert res.passed and res.exhaustive and res.checked == 64

    def test_metric_only_fails_at_first_triple(self):
        assert not brute_isosceles(METRIC_ONLY_ROWS)
        res = isosceles_check(METRIC_ONLY_ROWS)
        assert not res.passed and res.triple == (1, 2, 3)

    def test_single_point(self):
        assert isosceles_check([[0]]).passed

    def test_sampled_mode(self):
        space = generate(GenSpec("random-dendrogram", 200, seed=4))
        res = isosceles_check(space, sample_budget=50_000, seed=2)
        assert res.passed and not res.exhaustive
        bad = generate(GenSpec("perturbed-metric", 60, seed=4, delta=1.0))
        assert not isosceles_check(bad, sample_budget=50_000).passed


class TestDendrogram:
    def test_two_leaves(self):
        space = DendrogramSpace(2, [2, 2, -1], [0, 0, 5])
        assert dendrogram_to_matrix(space).d.tolist() == [[0, 5], [5, 0]]

    def test_single_leaf(self):
        assert dendrogram_to_matrix(DendrogramSpace(1, [-1], [0])).d.tolist() == [[0]]

    def test_balanced_four_leaves(self):
        # nodes 4, 5 join (p1,p2) and (p3,p4) at height 1; root 6 at height 3
        space = DendrogramSpace(4, [4, 4, 5, 5, 6, 6, -1], [0, 0, 0, 0, 1, 1, 3])
        expected = [[0, 1, 3, 3], [1, 0, 3, 3], [3, 3, 0, 1], [3, 3, 1, 0]]
        assert dendrogram_to_matrix(space).d.tolist() == expected
        for x in range(4):
            for y in range(4):
                assert expected[x][y] == naive_lca_height(space, x, y)
        assert validate(dendrogram_to_matrix(space)).ultrametric

    @pytest.mark.parametrize(
        "n, parent, height",
        [
            (2, [2, 2, -1], [0, 0, 0]),  # root height not positive
            (2, [2, 2, 3, -1], [0, 0, 1, 2]),  # unary node
            (3, [3, 3, 4, 4, -1], [0, 0, 0, 2, 1]),  # height decreases upward
            (2, [2, -1, -1], [0, 0, 1]),  # two roots
            (2, [1, 2, -1], [0, 0, 1]),  # leaf used as parent
            (2, [2, 2, -1], [0, 0.5, 1]),  # leaf with height
            (0, [], []),
        ],
    )
    def test_malformed(self, n, parent, height):
        with pytest.raises(FormatError):
            DendrogramSpace(n, parent, height)

    def test_to_matrix_rejects_matrix(self, d4):
        with pytest.raises(FormatError):
            dendrogram_to_matrix(d4)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 60), st.integers(0, 2**40))
    def test_rmq_matches_naive_lca(self, n, seed):
        space = generate(GenSpec("random-dendrogram", n, seed=seed))
        m = space.matrix()
        for x in range(n):
            for y in range(n):
                assert m[x, y] == naive_lca_height(space, x, y)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 40), st.integers(0, 2**40))
    def test_materialized_matrix_is_ultrametric(self, n, seed):
        mat = dendrogram_to_matrix(generate(GenSpec("random-dendrogram", n, seed=seed)))
        assert validate(mat).ultrametric

    def test_scaled(self, d4):
        space = generate(GenSpec("random-dendrogram", 10, seed=1))
        assert np.array_equal(space.scaled(2.0).matrix(), space.matrix() * 2.0)
        assert np.array_equal(d4.scaled(3.0).d, d4.d * 3.0)
        with pytest.raises(DomainError):
            d4.scaled(0)
