"""Value-function protocol, built-in games, exact and approximate Shapley."""

from __future__ import annotations

import itertools
import math
import sys

import numpy as np
import pytest

from shed import errors
from shed.valuation import (
    ShapleyConfig,
    ValueFunctionSpec,
    approximate_shapley,
    builtin_value,
    evaluate_value,
    exact_shapley,
)


def py_cmd(code: str) -> list[str]:
    return [sys.executable, "-c", code]


def table_spec(ids, values):
    """Game defined by an explicit coalition-value table."""
    return ValueFunctionSpec.builtin("TABLE", {"table": values})


def random_table_game(ids, rng, scale=1.0):
    values = {}
    for r in range(len(ids) + 1):
        for combo in itertools.combinations(ids, r):
            values[frozenset(combo)] = float(rng.uniform(-scale, scale))
    values[frozenset()] = 0.0
    return values


def shapley_by_arrival_orders(spec, ids):
    """Independent oracle: average marginal contribution over all arrival orders."""
    totals = dict.fromkeys(ids, 0.0)
    for perm in itertools.permutations(ids):
        current: list[str] = []
        prev = evaluate_value(spec, current)
        for player in perm:
            current.append(player)
            now = evaluate_value(spec, current)
            totals[player] += now - prev
            prev = now
    norm = math.factorial(len(ids))
    return np.array([totals[i] / norm for i in ids])


# ---------------------------------------------------------------------------
# built-in games


class TestBuiltins:
    def test_additive(self):
        params = {"weights": {"a": 0.1, "b": 0.2}}
        assert builtin_value("ADDITIVE", params, ["a", "b"]) == pytest.approx(0.3)
        assert builtin_value("ADDITIVE", params, ["b"]) == 0.2

    def test_cardinality(self):
        assert builtin_value("CARDINALITY", {"exponent": 2}, ["a", "b", "c"]) == 9.0
        assert builtin_value("CARDINALITY", {"exponent": 2}, []) == 0.0

    def test_glove(self):
        params = {"left": "L", "rights": ["R1", "R2"]}
        assert builtin_value("GLOVE", params, ["L"]) == 0.0
        assert builtin_value("GLOVE", params, ["L", "R1"]) == 1.0
        assert builtin_value("GLOVE", params, ["R1", "R2"]) == 0.0

    def test_pair_synergy(self):
        params = {
            "weights": {"a": 1.0, "b": 2.0, "c": 4.0},
            "pairs": [("a", "b", 10.0)],
        }
        assert builtin_value("PAIR_SYNERGY", params, ["a", "c"]) == 5.0
        assert builtin_value("PAIR_SYNERGY", params, ["a", "b"]) == 13.0

    def test_demographic_parity(self):
        # group A positive rate 3/5 = 0.6, group B positive rate 2/5 = 0.4
        group_of, label_of = {}, {}
        subset = []
        for i in range(5):
            group_of[f"a{i}"] = "A"
            label_of[f"a{i}"] = "1" if i < 3 else "0"
            group_of[f"b{i}"] = "B"
            label_of[f"b{i}"] = "1" if i < 2 else "0"
            subset += [f"a{i}", f"b{i}"]
        params = {
            "group_of": group_of,
            "label_of": label_of,
            "positive_label": "1",
            "group_a": "A",
            "group_b": "B",
        }
        assert builtin_value("DEMOGRAPHIC_PARITY", params, subset) == pytest.approx(-0.2)
        # an absent group contributes rate 0
        only_a = [f"a{i}" for i in range(5)]
        assert builtin_value("DEMOGRAPHIC_PARITY", params, only_a) == pytest.approx(-0.6)

    def test_demographic_parity_missing_label(self):
        params = {
            "group_of": {"x": None},
            "label_of": {"x": "1"},
            "positive_label": "1",
            "group_a": "A",
            "group_b": "B",
        }
        with pytest.raises(errors.MissingGroupLabel):
            builtin_value("DEMOGRAPHIC_PARITY", params, ["x"])

    def test_nearest_centroid(self):
        train = np.array([[0.0, 0.0], [10.0, 10.0], [0.2, 0.0], [9.8, 10.0]])
        params = {
            "train_index": {"a": 0, "b": 1, "c": 2, "d": 3},
            "train_matrix": train,
            "train_labels": np.array(["lo", "hi", "lo", "hi"]),
            "dev_matrix": np.array([[0.1, 0.1], [9.9, 9.9], [0.0, 0.3]]),
            "dev_labels": np.array(["lo", "hi", "lo"]),
        }
        assert builtin_value("NEAREST_CENTROID", params, ["a", "b"]) == 1.0
        # training only on "hi" points predicts hi everywhere: 1/3 correct
        assert builtin_value("NEAREST_CENTROID", params, ["b", "d"]) == pytest.approx(1 / 3)


# ---------------------------------------------------------------------------
# evaluation protocol


class TestEvaluateValue:
    def test_builtin_dispatch(self):
        spec = ValueFunctionSpec.builtin("ADDITIVE", {"weights": {"a": 0.1, "b": 0.2}})
        assert evaluate_value(spec, ["a", "b"]) == pytest.approx(0.3)

    def test_empty_subset_is_declared_constant(self):
        # the command would fail if ever invoked
        spec = ValueFunctionSpec.external(
            py_cmd("import sys; sys.exit(9)"), empty_subset_value=0.25
        )
        assert evaluate_value(spec, []) == 0.25
        builtin = ValueFunctionSpec.builtin(
            "CARDINALITY", {"exponent": 2}, empty_subset_value=-1.0
        )
        assert evaluate_value(builtin, []) == -1.0

    def test_external_constant(self):
        spec = ValueFunctionSpec.external(
            py_cmd("import sys; sys.stdin.read(); print(0.5)")
        )
        assert evaluate_value(spec, ["x"]) == 0.5

    def test_external_reads_ids_lf_terminated(self):
        code = (
            "import sys; data = sys.stdin.buffer.read(); "
            "assert data == b'a\\nbee\\n', data; print(len(data) * 0.5)"
        )
        spec = ValueFunctionSpec.external(py_cmd(code))
        assert evaluate_value(spec, ["a", "bee"]) == 3.0

    def test_malformed_score(self):
        spec = ValueFunctionSpec.external(py_cmd("import sys; sys.stdin.read(); print('abc')"))
        with pytest.raises(errors.MalformedScore):
            evaluate_value(spec, ["x"])

    def test_multiple_tokens_rejected(self):
        spec = ValueFunctionSpec.external(py_cmd("import sys; sys.stdin.read(); print('1 2')"))
        with pytest.raises(errors.MalformedScore):
            evaluate_value(spec, ["x"])

    def test_non_finite_rejected(self):
        spec = ValueFunctionSpec.external(py_cmd("import sys; sys.stdin.read(); print('nan')"))
        with pytest.raises(errors.MalformedScore):
            evaluate_value(spec, ["x"])

    def test_command_failed(self):
        spec = ValueFunctionSpec.external(py_cmd("import sys; sys.exit(3)"))
        with pytest.raises(errors.CommandFailed):
            evaluate_value(spec, ["x"])

    def test_missing_command(self):
        spec = ValueFunctionSpec.external(["/no/such/binary-xyz"])
        with pytest.raises(errors.CommandFailed):
            evaluate_value(spec, ["x"])

    def test_timeout(self):
        spec = ValueFunctionSpec.external(
            py_cmd("import time; time.sleep(30)"), timeout=0.5
        )
        with pytest.raises(errors.Timeout):
            evaluate_value(spec, ["x"])

    def test_run_id_env_set(self, tmp_path):
        marker = tmp_path / "run_id.txt"
        code = (
            "import os, sys; sys.stdin.read(); "
            f"open({str(marker)!r}, 'w').write(os.environ['SHED_RUN_ID']); print(0)"
        )
        spec = ValueFunctionSpec.external(py_cmd(code))
        evaluate_value(spec, ["x"])
        assert marker.read_text().strip()

    def test_whitespace_tolerated(self):
        spec = ValueFunctionSpec.external(
            py_cmd("import sys; sys.stdin.read(); print('  1.25  ')")
        )
        assert evaluate_value(spec, ["x"]) == 1.25


# ---------------------------------------------------------------------------
# exact Shapley


class TestExactShapley:
    def test_additive_equals_weights(self):
        spec = ValueFunctionSpec.builtin(
            "ADDITIVE", {"weights": {"a": 1.0, "b": 2.0, "c": 3.0}}
        )
        scores = exact_shapley(spec, ["a", "b", "c"])
        assert scores == pytest.approx([1.0, 2.0, 3.0], rel=1e-12)

    def test_majority_game_symmetry(self):
        ids = ["p", "q", "r"]
        values = {
            frozenset(c): (1.0 if len(c) >= 2 else 0.0)
            for r in range(4)
            for c in itertools.combinations(ids, r)
        }
        scores = exact_shapley(table_spec(ids, values), ids)
        assert scores == pytest.approx([1 / 3] * 3, rel=1e-12)

    def test_glove_game(self):
        spec = ValueFunctionSpec.builtin("GLOVE", {"left": "L", "rights": ["R1", "R2"]})
        scores = exact_shapley(spec, ["L", "R1", "R2"])
        assert scores == pytest.approx([2 / 3, 1 / 6, 1 / 6], rel=1e-12)

    def test_matches_arrival_order_oracle(self):
        rng = np.random.default_rng(42)
        ids = [f"p{i}" for i in range(5)]
        spec = table_spec(ids, random_table_game(ids, rng))
        assert exact_shapley(spec, ids) == pytest.approx(
            shapley_by_arrival_orders(spec, ids), rel=1e-10, abs=1e-12
        )

    def test_efficiency(self):
        rng = np.random.default_rng(7)
        ids = [f"p{i}" for i in range(6)]
        values = random_table_game(ids, rng)
        spec = table_spec(ids, values)
        scores = exact_shapley(spec, ids)
        assert math.fsum(scores) == pytest.approx(
            values[frozenset(ids)] - 0.0, rel=1e-9
        )

    def test_player_limit(self):
        ids = [f"p{i}" for i in range(21)]
        spec = ValueFunctionSpec.builtin("CARDINALITY", {"exponent": 1})
        with pytest.raises(errors.TooLargeForExact):
            exact_shapley(spec, ids)


# ---------------------------------------------------------------------------
# group-removal estimator


def additive_spec(weights):
    return ValueFunctionSpec.builtin("ADDITIVE", {"weights": weights})


class TestApproximateShapley:
    def test_additive_exact_any_seed_any_k(self):
        # dyadic weights: every partial sum and difference is exact in float64
        weights = {"a": 3 / 32, "b": 7 / 16, "c": 5 / 8}
        ids = list(weights)
        expected = np.array([weights[i] for i in ids])
        for seed in (0, 1, 99):
            for k in (1, 4):
                got = approximate_shapley(
                    additive_spec(weights), ids, ShapleyConfig(1, iterations=k, seed=seed)
                )
                assert np.array_equal(got.scores, expected)

    def test_additive_decimal_weights_close(self):
        # 0.1/0.2/0.3 cannot telescope bit-exactly through a float-valued v;
        # the estimator still lands within an ulp or two
        weights = {"a": 0.1, "b": 0.2, "c": 0.3}
        got = approximate_shapley(
            additive_spec(weights), list(weights), ShapleyConfig(1, iterations=5, seed=3)
        )
        assert got.scores == pytest.approx([0.1, 0.2, 0.3], rel=1e-14)

    def test_cardinality_removal_chain(self):
        # seed 0 permutes 3 proxies to removal order (row2, row0, row1):
        # 9-4=5 for row2, 4-1=3 for row0, 1-0=1 for row1
        assert list(np.random.default_rng(0).permutation(3)) == [2, 0, 1]
        spec = ValueFunctionSpec.builtin("CARDINALITY", {"exponent": 2})
        got = approximate_shapley(
            spec, ["r0", "r1", "r2"], ShapleyConfig(1, iterations=1, seed=0)
        )
        assert got.scores.tolist() == [3.0, 1.0, 5.0]
        assert got.value_full == 9.0
        assert got.value_empty == 0.0

    @pytest.mark.parametrize("m,n,k,seed", [
        (5, 1, 1, 0), (5, 2, 3, 1), (7, 3, 2, 2), (8, 8, 1, 3), (6, 4, 5, 4),
    ])
    def test_telescoping_efficiency(self, m, n, k, seed):
        rng = np.random.default_rng(seed + 100)
        ids = [f"p{i}" for i in range(m)]
        spec = table_spec(ids, random_table_game(ids, rng, scale=5.0))
        got = approximate_shapley(spec, ids, ShapleyConfig(n, iterations=k, seed=seed))
        total = math.fsum(got.scores)
        assert total == pytest.approx(got.value_full - got.value_empty, rel=1e-9, abs=1e-9)

    def test_remainder_group_division(self):
        # 5 proxies, n=2: final group has one member and divides by 1, not 2
        weights = {f"p{i}": float(2 ** i) for i in range(5)}
        ids = list(weights)
        got = approximate_shapley(
            additive_spec(weights), ids, ShapleyConfig(2, iterations=1, seed=0)
        )
        assert np.array_equal(got.scores, np.array([1.0, 2.0, 4.0, 8.0, 16.0]))

    def test_evaluation_budget(self):
        spec = ValueFunctionSpec.builtin("CARDINALITY", {"exponent": 1})
        for m, n, k in [(6, 1, 2), (6, 4, 3), (5, 5, 1), (7, 3, 10)]:
            ids = [f"p{i}" for i in range(m)]
            got = approximate_shapley(spec, ids, ShapleyConfig(n, iterations=k, seed=0))
            assert got.evaluations_used == k * math.ceil(m / n) + 1

    def test_seed_determinism(self):
        rng = np.random.default_rng(5)
        ids = [f"p{i}" for i in range(6)]
        spec = table_spec(ids, random_table_game(ids, rng))
        a = approximate_shapley(spec, ids, ShapleyConfig(2, iterations=4, seed=11))
        b = approximate_shapley(spec, ids, ShapleyConfig(2, iterations=4, seed=11))
        assert np.array_equal(a.scores, b.scores)
        assert np.array_equal(
            a.per_iteration_contributions, b.per_iteration_contributions
        )
        c = approximate_shapley(spec, ids, ShapleyConfig(2, iterations=4, seed=12))
        assert not np.array_equal(a.scores, c.scores)

    def test_parallel_chains_match_sequential(self):
        code = (
            "import sys; ids = sys.stdin.read().split(); "
            "print(sum((i + 1) * len(x) for i, x in enumerate(sorted(ids))) * 0.03125)"
        )
        ids = ["aa", "b", "cccc", "dd"]
        seq = ValueFunctionSpec.external(py_cmd(code), max_parallel_invocations=1)
        par = ValueFunctionSpec.external(py_cmd(code), max_parallel_invocations=4)
        cfg = ShapleyConfig(2, iterations=4, seed=9)
        a = approximate_shapley(seq, ids, cfg)
        b = approximate_shapley(par, ids, cfg)
        assert np.array_equal(a.scores, b.scores)

    def test_convergence_to_exact_smoke(self):
        rng = np.random.default_rng(202)
        ids = [f"p{i}" for i in range(6)]
        spec = table_spec(ids, random_table_game(ids, rng))
        exact = exact_shapley(spec, ids)
        approx = approximate_shapley(spec, ids, ShapleyConfig(1, iterations=3000, seed=0))
        spread = exact.max() - exact.min()
        assert np.abs(approx.scores - exact).max() <= 0.02 * spread

    def test_invalid_group_size(self):
        spec = ValueFunctionSpec.builtin("CARDINALITY", {"exponent": 1})
        with pytest.raises(errors.InvalidGroupSize):
            approximate_shapley(spec, ["a"], ShapleyConfig(2, iterations=1, seed=0))
        with pytest.raises(errors.InvalidGroupSize):
            ShapleyConfig(0, iterations=1, seed=0)

    def test_error_propagates(self):
        spec = ValueFunctionSpec.external(py_cmd("import sys; sys.exit(1)"))
        with pytest.raises(errors.CommandFailed):
            approximate_shapley(spec, ["a", "b"], ShapleyConfig(1, iterations=1, seed=0))
