"""Instance sampling, reference executors, brute-force oracles and the trace container."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnar.algorithms import ALGORITHMS, InstanceError, array_pointer, run_algorithm
from gnar.algorithms.graphs import sample_er_graph
from gnar.container import ContainerError, decode, encode, read_container, write_container
from gnar.oracles import CHECKERS, ORACLE_SIZES, all_pairs, check_trajectory, dijkstra, hull_vertices
from gnar.sampling import STRING_N, Sampler, SamplerConfig, generate, sample_eval, sample_problem
from gnar.specs import validate_trajectory


def _flat(a):
    return np.asarray(a)[..., 0]


class TestErdosRenyi:
    def test_p_zero(self):
        np.testing.assert_array_equal(sample_er_graph(5, 0.0, np.random.default_rng(0)), np.zeros((5, 5)))

    def test_p_one(self):
        a = sample_er_graph(5, 1.0, np.random.default_rng(0))
        assert a.sum() / 2 == 10
        np.testing.assert_array_equal(np.diag(a), 0)

    def test_mean_edge_count(self):
        rng = np.random.default_rng(2024)
        counts = np.array([sample_er_graph(16, 0.5, rng).sum() / 2 for _ in range(10_000)])
        # Binomial(120, 1/2): the standard error of the mean is sqrt(30 / 10000).
        assert abs(counts.mean() - 60.0) < 3 * np.sqrt(30.0 / 10_000)

    def test_symmetric_unless_directed(self):
        rng = np.random.default_rng(1)
        a = sample_er_graph(9, 0.5, rng)
        np.testing.assert_array_equal(a, a.T)
        d = sample_er_graph(30, 0.5, rng, directed=True)
        assert not np.array_equal(d, d.T)

    def test_bad_probability(self):
        with pytest.raises(ValueError):
            sample_er_graph(4, 1.5, np.random.default_rng(0))


class TestSampler:
    def test_string_tasks_fixed_length(self):
        rng = np.random.default_rng(0)
        cfg = SamplerConfig("naive_string_matcher")
        assert cfg.size_range == (STRING_N, STRING_N)
        assert {sample_problem(cfg, rng).n for _ in range(20)} == {20}

    def test_graph_size_histogram_covers_range(self):
        cfg = SamplerConfig("bfs", p_set=(0.5,))
        rng = np.random.default_rng(7)
        sizes = {sample_problem(cfg, rng).n for _ in range(1000)}
        assert sizes == set(range(4, 17))

    def test_stream_is_indexed(self):
        cfg = SamplerConfig("insertion_sort", seed=5)
        a = Sampler(cfg)
        first = [next(a) for _ in range(3)]
        b = Sampler(cfg)
        np.testing.assert_array_equal(b.at(2).inputs["key"], first[2].inputs["key"])

    def test_pos_strictly_increasing(self):
        t = sample_problem(SamplerConfig("bubble_sort"), np.random.default_rng(3))
        assert np.all(np.diff(_flat(t.inputs["pos"])) > 0)

    def test_fixed_pos(self):
        t = sample_eval("minimum", 4, np.random.default_rng(0), random_pos=False)
        np.testing.assert_allclose(_flat(t.inputs["pos"]), [0, 0.25, 0.5, 0.75])

    @pytest.mark.parametrize("kw", [dict(size_range=(2, 8)), dict(p_set=(0.0,)), dict(needle_max=0)])
    def test_rejects_bad_config(self, kw):
        with pytest.raises(ValueError):
            SamplerConfig("bfs", **kw)

    def test_graph_needs_p(self):
        with pytest.raises(ValueError):
            generate("bfs", 5, np.random.default_rng(0))


class TestExecutors:
    def test_insertion_sort_example(self):
        t = run_algorithm("insertion_sort", {"key": np.array([0.3, 0.1, 0.2])})
        np.testing.assert_array_equal(_flat(t.outputs["pred"]), [2, 1, 1])

    def test_sorting_singleton(self):
        for alg in ("insertion_sort", "bubble_sort"):
            t = run_algorithm(alg, {"key": np.array([0.4])})
            assert t.T == 1
            np.testing.assert_array_equal(_flat(t.outputs["pred"]), [0])

    def test_bellman_ford_example(self):
        w = np.zeros((3, 3))
        w[0, 1], w[1, 2], w[0, 2] = 1.0, 2.0, 4.0
        t = run_algorithm("bellman_ford", {"A": w, "adj": (w > 0).astype(float), "s": 0})
        np.testing.assert_allclose(_flat(t.hints["d"][-1]), [0, 1, 3])
        np.testing.assert_array_equal(_flat(t.outputs["pi"]), [0, 0, 1])

    def test_minimum_singleton(self):
        t = run_algorithm("minimum", {"key": np.array([0.7])})
        assert t.T == 1
        np.testing.assert_array_equal(_flat(t.outputs["min"]), [1])

    def test_bfs_path(self):
        a = np.zeros((4, 4))
        for i in range(3):
            a[i, i + 1] = a[i + 1, i] = 1
        t = run_algorithm("bfs", {"A": a, "s": 0})
        np.testing.assert_array_equal(_flat(t.outputs["pi"]), [0, 0, 1, 2])
        assert t.T == 4

    def test_array_pointer(self):
        np.testing.assert_array_equal(array_pointer([1, 2, 0], 3), [2, 1, 1])
        np.testing.assert_array_equal(array_pointer([0], 1), [0])

    def test_non_square_adjacency(self):
        with pytest.raises(InstanceError):
            run_algorithm("bfs", {"A": np.zeros((2, 3)), "s": 0})

    def test_pointer_hints_start_at_identity(self):
        t = generate("bfs", 6, np.random.default_rng(4), p=0.3)
        np.testing.assert_array_equal(_flat(t.hints["pi_h"][0]), np.arange(6))


class TestOracles:
    def test_dijkstra_example(self):
        w = np.array([[0, 1, 4], [0, 0, 2], [0, 0, 0]], float)
        np.testing.assert_allclose(dijkstra(w, w > 0, 0), [0, 1, 3])

    def test_all_pairs_example(self):
        w = np.array([[0, 1, 4], [0, 0, 2], [0, 0, 0]], float)
        d = all_pairs(w, w > 0)
        np.testing.assert_allclose(d[0], [0, 1, 3])
        assert np.isinf(d[2, 0])

    def test_hull_of_square_with_centre(self):
        pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]])
        assert hull_vertices(pts) == {0, 1, 2, 3}

    def test_checker_detects_tampering(self):
        t = run_algorithm("insertion_sort", {"key": np.array([0.3, 0.1, 0.2])})
        assert check_trajectory("insertion_sort", t) == []
        from gnar.specs import Trajectory

        bad = Trajectory(t.n, t.T, t.inputs, t.hints, {"pred": np.array([[1.0], [1.0], [1.0]])})
        assert check_trajectory("insertion_sort", bad) != []

    @pytest.mark.parametrize("alg", sorted(CHECKERS))
    def test_random_instances_agree(self, alg):
        rng = np.random.default_rng([11, len(alg)])
        lo, hi = ORACLE_SIZES.get(alg, (4, 16))
        cfg = SamplerConfig(alg, size_range=None if alg == "naive_string_matcher" else (lo, hi))
        for _ in range(40):
            t = sample_problem(cfg, rng)
            assert check_trajectory(alg, t) == [], alg
            assert validate_trajectory(ALGORITHMS[alg].spec, t) == []


@settings(max_examples=60, deadline=None)
@given(keys=st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=12, unique=True))
def test_sorting_outputs_sorted_chain(keys):
    for alg in ("insertion_sort", "bubble_sort"):
        t = run_algorithm(alg, {"key": np.array(keys)})
        assert check_trajectory(alg, t) == []


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 10), p=st.sampled_from([0.1, 0.5, 0.9]))
def test_bfs_matches_layers(seed, n, p):
    t = generate("bfs", n, np.random.default_rng(seed), p=p)
    assert check_trajectory("bfs", t) == []


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 9))
def test_bellman_ford_matches_dijkstra(seed, n):
    t = generate("bellman_ford", n, np.random.default_rng(seed), p=0.5)
    assert check_trajectory("bellman_ford", t) == []


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 12))
def test_binary_search_matches_bisection(seed, n):
    t = generate("binary_search", n, np.random.default_rng(seed))
    assert check_trajectory("binary_search", t) == []


class TestContainer:
    def _traces(self, alg="floyd_warshall", k=3):
        rng = np.random.default_rng(0)
        return [sample_problem(SamplerConfig(alg, size_range=(4, 6)), rng) for _ in range(k)]

    def test_round_trip(self, tmp_path):
        traces = self._traces()
        path = tmp_path / "fw.gnartrj"
        write_container(path, ALGORITHMS["floyd_warshall"].spec, traces)
        spec, back = read_container(path)
        assert spec == ALGORITHMS["floyd_warshall"].spec
        assert len(back) == len(traces)
        for a, b in zip(traces, back):
            assert (a.n, a.T) == (b.n, b.T)
            for k in a.hints:
                np.testing.assert_array_equal(a.hints[k], b.hints[k])

    def test_categorical_round_trip(self):
        traces = self._traces("lcs_length", 2)
        _, back = decode(encode(ALGORITHMS["lcs_length"].spec, traces))
        np.testing.assert_array_equal(back[1].outputs["b"], traces[1].outputs["b"])

    def test_bad_magic(self):
        buf = bytearray(encode(ALGORITHMS["bfs"].spec, []))
        buf[0] ^= 0xFF
        with pytest.raises(ContainerError):
            decode(bytes(buf))

    def test_truncated(self):
        buf = encode(ALGORITHMS["floyd_warshall"].spec, self._traces())
        with pytest.raises(ContainerError):
            decode(buf[:-7])
