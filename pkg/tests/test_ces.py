"""
Tests for the task relation graph: coefficients, fusion, append-only growth and persistence
"""

import math

import numpy as np
import pytest

from app.core.exceptions import DegeneracyError, DimensionError, FusionError, GraphError, MissingArtifactError
from app.services.ces_service import RelationGraph, TaskNode, relation_coefficient


def node(task_id, embedding, head, session=0):
    return TaskNode(task_id=task_id, prompt_embedding=np.asarray(embedding, dtype=float),
                    head_weights=np.asarray(head, dtype=float), session_index=session)


def oracle_fuse(embeddings, heads, w_j, base, lambda1, lambda2):
    """Plain-loop evaluation of the fusion rule for the last node"""
    j = len(embeddings) - 1
    size = len(w_j)
    common = [0.0] * size
    for i in range(j):
        dot = sum(a * b for a, b in zip(embeddings[i], embeddings[j]))
        na = math.sqrt(sum(a * a for a in embeddings[i]))
        nb = math.sqrt(sum(b * b for b in embeddings[j]))
        s = min(max(dot / (na * nb), 0.0), 1.0)
        for k in range(size):
            common[k] += s * heads[i][k]
    if j > 0:
        common = [c / j for c in common]
    return [lambda1 * (common[k] + w_j[k]) + lambda2 * base[k] for k in range(size)]


class TestRelationCoefficient:

    def test_identical(self):
        assert relation_coefficient(np.array([0.3, -2.0]), np.array([0.3, -2.0])) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert relation_coefficient(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_hand_value(self):
        assert relation_coefficient(np.array([1.0, 1.0]), np.array([1.0, 0.0])) == pytest.approx(1 / math.sqrt(2))

    def test_negative_similarity_clamped(self):
        assert relation_coefficient(np.array([1.0, 0.0]), np.array([-1.0, 0.1])) == 0.0

    def test_symmetric(self, rng):
        a, b = rng.normal(size=6), rng.normal(size=6)
        assert relation_coefficient(a, b) == relation_coefficient(b, a)

    def test_zero_vector(self):
        with pytest.raises(DegeneracyError):
            relation_coefficient(np.zeros(3), np.ones(3))

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            relation_coefficient(np.ones(3), np.ones(4))


class TestFuseWeights:

    def test_hand_example(self):
        graph = RelationGraph(np.array([2.0, 0.0, 0.0, 2.0]), lambda1=0.2, lambda2=0.8)
        graph.add_node(node("one", [1, 1, 0, 0], [1, 0, 0, 1]))
        graph.add_node(node("two", [1, 0, 1, 0], [0, 1, 1, 0], session=1))
        assert graph.coefficients[0, 1] == pytest.approx(0.5, abs=1e-15)
        np.testing.assert_allclose(graph.fuse_weights(1, np.array([0.0, 1.0, 1.0, 0.0])), [1.7, 0.2, 0.2, 1.7],
                                   rtol=0, atol=1e-12)

    def test_lambda1_zero_gives_base(self, rng):
        base = rng.normal(size=5)
        graph = RelationGraph(base, lambda1=0.0, lambda2=1.0)
        graph.add_node(node("a", rng.normal(size=3), rng.normal(size=5)))
        graph.add_node(node("b", rng.normal(size=3), rng.normal(size=5)))
        np.testing.assert_array_equal(graph.fuse_weights(1, rng.normal(size=5)), base)

    def test_no_predecessors(self, rng):
        base, w = rng.normal(size=5), rng.normal(size=5)
        graph = RelationGraph(base, lambda1=0.3, lambda2=0.6)
        graph.add_node(node("a", rng.normal(size=3), w))
        np.testing.assert_array_equal(graph.fuse_weights(0, w), 0.3 * w + 0.6 * base)

    def test_no_predecessors_lambda1_one(self, rng):
        w = rng.normal(size=5)
        graph = RelationGraph(rng.normal(size=5), lambda1=1.0, lambda2=0.0)
        graph.add_node(node("a", rng.normal(size=3), w))
        np.testing.assert_array_equal(graph.fuse_weights(0, w), w)

    def test_matches_scalar_oracle(self):
        for seed in range(100):
            r = np.random.default_rng(seed)
            count, size = int(r.integers(1, 6)), int(r.integers(1, 8))
            lambda1, lambda2 = r.uniform(0, 1, size=2)
            base = r.normal(size=size)
            embeddings = [r.normal(size=4) for _ in range(count)]
            heads = [r.normal(size=size) for _ in range(count)]
            graph = RelationGraph(base, lambda1, lambda2)
            for i in range(count):
                graph.add_node(node(f"t{i}", embeddings[i], heads[i]))
            w_j = r.normal(size=size)
            expected = oracle_fuse(embeddings, heads, w_j, base, lambda1, lambda2)
            np.testing.assert_allclose(graph.fuse_weights(count - 1, w_j), expected, rtol=0, atol=1e-12)

    def test_linear_in_new_head(self, rng):
        graph = RelationGraph(rng.normal(size=4), 0.4, 0.5)
        graph.add_node(node("a", rng.normal(size=3), rng.normal(size=4)))
        graph.add_node(node("b", rng.normal(size=3), rng.normal(size=4)))
        w1, w2 = rng.normal(size=4), rng.normal(size=4)
        lhs = graph.fuse_weights(1, w1) - graph.fuse_weights(1, w2)
        np.testing.assert_allclose(lhs, 0.4 * (w1 - w2), atol=1e-12)

    def test_base_nodes_can_be_excluded(self, rng):
        base = rng.normal(size=4)
        graph = RelationGraph(base, 0.5, 0.5, include_base_nodes=False)
        graph.add_node(node("base", rng.normal(size=3), rng.normal(size=4), session=0))
        graph.add_node(node("new", rng.normal(size=3), rng.normal(size=4), session=1))
        w = rng.normal(size=4)
        np.testing.assert_array_equal(graph.fuse_weights(1, w), 0.5 * w + 0.5 * base)

    def test_length_mismatch(self, rng):
        graph = RelationGraph(np.zeros(4))
        with pytest.raises(FusionError):
            graph.fuse_weights(0, np.zeros(3))
        with pytest.raises(FusionError):
            graph.add_node(node("a", [1.0], np.zeros(3)))

    def test_negative_lambda(self):
        with pytest.raises(FusionError):
            RelationGraph(np.zeros(2), lambda1=-0.1)


class TestGraph:

    def test_first_node(self):
        graph = RelationGraph(np.zeros(2)).add_node(node("a", [1.0, 2.0], [0.0, 0.0]))
        np.testing.assert_array_equal(graph.coefficients, [[1.0]])

    def test_growth_and_symmetry(self, rng):
        graph = RelationGraph(np.zeros(3))
        for i in range(13):
            graph.add_node(node(f"t{i}", rng.normal(size=5), rng.normal(size=3), session=max(0, i - 9)))
        s = graph.coefficients
        assert s.shape == (13, 13)
        np.testing.assert_array_equal(s, s.T)
        np.testing.assert_array_equal(np.diag(s), np.ones(13))
        assert s.min() >= 0.0 and s.max() <= 1.0

    def test_duplicate_prompt(self):
        graph = RelationGraph(np.zeros(2))
        graph.add_node(node("a", [0.3, 0.4], [0.0, 0.0]))
        graph.add_node(node("b", [0.3, 0.4], [1.0, 1.0]))
        assert graph.coefficients[1, 0] == pytest.approx(1.0)
        np.testing.assert_allclose(np.array(graph.similarity_report().matrix), np.ones((2, 2)))

    def test_duplicate_task_id(self):
        graph = RelationGraph(np.zeros(2)).add_node(node("a", [1.0], [0.0, 0.0]))
        with pytest.raises(GraphError):
            graph.add_node(node("a", [2.0], [0.0, 0.0]))

    def test_append_only(self, rng):
        graph = RelationGraph(np.zeros(2))
        first = node("a", rng.normal(size=3), rng.normal(size=2))
        graph.add_node(first)
        before = graph.coefficients.copy()
        graph.add_node(node("b", rng.normal(size=3), rng.normal(size=2)))
        assert graph.nodes[0] is first
        np.testing.assert_array_equal(graph.coefficients[:1, :1], before)
        with pytest.raises(ValueError):
            first.head_weights[0] = 5.0

    def test_zero_prompt_node(self):
        with pytest.raises(DegeneracyError):
            node("a", [0.0, 0.0], [1.0])

    def test_similarity_report_needs_two_nodes(self):
        graph = RelationGraph(np.zeros(2)).add_node(node("a", [1.0], [0.0, 0.0]))
        with pytest.raises(GraphError):
            graph.similarity_report()

    def test_unknown_task(self):
        with pytest.raises(GraphError):
            RelationGraph(np.zeros(2)).index("missing")


class TestPersistence:

    def test_save_load(self, rng, tmp_path):
        graph = RelationGraph(rng.normal(size=4), 0.3, 0.7)
        for i in range(4):
            graph.add_node(node(f"t{i}", rng.normal(size=3), rng.normal(size=4), session=i))
        loaded = RelationGraph.load(graph.save(tmp_path / "graph.json"))
        assert loaded.task_ids == graph.task_ids
        np.testing.assert_array_equal(loaded.coefficients, graph.coefficients)
        np.testing.assert_array_equal(loaded.base_weights, graph.base_weights)
        assert (loaded.lambda1, loaded.lambda2) == (0.3, 0.7)

    def test_tampered_coefficients(self, rng, tmp_path):
        graph = RelationGraph(np.zeros(2))
        graph.add_node(node("a", rng.normal(size=3), np.zeros(2)))
        graph.add_node(node("b", rng.normal(size=3), np.zeros(2)))
        data = graph.to_file()
        data.coefficients[0][1] += 0.01
        with pytest.raises(GraphError):
            RelationGraph.from_file(data)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            RelationGraph.load(tmp_path / "graph.json")
