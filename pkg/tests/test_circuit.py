import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from circuit_sharp import (
    Circuit,
    ParamSet,
    PathPair,
    ProductPair,
    SumEdge,
    SumPair,
    classify_pair,
    deserialize,
    leaf_node,
    product_node,
    serialize,
    sum_node,
    validate,
)
from circuit_sharp.errors import CyclicGraph, MalformedFile, NotATree

from zoo import batch_for, random_dag, random_tree


class TestValidate:
    def test_minimal_smooth_pc(self):
        nodes = [leaf_node(0, "bern", [0.4]), leaf_node(0, "bern", [0.6]), sum_node(0, 1)]
        assert validate(Circuit.build(nodes, 2)).ok

    def test_product_scope_overlap_reported(self):
        nodes = [leaf_node(0, "bern", [0.4]), leaf_node(0, "bern", [0.6]), product_node(0, 1)]
        report = validate(Circuit.build(nodes, 2))
        assert [v.kind for v in report.violations] == ["non-decomposable"]

    def test_non_smooth_sum_reported(self):
        nodes = [leaf_node(0, "bern", [0.4]), leaf_node(1, "bern", [0.6]), sum_node(0, 1)]
        report = validate(Circuit.build(nodes, 2))
        assert any(v.kind == "non-smooth" for v in report.violations)

    def test_orphan_node_reported(self):
        nodes = [
            leaf_node(0, "bern", [0.4]),
            leaf_node(0, "bern", [0.6]),
            sum_node(0, 1),
            leaf_node(0, "bern", [0.5]),  # unreachable
        ]
        report = validate(Circuit.build(nodes, 2))
        assert any(v.kind == "multiple-roots" for v in report.violations)

    def test_alternation_reported(self):
        nodes = [
            leaf_node(0, "bern", [0.4]),
            leaf_node(0, "bern", [0.6]),
            sum_node(0, 1),
            leaf_node(0, "bern", [0.5]),
            sum_node(2, 3),  # sum child of sum
        ]
        report = validate(Circuit.build(nodes, 4))
        assert any(v.kind == "non-alternating" for v in report.violations)

    @pytest.mark.parametrize("seed", range(6))
    def test_random_circuits_validate(self, seed):
        for maker in (random_tree, random_dag):
            circuit, _ = maker(seed)
            assert validate(circuit).ok

    def test_smooth_and_decomposable_definitions(self):
        circuit, _ = random_tree(7)
        assert validate(circuit).ok
        for i, node in enumerate(circuit.nodes):
            if node.kind == "sum":
                scopes = {circuit.scope(c) for c in node.children}
                assert len(scopes) == 1
            elif node.kind == "product":
                seen = set()
                for c in node.children:
                    cs = set(circuit.scope(c))
                    assert not (seen & cs)
                    seen |= cs


class TestBuild:
    def test_cycle_raises(self):
        nodes = [
            leaf_node(0, "bern", [0.5]),
            sum_node(2, 0),
            sum_node(1, 0),
        ]
        with pytest.raises(CyclicGraph):
            Circuit.build(nodes, 1)

    def test_sum_needs_children(self):
        with pytest.raises(ValueError):
            sum_node()

    def test_leaf_scope_is_its_variable(self):
        nodes = [leaf_node(3, "gauss", [0.0, 1.0])]
        circuit = Circuit.build(nodes, 0)
        assert circuit.scope(0) == (3,)

    def test_edge_layers_count_sum_ancestors(self, path_chain):
        circuit, _ = path_chain
        root_edges = [i for i in range(circuit.num_sum_edges) if circuit.sum_edge_owner[i] == 8]
        inner_edges = [i for i in range(circuit.num_sum_edges) if circuit.sum_edge_owner[i] == 2]
        assert all(circuit.edge_layer[i] == 0 for i in root_edges)
        assert all(circuit.edge_layer[i] == 1 for i in inner_edges)


class TestClassifyPair:
    def test_same_node_is_sum_pair(self, indicator_mixture):
        circuit, _ = indicator_mixture
        assert isinstance(classify_pair(circuit, SumEdge(2, 0), SumEdge(2, 1)), SumPair)

    def test_root_product_gives_product_pair_without_weight(self, product_of_sums):
        circuit, _ = product_of_sums
        cls = classify_pair(circuit, SumEdge(4, 0), SumEdge(5, 1))
        assert isinstance(cls, ProductPair)
        assert cls.ancestor == 6
        assert cls.weight_above is None

    def test_nested_edges_are_path_pair(self, path_chain):
        circuit, _ = path_chain
        cls = classify_pair(circuit, SumEdge(8, 0), SumEdge(2, 1))
        assert isinstance(cls, PathPair)
        assert cls.deeper == SumEdge(2, 1)
        assert cls.shallower == SumEdge(8, 0)

    def test_requires_tree(self):
        circuit, _ = random_dag(11)
        e0, e1 = circuit.edge(0), circuit.edge(1)
        with pytest.raises(NotATree):
            classify_pair(circuit, e0, e1)

    def test_distinct_edges_required(self, indicator_mixture):
        circuit, _ = indicator_mixture
        with pytest.raises(ValueError):
            classify_pair(circuit, SumEdge(2, 0), SumEdge(2, 0))

    @pytest.mark.parametrize("seed", [3, 4, 5, 8])
    def test_exhaustive_exclusive_and_symmetric(self, seed):
        circuit, _ = random_tree(seed, max_depth=3)
        if circuit.num_sum_edges > 30:
            circuit, _ = random_tree(seed, max_depth=2)
        e = circuit.num_sum_edges
        for i in range(e):
            for j in range(e):
                if i == j:
                    continue
                a = classify_pair(circuit, circuit.edge(i), circuit.edge(j))
                b = classify_pair(circuit, circuit.edge(j), circuit.edge(i))
                assert isinstance(a, (SumPair, ProductPair, PathPair))
                if isinstance(a, SumPair):
                    assert isinstance(b, SumPair)
                elif isinstance(a, ProductPair):
                    assert isinstance(b, ProductPair) and b.ancestor == a.ancestor
                else:
                    assert isinstance(b, PathPair)
                    assert (b.deeper, b.shallower) == (a.deeper, a.shallower)


class TestSerialization:
    @given(st.integers(0, 200))
    @settings(max_examples=20, deadline=None)
    def test_round_trip_structure_and_params(self, seed):
        circuit, params = random_tree(seed, families=("binary", "continuous", "cat3"))
        blob = serialize(circuit, params)
        c2, p2 = deserialize(blob)
        assert c2.num_nodes == circuit.num_nodes
        assert c2.root == circuit.root
        for a, b in zip(circuit.nodes, c2.nodes):
            assert a.kind == b.kind and a.children == b.children and a.scope == b.scope
        for n in circuit.sum_nodes:
            assert np.array_equal(params.sum_weights[n], p2.sum_weights[n])
        for i in params.leaf_params:
            assert np.array_equal(params.leaf_params[i], p2.leaf_params[i])

    def test_dag_round_trip(self):
        circuit, params = random_dag(21)
        c2, p2 = deserialize(serialize(circuit, params))
        batch = batch_for(circuit, 4, 0)
        from circuit_sharp import forward

        np.testing.assert_array_equal(
            forward(circuit, params, batch).log_p, forward(c2, p2, batch).log_p
        )

    def test_cycle_in_file_raises(self):
        text = "pc v1 3 1\n0 L 0 bern 0.5\n1 S 2 0\n2 S 1 0\nw 1 0.5 0.5\nw 2 0.5 0.5\n"
        with pytest.raises(CyclicGraph):
            deserialize(text.encode())

    def test_empty_file_raises(self):
        with pytest.raises(MalformedFile):
            deserialize(b"")

    def test_bad_token_reports_line(self):
        text = "pc v1 1 0\n0 L 0 bern oops\n"
        with pytest.raises(MalformedFile) as err:
            deserialize(text.encode())
        assert err.value.line == 2

    def test_missing_weights_raises(self):
        text = "pc v1 3 2\n0 L 0 bern 0.5\n1 L 0 bern 0.5\n2 S 0 1\n"
        with pytest.raises(MalformedFile):
            deserialize(text.encode())


class TestParamSet:
    def test_simplex_check(self, indicator_mixture):
        circuit, params = indicator_mixture
        params.check(circuit)
        params.sum_weights[2] = np.array([0.7, 0.4])
        with pytest.raises(ValueError):
            params.check(circuit)

    def test_edge_vector_round_trip(self):
        circuit, params = random_tree(31)
        vec = params.edge_vector(circuit)
        params.set_edge_vector(circuit, vec * 1.0)
        np.testing.assert_array_equal(params.edge_vector(circuit), vec)
