import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from annotex.builders import build_dense_mlp, build_dual_role_example
from annotex.errors import (
    CycleDetected,
    DanglingEdge,
    DuplicateEdge,
    DuplicateNode,
    ExtraInput,
    InputWithIncoming,
    InvalidOperator,
    MissingIncoming,
    MissingInput,
    MissingOperator,
    NonFiniteActivation,
    NotComputeNode,
    OutputWithOutgoing,
    PartitionNotCovering,
    PartitionOverlap,
    UnknownNode,
)
from annotex.graph import (
    ComputationalGraph,
    Node,
    OperatorSpec,
    Subgraph,
    build_graph,
    evaluate,
    graph_metrics,
    split_node,
    validate_subgraph,
)


def op(kind, **params):
    return OperatorSpec(kind, params)


@pytest.mark.parametrize("spec, pairs, expected", [
    (op("constant", value=4.0), [(9.0, 1.0)], 4.0),
    (op("identity"), [(2.0, 3.0), (1.0, 1.0)], 7.0),
    (op("weighted_sum", bias=1.0), [(1.0, 2.0), (1.0, 3.0)], 6.0),
    (op("product"), [(2.0, 1.0), (3.0, 2.0)], 12.0),
    (op("affine", scale=2.0, offset=-1.0), [(3.0, 1.0)], 5.0),
    (op("center", mean=56.1), [(60.0, 1.0)], 60.0 - 56.1),
    (op("indicator", category=2), [(2.0, 1.0)], 1.0),
    (op("indicator", category=2), [(1.0, 1.0)], 0.0),
    (op("threshold", cutoff=5.0), [(5.0, 1.0)], 1.0),
    (op("threshold", cutoff=5.0, direction="gt"), [(5.0, 1.0)], 0.0),
    (op("relu"), [(-2.0, 1.0)], 0.0),
    (op("relu", bias=1.0), [(2.0, 1.0)], 3.0),
    (op("sigmoid"), [(0.0, 1.0)], 0.5),
    (op("exp"), [(1.0, 1.0)], math.e),
    (op("power_base", base=0.9832), [(1.0, 1.0)], 0.9832),
    (op("one_minus"), [(0.25, 1.0)], 0.75),
])
def test_operator_semantics(spec, pairs, expected):
    assert spec.apply(pairs) == pytest.approx(expected, abs=1e-15)


def test_sigmoid_is_stable_for_large_negative_input():
    assert op("sigmoid").apply([(-800.0, 1.0)]) == 0.0


@pytest.mark.parametrize("kind, params", [
    ("softmax", {}),
    ("affine", {}),
    ("center", {"mean": "a"}),
    ("power_base", {"base": 0.0}),
    ("threshold", {"cutoff": 1.0, "direction": "ge"}),
    ("relu", {"slope": 1.0}),
    ("constant", {"value": float("nan")}),
])
def test_invalid_operator_specs(kind, params):
    with pytest.raises(InvalidOperator):
        OperatorSpec(kind, params)


def test_explicit_params_drop_defaults():
    assert op("weighted_sum").explicit_params() == {}
    assert op("affine", scale=2.0).explicit_params() == {"scale": 2.0}


def _b1_nodes():
    return [Node("x1", "input"), Node("x2", "input"),
            Node("y", "output", op("weighted_sum", bias=1.0))]


def test_b1_evaluation(b1):
    graph, _ = b1
    assert evaluate(graph, {"x1": 1.0, "x2": 1.0})["y"] == 6.0
    assert graph.inputs == ("x1", "x2") and graph.outputs == ("y",)


def test_build_graph_from_plain_description():
    g = build_graph({
        "nodes": [{"id": "a", "kind": "input"}, {"id": "b", "kind": "output", "op": "exp"}],
        "edges": [{"from": "a", "to": "b"}],
    })
    assert g.edges[("a", "b")] == 1.0
    assert evaluate(g, {"a": 0.0})["b"] == 1.0


def test_cycle_is_rejected():
    nodes = [Node("x1", "input"), Node("h", "compute", op("identity")), Node("k", "compute", op("identity")),
             Node("y", "output", op("identity"))]
    with pytest.raises(CycleDetected):
        ComputationalGraph(nodes, [("x1", "h"), ("h", "k"), ("k", "h"), ("k", "y")])


def test_back_edge_to_input_reports_cycle_first():
    with pytest.raises(CycleDetected):
        ComputationalGraph(_b1_nodes(), [("x1", "y", 2.0), ("x2", "y", 3.0), ("y", "x1", 1.0)])


@pytest.mark.parametrize("nodes, edges, error", [
    (_b1_nodes(), [("x1", "y"), ("x3", "y")], DanglingEdge),
    (_b1_nodes() + [Node("x1", "input")], [("x1", "y")], DuplicateNode),
    (_b1_nodes(), [("x1", "y"), ("x1", "y"), ("x2", "y")], DuplicateEdge),
    ([Node("x", "input"), Node("x2", "input"), Node("y", "output", op("identity"))],
     [("x", "x2"), ("x2", "y")], InputWithIncoming),
    ([Node("x", "input"), Node("y", "output", op("identity")), Node("z", "compute", op("identity"))],
     [("x", "y"), ("y", "z")], OutputWithOutgoing),
    ([Node("x", "input"), Node("y", "output")], [("x", "y")], MissingOperator),
    ([Node("x", "input"), Node("h", "compute", op("relu")), Node("y", "output", op("identity"))],
     [("x", "y")], MissingIncoming),
])
def test_structural_errors(nodes, edges, error):
    with pytest.raises(error):
        ComputationalGraph(nodes, edges)


def test_non_finite_weight_rejected():
    with pytest.raises(InvalidOperator):
        ComputationalGraph(_b1_nodes(), [("x1", "y", float("inf")), ("x2", "y", 1.0)])


def test_missing_and_extra_inputs(b1):
    graph, _ = b1
    with pytest.raises(MissingInput):
        evaluate(graph, {"x1": 1.0})
    with pytest.raises(ExtraInput):
        evaluate(graph, {"x1": 1.0, "x2": 1.0, "y": 3.0})


def test_non_finite_activation_is_an_error():
    g = ComputationalGraph([Node("x", "input"), Node("y", "output", op("exp"))], [("x", "y")])
    with pytest.raises(NonFiniteActivation) as info:
        evaluate(g, {"x": 1000.0})
    assert info.value.node == "y"
    with pytest.raises(NonFiniteActivation):
        evaluate(g, {"x": float("nan")})


def test_overrides_and_zeroed_edges(b1):
    graph, _ = b1
    x = {"x1": 1.0, "x2": 1.0}
    assert evaluate(graph, x, zero_edges=[("x1", "y")])["y"] == 4.0
    assert evaluate(graph, x, overrides={"x2": 0.0})["y"] == 3.0
    assert evaluate(graph, x, overrides={"y": -1.0})["y"] == -1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4))
def test_evaluation_is_pure(xs):
    g = build_dense_mlp([4, 3, 1], seed=7)
    inputs = dict(zip(g.inputs, xs))
    assert evaluate(g, inputs) == evaluate(g, dict(inputs))


# -- subgraphs ------------------------------------------------------------------------------

def test_dual_role_node_makes_subgraph_invalid():
    g = build_dual_role_example()
    s = Subgraph({"I1"}, {"O1"}, {"I1", "H", "O1"}, {("I1", "H"), ("H", "O1")})
    result = validate_subgraph(g, s)
    assert not result.valid
    assert result.violators == ("H",)
    assert result.missing_edges == (("H", "O2"),)


def test_split_resolves_dual_role():
    g = split_node(build_dual_role_example(), "H", [{("H", "O1")}, {("H", "O2")}])
    assert {"H#1", "H#2"} <= set(g.nodes) and "H" not in g.nodes
    s = Subgraph({"I1"}, {"O1"}, {"I1", "H#1", "O1"}, {("I1", "H#1"), ("H#1", "O1")})
    assert validate_subgraph(g, s).valid


def test_exit_may_have_external_out_edges():
    g = build_dual_role_example()
    s = Subgraph({"I1"}, {"H"}, {"I1", "H"}, {("I1", "H")})
    assert validate_subgraph(g, s).valid


def test_connectivity_rejects_padding_nodes(b1):
    graph, _ = b1
    s = Subgraph({"x1"}, {"y"}, {"x1", "x2", "y"}, {("x1", "y")})
    result = validate_subgraph(graph, s)
    assert not result.valid
    assert any("x2" in p for p in result.problems)


def test_subgraph_member_checks():
    with pytest.raises(ValueError):
        Subgraph({"a"}, {"b"}, {"b"}, ())
    with pytest.raises(ValueError):
        Subgraph({"a"}, {"a"}, {"a"}, {("a", "z")})


def test_unknown_subgraph_node(b1):
    graph, _ = b1
    with pytest.raises(UnknownNode):
        validate_subgraph(graph, Subgraph({"q"}, {"q"}, {"q"}, ()))


def test_whole_graph_subgraph_is_valid(b1):
    graph, _ = b1
    assert validate_subgraph(graph, Subgraph.whole(graph)).valid


def test_split_node_errors():
    g = build_dual_role_example()
    with pytest.raises(NotComputeNode):
        split_node(g, "I1", [{("I1", "H")}])
    with pytest.raises(UnknownNode):
        split_node(g, "Q", [])
    with pytest.raises(PartitionNotCovering):
        split_node(g, "H", [{("H", "O1")}])
    with pytest.raises(PartitionNotCovering):
        split_node(g, "H", [{("H", "O1")}, {("H", "O2"), ("H", "O3")}])
    with pytest.raises(PartitionOverlap):
        split_node(g, "H", [{("H", "O1")}, {("H", "O1"), ("H", "O2")}])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4))
def test_split_preserves_outputs(seed, groups):
    g = build_dense_mlp([2, 4, 4], seed=seed)
    node = "h1_1"
    out = g.out_edges(node)
    partition = [set(out[i::groups]) for i in range(groups)]
    split = split_node(g, node, partition)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        x = {n: float(v) for n, v in zip(g.inputs, rng.uniform(-3, 3, size=2))}
        a, b = evaluate(g, x), evaluate(split, x)
        for o in g.outputs:
            assert a[o] == b[o]


# -- metrics ------------------------------------------------------------------------------

def test_dense_metrics():
    m = graph_metrics(build_dense_mlp([4, 16, 16, 1]))
    assert (m.n_nodes, m.n_edges, m.log2_candidate_subgraphs, m.magnitude_exponent) == (37, 336, 336, 101)
    assert m.max_fan_out == 16
    assert m.density == pytest.approx(336 / (37 * 36 / 2))
    assert m.magnitude.endswith("e101")


def test_metrics_of_trivial_graph():
    m = graph_metrics(build_dense_mlp([1, 1]))
    assert (m.n_nodes, m.n_edges, m.density) == (2, 1, 1.0)
