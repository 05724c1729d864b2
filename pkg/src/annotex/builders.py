"""Constructors for the reference model families.

Each builder returns a :class:`ComputationalGraph`; where a natural
explanation exists (regressions, trees, the small worked examples) it also
returns an :class:`AnnotationBundle` whose evidence checks pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .annotations import AnnotationBundle, CompositionAnnotation, ExplanationContext, LeafAnnotation
from .errors import MalformedTree
from .evidence import EvidenceCheck, Target
from .graph import ComputationalGraph, Node, OperatorSpec, Subgraph

AUDIT_CONTEXT = ExplanationContext(
    audience="model auditors",
    language="plain English with elementary algebra",
    purpose="confirm how each input moves the prediction",
)

SAMPLE_RANGE = [-1.0, 1.0]


def _leaf_edge_subgraph(src, dst):
    return Subgraph({src}, {dst}, {src, dst}, {(src, dst)})


# -- linear regression ----------------------------------------------------------------

def build_linear_regression(coefficients: Sequence[float], intercept: float = 0.0):
    """``y = intercept + sum(c_i * x_i)`` with one leaf per feature.

    Inputs are named ``x1..xn`` and the leaves ``A1..An``. The root
    composition ``C`` states that the features combine additively and backs
    it with an additivity check plus an affine substitution of the whole model.
    """
    coefficients = [float(c) for c in coefficients]
    if not coefficients:
        raise ValueError("a regression needs at least one coefficient")
    names = [f"x{i}" for i in range(1, len(coefficients) + 1)]
    nodes = [Node(n, "input") for n in names]
    nodes.append(Node("y", "output", OperatorSpec("weighted_sum", {"bias": float(intercept)})))
    graph = ComputationalGraph(nodes, [(n, "y", c) for n, c in zip(names, coefficients)])

    leaves = []
    for i, (name, c) in enumerate(zip(names, coefficients), start=1):
        check = EvidenceCheck("coef", "coefficient_equals", "analytical",
                              {"variable": name, "expected": c})
        leaves.append(LeafAnnotation(
            f"A{i}", _leaf_edge_subgraph(name, "y"),
            f"Feature {name} contributes {c:g} per unit change", (check,), AUDIT_CONTEXT))

    sampling = {"default_range": SAMPLE_RANGE, "samples": 16}
    comp_checks = (
        EvidenceCheck("additive", "additivity", "empirical",
                      {"observe": "y", "expected": float(intercept), **sampling}),
        EvidenceCheck("substitute", "substitution_equiv", "empirical",
                      {"form": {"affine": {"coefficients": dict(zip(names, coefficients)),
                                           "offset": float(intercept)}}, **sampling},
                      Target(part="span")),
    )
    root = CompositionAnnotation(
        "C", Subgraph({"y"}, {"y"}, {"y"}, ()),
        "All features combine additively on top of the intercept",
        comp_checks, tuple(a.id for a in leaves), AUDIT_CONTEXT)
    return graph, AnnotationBundle(leaves, [root], "C", AUDIT_CONTEXT)


# -- decision trees -----------------------------------------------------------------------

@dataclass(frozen=True)
class TreeLeaf:
    value: float


@dataclass(frozen=True)
class TreeSplit:
    """Route ``x[feature] <= cutoff`` to ``left`` and everything else to ``right``."""

    feature: int
    cutoff: float
    left: "TreeLeaf | TreeSplit"
    right: "TreeLeaf | TreeSplit"


@dataclass(frozen=True)
class PathCondition:
    feature: int
    cutoff: float
    direction: str  # "le" or "gt"

    def holds(self, x) -> bool:
        v = x[self.feature]
        return v <= self.cutoff if self.direction == "le" else v > self.cutoff


class TreeSpec:
    """A finite binary decision tree over features ``0..n-1``."""

    def __init__(self, root):
        if not isinstance(root, TreeSplit):
            raise MalformedTree("a tree needs at least one split")
        self.root = root
        self._check(root, {})

    def _check(self, node, bounds):
        if isinstance(node, TreeLeaf):
            if not np.isfinite(node.value):
                raise MalformedTree("leaf values must be finite")
            return
        if not isinstance(node, TreeSplit):
            raise MalformedTree(f"tree nodes must be splits or leaves, got {type(node).__name__}")
        if not isinstance(node.feature, int) or node.feature < 0:
            raise MalformedTree(f"feature index must be a non-negative integer, got {node.feature!r}")
        if not np.isfinite(node.cutoff):
            raise MalformedTree("cutoffs must be finite")
        lo, hi = bounds.get(node.feature, (-np.inf, np.inf))
        # a feature's reachable set is the half-open interval (lo, hi]
        if not lo < node.cutoff:
            raise MalformedTree(
                f"left branch of x{node.feature} <= {node.cutoff:g} is unreachable (x{node.feature} > {lo:g})")
        if not node.cutoff < hi:
            raise MalformedTree(
                f"right branch of x{node.feature} > {node.cutoff:g} is unreachable (x{node.feature} <= {hi:g})")
        self._check(node.left, {**bounds, node.feature: (lo, node.cutoff)})
        self._check(node.right, {**bounds, node.feature: (node.cutoff, hi)})

    @classmethod
    def from_dict(cls, d):
        def convert(n):
            if not isinstance(n, Mapping):
                raise MalformedTree(f"tree node must be an object, got {n!r}")
            if set(n) == {"value"}:
                return TreeLeaf(float(n["value"]))
            if set(n) == {"feature", "cutoff", "left", "right"}:
                return TreeSplit(n["feature"], float(n["cutoff"]), convert(n["left"]), convert(n["right"]))
            raise MalformedTree(f"tree node must have 'value' or 'feature/cutoff/left/right', got {sorted(n)}")
        return cls(convert(d))

    def to_dict(self):
        def convert(n):
            if isinstance(n, TreeLeaf):
                return {"value": n.value}
            return {"feature": n.feature, "cutoff": n.cutoff, "left": convert(n.left), "right": convert(n.right)}
        return convert(self.root)

    def paths(self) -> list[tuple[tuple[PathCondition, ...], float]]:
        """Root-to-leaf paths, left branches first."""
        out = []

        def walk(n, conds):
            if isinstance(n, TreeLeaf):
                out.append((tuple(conds), n.value))
                return
            walk(n.left, conds + [PathCondition(n.feature, n.cutoff, "le")])
            walk(n.right, conds + [PathCondition(n.feature, n.cutoff, "gt")])

        walk(self.root, [])
        return out

    def features(self) -> list[int]:
        return sorted({c.feature for conds, _ in self.paths() for c in conds})

    def predict(self, x) -> float:
        """Recursive interpreter; ``x`` maps feature index to value."""
        n = self.root
        while isinstance(n, TreeSplit):
            n = n.left if x[n.feature] <= n.cutoff else n.right
        return n.value


def random_tree_spec(rng: np.random.Generator, max_depth: int, n_features: int = 3, *,
                     complete: bool = False, split_prob: float = 0.7, domain=(-10.0, 10.0)) -> TreeSpec:
    """Random tree whose cutoffs always fall inside the reachable interval."""

    def grow(depth, bounds):
        if depth >= max_depth or (depth > 0 and not complete and rng.random() > split_prob):
            return TreeLeaf(round(float(rng.normal()), 3))
        feature = int(rng.integers(n_features))
        lo, hi = bounds.get(feature, domain)
        if hi - lo < 1e-3:
            return TreeLeaf(round(float(rng.normal()), 3))
        cutoff = round(float(rng.uniform(lo + (hi - lo) * 0.05, hi - (hi - lo) * 0.05)), 4)
        if not lo < cutoff < hi:
            return TreeLeaf(round(float(rng.normal()), 3))
        return TreeSplit(feature, cutoff,
                         grow(depth + 1, {**bounds, feature: (lo, cutoff)}),
                         grow(depth + 1, {**bounds, feature: (cutoff, hi)}))

    root = grow(0, {})
    while not isinstance(root, TreeSplit):
        root = grow(0, {})
    return TreeSpec(root)


def _feature_node(i):
    return f"x{i}"


def _describe(cond: PathCondition) -> str:
    op = "<=" if cond.direction == "le" else ">"
    return f"x{cond.feature} {op} {cond.cutoff:g}"


def build_decision_tree(spec: TreeSpec, *, samples: int = 200, sample_margin: float = 1.0):
    """Encode a tree as gated paths and annotate one leaf per path.

    Every condition on a path gets its own threshold node; a product node
    ``p<k>`` multiplies them into the path indicator and the output sums
    ``value_k * p<k>``. A path annotation owns its input nodes with their
    full fan-out, so thresholds belonging to other paths appear as its
    exits.
    """
    paths = spec.paths()
    features = spec.features()
    nodes = [Node(_feature_node(i), "input") for i in features]
    edges = []
    path_thresholds = []
    for k, (conds, value) in enumerate(paths, start=1):
        ts = []
        for d, c in enumerate(conds, start=1):
            t = f"p{k}_c{d}"
            nodes.append(Node(t, "compute", OperatorSpec("threshold", {"cutoff": c.cutoff, "direction": c.direction})))
            edges.append((_feature_node(c.feature), t, 1.0))
            ts.append(t)
        nodes.append(Node(f"p{k}", "compute", OperatorSpec("product")))
        edges.extend((t, f"p{k}", 1.0) for t in ts)
        path_thresholds.append(ts)
    nodes.append(Node("y", "output", OperatorSpec("weighted_sum")))
    edges.extend((f"p{k}", "y", float(value)) for k, (_, value) in enumerate(paths, start=1))
    graph = ComputationalGraph(nodes, edges)

    cutoffs: dict[int, list[float]] = {}
    for conds, _ in paths:
        for c in conds:
            cutoffs.setdefault(c.feature, []).append(c.cutoff)
    ranges = {_feature_node(i): [min(cs) - sample_margin, max(cs) + sample_margin] for i, cs in cutoffs.items()}
    sampling = {"ranges": ranges, "samples": samples}

    leaves = []
    for k, ((conds, value), ts) in enumerate(zip(paths, path_thresholds), start=1):
        inputs = sorted({_feature_node(c.feature) for c in conds})
        sub_nodes = set(inputs) | set(ts) | {f"p{k}", "y"}
        sub_edges = {(t, f"p{k}") for t in ts} | {(f"p{k}", "y")}
        exits = {"y"}
        for x in inputs:
            for e in graph.out_edges(x):
                sub_edges.add(e)
                sub_nodes.add(e[1])
                if e[1] not in ts:
                    exits.add(e[1])
        rule = {"rule": {"conditions": [
            {"node": _feature_node(c.feature), "cutoff": c.cutoff, "direction": c.direction} for c in conds
        ], "value": float(value)}}
        check = EvidenceCheck("rule", "substitution_equiv", "empirical",
                              {"form": rule, "exit": "y", **sampling})
        hypothesis = f"If {' and '.join(_describe(c) for c in conds)} then predict {value:g}"
        leaves.append(LeafAnnotation(f"P{k}", Subgraph(inputs, exits, sub_nodes, sub_edges),
                                     hypothesis, (check,), AUDIT_CONTEXT))

    exclusive = EvidenceCheck("exclusive", "mutual_exclusion", "empirical",
                              {"nodes": [f"p{k}" for k in range(1, len(paths) + 1)], **sampling})
    root = CompositionAnnotation("C", Subgraph({"y"}, {"y"}, {"y"}, ()),
                                 "Exactly one path matches any input", (exclusive,),
                                 tuple(a.id for a in leaves), AUDIT_CONTEXT)
    return graph, AnnotationBundle(leaves, [root], "C", AUDIT_CONTEXT)


# -- neural networks ----------------------------------------------------------------------

def _layer_names(layer_sizes):
    names = [[f"x{j}" for j in range(1, layer_sizes[0] + 1)]]
    for layer, size in enumerate(layer_sizes[1:-1], start=1):
        names.append([f"h{layer}_{j}" for j in range(1, size + 1)])
    names.append([f"y{j}" for j in range(1, layer_sizes[-1] + 1)])
    return names


def build_dense_mlp(layer_sizes: Sequence[int], weights=None, *, seed: int = 0) -> ComputationalGraph:
    """Fully connected relu network.

    ``weights[l][j][i]`` is the weight from unit ``i`` of layer ``l`` to unit
    ``j`` of layer ``l+1``; when omitted, weights are drawn with ``seed``.
    Output units use the identity operator.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError("need at least two layers of positive size")
    rng = np.random.default_rng(seed)
    names = _layer_names(sizes)
    nodes = [Node(n, "input") for n in names[0]]
    edges = []
    for layer in range(1, len(sizes)):
        kind = "output" if layer == len(sizes) - 1 else "compute"
        if weights is None:
            w = rng.normal(0.0, 1.0 / np.sqrt(sizes[layer - 1]), size=(sizes[layer], sizes[layer - 1]))
        else:
            w = np.asarray(weights[layer - 1], dtype=float)
            if w.shape != (sizes[layer], sizes[layer - 1]):
                raise ValueError(f"weights for layer {layer} must have shape {(sizes[layer], sizes[layer - 1])}")
        for j, dst in enumerate(names[layer]):
            op = OperatorSpec("identity") if kind == "output" else OperatorSpec("relu")
            nodes.append(Node(dst, kind, op))
            for i, src in enumerate(names[layer - 1]):
                edges.append((src, dst, float(w[j, i])))
    return ComputationalGraph(nodes, edges)


def build_sparse_network(inputs: Sequence[str], hidden: Sequence[str], outputs: Sequence[str],
                         edges: Sequence, ops: Mapping | None = None) -> ComputationalGraph:
    """Graph with an explicit edge list.

    Hidden units default to relu and outputs to identity; ``ops`` maps a
    node id to an :class:`OperatorSpec` or a ``(kind, params)`` pair.
    """
    ops = dict(ops or {})

    def op_for(nid, default):
        spec = ops.get(nid)
        if spec is None:
            return OperatorSpec(default)
        if isinstance(spec, OperatorSpec):
            return spec
        kind, params = spec
        return OperatorSpec(kind, dict(params))

    nodes = [Node(n, "input") for n in inputs]
    nodes += [Node(n, "compute", op_for(n, "relu")) for n in hidden]
    nodes += [Node(n, "output", op_for(n, "identity")) for n in outputs]
    return ComputationalGraph(nodes, list(edges))


# -- small worked examples ----------------------------------------------------------------

def build_branching_example(with_second_path: bool = False):
    """Input ``I`` feeding two hidden units ``H1``/``H2`` that meet at ``O``.

    Without the second path only ``A1`` (the ``H1`` route) is annotated, so
    ``I`` and ``H2`` stay uncovered. With it, ``A2`` owns the ``H2`` route
    and all of ``I``'s out-edges, and a composition joins both at ``O``.
    """
    graph = ComputationalGraph(
        [Node("I", "input"),
         Node("H1", "compute", OperatorSpec("relu")),
         Node("H2", "compute", OperatorSpec("sigmoid")),
         Node("O", "output", OperatorSpec("weighted_sum"))],
        [("I", "H1", 1.0), ("I", "H2", 0.5), ("H1", "O", 2.0), ("H2", "O", 1.5)],
    )
    grid = {"start": -3.0, "stop": 3.0, "num": 61}
    a1 = LeafAnnotation(
        "A1", Subgraph({"I"}, {"O"}, {"I", "H1", "O"}, {("I", "H1"), ("H1", "O")}),
        "The H1 route raises O as I rises",
        (EvidenceCheck("rising", "monotonic_on", "empirical",
                       {"variable": "I", "grid": grid, "direction": "increasing"}),),
        AUDIT_CONTEXT)
    if not with_second_path:
        return graph, AnnotationBundle([a1], [], "A1", AUDIT_CONTEXT)
    a2 = LeafAnnotation(
        "A2", Subgraph({"I"}, {"O", "H1"}, {"I", "H1", "H2", "O"}, {("I", "H1"), ("I", "H2"), ("H2", "O")}),
        "The H2 route raises O smoothly as I rises",
        (EvidenceCheck("rising", "monotonic_on", "empirical",
                       {"variable": "I", "grid": grid, "direction": "increasing", "exit": "O"}),),
        AUDIT_CONTEXT)
    comp = CompositionAnnotation(
        "C", Subgraph({"O"}, {"O"}, {"O"}, ()), "The two routes add at O",
        (EvidenceCheck("additive", "additivity", "empirical",
                       {"observe": "O", "ranges": {"I": [-3.0, 3.0]}, "samples": 32}),),
        ("A1", "A2"), AUDIT_CONTEXT)
    return graph, AnnotationBundle([a1, a2], [comp], "C", AUDIT_CONTEXT)


def build_dual_role_example() -> ComputationalGraph:
    """``I1 -> H`` where ``H`` feeds two outputs ``O1`` and ``O2``."""
    return ComputationalGraph(
        [Node("I1", "input"),
         Node("H", "compute", OperatorSpec("sigmoid")),
         Node("O1", "output", OperatorSpec("identity")),
         Node("O2", "output", OperatorSpec("affine", {"scale": -1.0, "offset": 0.5}))],
        [("I1", "H", 1.5), ("H", "O1", 2.0), ("H", "O2", 1.0)],
    )
