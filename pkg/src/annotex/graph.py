"""Computational graphs: typed DAG nodes, weighted edges, per-node operators.

A graph is immutable once built. Evaluation walks nodes in topological
order; each non-input node applies its operator to the (activation, weight)
pairs arriving on its incoming edges.
"""

from __future__ import annotations

import graphlib
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import (
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

NODE_KINDS = ("input", "compute", "output")

# kind -> {param name: default}; a default of None marks a required parameter
OP_PARAMS: dict[str, dict[str, object]] = {
    "constant": {"value": None},
    "identity": {},
    "weighted_sum": {"bias": 0.0},
    "product": {},
    "affine": {"scale": None, "offset": 0.0},
    "center": {"mean": None},
    "indicator": {"category": None},
    "threshold": {"cutoff": None, "direction": "le"},
    "relu": {"bias": 0.0},
    "sigmoid": {"bias": 0.0},
    "exp": {},
    "power_base": {"base": None},
    "one_minus": {},
}

THRESHOLD_DIRECTIONS = ("le", "gt")

Edge = tuple[str, str]


@dataclass(frozen=True)
class OperatorSpec:
    kind: str
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OP_PARAMS:
            raise InvalidOperator(f"unknown operator kind {self.kind!r}")
        allowed = OP_PARAMS[self.kind]
        unknown = set(self.params) - set(allowed)
        if unknown:
            raise InvalidOperator(
                f"operator {self.kind!r} does not take parameter(s) {sorted(unknown)}"
            )
        full = {}
        for name, default in allowed.items():
            if name in self.params:
                full[name] = self.params[name]
            elif default is None:
                raise InvalidOperator(f"operator {self.kind!r} requires parameter {name!r}")
            else:
                full[name] = default
        for name, value in full.items():
            if name == "direction":
                if value not in THRESHOLD_DIRECTIONS:
                    raise InvalidOperator(f"threshold direction must be one of {THRESHOLD_DIRECTIONS}")
            elif not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
                raise InvalidOperator(f"parameter {name!r} of {self.kind!r} must be a finite number")
            else:
                full[name] = float(value)
        if self.kind == "power_base" and not full["base"] > 0:
            raise InvalidOperator("power_base requires base > 0")
        object.__setattr__(self, "params", full)

    def __getitem__(self, name):
        return self.params[name]

    def explicit_params(self) -> dict:
        """Parameters that differ from their defaults (used for serialization)."""
        defaults = OP_PARAMS[self.kind]
        return {k: v for k, v in self.params.items() if defaults[k] is None or defaults[k] != v}

    def apply(self, pairs) -> float:
        """Apply the operator to a sequence of (activation, edge weight) pairs."""
        kind = self.kind
        if kind == "product":
            out = 1.0
            for a, w in pairs:
                out *= w * a
            return out
        if kind == "constant":
            return self.params["value"]
        z = math.fsum(w * a for a, w in pairs)
        return self.apply_unary(z)

    def apply_unary(self, z: float) -> float:
        p = self.params
        kind = self.kind
        if kind == "identity":
            return z
        if kind == "weighted_sum":
            return z + p["bias"]
        if kind == "affine":
            return p["scale"] * z + p["offset"]
        if kind == "center":
            return z - p["mean"]
        if kind == "indicator":
            return 1.0 if z == p["category"] else 0.0
        if kind == "threshold":
            if p["direction"] == "le":
                return 1.0 if z <= p["cutoff"] else 0.0
            return 1.0 if z > p["cutoff"] else 0.0
        if kind == "relu":
            return max(0.0, z + p["bias"])
        if kind == "sigmoid":
            t = z + p["bias"]
            if t >= 0:
                return 1.0 / (1.0 + math.exp(-t))
            e = math.exp(t)
            return e / (1.0 + e)
        if kind == "exp":
            try:
                return math.exp(z)
            except OverflowError:
                return math.inf
        if kind == "power_base":
            try:
                return p["base"] ** z
            except OverflowError:
                return math.inf
        if kind == "one_minus":
            return 1.0 - z
        if kind == "constant":
            return p["value"]
        raise InvalidOperator(f"operator {kind!r} is not unary")


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    op: OperatorSpec | None = None


class ComputationalGraph:
    """Immutable DAG ``(V, E, W, Phi)``.

    ``nodes`` keeps insertion order; ``edges`` maps ``(src, dst)`` to the
    edge weight.
    """

    def __init__(self, nodes: Iterable[Node], edges: Mapping[Edge, float] | Iterable):
        node_map: dict[str, Node] = {}
        for n in nodes:
            if not isinstance(n.id, str) or not n.id:
                raise DuplicateNode(f"node ids must be non-empty strings, got {n.id!r}")
            if n.id in node_map:
                raise DuplicateNode(f"duplicate node id {n.id!r}")
            if n.kind not in NODE_KINDS:
                raise InvalidOperator(f"node {n.id!r} has unknown kind {n.kind!r}")
            if n.kind == "input" and n.op is not None:
                raise InvalidOperator(f"input node {n.id!r} must not carry an operator")
            if n.kind != "input" and n.op is None:
                raise MissingOperator(f"{n.kind} node {n.id!r} has no operator")
            node_map[n.id] = n

        edge_map: dict[Edge, float] = {}
        items = edges.items() if isinstance(edges, Mapping) else _edge_items(edges)
        for (u, v), w in items:
            for end in (u, v):
                if end not in node_map:
                    raise DanglingEdge(f"edge ({u!r}, {v!r}) references unknown node {end!r}")
            if (u, v) in edge_map:
                raise DuplicateEdge(f"duplicate edge ({u!r}, {v!r})")
            w = float(w)
            if not math.isfinite(w):
                raise InvalidOperator(f"edge ({u!r}, {v!r}) has non-finite weight")
            edge_map[(u, v)] = w

        preds: dict[str, list[str]] = {nid: [] for nid in node_map}
        succs: dict[str, list[str]] = {nid: [] for nid in node_map}
        for u, v in edge_map:
            preds[v].append(u)
            succs[u].append(v)

        sorter = graphlib.TopologicalSorter({nid: preds[nid] for nid in node_map})
        try:
            order = tuple(sorter.static_order())
        except graphlib.CycleError as exc:
            cycle = exc.args[1] if len(exc.args) > 1 else []
            raise CycleDetected(f"graph contains a cycle through {list(cycle)}") from None

        for nid, n in node_map.items():
            if n.kind == "input" and preds[nid]:
                raise InputWithIncoming(f"input node {nid!r} has incoming edges from {preds[nid]}")
            if n.kind == "output" and succs[nid]:
                raise OutputWithOutgoing(f"output node {nid!r} has outgoing edges to {succs[nid]}")
            if n.kind != "input" and not preds[nid]:
                raise MissingIncoming(f"{n.kind} node {nid!r} has no incoming edge")

        self._nodes = node_map
        self._edges = edge_map
        self._preds = {k: tuple(v) for k, v in preds.items()}
        self._succs = {k: tuple(v) for k, v in succs.items()}
        self._order = order
        self._index = {nid: i for i, nid in enumerate(order)}

    # -- read-only views ----------------------------------------------------
    @property
    def nodes(self) -> Mapping[str, Node]:
        return self._nodes

    @property
    def edges(self) -> Mapping[Edge, float]:
        return self._edges

    @property
    def order(self) -> tuple[str, ...]:
        return self._order

    @property
    def inputs(self) -> tuple[str, ...]:
        return tuple(n for n, node in self._nodes.items() if node.kind == "input")

    @property
    def outputs(self) -> tuple[str, ...]:
        return tuple(n for n, node in self._nodes.items() if node.kind == "output")

    def predecessors(self, node: str) -> tuple[str, ...]:
        return self._preds[node]

    def successors(self, node: str) -> tuple[str, ...]:
        return self._succs[node]

    def out_edges(self, node: str) -> list[Edge]:
        return [(node, v) for v in self._succs[node]]

    def in_edges(self, node: str) -> list[Edge]:
        return [(u, node) for u in self._preds[node]]

    def topo_index(self, node: str) -> int:
        return self._index[node]

    def sort_topologically(self, nodes: Iterable[str]) -> list[str]:
        return sorted(nodes, key=self._index.__getitem__)

    def __contains__(self, node) -> bool:
        return node in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def __eq__(self, other):
        if not isinstance(other, ComputationalGraph):
            return NotImplemented
        return self._nodes == other._nodes and self._edges == other._edges

    def __repr__(self):
        return f"ComputationalGraph(|V|={len(self._nodes)}, |E|={len(self._edges)})"


def _edge_items(edges):
    for e in edges:
        if len(e) == 2:
            yield (e[0], e[1]), 1.0
        else:
            yield (e[0], e[1]), e[2]


def build_graph(spec: Mapping) -> ComputationalGraph:
    """Build a graph from a plain description.

    ``spec`` has ``nodes`` (dicts with ``id``, ``kind`` and, for non-input
    nodes, ``op`` plus optional ``params``) and ``edges`` (dicts with
    ``from``, ``to`` and optional ``weight``, default 1.0).
    """
    nodes = []
    for entry in spec["nodes"]:
        op = None
        if entry.get("op") is not None:
            op = OperatorSpec(entry["op"], dict(entry.get("params") or {}))
        nodes.append(Node(entry["id"], entry["kind"], op))
    edges = [(e["from"], e["to"], e.get("weight", 1.0)) for e in spec["edges"]]
    return ComputationalGraph(nodes, edges)


def evaluate(
    graph: ComputationalGraph,
    inputs: Mapping[str, float],
    *,
    overrides: Mapping[str, float] | None = None,
    zero_edges: Iterable[Edge] = (),
) -> dict[str, float]:
    """Evaluate every node by topological traversal.

    ``overrides`` pins node activations (used by substitution checks);
    ``zero_edges`` makes the listed edges carry 0 (used by ablation).
    """
    expected = graph.inputs
    missing = [n for n in expected if n not in inputs]
    if missing:
        raise MissingInput(f"missing value for input node(s) {missing}")
    extra = [n for n in inputs if n not in graph.nodes or graph.nodes[n].kind != "input"]
    if extra:
        raise ExtraInput(f"unexpected input(s) {sorted(extra)}")

    overrides = overrides or {}
    zero = set(zero_edges)
    nodes = graph.nodes
    edges = graph.edges
    act: dict[str, float] = {}
    for nid in graph.order:
        if nid in overrides:
            value = float(overrides[nid])
        elif nodes[nid].kind == "input":
            value = float(inputs[nid])
        else:
            pairs = [
                (0.0 if (u, nid) in zero else act[u], edges[(u, nid)])
                for u in graph.predecessors(nid)
            ]
            value = nodes[nid].op.apply(pairs)
        if not math.isfinite(value):
            raise NonFiniteActivation(nid, value)
        act[nid] = value
    return act


# -- subgraphs ----------------------------------------------------------------

@dataclass(frozen=True)
class Subgraph:
    entry: frozenset
    exit: frozenset
    nodes: frozenset
    edges: frozenset

    def __init__(self, entry=(), exit=(), nodes=(), edges=()):
        object.__setattr__(self, "entry", frozenset(entry))
        object.__setattr__(self, "exit", frozenset(exit))
        object.__setattr__(self, "nodes", frozenset(nodes))
        object.__setattr__(self, "edges", frozenset(tuple(e) for e in edges))
        if not self.entry <= self.nodes:
            raise ValueError(f"entry nodes {sorted(self.entry - self.nodes)} are not members")
        if not self.exit <= self.nodes:
            raise ValueError(f"exit nodes {sorted(self.exit - self.nodes)} are not members")
        for u, v in self.edges:
            if u not in self.nodes or v not in self.nodes:
                raise ValueError(f"edge ({u!r}, {v!r}) has an endpoint outside the node set")

    @classmethod
    def whole(cls, graph: ComputationalGraph) -> "Subgraph":
        return cls(graph.inputs, graph.outputs, graph.nodes, graph.edges)


@dataclass(frozen=True)
class ValidityResult:
    valid: bool
    violators: tuple[str, ...] = ()
    missing_edges: tuple[Edge, ...] = ()
    problems: tuple[str, ...] = ()

    def __bool__(self):
        return self.valid


def validate_subgraph(graph: ComputationalGraph, s: Subgraph) -> ValidityResult:
    """Check closure and connectivity of ``s`` inside ``graph``.

    Closure: an interior member (neither entry nor exit) must keep all of
    its outgoing host edges inside ``s.edges``. Connectivity: every member
    lies on some entry -> exit path using only ``s.edges``.
    """
    unknown = sorted(n for n in s.nodes if n not in graph.nodes)
    if unknown:
        raise UnknownNode(f"subgraph references unknown node(s) {unknown}")

    problems = []
    foreign = sorted(e for e in s.edges if e not in graph.edges)
    for e in foreign:
        problems.append(f"edge {e} is not in the graph")

    violators = []
    missing: list[Edge] = []
    boundary = s.entry | s.exit
    for n in graph.sort_topologically(s.nodes):
        if n in boundary:
            continue
        out = [e for e in graph.out_edges(n) if e not in s.edges]
        if out:
            violators.append(n)
            missing.extend(out)
            problems.append(f"interior node {n!r} has outgoing edge(s) leaving the subgraph: {out}")

    if s.nodes:
        if not s.entry:
            problems.append("subgraph has no entry nodes")
        if not s.exit:
            problems.append("subgraph has no exit nodes")
        fwd = _reach(s.entry, s.edges, forward=True)
        bwd = _reach(s.exit, s.edges, forward=False)
        stranded = sorted(n for n in s.nodes if n not in fwd or n not in bwd)
        if stranded:
            problems.append(f"node(s) {stranded} lie on no entry->exit path")

    return ValidityResult(not problems, tuple(violators), tuple(missing), tuple(problems))


def _reach(start, edges, forward=True):
    adj: dict[str, list[str]] = {}
    for u, v in edges:
        if forward:
            adj.setdefault(u, []).append(v)
        else:
            adj.setdefault(v, []).append(u)
    seen = set(start)
    queue = deque(start)
    while queue:
        n = queue.popleft()
        for m in adj.get(n, ()):
            if m not in seen:
                seen.add(m)
                queue.append(m)
    return seen


def split_node(graph: ComputationalGraph, node: str, out_partition) -> ComputationalGraph:
    """Replace ``node`` by one clone per group of outgoing edges.

    Clones are named ``<node>#1``, ``<node>#2``, ... in partition order and
    each receives a copy of every incoming edge and of the operator, so the
    graph computes the same outputs.
    """
    if node not in graph.nodes:
        raise UnknownNode(f"unknown node {node!r}")
    target = graph.nodes[node]
    if target.kind != "compute":
        raise NotComputeNode(f"only compute nodes can be split; {node!r} is {target.kind}")
    groups = [frozenset(tuple(e) for e in g) for g in out_partition]
    if len(groups) < 2 or any(not g for g in groups):
        raise PartitionNotCovering("partition needs at least two non-empty groups")
    outgoing = set(graph.out_edges(node))
    seen: set = set()
    for g in groups:
        stray = g - outgoing
        if stray:
            raise PartitionNotCovering(f"edges {sorted(stray)} are not outgoing edges of {node!r}")
        overlap = g & seen
        if overlap:
            raise PartitionOverlap(f"edges {sorted(overlap)} appear in more than one group")
        seen |= g
    if seen != outgoing:
        raise PartitionNotCovering(f"partition misses edges {sorted(outgoing - seen)}")

    clones = [f"{node}#{i}" for i in range(1, len(groups) + 1)]
    clash = [c for c in clones if c in graph.nodes]
    if clash:
        raise DuplicateNode(f"clone id(s) {clash} already exist")

    new_nodes = []
    for nid, n in graph.nodes.items():
        if nid == node:
            new_nodes.extend(Node(c, n.kind, n.op) for c in clones)
        else:
            new_nodes.append(n)
    new_edges: dict[Edge, float] = {}
    for (u, v), w in graph.edges.items():
        if v == node:
            for c in clones:
                new_edges[(u, c)] = w
        elif u == node:
            idx = next(i for i, g in enumerate(groups) if (u, v) in g)
            new_edges[(clones[idx], v)] = w
        else:
            new_edges[(u, v)] = w
    return ComputationalGraph(new_nodes, new_edges)


# -- metrics ------------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    n_nodes: int
    n_edges: int
    log2_candidate_subgraphs: int
    magnitude_mantissa: float
    magnitude_exponent: int
    max_fan_out: int
    density: float

    @property
    def magnitude(self) -> str:
        return f"{self.magnitude_mantissa:.1f}e{self.magnitude_exponent}"


def graph_metrics(graph: ComputationalGraph) -> Metrics:
    """Size and decomposition-space metrics.

    The candidate-subgraph space is every subset of edges, 2**|E|, reported
    as its base-2 log and as a decimal mantissa/exponent pair. Density is
    |E| over the maximum edge count of a DAG on |V| nodes.
    """
    n, m = len(graph.nodes), len(graph.edges)
    log10 = m * math.log10(2)
    exponent = math.floor(log10)
    mantissa = 10 ** (log10 - exponent)
    fan_out = max((len(graph.successors(v)) for v in graph.nodes), default=0)
    pairs = n * (n - 1) / 2
    return Metrics(n, m, m, mantissa, exponent, fan_out, m / pairs if pairs else 0.0)
