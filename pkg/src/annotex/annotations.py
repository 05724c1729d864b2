"""Annotations, the annotation hierarchy, coverage and the explainability verdict.

Coverage rule: a node is covered by an annotation when it is a member of the
annotation's subgraph and every outgoing edge it has in the host graph is
inside that subgraph's edge set. Incoming edges do not matter. Junction
nodes of composition annotations are covered by the same rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

from .errors import (
    BundleError,
    DanglingChild,
    DuplicateId,
    DuplicateParent,
    EmptyEvidence,
    InvalidSubgraph,
    NotATree,
)
from .graph import ComputationalGraph, Subgraph, validate_subgraph

DEFAULT_ARITY_THRESHOLD = 10

# placeholder id reported when the hierarchy lacks a composition it needs
MISSING_COMPOSITION = "<missing-composition>"


@dataclass(frozen=True)
class ExplanationContext:
    """Audience, language and purpose the explanation is written for.

    Carried through to reports; never judged by the tool.
    """

    audience: str
    language: str
    purpose: str

    def __post_init__(self):
        for name in ("audience", "language", "purpose"):
            if not str(getattr(self, name)).strip():
                raise ValueError(f"explanation context field {name!r} must be non-empty")


@dataclass(frozen=True)
class LeafAnnotation:
    id: str
    subgraph: Subgraph
    hypothesis: str
    evidence: tuple = ()
    context: ExplanationContext | None = None

    def __post_init__(self):
        _check_common(self)

    @property
    def exits(self):
        return self.subgraph.exit


@dataclass(frozen=True)
class CompositionAnnotation:
    id: str
    junction: Subgraph
    hypothesis: str
    evidence: tuple = ()
    children: tuple = ()
    context: ExplanationContext | None = None

    def __post_init__(self):
        _check_common(self)
        object.__setattr__(self, "children", tuple(self.children))

    @property
    def subgraph(self):
        return self.junction

    @property
    def exits(self):
        return self.junction.exit


Annotation = Union[LeafAnnotation, CompositionAnnotation]


def _check_common(a):
    if not a.id or "/" in a.id:
        raise ValueError(f"annotation id {a.id!r} must be non-empty and contain no '/'")
    if not str(a.hypothesis).strip():
        raise ValueError(f"annotation {a.id!r} has an empty hypothesis")
    object.__setattr__(a, "evidence", tuple(a.evidence))
    if not a.evidence:
        raise EmptyEvidence(f"annotation {a.id!r} has no evidence checks")
    seen = set()
    for check in a.evidence:
        if check.id in seen:
            raise DuplicateId(f"annotation {a.id!r} has duplicate check id {check.id!r}")
        seen.add(check.id)


def check_key(annotation_id: str, check_id: str) -> str:
    """Key under which a check's result is stored."""
    return f"{annotation_id}/{check_id}"


class AnnotationBundle:
    """Leaves, compositions and the root of an annotation hierarchy.

    Construction validates that the parent/child references form a rooted
    tree: every child resolves, no annotation has two parents, there are no
    cycles and every annotation hangs below the root.
    """

    def __init__(self, leaves: Iterable[LeafAnnotation] = (),
                 compositions: Iterable[CompositionAnnotation] = (),
                 root: str | None = None,
                 context: ExplanationContext | None = None):
        self.leaves = tuple(leaves)
        self.compositions = tuple(compositions)
        self.root = root
        self.context = context

        self._by_id: dict[str, Annotation] = {}
        for a in self.leaves + self.compositions:
            if a.id in self._by_id:
                raise DuplicateId(f"duplicate annotation id {a.id!r}")
            self._by_id[a.id] = a

        self._parent: dict[str, str] = {}
        for c in self.compositions:
            for child in c.children:
                if child not in self._by_id:
                    raise DanglingChild(f"composition {c.id!r} references unknown child {child!r}")
                if child in self._parent:
                    raise DuplicateParent(
                        f"annotation {child!r} is a child of both {self._parent[child]!r} and {c.id!r}"
                    )
                self._parent[child] = c.id

        if not self._by_id:
            if root is not None:
                raise NotATree(f"root {root!r} given for an empty bundle")
            return
        if root is None or root not in self._by_id:
            raise NotATree(f"root {root!r} does not resolve to an annotation")
        if root in self._parent:
            raise NotATree(f"root {root!r} is itself a child of {self._parent[root]!r}")

        seen = set()
        stack = [root]
        while stack:
            aid = stack.pop()
            if aid in seen:
                raise NotATree(f"annotation {aid!r} is reachable twice")
            seen.add(aid)
            a = self._by_id[aid]
            if isinstance(a, CompositionAnnotation):
                stack.extend(a.children)
        unreachable = sorted(set(self._by_id) - seen)
        if unreachable:
            raise NotATree(f"annotation(s) {unreachable} are not below the root {root!r}")

        for c in self.compositions:
            if len(c.children) >= 2:
                continue
            single_leaf_root = (
                len(c.children) == 1 and c.id == root
                and isinstance(self._by_id[c.children[0]], LeafAnnotation)
            )
            if not single_leaf_root:
                raise BundleError(
                    f"composition {c.id!r} has {len(c.children)} child(ren); at least 2 are "
                    "required except for a root wrapping a single leaf"
                )

    def __len__(self):
        return len(self._by_id)

    def __iter__(self):
        return iter(self._by_id.values())

    def __getitem__(self, aid) -> Annotation:
        return self._by_id[aid]

    def __contains__(self, aid):
        return aid in self._by_id

    def __eq__(self, other):
        if not isinstance(other, AnnotationBundle):
            return NotImplemented
        return (self.leaves, self.compositions, self.root, self.context) == (
            other.leaves, other.compositions, other.root, other.context)

    def parent(self, aid) -> str | None:
        return self._parent.get(aid)

    def descendant_leaves(self, aid) -> list[LeafAnnotation]:
        a = self._by_id[aid]
        if isinstance(a, LeafAnnotation):
            return [a]
        out = []
        for child in a.children:
            out.extend(self.descendant_leaves(child))
        return out

    def descendant_compositions(self, aid) -> list[CompositionAnnotation]:
        a = self._by_id[aid]
        if isinstance(a, LeafAnnotation):
            return []
        out = [a]
        for child in a.children:
            out.extend(self.descendant_compositions(child))
        return out

    def span(self, aid) -> Subgraph:
        """The region an annotation explains, including everything below it.

        For a composition: the union of its descendants' subgraphs and
        junctions, entered at its leaves' entries and left at its junction's
        exits.
        """
        a = self._by_id[aid]
        if isinstance(a, LeafAnnotation):
            return a.subgraph
        nodes, edges, entry = set(), set(), set()
        for leaf in self.descendant_leaves(aid):
            nodes |= leaf.subgraph.nodes
            edges |= leaf.subgraph.edges
            entry |= leaf.subgraph.entry
        for comp in self.descendant_compositions(aid):
            nodes |= comp.junction.nodes
            edges |= comp.junction.edges
        return Subgraph(entry, a.junction.exit, nodes, edges)

    def checks(self):
        """Yield ``(key, annotation, check)`` for every evidence check."""
        for a in self._by_id.values():
            for check in a.evidence:
                yield check_key(a.id, check.id), a, check


# -- coverage -----------------------------------------------------------------

def _subgraph_of(a) -> Subgraph:
    return a if isinstance(a, Subgraph) else a.subgraph


def covered_nodes(graph: ComputationalGraph, a) -> frozenset:
    """Nodes covered by one annotation (or bare subgraph)."""
    s = _subgraph_of(a)
    result = validate_subgraph(graph, s)
    if not result.valid:
        raise InvalidSubgraph(
            f"annotation {getattr(a, 'id', '?')!r}: " + "; ".join(result.problems),
            getattr(a, "id", None),
        )
    return _covered_unchecked(graph, s)


def _covered_unchecked(graph, s):
    edges = s.edges
    return frozenset(
        n for n in s.nodes if all(e in edges for e in graph.out_edges(n))
    )


def structural_coverage(graph: ComputationalGraph, annotations: Iterable,
                        *, skip_invalid: bool = False) -> tuple[float, frozenset]:
    """Fraction of graph nodes covered by the union of the annotations.

    Composition annotations contribute their junction subgraph. Invalid
    subgraphs raise ``InvalidSubgraph`` unless ``skip_invalid`` is set.
    """
    covered = set()
    for a in annotations:
        s = _subgraph_of(a)
        if skip_invalid and not validate_subgraph(graph, s).valid:
            continue
        covered |= covered_nodes(graph, a)
    total = len(graph.nodes)
    uncovered = frozenset(n for n in graph.nodes if n not in covered)
    if total == 0:
        return 1.0, uncovered
    return (total - len(uncovered)) / total, uncovered


def _passed(results: Mapping, key: str) -> bool:
    r = results.get(key)
    return r is not None and r.status == "pass"


def _evidence_passed(a, results) -> bool:
    return all(_passed(results, check_key(a.id, c.id)) for c in a.evidence)


def _leaf_spans_model(graph, leaf) -> bool:
    s = leaf.subgraph
    if not validate_subgraph(graph, s).valid:
        return False
    return (
        _covered_unchecked(graph, s) == frozenset(graph.nodes)
        and set(graph.inputs) <= s.entry
        and set(graph.outputs) <= s.exit
    )


def composition_problems(graph: ComputationalGraph, bundle: AnnotationBundle,
                         comp: CompositionAnnotation, results: Mapping) -> list[str]:
    """Reasons a composition does not count toward compositional coverage.

    A composition counts when its junction is a valid subgraph, the junction
    is where the children's outputs meet (each junction entry is an exit of
    some child and each child has an exit inside the junction), and every
    one of its evidence checks passed.
    """
    problems = []
    validity = validate_subgraph(graph, comp.junction)
    if not validity.valid:
        problems.append("junction invalid: " + "; ".join(validity.problems))
    child_exits = set()
    for cid in comp.children:
        exits = bundle[cid].exits
        child_exits |= exits
        if not exits & comp.junction.nodes:
            problems.append(f"child {cid!r} has no exit inside the junction")
    stray = sorted(comp.junction.entry - child_exits)
    if stray:
        problems.append(f"junction entries {stray} are not exits of any child")
    failed = [c.id for c in comp.evidence if not _passed(results, check_key(comp.id, c.id))]
    if failed:
        problems.append(f"evidence not verified: {failed}")
    return problems


def compositional_coverage(graph: ComputationalGraph, bundle: AnnotationBundle,
                           results: Mapping) -> tuple[float, frozenset]:
    """Fraction of the hierarchy's required compositions that are verified.

    Every composition in the hierarchy is required. A hierarchy consisting
    of a single leaf needs no composition only when that leaf alone spans
    and covers the whole graph; otherwise one composition is missing.
    """
    if not bundle.compositions:
        if bundle.root is not None and _leaf_spans_model(graph, bundle[bundle.root]):
            return 1.0, frozenset()
        return 0.0, frozenset({MISSING_COMPOSITION})
    unverified = frozenset(
        c.id for c in bundle.compositions if composition_problems(graph, bundle, c, results)
    )
    n = len(bundle.compositions)
    return (n - len(unverified)) / n, unverified


@dataclass(frozen=True)
class CoverageReport:
    structural: float
    compositional: float
    uncovered_nodes: frozenset = frozenset()
    unverified_compositions: frozenset = frozenset()


def explainedness(graph: ComputationalGraph, bundle: AnnotationBundle,
                  results: Mapping) -> CoverageReport:
    structural, uncovered = structural_coverage(graph, bundle, skip_invalid=True)
    compositional, unverified = compositional_coverage(graph, bundle, results)
    return CoverageReport(structural, compositional, uncovered, unverified)


REQUIREMENTS = (
    "leaves_valid",
    "structural_coverage",
    "compositional_coverage",
    "root_spans_model",
)


@dataclass(frozen=True)
class WellFormedness:
    leaves_valid: bool
    structural_coverage: bool
    compositional_coverage: bool
    root_spans_model: bool
    failures: tuple = ()
    coverage: CoverageReport | None = None

    @property
    def well_formed(self) -> bool:
        return all(getattr(self, r) for r in REQUIREMENTS)


def _fmt_nodes(nodes) -> str:
    return ", ".join(sorted(nodes))


def check_well_formed(graph: ComputationalGraph, bundle: AnnotationBundle,
                      results: Mapping) -> WellFormedness:
    """Evaluate the four requirements of a well-formed global explanation."""
    failures = []

    invalid = []
    for leaf in bundle.leaves:
        v = validate_subgraph(graph, leaf.subgraph)
        if not v.valid:
            invalid.append(f"{leaf.id} ({'; '.join(v.problems)})")
    leaves_ok = bool(bundle.leaves) and not invalid
    if not bundle.leaves:
        failures.append(("leaves_valid", "the hierarchy has no leaf annotations"))
    elif invalid:
        failures.append(("leaves_valid", "invalid leaf subgraph(s): " + "; ".join(invalid)))

    cov = explainedness(graph, bundle, results)
    structural_ok = cov.structural == 1.0
    if not structural_ok:
        covered = len(graph.nodes) - len(cov.uncovered_nodes)
        failures.append((
            "structural_coverage",
            f"structural coverage {covered}/{len(graph.nodes)} < 1; "
            f"uncovered: {_fmt_nodes(cov.uncovered_nodes)}",
        ))
    compositional_ok = cov.compositional == 1.0
    if not compositional_ok:
        details = []
        for cid in sorted(cov.unverified_compositions):
            if cid == MISSING_COMPOSITION:
                details.append("no composition joins the leaves into a global explanation")
            else:
                probs = composition_problems(graph, bundle, bundle[cid], results)
                details.append(f"{cid}: " + "; ".join(probs))
        failures.append((
            "compositional_coverage",
            f"compositional coverage {cov.compositional:.3f} < 1; " + " | ".join(details),
        ))

    root_ok, root_detail = _root_spans(graph, bundle)
    if not root_ok:
        failures.append(("root_spans_model", root_detail))

    return WellFormedness(leaves_ok, structural_ok, compositional_ok, root_ok,
                          tuple(failures), cov)


def _root_spans(graph, bundle):
    if bundle.root is None:
        return False, "the bundle has no root annotation"
    region = set()
    for leaf in bundle.leaves:
        if validate_subgraph(graph, leaf.subgraph).valid:
            region |= _covered_unchecked(graph, leaf.subgraph)
    for comp in bundle.compositions:
        region |= comp.junction.nodes
    problems = []
    missing = set(graph.nodes) - region
    if missing:
        problems.append(f"nodes outside the explained region: {_fmt_nodes(missing)}")
    root_exits = bundle[bundle.root].exits
    if not set(graph.outputs) <= root_exits:
        problems.append(
            f"root exits miss model outputs {_fmt_nodes(set(graph.outputs) - root_exits)}"
        )
    entries = set()
    for leaf in bundle.leaves:
        entries |= leaf.subgraph.entry
    if not set(graph.inputs) <= entries:
        problems.append(
            f"leaf entries miss model inputs {_fmt_nodes(set(graph.inputs) - entries)}"
        )
    return not problems, "; ".join(problems)


def arity_warnings(bundle: AnnotationBundle, threshold: int = DEFAULT_ARITY_THRESHOLD) -> list[str]:
    """Flag compositions too flat to be a useful explanation for most audiences."""
    if threshold < 2:
        raise ValueError("arity threshold must be >= 2")
    return [
        f"composition {c.id!r} combines {len(c.children)} children "
        f"(arity warning threshold {threshold})"
        for c in bundle.compositions
        if len(c.children) > threshold
    ]


@dataclass(frozen=True)
class Verdict:
    well_formed: bool
    all_evidence_verified: bool
    explainable: bool
    failures: tuple = ()
    warnings: tuple = ()
    coverage: CoverageReport | None = None
    max_arity: int = 0

    def __post_init__(self):
        if self.explainable != (self.well_formed and self.all_evidence_verified):
            raise AssertionError("explainable must equal well_formed and all_evidence_verified")
        if self.explainable and self.coverage is not None:
            assert self.coverage.structural == 1.0 and self.coverage.compositional == 1.0
            assert not self.failures


def explainability_criterion(graph: ComputationalGraph, bundle: AnnotationBundle,
                             results: Mapping, *,
                             arity_threshold: int = DEFAULT_ARITY_THRESHOLD) -> Verdict:
    """Decide whether ``bundle`` is a verified, well-formed global explanation."""
    wf = check_well_formed(graph, bundle, results)
    failures = list(wf.failures)
    evidence_ok = True
    for key, _, _ in bundle.checks():
        r = results.get(key)
        if r is None:
            evidence_ok = False
            failures.append(("evidence", f"{key}: not executed"))
        elif r.status != "pass":
            evidence_ok = False
            failures.append(("evidence", f"{key}: {r.status}: {r.diagnostics}"))
    arity = max((len(c.children) for c in bundle.compositions), default=0)
    return Verdict(
        well_formed=wf.well_formed,
        all_evidence_verified=evidence_ok,
        explainable=wf.well_formed and evidence_ok,
        failures=tuple(failures),
        warnings=tuple(arity_warnings(bundle, arity_threshold)),
        coverage=wf.coverage,
        max_arity=arity,
    )
