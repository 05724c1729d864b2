"""Strict JSON file formats for graphs, bundles, patients, inputs and reports.

Parsing happens in three layers. The first decodes JSON and rejects
duplicate keys (``JSONSyntaxError``). The second checks the document
against a closed schema shipped with the package (``SchemaError``). The
third builds domain objects, so graph invariants surface as
``SemanticError`` and hierarchy problems as the matching ``BundleError``
subclass. Every error carries a JSON pointer to the offending element.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Mapping

from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match

from . import __version__
from .annotations import (
    AnnotationBundle,
    CompositionAnnotation,
    CoverageReport,
    ExplanationContext,
    LeafAnnotation,
    Verdict,
)
from .errors import (
    BundleError,
    DanglingChild,
    DuplicateId,
    DuplicateParent,
    EmptyEvidence,
    GraphError,
    JSONSyntaxError,
    SchemaError,
    SemanticError,
    UnknownNodeRef,
)
from .evidence import EvidenceCheck, Target, VerificationResult
from .graph import ComputationalGraph, Node, OperatorSpec, Subgraph
from .predict_cvd import PatientInput

GRAPH_SUFFIX = ".graph.json"
BUNDLE_SUFFIX = ".bundle.json"
REPORT_JSON_SUFFIX = ".report.json"
REPORT_MD_SUFFIX = ".report.md"


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    text = resources.files("annotex").joinpath("schemas", f"{name}.schema.json").read_text("utf-8")
    return json.loads(text)


@lru_cache(maxsize=None)
def _validator(name):
    return Draft202012Validator(load_schema(name))


def _pointer(parts) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


def _reject_duplicates(pairs):
    seen = {}
    for k, v in pairs:
        if k in seen:
            raise ValueError(f"duplicate key {k!r}")
        seen[k] = v
    return seen


def decode_json(data) -> object:
    """Decode UTF-8 JSON bytes (or text) strictly."""
    if isinstance(data, (bytes, bytearray)):
        try:
            data = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise JSONSyntaxError(f"file is not valid UTF-8 (byte {exc.start})") from None
    try:
        return json.loads(data, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise JSONSyntaxError(f"{exc.msg} at line {exc.lineno}, column {exc.colno}") from None
    except ValueError as exc:
        raise JSONSyntaxError(str(exc)) from None


def validate_document(doc, schema_name: str) -> None:
    error = best_match(_validator(schema_name).iter_errors(doc))
    if error is not None:
        raise SchemaError(error.message, _pointer(error.absolute_path))


def _load(data, schema_name):
    doc = decode_json(data)
    validate_document(doc, schema_name)
    return doc


# -- graphs ------------------------------------------------------------------------------

def graph_from_dict(doc: Mapping) -> ComputationalGraph:
    """Build a graph from a schema-valid document, pointing errors at their element."""
    nodes, seen = [], {}
    for i, entry in enumerate(doc["nodes"]):
        nid = entry["id"]
        if nid in seen:
            raise SemanticError(f"duplicate node id {nid!r} (first at /nodes/{seen[nid]})", f"/nodes/{i}/id")
        seen[nid] = i
        op = None
        if "op" in entry:
            try:
                op = OperatorSpec(entry["op"], dict(entry.get("params", {})))
            except GraphError as exc:
                raise SemanticError(str(exc), f"/nodes/{i}/params") from None
        elif "params" in entry:
            raise SemanticError("params given without an op", f"/nodes/{i}/params")
        try:
            nodes.append(Node(nid, entry["kind"], op))
        except GraphError as exc:
            raise SemanticError(str(exc), f"/nodes/{i}") from None
    edges, seen_edges = [], {}
    for j, e in enumerate(doc["edges"]):
        for end in ("from", "to"):
            if e[end] not in seen:
                raise SemanticError(f"edge references unknown node {e[end]!r}", f"/edges/{j}/{end}")
        key = (e["from"], e["to"])
        if key in seen_edges:
            raise SemanticError(f"duplicate edge {key} (first at /edges/{seen_edges[key]})", f"/edges/{j}")
        seen_edges[key] = j
        edges.append((e["from"], e["to"], e.get("weight", 1.0)))
    try:
        return ComputationalGraph(nodes, edges)
    except GraphError as exc:
        raise SemanticError(f"{type(exc).__name__}: {exc}", _graph_error_path(exc, doc)) from None


def _graph_error_path(exc, doc):
    text = str(exc)
    for i, entry in enumerate(doc["nodes"]):
        if f"node {entry['id']!r}" in text:
            return f"/nodes/{i}"
    return "/edges"


def parse_graph_file(data) -> ComputationalGraph:
    return graph_from_dict(_load(data, "graph"))


def graph_to_dict(graph: ComputationalGraph) -> dict:
    nodes = []
    for n in graph.nodes.values():
        entry = {"id": n.id, "kind": n.kind}
        if n.op is not None:
            entry["op"] = n.op.kind
            params = n.op.explicit_params()
            if params:
                entry["params"] = params
        nodes.append(entry)
    edges = []
    for (u, v), w in graph.edges.items():
        e = {"from": u, "to": v}
        if w != 1.0:
            e["weight"] = w
        edges.append(e)
    return {"nodes": nodes, "edges": edges}


def _dump(doc) -> bytes:
    return (json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n").encode("utf-8")


def emit_graph(graph: ComputationalGraph) -> bytes:
    return _dump(graph_to_dict(graph))


def graph_digest(graph: ComputationalGraph) -> str:
    canonical = json.dumps(graph_to_dict(graph), sort_keys=True, separators=(",", ":"),
                           ensure_ascii=False, allow_nan=False)
    return "sha256:" + hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# -- bundles -----------------------------------------------------------------------------

def _subgraph_from(doc, graph, path):
    for key in ("entry", "exit", "nodes"):
        for j, nid in enumerate(doc[key]):
            if nid not in graph.nodes:
                raise UnknownNodeRef(f"unknown node {nid!r}", f"{path}/{key}/{j}")
    for j, (u, v) in enumerate(doc["edges"]):
        if (u, v) not in graph.edges:
            raise UnknownNodeRef(f"edge ({u!r}, {v!r}) is not in the graph", f"{path}/edges/{j}")
    try:
        return Subgraph(doc["entry"], doc["exit"], doc["nodes"], [tuple(e) for e in doc["edges"]])
    except ValueError as exc:
        raise SemanticError(str(exc), path) from None


def _target_from(doc, graph, path):
    if doc is None:
        return Target()
    kw = dict(doc)
    if "subgraph" in kw:
        kw["subgraph"] = _subgraph_from(kw["subgraph"], graph, f"{path}/subgraph")
    if "edge" in kw:
        kw["edge"] = tuple(kw["edge"])
    try:
        return Target(**kw)
    except ValueError as exc:
        raise SemanticError(str(exc), path) from None


def _check_from(doc, graph, path):
    target = _target_from(doc.get("target"), graph, f"{path}/target")
    try:
        return EvidenceCheck(doc["id"], doc["kind"], doc["mode"], doc.get("params", {}), target, doc.get("note"))
    except ValueError as exc:
        raise SemanticError(str(exc), path) from None


def _context_from(doc, path):
    if doc is None:
        return None
    try:
        return ExplanationContext(**doc)
    except ValueError as exc:
        raise SemanticError(str(exc), path) from None


def bundle_from_dict(doc: Mapping, graph: ComputationalGraph) -> AnnotationBundle:
    context = _context_from(doc.get("context"), "/context")
    ids, parents = {}, {}
    for i, a in enumerate(doc["annotations"]):
        if a["id"] in ids:
            raise DuplicateId(f"duplicate annotation id {a['id']!r}", f"/annotations/{i}/id")
        ids[a["id"]] = i
    for i, a in enumerate(doc["annotations"]):
        for j, child in enumerate(a.get("children", [])):
            where = f"/annotations/{i}/children/{j}"
            if child not in ids:
                raise DanglingChild(f"composition {a['id']!r} references unknown child {child!r}", where)
            if child in parents:
                raise DuplicateParent(
                    f"annotation {child!r} is a child of both {parents[child]!r} and {a['id']!r}", where)
            parents[child] = a["id"]

    leaves, comps = [], []
    for i, a in enumerate(doc["annotations"]):
        path = f"/annotations/{i}"
        sub = _subgraph_from(a["subgraph"], graph, f"{path}/subgraph")
        if not a["evidence"]:
            raise EmptyEvidence(f"annotation {a['id']!r} has no evidence checks", f"{path}/evidence")
        checks = tuple(_check_from(c, graph, f"{path}/evidence/{k}") for k, c in enumerate(a["evidence"]))
        ctx = _context_from(a.get("context"), f"{path}/context") or context
        try:
            if a["kind"] == "leaf":
                leaves.append(LeafAnnotation(a["id"], sub, a["hypothesis"], checks, ctx))
            else:
                comps.append(CompositionAnnotation(a["id"], sub, a["hypothesis"], checks,
                                                   tuple(a["children"]), ctx))
        except BundleError as exc:
            raise type(exc)(str(exc), path) from None
        except ValueError as exc:
            raise SemanticError(str(exc), path) from None
    try:
        return AnnotationBundle(leaves, comps, doc["root"], context)
    except BundleError as exc:
        raise type(exc)(str(exc), "/root") from None


def parse_bundle_file(data, graph: ComputationalGraph) -> AnnotationBundle:
    return bundle_from_dict(_load(data, "bundle"), graph)


def _subgraph_to_dict(s: Subgraph) -> dict:
    return {
        "entry": sorted(s.entry),
        "exit": sorted(s.exit),
        "nodes": sorted(s.nodes),
        "edges": [list(e) for e in sorted(s.edges)],
    }


def _context_to_dict(ctx):
    return {"audience": ctx.audience, "language": ctx.language, "purpose": ctx.purpose}


def _target_to_dict(t: Target):
    out = {}
    for name in ("annotation", "part", "node"):
        if getattr(t, name) is not None:
            out[name] = getattr(t, name)
    if t.edge is not None:
        out["edge"] = list(t.edge)
    if t.subgraph is not None:
        out["subgraph"] = _subgraph_to_dict(t.subgraph)
    return out


def check_to_dict(c: EvidenceCheck) -> dict:
    out = {"id": c.id, "kind": c.kind, "mode": c.mode}
    if c.params:
        out["params"] = dict(c.params)
    if not c.target.is_default:
        out["target"] = _target_to_dict(c.target)
    if c.note is not None:
        out["note"] = c.note
    return out


def bundle_to_dict(bundle: AnnotationBundle) -> dict:
    annotations = []
    for a in list(bundle.leaves) + list(bundle.compositions):
        entry = {
            "id": a.id,
            "kind": "leaf" if isinstance(a, LeafAnnotation) else "composition",
            "subgraph": _subgraph_to_dict(a.subgraph),
            "hypothesis": a.hypothesis,
            "evidence": [check_to_dict(c) for c in a.evidence],
        }
        if isinstance(a, CompositionAnnotation):
            entry["children"] = list(a.children)
        if a.context is not None and a.context != bundle.context:
            entry["context"] = _context_to_dict(a.context)
        annotations.append(entry)
    out = {"annotations": annotations, "root": bundle.root}
    if bundle.context is not None:
        out["context"] = _context_to_dict(bundle.context)
    return out


def emit_bundle(bundle: AnnotationBundle) -> bytes:
    return _dump(bundle_to_dict(bundle))


# -- patients and plain input files -----------------------------------------------------------

def parse_patient_file(data) -> PatientInput:
    doc = _load(data, "patient")
    try:
        return PatientInput(**doc)
    except ValueError as exc:
        raise SemanticError(str(exc)) from None


def parse_inputs_file(data) -> dict[str, float]:
    return {k: float(v) for k, v in _load(data, "inputs").items()}


# -- reports -----------------------------------------------------------------------------

@dataclass(frozen=True)
class Report:
    graph_digest: str
    coverage: CoverageReport
    checks: tuple
    verdict: Verdict
    seed: int
    warnings: tuple = ()
    annotations: tuple = ()
    context: ExplanationContext | None = None
    version: str = __version__
    notes: tuple = field(default=())


def build_report(graph: ComputationalGraph, bundle: AnnotationBundle, results: Mapping,
                 verdict: Verdict, *, seed: int) -> Report:
    annotations = []
    for a in bundle:
        entry = {"id": a.id, "kind": "leaf" if isinstance(a, LeafAnnotation) else "composition",
                 "hypothesis": a.hypothesis}
        if isinstance(a, CompositionAnnotation):
            entry["children"] = list(a.children)
        annotations.append(entry)
    annotations.sort(key=lambda e: e["id"])
    checks = tuple(results[k] for k in sorted(results))
    notes = tuple({"check": r.check_id, "note": r.note} for r in checks if r.note)
    return Report(graph_digest(graph), verdict.coverage, checks, verdict, seed,
                  tuple(verdict.warnings), tuple(annotations), bundle.context, notes=notes)


def _finite(x):
    return x if isinstance(x, (int, float)) and math.isfinite(x) else None


def _result_to_dict(r: VerificationResult) -> dict:
    out = {
        "id": r.check_id,
        "status": r.status,
        "measured": {k: _finite(v) for k, v in r.measured.items()},
        "expected": {k: _finite(v) for k, v in r.expected.items()},
        "tolerance": r.tolerance,
        "diagnostics": r.diagnostics,
    }
    # hazard ratios are displayed to two decimals next to the raw value
    display = {k: f"{v:.2f}" for k, v in r.measured.items() if k == "hazard_ratio" and math.isfinite(v)}
    if display:
        out["display"] = display
    if r.note:
        out["note"] = r.note
    return out


def report_to_dict(report: Report) -> dict:
    cov, v = report.coverage, report.verdict
    return {
        "tool": "annotex",
        "version": report.version,
        "graph_digest": report.graph_digest,
        "seed": report.seed,
        "context": _context_to_dict(report.context) if report.context else None,
        "coverage": {
            "structural": cov.structural,
            "compositional": cov.compositional,
            "uncovered_nodes": sorted(cov.uncovered_nodes),
            "unverified_compositions": sorted(cov.unverified_compositions),
        },
        "verdict": {
            "explainable": v.explainable,
            "well_formed": v.well_formed,
            "all_evidence_verified": v.all_evidence_verified,
            "max_arity": v.max_arity,
            "failures": [{"requirement": req, "detail": detail} for req, detail in v.failures],
        },
        "warnings": list(report.warnings),
        "annotations": list(report.annotations),
        "checks": [_result_to_dict(r) for r in report.checks],
        "notes": list(report.notes),
    }


def _fmt(x):
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def _md_escape(text: str) -> str:
    return str(text).replace("|", "\\|").replace("\n", " ")


def render_report_markdown(d: dict) -> str:
    """Markdown view of a report dictionary (as produced by :func:`report_to_dict`)."""
    explainable = d["verdict"]["explainable"]
    lines = [
        "# Explainability report",
        "",
        f"**verdict: {'EXPLAINABLE' if explainable else 'NOT EXPLAINABLE'}**",
        "",
        f"- structural coverage: {d['coverage']['structural']:.3f}",
        f"- compositional coverage: {d['coverage']['compositional']:.3f}",
        f"- well formed: {'yes' if d['verdict']['well_formed'] else 'no'}",
        f"- all evidence verified: {'yes' if d['verdict']['all_evidence_verified'] else 'no'}",
        f"- graph digest: `{d['graph_digest']}`",
        f"- seed: {d['seed']}",
        f"- tool version: {d['version']}",
    ]
    if d["context"]:
        c = d["context"]
        lines += ["", "## Explanation context", "",
                  f"- audience: {c['audience']}", f"- language: {c['language']}", f"- purpose: {c['purpose']}"]
    if d["coverage"]["uncovered_nodes"]:
        lines += ["", "uncovered nodes: " + ", ".join(d["coverage"]["uncovered_nodes"])]
    if d["coverage"]["unverified_compositions"]:
        lines += ["", "unverified compositions: " + ", ".join(d["coverage"]["unverified_compositions"])]
    failures = d["verdict"]["failures"]
    if failures:
        lines += ["", f"## Failures ({len(failures)})", ""]
        lines += [f"{i}. [{f['requirement']}] {f['detail']}" for i, f in enumerate(failures, start=1)]
    if d["warnings"]:
        lines += ["", "## Warnings", ""]
        lines += [f"- {w}" for w in d["warnings"]]

    by_owner: dict[str, list] = {}
    for c in d["checks"]:
        by_owner.setdefault(c["id"].split("/", 1)[0], []).append(c)
    lines += ["", "## Annotations"]
    for a in d["annotations"]:
        lines += ["", f"### {a['id']} ({a['kind']})", "", _md_escape(a["hypothesis"])]
        if a.get("children"):
            lines += ["", "children: " + ", ".join(a["children"])]
        rows = by_owner.get(a["id"], [])
        if rows:
            lines += ["", "| check | status | measured | expected | tolerance |",
                      "|---|---|---|---|---|"]
            for c in rows:
                shown = dict(c["measured"])
                shown.update(c.get("display", {}))
                measured = "; ".join(f"{k}={_fmt(v)}" for k, v in sorted(shown.items())) or "-"
                expected = "; ".join(f"{k}={_fmt(v)}" for k, v in sorted(c["expected"].items())) or "-"
                status = c["status"].upper()
                lines.append(f"| {c['id'].split('/', 1)[1]} | {status} | {_md_escape(measured)} | "
                             f"{_md_escape(expected)} | {_fmt(c['tolerance'])} |")
            problems = [c for c in rows if c["status"] != "pass"]
            for c in problems:
                lines += ["", f"- {c['id']}: {_md_escape(c['diagnostics'])}"]
    if d["notes"]:
        lines += ["", "## Notes", ""]
        lines += [f"- {n['check']}: {_md_escape(n['note'])}" for n in d["notes"]]
    return "\n".join(lines) + "\n"


def emit_report(report: Report, fmt: str = "json") -> bytes:
    d = report_to_dict(report)
    if fmt == "json":
        return _dump(d)
    if fmt in ("md", "markdown"):
        return render_report_markdown(d).encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")
