"""``annotex`` command line.

Exit codes: 0 success / explainable, 1 not explainable (or failing
checks), 2 unreadable or malformed input files, 3 runtime errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .annotations import (
    DEFAULT_ARITY_THRESHOLD,
    AnnotationBundle,
    explainability_criterion,
    explainedness,
)
from .builders import TreeSpec, build_decision_tree, build_dense_mlp, build_linear_regression, random_tree_spec
from .errors import AnnotexError, BundleError, MalformedTree, ParseError
from .evidence import CHECK_KINDS, CHECK_PARAMS, DEFAULT_SEED, verify_bundle
from .formats import (
    BUNDLE_SUFFIX,
    GRAPH_SUFFIX,
    build_report,
    decode_json,
    emit_bundle,
    emit_graph,
    emit_report,
    parse_bundle_file,
    parse_graph_file,
    parse_inputs_file,
    parse_patient_file,
    render_report_markdown,
    validate_document,
)
from .graph import evaluate, graph_metrics
from .predict_cvd import SEXES, build_predict, cluster_contributions, linear_predictor, predict_risk

EXIT_OK, EXIT_NOT_EXPLAINABLE, EXIT_PARSE, EXIT_RUNTIME = 0, 1, 2, 3


class InputFileError(Exception):
    """Input could not be read or parsed; maps to exit code 2."""


def _color_enabled(stream) -> bool:
    if os.environ.get("ANNOTEX_NO_COLOR"):
        return False
    return hasattr(stream, "isatty") and stream.isatty()


def _paint(text, code, stream=None):
    stream = stream or sys.stdout
    return f"\033[{code}m{text}\033[0m" if _color_enabled(stream) else text


def _status(status):
    return _paint(status.upper(), {"pass": "32", "fail": "31", "error": "33"}.get(status, "0"))


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputFileError(f"{path}: cannot read file ({exc.strerror})") from None


def _parse(path, parser, *args):
    try:
        return parser(_read(path), *args)
    except (ParseError, BundleError, MalformedTree) as exc:
        raise InputFileError(f"{path}: {type(exc).__name__}: {exc}") from None


def _load_pair(args):
    graph = _parse(args.graph, parse_graph_file)
    bundle = _parse(args.bundle, parse_bundle_file, graph)
    return graph, bundle


def _write(path, data: bytes):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def _parse_overrides(items):
    out = {}
    for item in items or ():
        kind, sep, value = item.partition("=")
        if not sep or kind not in CHECK_KINDS:
            raise InputFileError(f"--tolerance expects KIND=VALUE with KIND in {list(CHECK_KINDS)}, got {item!r}")
        try:
            tol = float(value)
        except ValueError:
            raise InputFileError(f"--tolerance value {value!r} is not a number") from None
        if not tol > 0:
            raise InputFileError("--tolerance values must be > 0")
        out[kind] = tol
    return out


def apply_tolerance_overrides(bundle: AnnotationBundle, overrides) -> AnnotationBundle:
    """Set the tolerance of checks that rely on their kind's default."""
    if not overrides:
        return bundle

    def patch(a):
        checks = tuple(
            dataclasses.replace(c, params={**c.params, "tolerance": overrides[c.kind]})
            if c.kind in overrides and "tolerance" not in c.params and "tolerance" in CHECK_PARAMS[c.kind]
            else c
            for c in a.evidence
        )
        return dataclasses.replace(a, evidence=checks)

    return AnnotationBundle([patch(a) for a in bundle.leaves], [patch(c) for c in bundle.compositions],
                            bundle.root, bundle.context)


def _run_pipeline(args):
    graph, bundle = _load_pair(args)
    bundle = apply_tolerance_overrides(bundle, _parse_overrides(args.tolerance))
    results = verify_bundle(graph, bundle, seed=args.seed)
    verdict = explainability_criterion(graph, bundle, results, arity_threshold=args.arity_warn)
    return graph, bundle, results, verdict


# -- commands -------------------------------------------------------------------------------

def cmd_eval(args):
    graph = _parse(args.graph, parse_graph_file)
    inputs = _parse(args.inputs, parse_inputs_file)
    act = evaluate(graph, inputs)
    for out in graph.outputs:
        print(f"{out} = {act[out]!r}")
    return EXIT_OK


def cmd_predict(args):
    patient = _parse(args.patient, parse_patient_file)
    eta = linear_predictor(args.sex, patient)
    risk = predict_risk(args.sex, patient)
    clusters = cluster_contributions(args.sex, patient)
    if args.format == "json":
        doc = {"sex": args.sex, "eta": eta, "risk": risk, "clusters": clusters}
        sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return EXIT_OK
    print(f"sex: {args.sex}")
    print(f"eta: {eta:.6f}")
    print(f"five-year risk: {risk:.4f} ({risk * 100:.2f}%)")
    for cid, value in clusters.items():
        print(f"  {cid}: {value:+.6f}")
    return EXIT_OK


def _write_pair(prefix, graph, bundle=None):
    prefix = str(prefix)
    _write(prefix + GRAPH_SUFFIX, emit_graph(graph))
    written = [prefix + GRAPH_SUFFIX]
    if bundle is not None:
        _write(prefix + BUNDLE_SUFFIX, emit_bundle(bundle))
        written.append(prefix + BUNDLE_SUFFIX)
    for path in written:
        print(f"wrote {path}")


def cmd_gen(args):
    if args.model == "regression":
        if args.coefficients:
            try:
                coefs = [float(c) for c in args.coefficients.split(",")]
            except ValueError:
                raise InputFileError("--coefficients must be a comma-separated list of numbers") from None
        elif args.features:
            rng = np.random.default_rng(args.seed)
            coefs = [round(float(c), 4) for c in rng.normal(0.0, 1.0, size=args.features)]
        else:
            raise InputFileError("give --coefficients or --features")
        graph, bundle = build_linear_regression(coefs, args.intercept)
    elif args.model == "tree":
        if args.spec:
            try:
                spec = TreeSpec.from_dict(decode_json(_read(args.spec)))
            except (ParseError, MalformedTree) as exc:
                raise InputFileError(f"{args.spec}: {exc}") from None
        else:
            spec = random_tree_spec(np.random.default_rng(args.seed), args.depth, args.n_inputs,
                                    complete=args.complete)
        graph, bundle = build_decision_tree(spec)
    elif args.model == "mlp":
        try:
            layers = [int(x) for x in args.layers.split(",")]
        except ValueError:
            raise InputFileError("--layers must be a comma-separated list of integers") from None
        graph, bundle = build_dense_mlp(layers, seed=args.seed), None
    else:
        graph, bundle = build_predict(args.sex)
    _write_pair(args.out, graph, bundle)
    return EXIT_OK


def cmd_verify(args):
    graph, bundle = _load_pair(args)
    bundle = apply_tolerance_overrides(bundle, _parse_overrides(args.tolerance))
    results = verify_bundle(graph, bundle, seed=args.seed)
    for key, r in results.items():
        print(f"{_status(r.status):<5} {key}: {r.diagnostics}")
    failed = sum(1 for r in results.values() if r.status != "pass")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_NOT_EXPLAINABLE


def cmd_coverage(args):
    graph, bundle = _load_pair(args)
    results = verify_bundle(graph, bundle, seed=args.seed)
    cov = explainedness(graph, bundle, results)
    print(f"structural {cov.structural:.3f}, compositional {cov.compositional:.3f}")
    if cov.uncovered_nodes:
        print("uncovered nodes: " + ", ".join(sorted(cov.uncovered_nodes)))
    if cov.unverified_compositions:
        print("unverified compositions: " + ", ".join(sorted(cov.unverified_compositions)))
    return EXIT_OK


def cmd_criterion(args):
    graph, bundle, results, verdict = _run_pipeline(args)
    report = build_report(graph, bundle, results, verdict, seed=args.seed)
    data = emit_report(report, args.format)
    if args.out:
        _write(args.out, data)
    else:
        sys.stdout.write(data.decode("utf-8"))
    banner = "EXPLAINABLE" if verdict.explainable else "NOT EXPLAINABLE"
    print(_paint(f"verdict: {banner}", "32" if verdict.explainable else "31", sys.stderr), file=sys.stderr)
    for w in verdict.warnings:
        print(_paint(f"warning: {w}", "33", sys.stderr), file=sys.stderr)
    return EXIT_OK if verdict.explainable else EXIT_NOT_EXPLAINABLE


def cmd_metrics(args):
    graph = _parse(args.graph, parse_graph_file)
    m = graph_metrics(graph)
    print(f"nodes: {m.n_nodes}")
    print(f"edges: {m.n_edges}")
    print(f"max fan-out: {m.max_fan_out}")
    print(f"density: {m.density:.4f}")
    print(f"log2 candidate subgraphs: {m.log2_candidate_subgraphs}")
    print(f"candidate subgraphs: ~{m.magnitude} (10^{m.magnitude_exponent})")
    return EXIT_OK


def cmd_report(args):
    def load(data):
        doc = decode_json(data)
        validate_document(doc, "report")
        return doc

    doc = _parse(args.report, load)
    if args.format == "json":
        data = (json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")
    else:
        data = render_report_markdown(doc).encode("utf-8")
    if args.out:
        _write(args.out, data)
    else:
        sys.stdout.write(data.decode("utf-8"))
    return EXIT_OK if doc["verdict"]["explainable"] else EXIT_NOT_EXPLAINABLE


# -- argument parsing --------------------------------------------------------------------------

def _arity(value):
    n = int(value)
    if n < 2:
        raise argparse.ArgumentTypeError("arity threshold must be >= 2")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="annotex", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"annotex {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def graph_bundle(p):
        p.add_argument("--graph", required=True, help="graph file (.graph.json)")
        p.add_argument("--bundle", required=True, help="annotation bundle file (.bundle.json)")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="seed for empirical checks")

    def tuning(p):
        p.add_argument("--arity-warn", type=_arity, default=DEFAULT_ARITY_THRESHOLD,
                       help="warn when a composition has more children than this")
        p.add_argument("--tolerance", action="append", metavar="KIND=VALUE",
                       help="default tolerance for a check kind (repeatable)")

    p = sub.add_parser("eval", help="evaluate a graph on an input assignment")
    p.add_argument("--graph", required=True)
    p.add_argument("--inputs", required=True, help="JSON object mapping input node ids to numbers")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="five-year cardiovascular risk for one patient")
    p.add_argument("--sex", choices=SEXES, required=True)
    p.add_argument("--patient", required=True, help="patient JSON file")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gen", help="write a reference model (and its bundle) to disk")
    p.add_argument("model", choices=("regression", "tree", "mlp", "predict"))
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--coefficients", help="regression: comma-separated coefficients")
    p.add_argument("--features", type=int, help="regression: number of random coefficients")
    p.add_argument("--intercept", type=float, default=0.0)
    p.add_argument("--spec", help="tree: JSON tree description")
    p.add_argument("--depth", type=int, default=3, help="tree: maximum depth of a random tree")
    p.add_argument("--n-inputs", type=int, default=3, help="tree: number of features of a random tree")
    p.add_argument("--complete", action="store_true", help="tree: grow every branch to full depth")
    p.add_argument("--layers", default="4,16,16,1", help="mlp: comma-separated layer sizes")
    p.add_argument("--sex", choices=SEXES, default="women")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("verify", help="run every evidence check of a bundle")
    graph_bundle(p)
    p.add_argument("--tolerance", action="append", metavar="KIND=VALUE")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("coverage", help="print structural and compositional coverage")
    graph_bundle(p)
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("criterion", help="full verdict with a report")
    graph_bundle(p)
    tuning(p)
    p.add_argument("--out", help="report file (default: stdout)")
    p.add_argument("--format", choices=("json", "md"), default="json")
    p.set_defaults(func=cmd_criterion)

    p = sub.add_parser("metrics", help="size and decomposition-space metrics of a graph")
    p.add_argument("--graph", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("report", help="re-render a JSON report")
    p.add_argument("--report", required=True, help="report file (.report.json)")
    p.add_argument("--format", choices=("json", "md"), default="md")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputFileError as exc:
        print(f"annotex: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (AnnotexError, ValueError) as exc:
        print(f"annotex: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
