"""Executable evidence checks and the engine that runs them.

Two verification modes:

* analytical checks extract an exact affine closed form from a subgraph and
  compare coefficients (``coefficient_equals``, ``hazard_ratio_equals``,
  ``closed_form_affine``) or locate an extremum (``extremum_at``);
* empirical checks intervene on the model over seeded samples: ablation,
  perturbation, input/output surrogate fitting, substitution, additivity,
  monotonicity and path mutual exclusion.

Subgraph functions are measured as *contributions*. Members of the subgraph
are recomputed from the subgraph's own edges; an edge entering an interior
member from outside the subgraph carries its value from the surrounding
model evaluation (the "context"). At the exit, only the subgraph's own
incoming edges count: the exit's response is taken with those edges live
minus with those edges carrying zero. For the weighted sums the models here
use this is the subgraph's additive term, e.g. ``beta * (age - mean)`` for
an age path into a linear predictor.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .annotations import AnnotationBundle, CompositionAnnotation, check_key
from .errors import (
    AnnotexError,
    EvidenceError,
    InvalidSubgraph,
    MultipleExits,
    NotAffine,
    TargetResolutionError,
)
from .graph import ComputationalGraph, Subgraph, evaluate, validate_subgraph

ANALYTICAL_KINDS = ("coefficient_equals", "hazard_ratio_equals", "closed_form_affine", "extremum_at")
EMPIRICAL_KINDS = (
    "monotonic_on",
    "additivity",
    "ablation_delta",
    "perturbation_slope",
    "io_surrogate_fit",
    "substitution_equiv",
    "mutual_exclusion",
)
CHECK_KINDS = ANALYTICAL_KINDS + EMPIRICAL_KINDS

DEFAULT_SEED = 42

_REQUIRED = object()

_SAMPLING = {"ranges": None, "default_range": None, "base": None, "samples": 64, "seed": None}

# kind -> {param: default}; _REQUIRED marks mandatory parameters
CHECK_PARAMS: dict[str, dict] = {
    "coefficient_equals": {"variable": None, "exit": None, "expected": _REQUIRED,
                           "tolerance": 1e-6, "base": None, "context": None},
    "hazard_ratio_equals": {"variable": None, "exit": None, "expected": _REQUIRED, "scale": 1.0,
                            "tolerance": 0.005, "base": None, "context": None},
    "closed_form_affine": {"coefficients": _REQUIRED, "offset": _REQUIRED, "exit": None,
                           "tolerance": 1e-6, "base": None, "context": None},
    "extremum_at": {"variable": _REQUIRED, "at": _REQUIRED, "extremum": _REQUIRED, "exit": None,
                    "step": 1e-4, "tolerance": 1e-3, "grid": None, "base": None},
    "monotonic_on": {"variable": _REQUIRED, "grid": _REQUIRED, "direction": _REQUIRED,
                     "slack": 0.0, "exit": None, "base": None},
    "additivity": {"components": None, "observe": None, "tolerance": 1e-9, "expected": None,
                   **_SAMPLING},
    "ablation_delta": {"observe": None, "expected": None, "expected_affine": None,
                       "tolerance": 1e-9, **_SAMPLING},
    "perturbation_slope": {"variable": _REQUIRED, "expected": _REQUIRED, "observe": None,
                           "modifier": None, "step": 1e-4, "tolerance": 1e-6, **_SAMPLING},
    "io_surrogate_fit": {"exit": None, "family": "affine", "expected": None,
                         "tolerance": 1e-8, **_SAMPLING},
    "substitution_equiv": {"form": _REQUIRED, "exit": None, "tolerance": 1e-9, **_SAMPLING},
    "mutual_exclusion": {"nodes": _REQUIRED, **_SAMPLING},
}

CHECK_MODES = {k: "analytical" for k in ANALYTICAL_KINDS} | {k: "empirical" for k in EMPIRICAL_KINDS}

SUBSTITUTION_FORMS = ("affine", "cox_risk", "rule")


@dataclass(frozen=True)
class Target:
    """What a check looks at.

    With no field set the check targets the annotation that owns it (its
    subgraph, or its junction for a composition). ``part="span"`` selects a
    composition's whole region instead of its junction.
    """

    annotation: str | None = None
    part: str | None = None
    node: str | None = None
    edge: tuple | None = None
    subgraph: Subgraph | None = None

    def __post_init__(self):
        set_fields = [f for f in ("annotation", "node", "edge", "subgraph") if getattr(self, f) is not None]
        if len(set_fields) > 1:
            raise ValueError(f"target may name only one of annotation/node/edge/subgraph, got {set_fields}")
        if self.part not in (None, "junction", "span"):
            raise ValueError(f"target part must be 'junction' or 'span', got {self.part!r}")
        if self.edge is not None:
            object.__setattr__(self, "edge", tuple(self.edge))

    @property
    def is_default(self):
        return self == Target()


@dataclass(frozen=True)
class EvidenceCheck:
    id: str
    kind: str
    mode: str
    params: Mapping = field(default_factory=dict)
    target: Target = field(default_factory=Target)
    note: str | None = None

    def __post_init__(self):
        if not self.id or "/" in self.id:
            raise ValueError(f"check id {self.id!r} must be non-empty and contain no '/'")
        if self.kind not in CHECK_PARAMS:
            raise ValueError(f"unknown evidence kind {self.kind!r}")
        if self.mode != CHECK_MODES[self.kind]:
            raise ValueError(
                f"check {self.id!r}: kind {self.kind!r} is {CHECK_MODES[self.kind]}, not {self.mode!r}"
            )
        allowed = CHECK_PARAMS[self.kind]
        unknown = sorted(set(self.params) - set(allowed))
        if unknown:
            raise ValueError(f"check {self.id!r}: unknown parameter(s) {unknown} for {self.kind!r}")
        missing = sorted(k for k, d in allowed.items() if d is _REQUIRED and k not in self.params)
        if missing:
            raise ValueError(f"check {self.id!r}: missing parameter(s) {missing}")
        p = dict(self.params)
        if "tolerance" in p and not p["tolerance"] > 0:
            raise ValueError(f"check {self.id!r}: tolerance must be > 0")
        if "samples" in p and (not isinstance(p["samples"], int) or p["samples"] < 1):
            raise ValueError(f"check {self.id!r}: samples must be an integer >= 1")
        if "grid" in p and p["grid"] is not None and not _grid_values(p["grid"]):
            raise ValueError(f"check {self.id!r}: grid must be non-empty")
        if "step" in p and not p["step"] > 0:
            raise ValueError(f"check {self.id!r}: step must be > 0")
        if self.kind == "extremum_at" and p["extremum"] not in ("minimum", "maximum"):
            raise ValueError(f"check {self.id!r}: extremum must be 'minimum' or 'maximum'")
        if self.kind == "monotonic_on" and p["direction"] not in ("increasing", "decreasing"):
            raise ValueError(f"check {self.id!r}: direction must be 'increasing' or 'decreasing'")
        if self.kind == "io_surrogate_fit" and p.get("family", "affine") != "affine":
            raise ValueError(f"check {self.id!r}: only the affine surrogate family is supported")
        if self.kind == "substitution_equiv":
            form = p["form"]
            if not isinstance(form, Mapping) or len(form) != 1 or next(iter(form)) not in SUBSTITUTION_FORMS:
                raise ValueError(f"check {self.id!r}: form must be one of {SUBSTITUTION_FORMS}")
        if self.kind == "ablation_delta" and (p.get("expected") is None) == (p.get("expected_affine") is None):
            raise ValueError(f"check {self.id!r}: give exactly one of expected / expected_affine")
        object.__setattr__(self, "params", p)

    def param(self, name):
        value = self.params.get(name)
        if value is None:
            default = CHECK_PARAMS[self.kind].get(name)
            return None if default is _REQUIRED else default
        return value


@dataclass(frozen=True)
class VerificationResult:
    check_id: str
    status: str  # "pass" | "fail" | "error"
    measured: Mapping = field(default_factory=dict)
    expected: Mapping = field(default_factory=dict)
    diagnostics: str = ""
    tolerance: float | None = None
    note: str | None = None

    @property
    def passed(self):
        return self.status == "pass"


@dataclass(frozen=True)
class AffineForm:
    """``offset + sum(coefficients[v] * value(v))`` over entry variables."""

    coefficients: Mapping[str, float]
    offset: float

    def __call__(self, values: Mapping[str, float]) -> float:
        terms = [c * values[v] for v, c in self.coefficients.items()]
        terms.append(self.offset)
        return math.fsum(terms)


# -- symbolic affine extraction ------------------------------------------------

class _Lin:
    """Affine expression: constant plus a sparse map variable -> coefficient."""

    __slots__ = ("coef", "const")

    def __init__(self, coef=None, const=0.0):
        self.coef = coef or {}
        self.const = const

    @property
    def is_const(self):
        return not any(self.coef.values())

    def scaled(self, k):
        return _Lin({v: k * c for v, c in self.coef.items()}, k * self.const)


def _lin_sum(terms, const=0.0):
    coef: dict[str, list] = {}
    consts = [const]
    for t in terms:
        consts.append(t.const)
        for v, c in t.coef.items():
            coef.setdefault(v, []).append(c)
    return _Lin({v: math.fsum(cs) for v, cs in coef.items()}, math.fsum(consts))


_LINEAR_EXIT_SCALE = {"identity": 1.0, "weighted_sum": 1.0, "center": 1.0, "one_minus": -1.0}


def _exit_scale(op):
    if op.kind == "affine":
        return op.params["scale"]
    return _LINEAR_EXIT_SCALE.get(op.kind)


def _sym_apply(node, op, args):
    """Apply ``op`` to symbolic (expression, weight) pairs."""
    kind = op.kind
    if kind == "constant":
        return _Lin(const=op.params["value"])
    if kind == "product":
        variable = [a.scaled(w) for a, w in args if not a.is_const]
        k = 1.0
        for a, w in args:
            if a.is_const:
                k *= w * a.const
        if len(variable) > 1:
            raise NotAffine(node, "product of two or more variable terms")
        if not variable:
            return _Lin(const=k)
        return variable[0].scaled(k)
    z = _lin_sum([a.scaled(w) for a, w in args])
    if z.is_const:
        return _Lin(const=op.apply_unary(z.const))
    p = op.params
    if kind == "identity":
        return z
    if kind == "weighted_sum":
        return _lin_sum([z], p["bias"])
    if kind == "affine":
        return _lin_sum([z.scaled(p["scale"])], p["offset"])
    if kind == "center":
        return _lin_sum([z], -p["mean"])
    if kind == "one_minus":
        return _lin_sum([z.scaled(-1.0)], 1.0)
    if kind == "indicator":
        # indicator of a variable input becomes a basis variable of its own
        return _Lin({node: 1.0})
    raise NotAffine(node, f"{kind} of a variable input")


def _region_preds(s: Subgraph):
    preds: dict[str, list[str]] = {}
    for u, v in s.edges:
        preds.setdefault(v, []).append(u)
    return preds


def _pick_exit(s: Subgraph, exit):
    if exit is not None:
        if exit not in s.nodes:
            raise TargetResolutionError(f"exit {exit!r} is not a member of the subgraph")
        return exit
    if len(s.exit) != 1:
        raise MultipleExits(f"subgraph has {len(s.exit)} exits {sorted(s.exit)}; name one with 'exit'")
    return next(iter(s.exit))


def derive_affine_closed_form(graph: ComputationalGraph, s: Subgraph, exit: str | None = None,
                              context: Mapping[str, float] | None = None) -> AffineForm:
    """Exact affine map from the subgraph's entries to its exit contribution.

    ``context`` supplies activations for nodes outside the subgraph that
    feed its interior (missing ones read as 0). Indicator nodes driven by a
    variable become variables in their own right, keyed by node id.
    """
    validity = validate_subgraph(graph, s)
    if not validity.valid:
        raise InvalidSubgraph("; ".join(validity.problems))
    exit = _pick_exit(s, exit)
    context = context or {}
    preds = _region_preds(s)
    local: dict[str, _Lin] = {}
    stop = graph.topo_index(exit)
    for v in graph.sort_topologically(s.nodes):
        if graph.topo_index(v) > stop:
            break
        if v in s.entry or v not in preds:
            if v in s.entry:
                local[v] = _Lin({v: 1.0})
            else:
                local[v] = _Lin(const=float(context.get(v, 0.0)))
            if v == exit:
                return AffineForm({}, 0.0)
            continue
        op = graph.nodes[v].op
        if v == exit:
            form = _sym_exit(graph, s, v, op, preds[v], local, context)
            coef = {k: c for k, c in sorted(form.coef.items()) if c != 0.0}
            return AffineForm(coef, form.const)
        args = [
            (local[u] if (u, v) in s.edges else _Lin(const=float(context.get(u, 0.0))), graph.edges[(u, v)])
            for u in graph.predecessors(v)
        ]
        local[v] = _sym_apply(v, op, args)
    raise TargetResolutionError(f"exit {exit!r} was not reached")


def _sym_exit(graph, s, v, op, region_preds, local, context):
    scale = _exit_scale(op)
    if scale is not None:
        return _lin_sum([local[u].scaled(graph.edges[(u, v)])
                         for u in region_preds]).scaled(scale)
    full = [
        (local[u] if (u, v) in s.edges else _Lin(const=float(context.get(u, 0.0))), graph.edges[(u, v)])
        for u in graph.predecessors(v)
    ]
    zeroed = [
        (_Lin() if (u, v) in s.edges else _Lin(const=float(context.get(u, 0.0))), graph.edges[(u, v)])
        for u in graph.predecessors(v)
    ]
    on, off = _sym_apply(v, op, full), _sym_apply(v, op, zeroed)
    return _lin_sum([on, off.scaled(-1.0)])


# -- numeric contribution -------------------------------------------------------

def contribution(graph: ComputationalGraph, s: Subgraph, exit: str,
                 activations: Mapping[str, float]) -> float:
    """Numeric counterpart of :func:`derive_affine_closed_form`.

    ``activations`` is a full-model evaluation supplying the entry values
    and the context for edges that enter the subgraph from outside.
    """
    if exit not in s.nodes:
        raise TargetResolutionError(f"node {exit!r} is not a member of the subgraph")
    preds = _region_preds(s)
    if exit in s.entry or exit not in preds:
        return 0.0
    local: dict[str, float] = {}
    stop = graph.topo_index(exit)
    for v in graph.sort_topologically(s.nodes):
        if graph.topo_index(v) >= stop:
            break
        if v in s.entry or v not in preds:
            local[v] = activations[v]
            continue
        pairs = [
            (local[u] if (u, v) in s.edges else activations[u], graph.edges[(u, v)])
            for u in graph.predecessors(v)
        ]
        local[v] = graph.nodes[v].op.apply(pairs)
    op = graph.nodes[exit].op
    scale = _exit_scale(op)
    if scale is not None:
        return scale * math.fsum(graph.edges[(u, exit)] * local[u] for u in preds[exit])
    full = [
        (local[u] if (u, exit) in s.edges else activations[u], graph.edges[(u, exit)])
        for u in graph.predecessors(exit)
    ]
    zeroed = [
        (0.0 if (u, exit) in s.edges else activations[u], graph.edges[(u, exit)])
        for u in graph.predecessors(exit)
    ]
    return op.apply(full) - op.apply(zeroed)


# -- sampling helpers ------------------------------------------------------------

def _grid_values(grid):
    if isinstance(grid, Mapping):
        num = int(grid.get("num", 0))
        if num < 1:
            return []
        return [float(x) for x in np.linspace(grid["start"], grid["stop"], num)]
    return [float(x) for x in grid]


def complete_inputs(graph: ComputationalGraph, base: Mapping | None) -> dict[str, float]:
    """Every graph input, taken from ``base`` when present and 0 otherwise."""
    base = base or {}
    unknown = sorted(set(base) - set(graph.inputs))
    if unknown:
        raise TargetResolutionError(f"base names non-input node(s) {unknown}")
    return {n: float(base.get(n, 0.0)) for n in graph.inputs}


def sample_inputs(graph: ComputationalGraph, check: EvidenceCheck, seed: int) -> list[dict]:
    """Seeded input samples; declared ranges are drawn, the rest held at base."""
    base = complete_inputs(graph, check.param("base"))
    ranges = check.param("ranges") or {}
    unknown = sorted(set(ranges) - set(graph.inputs))
    if unknown:
        raise TargetResolutionError(f"ranges name non-input node(s) {unknown}")
    default_range = check.param("default_range")
    n = check.param("samples")
    rng = np.random.default_rng(seed)
    columns = {}
    for node in graph.inputs:
        spec = ranges.get(node, default_range)
        if spec is None:
            columns[node] = [base[node]] * n
        elif isinstance(spec, Mapping):
            values = np.asarray(spec["values"], dtype=float)
            columns[node] = [float(x) for x in rng.choice(values, size=n)]
        else:
            lo, hi = float(spec[0]), float(spec[1])
            columns[node] = [float(x) for x in rng.uniform(lo, hi, size=n)]
    return [{node: columns[node][i] for node in graph.inputs} for i in range(n)]


def derive_seed(global_seed: int, key: str) -> int:
    return zlib.crc32(f"{global_seed}:{key}".encode("utf-8"))


# -- target resolution ----------------------------------------------------------------

@dataclass
class _Resolved:
    subgraph: Subgraph | None = None
    node: str | None = None
    edge: tuple | None = None
    annotation: object = None


def _resolve(graph, check, owner, bundle) -> _Resolved:
    t = check.target
    if t.node is not None:
        if t.node not in graph.nodes:
            raise TargetResolutionError(f"target node {t.node!r} is not in the graph")
        return _Resolved(node=t.node)
    if t.edge is not None:
        if t.edge not in graph.edges:
            raise TargetResolutionError(f"target edge {t.edge!r} is not in the graph")
        return _Resolved(edge=t.edge)
    if t.subgraph is not None:
        return _Resolved(subgraph=t.subgraph)
    if t.annotation is not None:
        if bundle is None or t.annotation not in bundle:
            raise TargetResolutionError(f"target annotation {t.annotation!r} cannot be resolved")
        annotation = bundle[t.annotation]
    else:
        if owner is None:
            # runners that need a target raise when they find none
            return _Resolved()
        annotation = owner
    if isinstance(annotation, CompositionAnnotation) and t.part == "span":
        if bundle is None:
            raise TargetResolutionError("a composition span needs the bundle")
        return _Resolved(subgraph=bundle.span(annotation.id), annotation=annotation)
    return _Resolved(subgraph=annotation.subgraph, annotation=annotation)


def _check_members(graph, s):
    unknown = sorted(n for n in s.nodes if n not in graph.nodes)
    if unknown:
        raise TargetResolutionError(f"subgraph references unknown node(s) {unknown}")
    foreign = sorted(e for e in s.edges if e not in graph.edges)
    if foreign:
        raise TargetResolutionError(f"subgraph references unknown edge(s) {foreign}")


def _context(graph, check):
    ctx = check.param("context")
    if ctx is not None:
        return {k: float(v) for k, v in ctx.items()}
    base = check.param("base")
    if base is not None:
        return evaluate(graph, complete_inputs(graph, base))
    return {}


def _observer(graph, res: _Resolved, check, exit_param="exit"):
    """Return ``f(activations) -> float`` for the resolved target."""
    if res.node is not None:
        node = res.node
        return lambda act: act[node]
    if res.subgraph is None:
        raise TargetResolutionError(f"{check.kind} needs a subgraph or node target")
    s = res.subgraph
    _check_members(graph, s)
    exit = _pick_exit(s, check.param(exit_param))
    return lambda act: contribution(graph, s, exit, act)


def _vary(graph, base_inputs, variable, x):
    if variable not in graph.nodes:
        raise TargetResolutionError(f"variable {variable!r} is not in the graph")
    if graph.nodes[variable].kind == "input":
        inputs = dict(base_inputs)
        inputs[variable] = x
        return evaluate(graph, inputs)
    return evaluate(graph, base_inputs, overrides={variable: x})


def _within(measured, expected, tol):
    return abs(measured - expected) <= tol


# -- per-kind runners ------------------------------------------------------------------

def _affine_of(graph, res, check):
    if res.subgraph is None:
        raise TargetResolutionError(f"{check.kind} needs a subgraph target")
    _check_members(graph, res.subgraph)
    return derive_affine_closed_form(graph, res.subgraph, check.param("exit"), _context(graph, check))


def _coefficient(graph, res, check):
    if res.edge is not None:
        return graph.edges[res.edge], f"edge {res.edge}"
    form = _affine_of(graph, res, check)
    variable = check.param("variable")
    if variable is None:
        if len(form.coefficients) != 1:
            raise EvidenceError(
                f"closed form has variables {sorted(form.coefficients)}; name one with 'variable'"
            )
        variable = next(iter(form.coefficients))
    return form.coefficients.get(variable, 0.0), f"d(exit)/d({variable})"


def _run_coefficient_equals(graph, check, res, seed):
    coef, what = _coefficient(graph, res, check)
    expected, tol = float(check.param("expected")), check.param("tolerance")
    ok = _within(coef, expected, tol)
    return ok, {"coefficient": coef}, {"coefficient": expected}, f"{what} = {coef:.6g}", tol


def _run_hazard_ratio_equals(graph, check, res, seed):
    coef, what = _coefficient(graph, res, check)
    scale = float(check.param("scale"))
    hr = math.exp(scale * coef)
    expected, tol = float(check.param("expected")), check.param("tolerance")
    ok = _within(hr, expected, tol)
    diag = f"exp({scale:g} * {coef:.6g}) = {hr:.4f} from {what}"
    return ok, {"hazard_ratio": hr}, {"hazard_ratio": expected}, diag, tol


def _run_closed_form_affine(graph, check, res, seed):
    form = _affine_of(graph, res, check)
    want = {k: float(v) for k, v in check.param("coefficients").items()}
    tol = check.param("tolerance")
    measured, expected = {}, {}
    bad = []
    for var in sorted(set(want) | set(form.coefficients)):
        m, e = form.coefficients.get(var, 0.0), want.get(var, 0.0)
        measured[f"coef[{var}]"] = m
        expected[f"coef[{var}]"] = e
        if not _within(m, e, tol):
            bad.append(var)
    measured["offset"], expected["offset"] = form.offset, float(check.param("offset"))
    if not _within(form.offset, expected["offset"], tol):
        bad.append("offset")
    diag = "closed form matches" if not bad else f"mismatch in {bad}"
    return not bad, measured, expected, diag, tol


def _run_extremum_at(graph, check, res, seed):
    f = _observer(graph, res, check)
    base = complete_inputs(graph, check.param("base"))
    var, x0, h = check.param("variable"), float(check.param("at")), check.param("step")
    tol = check.param("tolerance")

    def g(x):
        return f(_vary(graph, base, var, x))

    lo, mid, hi = g(x0 - h), g(x0), g(x0 + h)
    d1 = (hi - lo) / (2 * h)
    d2 = (hi - 2 * mid + lo) / (h * h)
    want_min = check.param("extremum") == "minimum"
    curvature_ok = d2 > 0 if want_min else d2 < 0
    measured = {"derivative": d1, "second_difference": d2}
    problems = []
    if abs(d1) >= tol:
        problems.append(f"|f'({x0:g})| = {abs(d1):.3g} >= {tol:g}")
    if not curvature_ok:
        problems.append(f"f''({x0:g}) = {d2:.3g} has the wrong sign for a {check.param('extremum')}")
    grid = check.param("grid")
    if grid is not None:
        values = [g(x) for x in _grid_values(grid)]
        gap = (min(values) - mid) if want_min else (mid - max(values))
        measured["grid_gap"] = gap
        if gap < -1e-12:
            problems.append(f"a grid point beats the claimed {check.param('extremum')} by {-gap:.3g}")
    diag = "; ".join(problems) or f"{check.param('extremum')} confirmed at {x0:g}"
    return not problems, measured, {"derivative": 0.0}, diag, tol


def _run_monotonic_on(graph, check, res, seed):
    f = _observer(graph, res, check)
    base = complete_inputs(graph, check.param("base"))
    var = check.param("variable")
    xs = _grid_values(check.param("grid"))
    ys = [f(_vary(graph, base, var, x)) for x in xs]
    diffs = [b - a for a, b in zip(ys, ys[1:])]
    sign = 1.0 if check.param("direction") == "increasing" else -1.0
    worst = min((sign * d for d in diffs), default=0.0)
    slack = float(check.param("slack"))
    ok = worst >= -slack
    diag = f"worst signed step {worst:.6g} over {len(xs)} grid points"
    return ok, {"worst_step": worst}, {"worst_step_min": -slack}, diag, slack or None


def _run_additivity(graph, check, res, seed, bundle=None):
    owner = res.annotation
    if not isinstance(owner, CompositionAnnotation) and check.param("components") is None:
        raise TargetResolutionError("additivity needs a composition target or explicit components")
    components = check.param("components") or list(owner.children)
    if bundle is None:
        raise TargetResolutionError("additivity needs the bundle to resolve components")
    observe = check.param("observe")
    if observe is None:
        entries = owner.junction.entry if owner is not None else set()
        if len(entries) != 1:
            raise TargetResolutionError("additivity: name the node to observe with 'observe'")
        observe = next(iter(entries))
    spans = []
    for cid in components:
        if cid not in bundle:
            raise TargetResolutionError(f"component {cid!r} is not in the bundle")
        span = bundle.span(cid)
        _check_members(graph, span)
        if observe not in span.nodes:
            raise TargetResolutionError(f"component {cid!r} does not reach {observe!r}")
        spans.append(span)
    residuals = []
    for x in sample_inputs(graph, check, seed):
        act = evaluate(graph, x)
        parts = [contribution(graph, s, observe, act) for s in spans]
        residuals.append(act[observe] - math.fsum(parts))
    spread = max(residuals) - min(residuals)
    tol = check.param("tolerance")
    measured = {"residual_spread": spread, "residual_mean": math.fsum(residuals) / len(residuals)}
    expected = {"residual_spread": 0.0}
    ok = spread <= tol
    if check.param("expected") is not None:
        target = float(check.param("expected"))
        worst = max(abs(r - target) for r in residuals)
        measured["residual_error"] = worst
        expected["residual_error"] = 0.0
        ok = ok and worst <= tol
    diag = (f"{observe} minus the sum of {len(spans)} component contributions varies by "
            f"{spread:.3g} over {len(residuals)} samples")
    return ok, measured, expected, diag, tol


def _run_ablation_delta(graph, check, res, seed):
    if res.subgraph is None:
        raise TargetResolutionError("ablation_delta needs a subgraph target")
    s = res.subgraph
    _check_members(graph, s)
    observe = check.param("observe") or _pick_exit(s, None)
    if observe not in graph.nodes:
        raise TargetResolutionError(f"observe node {observe!r} is not in the graph")
    zeroed = [(u, v) for (u, v) in s.edges if v in s.exit]
    affine = check.param("expected_affine")
    if affine is not None:
        form = AffineForm({k: float(v) for k, v in affine["coefficients"].items()},
                          float(affine.get("offset", 0.0)))
    deltas, errors = [], []
    for x in sample_inputs(graph, check, seed):
        act = evaluate(graph, x)
        ablated = evaluate(graph, x, zero_edges=zeroed)
        delta = act[observe] - ablated[observe]
        want = form(act) if affine is not None else float(check.param("expected"))
        deltas.append(delta)
        errors.append(abs(delta - want))
    tol = check.param("tolerance")
    worst = max(errors)
    measured = {"max_error": worst, "mean_delta": math.fsum(deltas) / len(deltas)}
    expected = {"max_error": 0.0}
    if affine is None:
        expected["mean_delta"] = float(check.param("expected"))
    diag = f"zeroing {len(zeroed)} edge(s) into the exit changes {observe} by {measured['mean_delta']:.6g} on average"
    return worst <= tol, measured, expected, diag, tol


def _run_perturbation_slope(graph, check, res, seed):
    if res.node is not None or res.subgraph is not None:
        f = _observer(graph, res, check, exit_param="observe")
    else:
        raise TargetResolutionError("perturbation_slope needs a node or subgraph target")
    observe = check.param("observe")
    if res.node is None and observe is None and res.subgraph is not None and len(res.subgraph.exit) != 1:
        raise MultipleExits("name the observed exit with 'observe'")
    var, h = check.param("variable"), check.param("step")
    modifier = check.param("modifier")

    def slope(x):
        up = f(_vary(graph, x, var, x[var] + h) if var in x else _vary(graph, x, var, h))
        down = f(_vary(graph, x, var, x[var] - h) if var in x else _vary(graph, x, var, -h))
        return (up - down) / (2 * h)

    if var not in graph.inputs:
        raise TargetResolutionError(f"perturbation variable {var!r} must be a graph input")
    slopes = []
    for x in sample_inputs(graph, check, seed):
        if modifier is None:
            slopes.append(slope(x))
        else:
            node = modifier["node"]
            if node not in graph.inputs:
                raise TargetResolutionError(f"modifier {node!r} must be a graph input")
            hi = dict(x, **{node: float(modifier["high"])})
            lo = dict(x, **{node: float(modifier["low"])})
            slopes.append(slope(hi) - slope(lo))
    expected, tol = float(check.param("expected")), check.param("tolerance")
    worst = max(abs(s - expected) for s in slopes)
    measured = {"mean_slope": math.fsum(slopes) / len(slopes), "max_error": worst}
    what = "slope difference" if modifier else "slope"
    diag = f"empirical {what} of {var} over {len(slopes)} samples; worst error {worst:.3g}"
    return worst <= tol, measured, {"mean_slope": expected, "max_error": 0.0}, diag, tol


def _run_io_surrogate_fit(graph, check, res, seed):
    if res.subgraph is None:
        raise TargetResolutionError("io_surrogate_fit needs a subgraph target")
    s = res.subgraph
    _check_members(graph, s)
    exit = _pick_exit(s, check.param("exit"))
    entries = sorted(s.entry)
    rows, ys = [], []
    for x in sample_inputs(graph, check, seed):
        act = evaluate(graph, x)
        rows.append([act[e] for e in entries] + [1.0])
        ys.append(contribution(graph, s, exit, act))
    a = np.asarray(rows)
    y = np.asarray(ys)
    sol, *_ = np.linalg.lstsq(a, y, rcond=None)
    residual = float(np.max(np.abs(a @ sol - y))) if len(ys) else 0.0
    measured = {f"coef[{e}]": float(c) for e, c in zip(entries, sol[:-1])}
    measured["offset"] = float(sol[-1])
    measured["max_residual"] = residual
    tol = check.param("tolerance")
    expected = {"max_residual": 0.0}
    ok = residual <= tol
    want = check.param("expected")
    if want is not None:
        for e, c in want.get("coefficients", {}).items():
            expected[f"coef[{e}]"] = float(c)
            ok = ok and _within(measured.get(f"coef[{e}]", 0.0), float(c), tol)
        if "offset" in want:
            expected["offset"] = float(want["offset"])
            ok = ok and _within(measured["offset"], expected["offset"], tol)
    diag = f"affine surrogate over {len(entries)} entr{'y' if len(entries) == 1 else 'ies'}, max residual {residual:.3g}"
    return ok, measured, expected, diag, tol


def _substitute_fn(form):
    (name, spec), = form.items()
    if name == "affine":
        f = AffineForm({k: float(v) for k, v in spec["coefficients"].items()}, float(spec.get("offset", 0.0)))
        return f
    if name == "cox_risk":
        s0 = float(spec["baseline_survival"])
        entry = spec.get("entry")

        def risk(act, _entry=entry):
            return 1.0 - s0 ** math.exp(act[_entry])
        return risk
    if name == "rule":
        conditions = spec["conditions"]
        value = float(spec["value"])

        def rule(act):
            for c in conditions:
                x = act[c["node"]]
                hit = x <= c["cutoff"] if c.get("direction", "le") == "le" else x > c["cutoff"]
                if not hit:
                    return 0.0
            return value
        return rule
    raise EvidenceError(f"unknown substitution form {name!r}")


def _run_substitution_equiv(graph, check, res, seed):
    if res.subgraph is None:
        raise TargetResolutionError("substitution_equiv needs a subgraph target")
    s = res.subgraph
    _check_members(graph, s)
    exit = _pick_exit(s, check.param("exit"))
    form = dict(check.param("form"))
    if "cox_risk" in form and "entry" not in form["cox_risk"]:
        if len(s.entry) != 1:
            raise TargetResolutionError("cox_risk substitution needs a single entry")
        form["cox_risk"] = dict(form["cox_risk"], entry=next(iter(s.entry)))
    fn = _substitute_fn(form)
    owned = all(e in s.edges for e in graph.in_edges(exit))
    op = graph.nodes[exit].op
    if not owned and (op is None or op.kind != "weighted_sum"):
        raise EvidenceError(
            f"exit {exit!r} is shared with other subgraphs and is not a weighted sum; cannot substitute"
        )
    worst = 0.0
    n = 0
    for x in sample_inputs(graph, check, seed):
        act = evaluate(graph, x)
        replacement = fn(act)
        if not owned:
            replacement = act[exit] - contribution(graph, s, exit, act) + replacement
        swapped = evaluate(graph, x, overrides={exit: replacement})
        worst = max(worst, max(abs(swapped[o] - act[o]) for o in graph.outputs))
        n += 1
    tol = check.param("tolerance")
    kind = next(iter(form))
    diag = f"{kind} substitute at {exit!r}: max output deviation {worst:.3g} over {n} samples"
    return worst <= tol, {"max_deviation": worst}, {"max_deviation": 0.0}, diag, tol


def _run_mutual_exclusion(graph, check, res, seed):
    nodes = list(check.param("nodes"))
    unknown = [n for n in nodes if n not in graph.nodes]
    if unknown:
        raise TargetResolutionError(f"nodes {unknown} are not in the graph")
    violations = 0
    samples = sample_inputs(graph, check, seed)
    for x in samples:
        act = evaluate(graph, x)
        values = [act[n] for n in nodes]
        ones = sum(1 for v in values if v == 1.0)
        zeros = sum(1 for v in values if v == 0.0)
        if ones != 1 or zeros != len(values) - 1:
            violations += 1
    diag = f"{violations} of {len(samples)} samples did not activate exactly one of {len(nodes)} paths"
    return violations == 0, {"violations": float(violations)}, {"violations": 0.0}, diag, None


_RUNNERS = {
    "coefficient_equals": _run_coefficient_equals,
    "hazard_ratio_equals": _run_hazard_ratio_equals,
    "closed_form_affine": _run_closed_form_affine,
    "extremum_at": _run_extremum_at,
    "monotonic_on": _run_monotonic_on,
    "ablation_delta": _run_ablation_delta,
    "perturbation_slope": _run_perturbation_slope,
    "io_surrogate_fit": _run_io_surrogate_fit,
    "substitution_equiv": _run_substitution_equiv,
    "mutual_exclusion": _run_mutual_exclusion,
}


def run_check(graph: ComputationalGraph, check: EvidenceCheck, *, owner=None,
              bundle: AnnotationBundle | None = None, seed: int = DEFAULT_SEED,
              key: str | None = None) -> VerificationResult:
    """Execute one check. Failures to resolve or compute become status ``error``."""
    key = key or (check_key(owner.id, check.id) if owner is not None else check.id)
    check_seed = check.param("seed")
    if check_seed is None:
        check_seed = derive_seed(seed, key)
    try:
        res = _resolve(graph, check, owner, bundle)
        if check.kind == "additivity":
            ok, measured, expected, diag, tol = _run_additivity(graph, check, res, check_seed, bundle)
        else:
            ok, measured, expected, diag, tol = _RUNNERS[check.kind](graph, check, res, check_seed)
    except (AnnotexError, ValueError, KeyError, TypeError) as exc:
        return VerificationResult(key, "error", diagnostics=f"{type(exc).__name__}: {exc}",
                                  note=check.note)
    return VerificationResult(key, "pass" if ok else "fail", measured, expected, diag, tol, check.note)


def verify_bundle(graph: ComputationalGraph, bundle: AnnotationBundle, *,
                  seed: int = DEFAULT_SEED) -> dict[str, VerificationResult]:
    """Run every check of every annotation; results are ordered by key."""
    results = {}
    for key, owner, check in bundle.checks():
        results[key] = run_check(graph, check, owner=owner, bundle=bundle, seed=seed, key=key)
    return dict(sorted(results.items()))
