import dataclasses
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from annotex.annotations import AnnotationBundle
from annotex.builders import build_branching_example, build_sparse_network
from annotex.errors import MultipleExits, NotAffine
from annotex.evidence import (
    EvidenceCheck,
    Target,
    contribution,
    derive_affine_closed_form,
    derive_seed,
    run_check,
    sample_inputs,
    verify_bundle,
)
from annotex.graph import ComputationalGraph, Node, OperatorSpec, Subgraph, evaluate
from annotex.predict_cvd import PROFILES, reference_inputs


def replace_check(bundle, aid, cid, *, params=None, target=None):
    """Copy of ``bundle`` with one check's params merged or target swapped."""
    def fix(a):
        if a.id != aid:
            return a
        checks = []
        for c in a.evidence:
            if c.id == cid:
                c = dataclasses.replace(c, params={**c.params, **(params or {})},
                                        target=target if target is not None else c.target)
            checks.append(c)
        return dataclasses.replace(a, evidence=tuple(checks))
    return AnnotationBundle([fix(a) for a in bundle.leaves], [fix(c) for c in bundle.compositions],
                            bundle.root, bundle.context)


def u_shape():
    """y = x * (x - 2), minimum at x = 1."""
    return ComputationalGraph(
        [Node("x", "input"), Node("a", "compute", OperatorSpec("identity")),
         Node("b", "compute", OperatorSpec("affine", {"scale": 1.0, "offset": -2.0})),
         Node("p", "compute", OperatorSpec("product")), Node("y", "output", OperatorSpec("identity"))],
        [("x", "a"), ("x", "b"), ("a", "p"), ("b", "p"), ("p", "y")],
    )


# -- symbolic closed forms --------------------------------------------------------------------

def test_b1_closed_form(b1):
    graph, bundle = b1
    form = derive_affine_closed_form(graph, bundle["A1"].subgraph)
    assert form.coefficients == {"x1": 2.0} and form.offset == 0.0
    # the output bias is not carried by any in-edge, so it is not part of a region's contribution
    whole = derive_affine_closed_form(graph, bundle.span("C"))
    assert whole.coefficients == {"x1": 2.0, "x2": 3.0} and whole.offset == 0.0


def test_predict_age_closed_form(predict_models):
    graph, bundle = predict_models["women"]
    ctx = evaluate(graph, reference_inputs("women"))
    form = derive_affine_closed_form(graph, bundle["A1"].subgraph, "eta", ctx)
    assert form.coefficients == {"age": pytest.approx(0.0756, abs=1e-15)}
    assert form.offset == pytest.approx(-0.0756 * 56.1, abs=1e-12)


def test_exp_is_not_affine(predict_models):
    graph, _ = predict_models["women"]
    s = Subgraph({"eta"}, {"exp_eta"}, {"eta", "exp_eta"}, {("eta", "exp_eta")})
    with pytest.raises(NotAffine) as info:
        derive_affine_closed_form(graph, s)
    assert info.value.node == "exp_eta"


def test_product_of_two_variables_is_not_affine(predict_models):
    graph, _ = predict_models["women"]
    s = Subgraph({"age_c", "diabetes"}, {"age_x_dm"}, {"age_c", "diabetes", "age_x_dm"},
                 {("age_c", "age_x_dm"), ("diabetes", "age_x_dm")})
    with pytest.raises(NotAffine):
        derive_affine_closed_form(graph, s)


def test_ambiguous_exit(predict_models):
    graph, bundle = predict_models["women"]
    with pytest.raises(MultipleExits):
        derive_affine_closed_form(graph, bundle["A1"].subgraph)


def test_contribution_ignores_edges_outside_region(b1):
    graph, bundle = b1
    act = evaluate(graph, {"x1": 1.5, "x2": -2.0})
    assert contribution(graph, bundle["A1"].subgraph, "y", act) == 3.0
    assert contribution(graph, bundle["A2"].subgraph, "y", act) == -6.0


@st.composite
def linear_networks(draw):
    n_in = draw(st.integers(1, 3))
    n_hidden = draw(st.integers(1, 4))
    weight = st.floats(-3, 3, allow_nan=False).filter(lambda w: abs(w) > 1e-3)
    inputs = [f"x{i}" for i in range(n_in)]
    hidden = [f"h{j}" for j in range(n_hidden)]
    edges = [(x, h, draw(weight)) for x in inputs for h in hidden]
    edges += [(h, "y", draw(weight)) for h in hidden]
    kinds = st.sampled_from([("identity", {}), ("affine", {"scale": 0.5, "offset": 1.0}),
                             ("center", {"mean": 2.0}), ("weighted_sum", {"bias": -1.0})])
    ops = {h: draw(kinds) for h in hidden}
    return build_sparse_network(inputs, hidden, ["y"], edges, ops)


@settings(max_examples=60, deadline=None)
@given(linear_networks(), st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_finite_differences_agree_with_closed_form(graph, point):
    form = derive_affine_closed_form(graph, Subgraph.whole(graph))
    x = dict(zip(graph.inputs, point))
    h = 1e-4
    for var in graph.inputs:
        up = evaluate(graph, {**x, var: x[var] + h})["y"]
        down = evaluate(graph, {**x, var: x[var] - h})["y"]
        assert (up - down) / (2 * h) == pytest.approx(form.coefficients.get(var, 0.0), abs=1e-6)
    assert form(x) == pytest.approx(evaluate(graph, x)["y"], abs=1e-9)


# -- analytical kinds --------------------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.floats(-3, 3), st.floats(0.05, 20), st.floats(1e-4, 0.04))
def test_hazard_ratio_and_log_coefficient_agree(beta, hr, tol):
    lo, hi = math.log(hr - tol), math.log(hr + tol)
    assume(min(abs(beta - lo), abs(beta - hi)) > 1e-9)
    graph = build_sparse_network(["x"], [], ["y"], [("x", "y", beta)])
    s = Subgraph.whole(graph)
    hr_check = EvidenceCheck("hr", "hazard_ratio_equals", "analytical", {"expected": hr, "tolerance": tol},
                             Target(subgraph=s))
    coef_check = EvidenceCheck("b", "coefficient_equals", "analytical",
                               {"expected": (lo + hi) / 2, "tolerance": (hi - lo) / 2}, Target(subgraph=s))
    assert run_check(graph, hr_check).passed == run_check(graph, coef_check).passed


def test_edge_target_reads_the_weight(b1):
    graph, _ = b1
    check = EvidenceCheck("w", "coefficient_equals", "analytical", {"expected": 3.0},
                          Target(edge=("x2", "y")))
    assert run_check(graph, check).passed


def test_closed_form_affine_reports_mismatch(b1):
    graph, bundle = b1
    s = bundle.span("C")
    good = EvidenceCheck("cf", "closed_form_affine", "analytical",
                         {"coefficients": {"x1": 2, "x2": 3}, "offset": 0}, Target(subgraph=s))
    bad = dataclasses.replace(good, params={"coefficients": {"x1": 2}, "offset": 0})
    assert run_check(graph, good).passed
    result = run_check(graph, bad)
    assert result.status == "fail" and "x2" in result.diagnostics


@pytest.mark.parametrize("at, extremum, ok", [
    (1.0, "minimum", True),
    (0.5, "minimum", False),
    (1.0, "maximum", False),
])
def test_extremum_at(at, extremum, ok):
    check = EvidenceCheck("m", "extremum_at", "analytical",
                          {"variable": "x", "at": at, "extremum": extremum,
                           "grid": {"start": -2, "stop": 4, "num": 61}},
                          Target(node="y"))
    assert run_check(u_shape(), check).passed is ok


# -- empirical kinds ---------------------------------------------------------------------------

def test_monotonic_on_direction():
    graph, bundle = build_branching_example(with_second_path=True)
    grid = {"start": -3, "stop": 3, "num": 31}
    up = EvidenceCheck("up", "monotonic_on", "empirical",
                       {"variable": "I", "grid": grid, "direction": "increasing"}, Target(node="O"))
    down = dataclasses.replace(up, params={**up.params, "direction": "decreasing"})
    assert run_check(graph, up).passed
    assert not run_check(graph, down).passed


def test_additivity_detects_wrong_offset(b1):
    graph, bundle = b1
    broken = replace_check(bundle, "C", "additive", params={"expected": 0.0})
    result = verify_bundle(graph, broken)["C/additive"]
    assert result.status == "fail"
    assert result.measured["residual_error"] == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6), st.integers(0, 2**32 - 1))
def test_ablation_on_additive_model_is_exact(coefs, seed):
    names = [f"x{i}" for i in range(len(coefs))]
    graph = build_sparse_network(names, [], ["y"], [(n, "y", c) for n, c in zip(names, coefs)])
    s = Subgraph({names[0]}, {"y"}, {names[0], "y"}, {(names[0], "y")})
    check = EvidenceCheck("abl", "ablation_delta", "empirical",
                          {"expected_affine": {"coefficients": {names[0]: coefs[0]}},
                           "default_range": [-5, 5], "samples": 20, "seed": seed},
                          Target(subgraph=s))
    result = run_check(graph, check)
    assert result.passed and result.measured["max_error"] <= 1e-9


def test_perturbation_slope_with_modifier(predict_models, predict_results):
    graph, bundle = predict_models["men"]
    result = predict_results["men"]["A10/sbp_slope_modified"]
    assert result.passed
    assert result.measured["mean_slope"] == pytest.approx(PROFILES["men"].coefficients["bpmed_x_sbp"], abs=1e-9)


def test_perturbation_slope_requires_input_variable(b1):
    graph, _ = b1
    check = EvidenceCheck("s", "perturbation_slope", "empirical",
                          {"variable": "y", "expected": 1.0, "samples": 2}, Target(node="y"))
    assert run_check(graph, check).status == "error"


def test_io_surrogate_matches_symbolic_form(predict_models):
    graph, bundle = predict_models["women"]
    ctx = evaluate(graph, reference_inputs("women"))
    symbolic = derive_affine_closed_form(graph, bundle["A1"].subgraph, "eta", ctx)
    check = next(c for c in bundle["A1"].evidence if c.kind == "io_surrogate_fit")
    result = run_check(graph, check, owner=bundle["A1"], bundle=bundle)
    assert result.passed
    assert result.measured["coef[age]"] == pytest.approx(symbolic.coefficients["age"], abs=1e-8)
    assert result.measured["offset"] == pytest.approx(symbolic.offset, abs=1e-8)


def test_wrong_substitute_fails(b1):
    graph, bundle = b1
    wrong = {"affine": {"coefficients": {"x1": 2.0, "x2": 3.1}, "offset": 1.0}}
    broken = replace_check(bundle, "C", "substitute", params={"form": wrong})
    result = verify_bundle(graph, broken)["C/substitute"]
    assert result.status == "fail" and result.measured["max_deviation"] > 0.01


def test_mutual_exclusion_detects_overlap():
    graph = ComputationalGraph(
        [Node("x", "input"),
         Node("t1", "compute", OperatorSpec("threshold", {"cutoff": 1.0})),
         Node("t2", "compute", OperatorSpec("threshold", {"cutoff": 0.0, "direction": "gt"})),
         Node("y", "output", OperatorSpec("weighted_sum"))],
        [("x", "t1"), ("x", "t2"), ("t1", "y"), ("t2", "y")],
    )
    check = EvidenceCheck("ex", "mutual_exclusion", "empirical",
                          {"nodes": ["t1", "t2"], "ranges": {"x": [-2, 3]}, "samples": 200})
    result = run_check(graph, check)
    assert result.status == "fail" and result.measured["violations"] > 0


# -- bundle verification -----------------------------------------------------------------------

def test_predict_bundles_fully_verified(predict_results):
    for sex, results in predict_results.items():
        bad = {k: r.diagnostics for k, r in results.items() if not r.passed}
        assert not bad, (sex, bad)


def test_perturbed_hazard_ratio_fails_alone(predict_models, predict_results):
    graph, bundle = predict_models["women"]
    expected = bundle["A8"].evidence[0].params["expected"]
    broken = replace_check(bundle, "A8", "hr", params={"expected": expected + 0.1})
    results = verify_bundle(graph, broken)
    assert [k for k, r in results.items() if not r.passed] == ["A8/hr"]
    assert results["A8/hr"].status == "fail"


def test_unknown_target_is_an_error_not_a_crash(predict_models):
    graph, bundle = predict_models["women"]
    broken = replace_check(bundle, "A9", "hr", target=Target(node="nonexistent"))
    results = verify_bundle(graph, broken)
    assert results["A9/hr"].status == "error"
    assert "nonexistent" in results["A9/hr"].diagnostics
    assert all(r.passed for k, r in results.items() if k != "A9/hr")


def test_verification_is_deterministic(predict_models):
    graph, bundle = predict_models["men"]
    assert verify_bundle(graph, bundle, seed=7) == verify_bundle(graph, bundle, seed=7)


def test_seeds_are_derived_per_check(b1):
    graph, bundle = b1
    assert derive_seed(42, "C/additive") == derive_seed(42, "C/additive")
    assert derive_seed(42, "C/additive") != derive_seed(43, "C/additive")
    check = bundle["C"].evidence[0]
    a = sample_inputs(graph, check, derive_seed(42, "C/additive"))
    b = sample_inputs(graph, check, derive_seed(43, "C/additive"))
    assert a != b and len(a) == 16
    assert all(-1 <= v <= 1 for row in a for v in row.values())


def test_explicit_seed_overrides_global(b1):
    graph, bundle = b1
    pinned = replace_check(bundle, "C", "additive", params={"seed": 5})
    r1 = verify_bundle(graph, pinned, seed=1)["C/additive"]
    r2 = verify_bundle(graph, pinned, seed=2)["C/additive"]
    assert r1 == r2


def test_sample_values_come_from_declared_sets():
    graph = build_sparse_network(["a", "b"], [], ["y"], [("a", "y", 1.0), ("b", "y", 1.0)])
    check = EvidenceCheck("s", "mutual_exclusion", "empirical",
                          {"nodes": ["y"], "ranges": {"a": {"values": [0, 1]}}, "base": {"b": 7}, "samples": 50})
    rows = sample_inputs(graph, check, 0)
    assert {r["a"] for r in rows} == {0.0, 1.0}
    assert {r["b"] for r in rows} == {7.0}


@pytest.mark.parametrize("kind, mode, params", [
    ("coefficient_equals", "empirical", {"expected": 1.0}),
    ("coefficient_equals", "analytical", {}),
    ("coefficient_equals", "analytical", {"expected": 1.0, "bogus": 1}),
    ("coefficient_equals", "analytical", {"expected": 1.0, "tolerance": 0}),
    ("additivity", "empirical", {"samples": 0}),
    ("monotonic_on", "empirical", {"variable": "x", "grid": [], "direction": "increasing"}),
    ("monotonic_on", "empirical", {"variable": "x", "grid": [1, 2], "direction": "up"}),
    ("extremum_at", "analytical", {"variable": "x", "at": 0, "extremum": "saddle"}),
    ("substitution_equiv", "empirical", {"form": {"spline": {}}}),
    ("ablation_delta", "empirical", {}),
    ("io_surrogate_fit", "empirical", {"family": "quadratic"}),
    ("softmax_check", "empirical", {}),
])
def test_check_validation(kind, mode, params):
    with pytest.raises(ValueError):
        EvidenceCheck("c", kind, mode, params)


def test_target_names_one_thing():
    with pytest.raises(ValueError):
        Target(node="a", edge=("a", "b"))
    with pytest.raises(ValueError):
        Target(part="whole")
    assert Target().is_default


def test_surrogate_fit_on_nonlinear_region_fails():
    graph = build_sparse_network(["x"], ["h"], ["y"], [("x", "h", 1.0), ("h", "y", 1.0)])
    check = EvidenceCheck("fit", "io_surrogate_fit", "empirical",
                          {"default_range": [-2, 2], "samples": 40}, Target(subgraph=Subgraph.whole(graph)))
    result = run_check(graph, check)
    assert result.status == "fail" and result.measured["max_residual"] > 0.1
    assert np.isfinite(result.measured["offset"])


def test_check_without_target_or_owner_is_an_error(b1):
    graph, _ = b1
    result = run_check(graph, EvidenceCheck("c", "coefficient_equals", "analytical", {"expected": 1.0}))
    assert result.status == "error" and "target" in result.diagnostics
