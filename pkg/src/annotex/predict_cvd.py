"""Sex-specific Cox model of 5-year cardiovascular risk, as a graph and as plain code.

``eta`` is the linear predictor over mean-centred covariates, indicator
expansions of ethnicity and smoking, and three interaction terms;
``risk = 1 - S0 ** exp(eta)``. The graph version carries a 17-annotation
explanation: twelve predictor leaves grouped into four clusters, joined by
a global composition that also owns the risk transform.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, fields
from types import MappingProxyType
from typing import Mapping

from .annotations import AnnotationBundle, CompositionAnnotation, ExplanationContext, LeafAnnotation
from .evidence import EvidenceCheck, Target
from .graph import ComputationalGraph, Node, OperatorSpec, Subgraph

SEXES = ("women", "men")
ETHNICITIES = ("european", "maori", "pacific", "indian", "asian")
SMOKING = ("never", "ex", "current")
NZDEP_CENTER = 3.0
SBP_MEAN = 129.0
COHORT_AGE_RANGE = (30.0, 74.0)


def _ln_hr(hr):
    # coefficients known only through a rounded hazard ratio
    return round(math.log(hr), 4)


@dataclass(frozen=True)
class SexProfile:
    sex: str
    age_mean: float
    sbp_mean: float
    tchdl_mean: float
    baseline_survival_5y: float
    coefficients: Mapping[str, float]

    def __post_init__(self):
        if not 0.0 < self.baseline_survival_5y < 1.0:
            raise ValueError("baseline survival must lie in (0, 1)")
        object.__setattr__(self, "coefficients", MappingProxyType(dict(self.coefficients)))


COEFFICIENT_NAMES = (
    "age", "maori", "pacific", "indian", "asian", "nzdep", "ex_smoker", "current_smoker",
    "famhx", "af", "diabetes", "sbp", "tchdl", "bpmed", "lipmed", "atmed",
    "age_x_diabetes", "age_x_sbp", "bpmed_x_sbp",
)

PROFILES = {
    "women": SexProfile("women", 56.1, SBP_MEAN, 3.7, 0.9832, {
        "age": 0.0756, "maori": _ln_hr(1.48), "pacific": _ln_hr(1.22), "indian": _ln_hr(1.13),
        "asian": _ln_hr(0.75), "nzdep": 0.108, "ex_smoker": _ln_hr(1.09),
        "current_smoker": _ln_hr(1.86), "famhx": 0.045, "af": 0.893, "diabetes": 0.544,
        "sbp": 0.0137, "tchdl": 0.122, "bpmed": 0.340, "lipmed": -0.059, "atmed": 0.117,
        "age_x_diabetes": -0.0223, "age_x_sbp": -0.00044, "bpmed_x_sbp": -0.0043,
    }),
    "men": SexProfile("men", 51.8, SBP_MEAN, 4.4, 0.9748, {
        "age": 0.0676, "maori": _ln_hr(1.34), "pacific": _ln_hr(1.19), "indian": _ln_hr(1.34),
        "asian": _ln_hr(0.67), "nzdep": 0.079, "ex_smoker": _ln_hr(1.08),
        "current_smoker": _ln_hr(1.66), "famhx": 0.133, "af": 0.588, "diabetes": 0.560,
        "sbp": 0.0164, "tchdl": 0.131, "bpmed": 0.295, "lipmed": -0.054, "atmed": 0.093,
        "age_x_diabetes": -0.0202, "age_x_sbp": -0.00042, "bpmed_x_sbp": -0.0053,
    }),
}

# (annotation, label, coefficient, per-unit scale, hazard ratio as published) per sex
PUBLISHED_HAZARD_RATIOS = {
    "women": (
        ("A1", "age per year", "age", 1, 1.078),
        ("A2", "maori", "maori", 1, 1.48), ("A2", "pacific", "pacific", 1, 1.22),
        ("A2", "indian", "indian", 1, 1.13), ("A2", "asian", "asian", 1, 0.75),
        ("A3", "deprivation per quintile", "nzdep", 1, 1.11),
        ("A4", "ex-smoker", "ex_smoker", 1, 1.09), ("A4", "current smoker", "current_smoker", 1, 1.86),
        ("A5", "systolic BP per 10 mmHg", "sbp", 10, 1.15),
        ("A6", "TC/HDL per unit", "tchdl", 1, 1.13),
        ("A7", "diabetes at mean age", "diabetes", 1, 1.72),
        ("A8", "atrial fibrillation", "af", 1, 2.44),
        ("A9", "family history", "famhx", 1, 1.05),
        ("A10", "BP-lowering medication", "bpmed", 1, 1.40),
        ("A11", "lipid-lowering medication", "lipmed", 1, 0.94),
        ("A12", "antithrombotic medication", "atmed", 1, 1.12),
    ),
    "men": (
        ("A1", "age per year", "age", 1, 1.070),
        ("A2", "maori", "maori", 1, 1.34), ("A2", "pacific", "pacific", 1, 1.19),
        ("A2", "indian", "indian", 1, 1.34), ("A2", "asian", "asian", 1, 0.67),
        ("A3", "deprivation per quintile", "nzdep", 1, 1.08),
        ("A4", "ex-smoker", "ex_smoker", 1, 1.08), ("A4", "current smoker", "current_smoker", 1, 1.66),
        ("A5", "systolic BP per 10 mmHg", "sbp", 10, 1.18),
        ("A6", "TC/HDL per unit", "tchdl", 1, 1.14),
        ("A7", "diabetes at mean age", "diabetes", 1, 1.75),
        ("A8", "atrial fibrillation", "af", 1, 1.80),
        ("A9", "family history", "famhx", 1, 1.14),
        ("A10", "BP-lowering medication", "bpmed", 1, 1.34),
        ("A11", "lipid-lowering medication", "lipmed", 1, 0.95),
        ("A12", "antithrombotic medication", "atmed", 1, 1.10),
    ),
}

# age-specific diabetes hazard ratios printed next to the model that do not follow
# from its own coefficients; kept only so reports can flag the mismatch
DISCREPANT_DIABETES_HR = {"women": {40: 2.04, 70: 1.43}, "men": {40: 1.98, 70: 1.48}}


def profile(sex: str) -> SexProfile:
    try:
        return PROFILES[sex]
    except KeyError:
        raise ValueError(f"sex must be one of {SEXES}, got {sex!r}") from None


# -- patient-level arithmetic -----------------------------------------------------------------

@dataclass(frozen=True)
class PatientInput:
    age: float
    ethnicity: str = "european"
    nzdep: int = 3
    smoking: str = "never"
    famhx: bool = False
    af: bool = False
    diabetes: bool = False
    sbp: float = SBP_MEAN
    tchdl: float = 4.0
    bpmed: bool = False
    lipmed: bool = False
    atmed: bool = False

    def __post_init__(self):
        if self.ethnicity not in ETHNICITIES:
            raise ValueError(f"ethnicity must be one of {ETHNICITIES}, got {self.ethnicity!r}")
        if self.smoking not in SMOKING:
            raise ValueError(f"smoking must be one of {SMOKING}, got {self.smoking!r}")
        if isinstance(self.nzdep, bool) or self.nzdep not in (1, 2, 3, 4, 5):
            raise ValueError(f"nzdep must be a quintile 1..5, got {self.nzdep!r}")
        for name in ("age", "sbp", "tchdl"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValueError(f"{name} must be a finite number")
        if self.sbp <= 0 or self.tchdl <= 0:
            raise ValueError("sbp and tchdl must be positive")
        for name in ("famhx", "af", "diabetes", "bpmed", "lipmed", "atmed"):
            if not isinstance(getattr(self, name), bool):
                raise ValueError(f"{name} must be true or false")
        lo, hi = COHORT_AGE_RANGE
        if not lo <= self.age <= hi:
            warnings.warn(f"age {self.age} lies outside the derivation cohort's {lo:g}-{hi:g} years")

    @classmethod
    def reference(cls, sex: str) -> "PatientInput":
        """Average patient: every centred covariate at its mean, every flag off."""
        p = profile(sex)
        return cls(age=p.age_mean, sbp=p.sbp_mean, tchdl=p.tchdl_mean, nzdep=int(NZDEP_CENTER))

    @classmethod
    def field_names(cls):
        return tuple(f.name for f in fields(cls))

    def graph_inputs(self) -> dict[str, float]:
        return {
            "age": float(self.age),
            "ethnicity": float(ETHNICITIES.index(self.ethnicity)),
            "nzdep": float(self.nzdep),
            "smoking": float(SMOKING.index(self.smoking)),
            "famhx": float(self.famhx),
            "af": float(self.af),
            "diabetes": float(self.diabetes),
            "sbp": float(self.sbp),
            "tchdl": float(self.tchdl),
            "bpmed": float(self.bpmed),
            "lipmed": float(self.lipmed),
            "atmed": float(self.atmed),
        }


def _terms(sex: str, p: PatientInput) -> dict[str, float]:
    """Each coefficient times its covariate, keyed like ``COEFFICIENT_NAMES``."""
    prof = profile(sex)
    b = prof.coefficients
    age_c = p.age - prof.age_mean
    sbp_c = p.sbp - prof.sbp_mean
    dm, bp = float(p.diabetes), float(p.bpmed)
    return {
        "age": b["age"] * age_c,
        "maori": b["maori"] * (p.ethnicity == "maori"),
        "pacific": b["pacific"] * (p.ethnicity == "pacific"),
        "indian": b["indian"] * (p.ethnicity == "indian"),
        "asian": b["asian"] * (p.ethnicity == "asian"),
        "nzdep": b["nzdep"] * (p.nzdep - NZDEP_CENTER),
        "ex_smoker": b["ex_smoker"] * (p.smoking == "ex"),
        "current_smoker": b["current_smoker"] * (p.smoking == "current"),
        "famhx": b["famhx"] * p.famhx,
        "af": b["af"] * p.af,
        "diabetes": b["diabetes"] * dm,
        "sbp": b["sbp"] * sbp_c,
        "tchdl": b["tchdl"] * (p.tchdl - prof.tchdl_mean),
        "bpmed": b["bpmed"] * bp,
        "lipmed": b["lipmed"] * p.lipmed,
        "atmed": b["atmed"] * p.atmed,
        "age_x_diabetes": b["age_x_diabetes"] * (age_c * dm),
        "age_x_sbp": b["age_x_sbp"] * (age_c * sbp_c),
        "bpmed_x_sbp": b["bpmed_x_sbp"] * (bp * sbp_c),
    }


def linear_predictor(sex: str, p: PatientInput) -> float:
    """Log-hazard relative to the reference patient (no intercept)."""
    return math.fsum(_terms(sex, p).values())


def predict_risk(sex: str, p: PatientInput) -> float:
    """Five-year event probability."""
    return 1.0 - profile(sex).baseline_survival_5y ** math.exp(linear_predictor(sex, p))


def hazard_ratio(beta: float) -> float:
    if not math.isfinite(beta):
        raise ValueError("beta must be finite")
    return math.exp(beta)


def diabetes_hr_by_age(sex: str, age: float) -> float:
    """Diabetes hazard ratio at ``age`` once the age interaction is folded in."""
    prof = profile(sex)
    b = prof.coefficients
    return math.exp(b["diabetes"] + b["age_x_diabetes"] * (age - prof.age_mean))


# which coefficients each predictor annotation owns
LEAF_TERMS = {
    "A1": ("age",),
    "A2": ("maori", "pacific", "indian", "asian"),
    "A3": ("nzdep",),
    "A4": ("ex_smoker", "current_smoker"),
    "A5": ("sbp", "age_x_sbp", "bpmed_x_sbp"),
    "A6": ("tchdl",),
    "A7": ("diabetes", "age_x_diabetes"),
    "A8": ("af",),
    "A9": ("famhx",),
    "A10": ("bpmed",),
    "A11": ("lipmed",),
    "A12": ("atmed",),
}

CLUSTERS = {
    "C1": ("A1", "A2", "A3", "A9"),
    "C2": ("A5", "A6"),
    "C3": ("A4", "A7", "A8"),
    "C4": ("A10", "A11", "A12"),
}

CLUSTER_NAMES = {"C1": "demographic", "C2": "biomarker", "C3": "behavioural and clinical", "C4": "treatment"}


def cluster_contributions(sex: str, p: PatientInput) -> dict[str, float]:
    """Share of ``eta`` coming from each predictor cluster; they sum to ``eta``."""
    terms = _terms(sex, p)
    return {
        cid: math.fsum(terms[t] for leaf in leaves for t in LEAF_TERMS[leaf])
        for cid, leaves in CLUSTERS.items()
    }


# -- graph -------------------------------------------------------------------------------

INPUT_ORDER = ("age", "ethnicity", "nzdep", "smoking", "famhx", "af", "diabetes",
               "sbp", "tchdl", "bpmed", "lipmed", "atmed")

# eta's incoming edges: source node -> coefficient name
ETA_SOURCES = {
    "age_c": "age", "eth_maori": "maori", "eth_pacific": "pacific", "eth_indian": "indian",
    "eth_asian": "asian", "nzdep_c": "nzdep", "smk_ex": "ex_smoker", "smk_current": "current_smoker",
    "famhx": "famhx", "af": "af", "diabetes": "diabetes", "sbp_c": "sbp", "tchdl_c": "tchdl",
    "bpmed": "bpmed", "lipmed": "lipmed", "atmed": "atmed", "age_x_dm": "age_x_diabetes",
    "age_x_sbp": "age_x_sbp", "bpmed_x_sbp": "bpmed_x_sbp",
}

SAMPLE_RANGES = {
    "age": [30.0, 74.0],
    "ethnicity": {"values": [0, 1, 2, 3, 4]},
    "nzdep": {"values": [1, 2, 3, 4, 5]},
    "smoking": {"values": [0, 1, 2]},
    "famhx": {"values": [0, 1]},
    "af": {"values": [0, 1]},
    "diabetes": {"values": [0, 1]},
    "sbp": [90.0, 180.0],
    "tchdl": [2.0, 8.0],
    "bpmed": {"values": [0, 1]},
    "lipmed": {"values": [0, 1]},
    "atmed": {"values": [0, 1]},
}

CONTEXT = ExplanationContext(
    audience="clinicians and health regulators",
    language="clinical risk language using hazard ratios",
    purpose="justify individual five-year cardiovascular risk estimates",
)


def build_predict_graph(sex: str) -> ComputationalGraph:
    prof = profile(sex)
    b = prof.coefficients

    def compute(nid, kind, **params):
        return Node(nid, "compute", OperatorSpec(kind, params))

    nodes = [Node(n, "input") for n in INPUT_ORDER]
    nodes += [
        compute("age_c", "center", mean=prof.age_mean),
        compute("eth_maori", "indicator", category=1),
        compute("eth_pacific", "indicator", category=2),
        compute("eth_indian", "indicator", category=3),
        compute("eth_asian", "indicator", category=4),
        compute("nzdep_c", "center", mean=NZDEP_CENTER),
        compute("smk_ex", "indicator", category=1),
        compute("smk_current", "indicator", category=2),
        compute("sbp_c", "center", mean=prof.sbp_mean),
        compute("tchdl_c", "center", mean=prof.tchdl_mean),
        compute("age_x_dm", "product"),
        compute("age_x_sbp", "product"),
        compute("bpmed_x_sbp", "product"),
        compute("eta", "weighted_sum"),
        compute("exp_eta", "exp"),
        compute("surv", "power_base", base=prof.baseline_survival_5y),
        Node("risk", "output", OperatorSpec("one_minus")),
    ]
    edges = [
        ("age", "age_c"),
        ("ethnicity", "eth_maori"), ("ethnicity", "eth_pacific"),
        ("ethnicity", "eth_indian"), ("ethnicity", "eth_asian"),
        ("nzdep", "nzdep_c"),
        ("smoking", "smk_ex"), ("smoking", "smk_current"),
        ("sbp", "sbp_c"), ("tchdl", "tchdl_c"),
        ("age_c", "age_x_dm"), ("diabetes", "age_x_dm"),
        ("age_c", "age_x_sbp"), ("sbp_c", "age_x_sbp"),
        ("bpmed", "bpmed_x_sbp"), ("sbp_c", "bpmed_x_sbp"),
    ]
    edges += [(src, "eta", b[coef]) for src, coef in ETA_SOURCES.items()]
    edges += [("eta", "exp_eta"), ("exp_eta", "surv"), ("surv", "risk")]
    return ComputationalGraph(nodes, edges)


def _leaf_subgraphs():
    def to_eta(*srcs):
        return {(s, "eta") for s in srcs}

    return {
        "A1": Subgraph({"age"}, {"eta", "age_x_dm", "age_x_sbp"},
                       {"age", "age_c", "eta", "age_x_dm", "age_x_sbp"},
                       {("age", "age_c"), ("age_c", "eta"), ("age_c", "age_x_dm"), ("age_c", "age_x_sbp")}),
        "A2": Subgraph({"ethnicity"}, {"eta"},
                       {"ethnicity", "eth_maori", "eth_pacific", "eth_indian", "eth_asian", "eta"},
                       {("ethnicity", e) for e in ("eth_maori", "eth_pacific", "eth_indian", "eth_asian")}
                       | to_eta("eth_maori", "eth_pacific", "eth_indian", "eth_asian")),
        "A3": Subgraph({"nzdep"}, {"eta"}, {"nzdep", "nzdep_c", "eta"},
                       {("nzdep", "nzdep_c")} | to_eta("nzdep_c")),
        "A4": Subgraph({"smoking"}, {"eta"}, {"smoking", "smk_ex", "smk_current", "eta"},
                       {("smoking", "smk_ex"), ("smoking", "smk_current")} | to_eta("smk_ex", "smk_current")),
        "A5": Subgraph({"sbp"}, {"eta"}, {"sbp", "sbp_c", "age_x_sbp", "bpmed_x_sbp", "eta"},
                       {("sbp", "sbp_c"), ("sbp_c", "age_x_sbp"), ("sbp_c", "bpmed_x_sbp")}
                       | to_eta("sbp_c", "age_x_sbp", "bpmed_x_sbp")),
        "A6": Subgraph({"tchdl"}, {"eta"}, {"tchdl", "tchdl_c", "eta"},
                       {("tchdl", "tchdl_c")} | to_eta("tchdl_c")),
        "A7": Subgraph({"diabetes"}, {"eta"}, {"diabetes", "age_x_dm", "eta"},
                       {("diabetes", "age_x_dm")} | to_eta("diabetes", "age_x_dm")),
        "A8": Subgraph({"af"}, {"eta"}, {"af", "eta"}, to_eta("af")),
        "A9": Subgraph({"famhx"}, {"eta"}, {"famhx", "eta"}, to_eta("famhx")),
        "A10": Subgraph({"bpmed"}, {"eta", "bpmed_x_sbp"}, {"bpmed", "bpmed_x_sbp", "eta"},
                        {("bpmed", "bpmed_x_sbp")} | to_eta("bpmed")),
        "A11": Subgraph({"lipmed"}, {"eta"}, {"lipmed", "eta"}, to_eta("lipmed")),
        "A12": Subgraph({"atmed"}, {"eta"}, {"atmed", "eta"}, to_eta("atmed")),
    }


def reference_inputs(sex: str) -> dict[str, float]:
    return PatientInput.reference(sex).graph_inputs()


def _hr_check(cid, variable, hr, scale=1, base=None, note=None):
    params = {"variable": variable, "expected": hr, "exit": "eta"}
    if scale != 1:
        params["scale"] = scale
    if base is not None:
        params["base"] = base
    return EvidenceCheck(cid, "hazard_ratio_equals", "analytical", params, note=note)


def _coef_check(cid, variable, beta, base):
    return EvidenceCheck(cid, "coefficient_equals", "analytical",
                         {"variable": variable, "expected": beta, "exit": "eta", "base": base})


def _leaf_evidence(sex: str) -> dict[str, tuple]:
    prof = profile(sex)
    b = prof.coefficients
    base = reference_inputs(sex)
    hr = {(a, coef): v for a, _, coef, _, v in PUBLISHED_HAZARD_RATIOS[sex]}
    sampled = {"ranges": SAMPLE_RANGES, "samples": 64}

    def at_age(age):
        return dict(base, age=float(age))

    dm_notes = {}
    for age, printed in DISCREPANT_DIABETES_HR[sex].items():
        dm_notes[age] = (
            f"Formula-consistency check at age {age}: exp(beta_DM + beta_age_x_DM * (age - mean age)) "
            f"= {diabetes_hr_by_age(sex, age):.2f}. The illustrative value {printed:.2f} printed for "
            f"this age alongside the model disagrees with direct computation and is not asserted."
        )

    eth_vars = {"maori": "eth_maori", "pacific": "eth_pacific", "indian": "eth_indian", "asian": "eth_asian"}
    return {
        "A1": (
            _coef_check("beta", "age", b["age"], base),
            _hr_check("hr", "age", hr[("A1", "age")]),
            EvidenceCheck("closed_form", "closed_form_affine", "analytical",
                          {"coefficients": {"age": b["age"]}, "offset": -b["age"] * prof.age_mean,
                           "exit": "eta"}),
            EvidenceCheck("surrogate", "io_surrogate_fit", "empirical",
                          {"exit": "eta", "expected": {"coefficients": {"age": b["age"]},
                                                      "offset": -b["age"] * prof.age_mean},
                           **sampled}),
        ),
        "A2": tuple(_hr_check(f"hr_{k}", v, hr[("A2", k)], base=base) for k, v in eth_vars.items())
        + (EvidenceCheck("closed_form", "closed_form_affine", "analytical",
                         {"coefficients": {v: b[k] for k, v in eth_vars.items()}, "offset": 0.0,
                          "base": base}),),
        "A3": (
            _coef_check("beta", "nzdep", b["nzdep"], base),
            _hr_check("hr", "nzdep", hr[("A3", "nzdep")]),
            EvidenceCheck("surrogate", "io_surrogate_fit", "empirical",
                          {"expected": {"coefficients": {"nzdep": b["nzdep"]},
                                        "offset": -b["nzdep"] * NZDEP_CENTER}, **sampled}),
        ),
        "A4": (
            _hr_check("hr_ex", "smk_ex", hr[("A4", "ex_smoker")], base=base),
            _hr_check("hr_current", "smk_current", hr[("A4", "current_smoker")], base=base),
        ),
        "A5": (
            _coef_check("beta_at_reference", "sbp", b["sbp"], base),
            _hr_check("hr_per_10", "sbp", hr[("A5", "sbp")], scale=10, base=base),
            EvidenceCheck("risk_rises_with_sbp", "monotonic_on", "empirical",
                          {"variable": "sbp", "grid": {"start": 100.0, "stop": 180.0, "num": 81},
                           "direction": "increasing", "base": at_age(45.0)},
                          Target(node="risk")),
        ),
        "A6": (
            _coef_check("beta", "tchdl", b["tchdl"], base),
            _hr_check("hr", "tchdl", hr[("A6", "tchdl")]),
        ),
        "A7": (
            _hr_check("hr_mean_age", "diabetes", hr[("A7", "diabetes")], base=base),
            _hr_check("hr_age_40", "diabetes", round(diabetes_hr_by_age(sex, 40), 4),
                      base=at_age(40.0), note=dm_notes[40]),
            _hr_check("hr_age_70", "diabetes", round(diabetes_hr_by_age(sex, 70), 4),
                      base=at_age(70.0), note=dm_notes[70]),
            EvidenceCheck("age_modifies_diabetes", "perturbation_slope", "empirical",
                          {"variable": "age", "expected": b["age_x_diabetes"], "tolerance": 1e-9,
                           "modifier": {"node": "diabetes", "low": 0.0, "high": 1.0}, **sampled},
                          Target(node="eta")),
        ),
        "A8": (
            _hr_check("hr", "af", hr[("A8", "af")]),
            EvidenceCheck("ablate", "ablation_delta", "empirical",
                          {"expected": b["af"], **sampled, "ranges": dict(SAMPLE_RANGES, af={"values": [1]})}),
        ),
        "A9": (
            _hr_check("hr", "famhx", hr[("A9", "famhx")]),
        ),
        "A10": (
            _hr_check("hr_untreated_mean_sbp", "bpmed", hr[("A10", "bpmed")], base=base),
            EvidenceCheck("sbp_slope_modified", "perturbation_slope", "empirical",
                          {"variable": "sbp", "expected": b["bpmed_x_sbp"], "tolerance": 1e-9,
                           "modifier": {"node": "bpmed", "low": 0.0, "high": 1.0}, **sampled},
                          Target(node="eta")),
        ),
        "A11": (
            _hr_check("hr", "lipmed", hr[("A11", "lipmed")]),
        ),
        "A12": (
            _hr_check("hr", "atmed", hr[("A12", "atmed")]),
        ),
    }


def _leaf_hypotheses(sex: str) -> dict[str, str]:
    prof = profile(sex)
    b = prof.coefficients
    e = math.exp
    return {
        "A1": f"Each year of age above {prof.age_mean:g} multiplies the hazard by {e(b['age']):.3f}",
        "A2": ("Relative to European ethnicity the hazard is multiplied by "
               f"{e(b['maori']):.2f} (Maori), {e(b['pacific']):.2f} (Pacific), "
               f"{e(b['indian']):.2f} (Indian) and {e(b['asian']):.2f} (Chinese/other Asian)"),
        "A3": f"Each deprivation quintile above the middle one multiplies the hazard by {e(b['nzdep']):.2f}",
        "A4": (f"Ex-smokers carry a hazard ratio of {e(b['ex_smoker']):.2f} and current smokers "
               f"{e(b['current_smoker']):.2f} against never-smokers"),
        "A5": (f"Each 10 mmHg of systolic pressure multiplies the hazard by {e(10 * b['sbp']):.2f} "
               "at mean age without treatment; the slope flattens with age and on treatment"),
        "A6": f"Each unit of TC/HDL ratio multiplies the hazard by {e(b['tchdl']):.2f}",
        "A7": (f"Diabetes multiplies the hazard by {e(b['diabetes']):.2f} at mean age, "
               "with a relative effect that shrinks as age rises"),
        "A8": f"Atrial fibrillation multiplies the hazard by {e(b['af']):.2f}",
        "A9": f"A family history of premature CVD multiplies the hazard by {e(b['famhx']):.2f}",
        "A10": (f"Untreated-to-treated BP medication status multiplies the hazard by {e(b['bpmed']):.2f} "
                "at mean SBP, a marker of prescribing to higher-risk patients; treatment also lowers "
                "the per-mmHg SBP effect"),
        "A11": f"Lipid-lowering medication has a near-null hazard ratio of {e(b['lipmed']):.2f}",
        "A12": f"Antithrombotic medication marks higher-risk patients, hazard ratio {e(b['atmed']):.2f}",
    }


CLUSTER_INPUTS = {
    "C1": ("age", "ethnicity", "nzdep", "famhx"),
    "C2": ("sbp", "tchdl"),
    "C3": ("smoking", "diabetes", "af"),
    "C4": ("bpmed", "lipmed", "atmed"),
}


def build_predict(sex: str):
    """Graph plus the full explanation bundle for one sex."""
    prof = profile(sex)
    graph = build_predict_graph(sex)
    base = reference_inputs(sex)
    subgraphs = _leaf_subgraphs()
    evidence = _leaf_evidence(sex)
    hypotheses = _leaf_hypotheses(sex)
    leaves = [LeafAnnotation(aid, subgraphs[aid], hypotheses[aid], evidence[aid], CONTEXT)
              for aid in LEAF_TERMS]

    eta_junction = Subgraph({"eta"}, {"eta"}, {"eta"}, ())
    comps = []
    for cid, children in CLUSTERS.items():
        ranges = {n: SAMPLE_RANGES[n] for n in CLUSTER_INPUTS[cid]}
        check = EvidenceCheck("additive", "additivity", "empirical",
                              {"observe": "eta", "ranges": ranges, "base": base, "samples": 64,
                               "expected": 0.0})
        comps.append(CompositionAnnotation(
            cid, eta_junction,
            f"The {CLUSTER_NAMES[cid]} predictors add their log-hazard contributions",
            (check,), children, CONTEXT))

    s0 = prof.baseline_survival_5y
    global_checks = (
        EvidenceCheck("additive", "additivity", "empirical",
                      {"observe": "eta", "ranges": SAMPLE_RANGES, "samples": 128, "expected": 0.0}),
        EvidenceCheck("cox_transform", "substitution_equiv", "empirical",
                      {"form": {"cox_risk": {"baseline_survival": s0}}, "ranges": SAMPLE_RANGES,
                       "samples": 128}),
    )
    junction = Subgraph({"eta"}, {"risk"}, {"eta", "exp_eta", "surv", "risk"},
                        {("eta", "exp_eta"), ("exp_eta", "surv"), ("surv", "risk")})
    comps.append(CompositionAnnotation(
        "C_global", junction,
        (f"The four cluster contributions sum to the log-hazard eta, and five-year risk is "
         f"1 - {s0:g}^exp(eta)"),
        global_checks, tuple(CLUSTERS), CONTEXT))
    return graph, AnnotationBundle(leaves, comps, "C_global", CONTEXT)
