"""Regenerate the graph/bundle files shipped under ``annotex/data``.

Run ``python -m annotex.fixtures`` after changing a builder; the test
suite fails while the shipped files differ from what the builders produce.
"""

from __future__ import annotations

import json
import sys
from importlib import resources
from pathlib import Path

from .builders import build_branching_example, build_dual_role_example, build_linear_regression
from .formats import emit_bundle, emit_graph
from .predict_cvd import SEXES, PatientInput, build_predict


def _json(doc) -> bytes:
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")


def shipped_fixtures() -> dict[str, bytes]:
    """File name -> exact bytes of every shipped fixture."""
    files = {}

    def pair(name, graph, bundle):
        files[f"{name}.graph.json"] = emit_graph(graph)
        files[f"{name}.bundle.json"] = emit_bundle(bundle)

    for sex in SEXES:
        pair(f"predict_{sex}", *build_predict(sex))
    pair("linear_regression", *build_linear_regression([2.0, 3.0], 1.0))
    pair("branching_partial", *build_branching_example(with_second_path=False))
    pair("branching_full", *build_branching_example(with_second_path=True))
    files["dual_role.graph.json"] = emit_graph(build_dual_role_example())
    files["linear_regression.inputs.json"] = _json({"x1": 1.0, "x2": 1.0})
    files["reference_woman.patient.json"] = _json(_patient_doc(PatientInput.reference("women")))
    smoker = PatientInput(age=51.8, tchdl=4.4, smoking="current")
    files["current_smoker_man.patient.json"] = _json(_patient_doc(smoker))
    return files


def _patient_doc(p: PatientInput) -> dict:
    return {name: getattr(p, name) for name in PatientInput.field_names()}


def data_dir():
    return resources.files("annotex").joinpath("data")


def write_fixtures(directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, data in sorted(shipped_fixtures().items()):
        path = directory / name
        path.write_bytes(data)
        written.append(path)
    return written


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent / "data"
    for path in write_fixtures(target):
        print(f"wrote {path}")
