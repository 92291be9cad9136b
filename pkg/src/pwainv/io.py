"""JSON model files and CSV trajectory files.

Model document::

    {
      "role": "forward" | "inverse",
      "name": "...",
      "dims": {"n_x": 2, "n_u": 1, "n_y": 1},
      "partition": {"P": [[...]], "w": [...], "signatures": [[[0, 1], ...], ...]},
      "schedule": {"kind": "constant" | "tabulated" | "exogenous" | "monolithic-printhead", ...},
      "declared_mu_c": 1,          # optional
      "mu_tilde": 1                # inverse files only
    }

Trajectory CSV files have the header ``k,<label>_0,<label>_1,...`` and
numbers written with 17 significant digits so they round-trip exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .inversion import InversePwaModel
from .pwa import (
    ConstantSchedule,
    ExogenousSchedule,
    LocationMatrices,
    Partition,
    PwaModel,
    TabulatedSchedule,
    Trajectory,
)

NUMBER_FORMAT = "%.17g"


# ---------------------------------------------------------------------------
# Models


def _loc_to_dict(m: LocationMatrices):
    return {"A": m.A.tolist(), "B": m.B.tolist(), "F": m.F.tolist(), "C": m.C.tolist(), "D": m.D, "G": m.G}


def _loc_from_dict(d):
    return LocationMatrices.make(d["A"], d["B"], d.get("F"), d["C"], d.get("D", 0.0), d.get("G", 0.0))


def _horizon(sched):
    h = sched.horizon
    return None if h is None else [h.start, h.stop]


def schedule_to_dict(model: PwaModel):
    sched = model.schedule
    if isinstance(sched, ConstantSchedule):
        return {"kind": "constant", "locations": [_loc_to_dict(m) for m in sched.locations],
                "horizon": _horizon(sched)}
    if isinstance(sched, ExogenousSchedule):
        return {
            "kind": "exogenous",
            "locations": [_loc_to_dict(m) for m in sched.locations],
            "F_exo": [f.tolist() for f in sched.F_exo],
            "G_exo": list(sched.G_exo),
            "signal": sched.signal.tolist(),
            "start_k": sched.horizon.start,
            "name": sched.name,
        }
    if sched.horizon is None:
        return {"kind": "constant", "horizon": None,
                "locations": [_loc_to_dict(model.matrices(q, 0)) for q in range(model.n_locations)]}
    tables = []
    for q in range(model.n_locations):
        mats = [model.matrices(q, k) for k in sched.horizon]
        tables.append({name: np.array([getattr(m, name) for m in mats]).tolist() for name in "ABFCDG"})
    return {"kind": "tabulated", "start_k": sched.horizon.start, "tables": tables}


def model_to_dict(model) -> dict:
    """Serialisable document for a forward model or an :class:`InversePwaModel`."""
    doc = {}
    if isinstance(model, InversePwaModel):
        doc["role"] = "inverse"
        doc["mu_tilde"] = model.mu_tilde
        doc["kind"] = model.kind
        doc["location_map"] = list(model.location_map)
        system = model.system
    else:
        doc["role"] = "forward"
        system = model
    part = system.partition
    doc.update({
        "name": system.name,
        "dims": {"n_x": system.n_x, "n_u": 1, "n_y": 1},
        "partition": {"P": part.P.tolist(), "w": part.w.tolist(),
                      "signatures": [[list(s) for s in loc] for loc in part.signatures]},
        "schedule": schedule_to_dict(system),
    })
    if system.declared_mu_c is not None:
        doc["declared_mu_c"] = system.declared_mu_c
    return doc


def _schedule_from_dict(d, n_x):
    kind = d.get("kind")
    if kind == "constant":
        h = d.get("horizon")
        return ConstantSchedule([_loc_from_dict(m) for m in d["locations"]], None if h is None else range(*h))
    if kind == "tabulated":
        return TabulatedSchedule(d["tables"], d.get("start_k", 0))
    if kind == "exogenous":
        return ExogenousSchedule([_loc_from_dict(m) for m in d["locations"]], d["F_exo"], d.get("G_exo"),
                                 d["signal"], d.get("start_k", 0), d.get("name", "r"))
    raise ValueError(f"unknown schedule kind {kind!r}")


def model_from_dict(doc: dict) -> PwaModel:
    """Build a model from a document.  Inverse documents load as plain PWA models."""
    sched_doc = doc.get("schedule")
    if sched_doc is None:
        raise ValueError("model document has no 'schedule'")
    if sched_doc.get("kind") == "monolithic-printhead":
        return printhead_model_from_dict(sched_doc)
    dims = doc.get("dims", {})
    if dims.get("n_u", 1) != 1 or dims.get("n_y", 1) != 1:
        raise ValueError("only SISO models (n_u = n_y = 1) are supported")
    if sched_doc.get("kind") not in ("constant", "tabulated", "exogenous"):
        raise ValueError(f"unknown schedule kind {sched_doc.get('kind')!r}")
    if "partition" not in doc:
        raise ValueError("model document has no 'partition'")
    p = doc["partition"]
    part = Partition(p["P"], p["w"], p["signatures"])
    sched = _schedule_from_dict(sched_doc, part.n_x)
    if "n_x" in dims and dims["n_x"] != sched.n_x:
        raise ValueError(f"dims.n_x is {dims['n_x']} but the schedule has n_x={sched.n_x}")
    return PwaModel(part, sched, doc.get("declared_mu_c"), doc.get("name", ""))


def printhead_model_from_dict(d: dict) -> PwaModel:
    """``{"kind": "monolithic-printhead", "variant": "control" | "truth", "reference": {...} | [..]}``."""
    from . import printhead as ph

    variant = d.get("variant", "control")
    if variant not in ("control", "truth"):
        raise ValueError(f"unknown printhead variant {variant!r}")
    ref = d.get("reference", {})
    if isinstance(ref, dict):
        r_truth = ph.make_reference(ph.ReferenceConfig(**ref))
        r = ph.control_reference(r_truth) if variant == "control" else ph.truth_simulation_reference(r_truth)
    else:
        r = Trajectory(np.asarray(ref, dtype=float), 0, "r")
    plant = ph.CONTROL_PLANT if variant == "control" else ph.TRUTH_PLANT
    fb = ph.CONTROL_FEEDBACK if variant == "control" else ph.TRUTH_FEEDBACK
    return ph.build_monolithic(ph.zpk_to_state_space(plant), ph.build_feedback_controller(fb), r)


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1))


def load_model(path) -> PwaModel:
    return model_from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Trajectories


def write_trajectory(path, traj: Trajectory, label: str | None = None) -> None:
    label = label or traj.label
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"] + [f"{label}_{i}" for i in range(traj.dim)])
        for k, row in zip(traj.times, traj.samples):
            w.writerow([int(k)] + [NUMBER_FORMAT % v for v in row])


def read_trajectory(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "k" or len(rows) < 2:
        raise ValueError(f"{path} is not a trajectory CSV with a 'k,...' header and data")
    header = rows[0]
    label = header[1].rsplit("_", 1)[0] if len(header) > 1 else "x"
    ks = np.array([int(r[0]) for r in rows[1:]])
    if np.any(np.diff(ks) != 1):
        raise ValueError(f"{path}: time indices must be consecutive")
    data = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return Trajectory(data, int(ks[0]), label)


def write_table(path, header, rows) -> None:
    """CSV of mixed text/number rows, numbers at full precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([NUMBER_FORMAT % v if isinstance(v, float) else v for v in row])
