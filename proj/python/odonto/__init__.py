"""Tooth-mobility simulation: virtual patients, quasi-static FE load sweeps and square-root fits.

Options are plain dicts with the same keys as the CLI config sections (see README).
"""

import json as _json

from . import _core
from ._core import (
    ConvergenceError,
    ElementInversion,
    Error,
    InvalidInput,
    ParseError,
    TetMesh,
    fit_biomarker,
    fit_sqrt,
    load_tetgen,
    metric_names,
    mirror_unn,
    predict_response,
    save_tetgen,
    spearman,
    tet_quality,
)

__all__ = [
    "ConvergenceError", "ElementInversion", "Error", "InvalidInput", "ParseError", "TetMesh",
    "biomarkers", "default_patient", "fit_biomarker", "fit_sqrt", "load_tetgen", "metric_names",
    "mirror_unn", "patient_family", "predict_response", "save_tetgen", "spearman", "sweep",
    "synth_assembly", "tet_quality",
]


def _dump(obj):
    if obj is None:
        return ""
    return obj if isinstance(obj, str) else _json.dumps(obj)


def default_patient(kind="single"):
    """Patient template dict: 'single' (one incisor) or 'full' (16 mandibular teeth)."""
    return _json.loads(_core.default_patient(kind))


def patient_family(patient, rules=None):
    """Variants of a template; default rules scale crowns and roots by +-20 %."""
    return [_json.loads(p) for p in _core.patient_family(_dump(patient), _dump(rules))]


def synth_assembly(patient=None):
    """Mesh a patient template. Returns (TetMesh, info dict with tooth frames and crown heights)."""
    mesh, info = _core.synth_assembly(_dump(patient or default_patient()))
    return mesh, _json.loads(info)


def biomarkers(patient_id, mesh, info, tooth_frame=True):
    """Crown height over PDL bounding-box volume for each tooth of an assembly."""
    return _core.biomarkers(patient_id, mesh, _dump(info), tooth_frame)


def sweep(mesh, patient_id="patient", sweep=None, model=None, solver=None, threads=1):
    """Load sweep on a mesh with the standard boundary sets; one dict per tooth and load level."""
    return _core.sweep(mesh, patient_id, _dump(sweep), _dump(model), _dump(solver), threads)
