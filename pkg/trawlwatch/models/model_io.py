#!/usr/bin/env python3
"""
Model files for trawlwatch
Versioned YAML artifacts written by `fit` and read by `classify`.
Components are numbered from 1 in the file and from 0 in memory.
"""

import logging
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import yaml

from ..errors import ModelFileError
from ..tracking.activity import Activity
from .dmarp import DmarpParams
from .gaussian_hmm import HmmParams
from .labelling import LabelMap, SpeedReference
from .thresholds import ThresholdConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MODEL_SUFFIX = ".model.yaml"
KINDS = ("dmkmg", "dmarp", "threshold")


@dataclass
class ModelArtifact:
    """Everything classify needs to label one grouping unit"""
    kind: str
    grouping: str
    dimension: str
    vessel_id: Optional[str] = None
    trip_id: Optional[str] = None
    params: Optional[Any] = None
    labels: Optional[LabelMap] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    failure: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.failure is None and self.params is not None

    @property
    def unit_key(self):
        return (self.vessel_id, self.trip_id)


def _floats(array) -> List:
    return np.asarray(array, dtype=float).tolist()


def _params_to_dict(kind: str, params) -> Optional[Dict[str, Any]]:
    if params is None:
        return None
    if kind == "threshold":
        return {"lo": float(params.lo), "hi": float(params.hi)}
    out = {
        "pi": _floats(params.pi),
        "transmat": _floats(params.transmat),
        "means": _floats(params.means),
        "covs": _floats(params.covs),
    }
    if kind == "dmarp":
        out["rhos"] = _floats(params.rhos)
        out["per_coordinate_rho"] = bool(params.per_coordinate_rho)
        out["rho_fixed"] = bool(params.rho_fixed)
    return out


def _params_from_dict(kind: str, data: Optional[Dict[str, Any]]):
    if data is None:
        return None
    try:
        if kind == "threshold":
            return ThresholdConfig(lo=float(data["lo"]), hi=float(data["hi"]))
        if kind == "dmkmg":
            params = HmmParams(pi=data["pi"], transmat=data["transmat"], means=data["means"], covs=data["covs"])
        else:
            params = DmarpParams(pi=data["pi"], transmat=data["transmat"], means=data["means"],
                                 rhos=data["rhos"], covs=data["covs"],
                                 per_coordinate_rho=bool(data.get("per_coordinate_rho", False)),
                                 rho_fixed=bool(data.get("rho_fixed", False)))
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFileError(f"invalid {kind} parameters: {e}")
    params.validate()
    return params


def _labels_to_dict(labels: Optional[LabelMap]) -> Optional[Dict[str, Any]]:
    if labels is None:
        return None
    out: Dict[str, Any] = {
        "components": {k + 1: labels.activities[k].label for k in sorted(labels.activities)},
        "fallback": bool(labels.fallback),
    }
    if labels.reference is not None:
        out["reference"] = {
            "mean": float(labels.reference.mean),
            "variance": float(labels.reference.variance),
            "component": labels.reference.component + 1,
        }
    return out


def _labels_from_dict(data: Optional[Dict[str, Any]]) -> Optional[LabelMap]:
    if data is None:
        return None
    try:
        activities = {int(k) - 1: Activity.from_label(v) for k, v in data["components"].items()}
        reference = None
        if data.get("reference"):
            ref = data["reference"]
            reference = SpeedReference(mean=float(ref["mean"]), variance=float(ref["variance"]),
                                       component=int(ref["component"]) - 1)
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise ModelFileError(f"invalid label section: {e}")
    subset = tuple(k for k, a in sorted(activities.items()) if a == Activity.FISHING)
    return LabelMap(activities=activities, reference=reference, chosen_subset=subset,
                    fallback=bool(data.get("fallback", False)))


def artifact_to_dict(artifact: ModelArtifact) -> Dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "kind": artifact.kind,
        "unit": {
            "grouping": artifact.grouping,
            "vessel_id": artifact.vessel_id,
            "trip_id": artifact.trip_id,
        },
        "dimension": artifact.dimension,
        "failure": artifact.failure,
        "params": _params_to_dict(artifact.kind, artifact.params),
        "labels": _labels_to_dict(artifact.labels),
        "diagnostics": artifact.diagnostics,
    }


def artifact_from_dict(data: Dict[str, Any], source: str = "<model>") -> ModelArtifact:
    if not isinstance(data, dict):
        raise ModelFileError(f"{source}: not a model file")
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFileError(f"{source}: unsupported model format version {version!r} (expected {FORMAT_VERSION})")
    kind = data.get("kind")
    if kind not in KINDS:
        raise ModelFileError(f"{source}: unknown model kind {kind!r}")
    unit = data.get("unit") or {}
    return ModelArtifact(
        kind=kind,
        grouping=str(unit.get("grouping", "all")),
        dimension=str(data.get("dimension", "speed")),
        vessel_id=unit.get("vessel_id"),
        trip_id=unit.get("trip_id"),
        params=_params_from_dict(kind, data.get("params")),
        labels=_labels_from_dict(data.get("labels")),
        diagnostics=dict(data.get("diagnostics") or {}),
        failure=data.get("failure"),
    )


def write_atomic(path: Union[str, Path], text: str):
    """Write text to a temporary file beside path, then rename it into place"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(artifact: ModelArtifact, path: Union[str, Path]):
    text = yaml.safe_dump(artifact_to_dict(artifact), default_flow_style=False, sort_keys=False, indent=2)
    write_atomic(path, text)
    logger.debug(f"Model saved to: {path}")


def load_model(path: Union[str, Path]) -> ModelArtifact:
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ModelFileError(f"cannot read model file {path}: {e}")
    except yaml.YAMLError as e:
        raise ModelFileError(f"{path}: not valid YAML: {e}")
    return artifact_from_dict(data, source=str(path))


def model_filename(grouping: str, vessel_id: Optional[str] = None, trip_id: Optional[str] = None) -> str:
    """File name of a unit's model; identifiers are reduced to filesystem-safe characters"""
    parts = [grouping] + [p for p in (vessel_id, trip_id) if p is not None]
    safe = [re.sub(r"[^A-Za-z0-9._-]", "_", p) for p in parts]
    return "__".join(safe) + MODEL_SUFFIX


def load_models(path: Union[str, Path]) -> List[ModelArtifact]:
    """Load one model file, or every model file of a directory in name order"""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob(f"*{MODEL_SUFFIX}"))
        if not files:
            raise ModelFileError(f"no model files in {path}")
        artifacts = [load_model(f) for f in files]
    elif path.exists():
        artifacts = [load_model(path)]
    else:
        raise ModelFileError(f"model path not found: {path}")

    groupings = {a.grouping for a in artifacts}
    if len(groupings) > 1:
        raise ModelFileError(f"model files mix grouping modes: {', '.join(sorted(groupings))}")
    logger.info(f"Loaded {len(artifacts)} model file(s) from {path}")
    return artifacts
