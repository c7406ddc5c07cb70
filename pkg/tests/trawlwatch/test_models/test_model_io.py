#!/usr/bin/env python3
"""Tests for model files"""

import numpy as np
import pytest
import yaml

from trawlwatch.errors import ModelFileError
from trawlwatch.models.gaussian_hmm import HmmParams
from trawlwatch.models.labelling import lowest_mean_labels
from trawlwatch.models.model_io import (
    FORMAT_VERSION,
    ModelArtifact,
    artifact_to_dict,
    load_model,
    load_models,
    model_filename,
    save_model,
)
from trawlwatch.models.thresholds import ThresholdConfig


@pytest.fixture
def artifact():
    params = HmmParams(pi=[0.4, 0.6], transmat=[[0.9, 0.1], [0.2, 0.8]], means=[9.0, 3.0], covs=[1.2, 0.8])
    return ModelArtifact(kind="dmkmg", grouping="vessel", dimension="speed", vessel_id="V001",
                         params=params, labels=lowest_mean_labels(params.speed_means()),
                         diagnostics={"log_likelihood": -123.5, "iterations": 17})


def test_saved_model_loads_back(tmp_path, artifact):
    path = tmp_path / "unit.model.yaml"
    save_model(artifact, path)
    loaded = load_model(path)
    assert loaded.ok
    assert loaded.unit_key == ("V001", None)
    np.testing.assert_array_equal(loaded.params.means, artifact.params.means)
    np.testing.assert_array_equal(loaded.params.covs, artifact.params.covs)
    assert loaded.labels.fishing_components() == (1,)
    assert loaded.diagnostics["iterations"] == 17


def test_components_are_numbered_from_one(artifact):
    data = artifact_to_dict(artifact)
    assert data["format_version"] == FORMAT_VERSION
    assert data["labels"]["components"] == {1: "steaming", 2: "fishing"}


def test_threshold_and_failed_artifacts(tmp_path):
    save_model(ModelArtifact(kind="threshold", grouping="all", dimension="speed",
                             params=ThresholdConfig(2.0, 4.0)), tmp_path / "a.model.yaml")
    save_model(ModelArtifact(kind="dmkmg", grouping="all", dimension="speed",
                             failure="sequence too short"), tmp_path / "b.model.yaml")
    threshold, failed = load_models(tmp_path)
    assert threshold.params == ThresholdConfig(2.0, 4.0)
    assert not failed.ok
    assert failed.failure == "sequence too short"


@pytest.mark.parametrize("change,message", [
    ({"format_version": 99}, "version"),
    ({"kind": "kmeans"}, "kind"),
])
def test_rejects_unknown_format(tmp_path, artifact, change, message):
    data = artifact_to_dict(artifact)
    data.update(change)
    path = tmp_path / "bad.model.yaml"
    path.write_text(yaml.safe_dump(data))
    with pytest.raises(ModelFileError, match=message):
        load_model(path)


def test_rejects_invalid_parameters(tmp_path, artifact):
    data = artifact_to_dict(artifact)
    data["params"]["transmat"] = [[0.5, 0.6], [0.2, 0.8]]
    path = tmp_path / "bad.model.yaml"
    path.write_text(yaml.safe_dump(data))
    with pytest.raises(ValueError):
        load_model(path)


def test_rejects_non_yaml(tmp_path):
    path = tmp_path / "bad.model.yaml"
    path.write_text("kind: [unclosed\n")
    with pytest.raises(ModelFileError):
        load_model(path)


def test_directory_loading(tmp_path, artifact):
    with pytest.raises(ModelFileError, match="no model files"):
        load_models(tmp_path)
    save_model(artifact, tmp_path / model_filename("vessel", "V001"))
    other = ModelArtifact(kind="dmkmg", grouping="trip", dimension="speed", failure="sequence too short")
    save_model(other, tmp_path / model_filename("trip", "V001", "T1"))
    with pytest.raises(ModelFileError, match="mix grouping"):
        load_models(tmp_path)


def test_missing_path(tmp_path):
    with pytest.raises(ModelFileError, match="not found"):
        load_models(tmp_path / "nowhere")


def test_model_filename_is_filesystem_safe():
    assert model_filename("trip", "SE 12/3", "T:1") == "trip__SE_12_3__T_1.model.yaml"
    assert model_filename("all") == "all.model.yaml"
