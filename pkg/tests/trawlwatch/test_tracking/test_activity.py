#!/usr/bin/env python3
"""Tests for activity codes and activity CSV files"""

import io

import numpy as np
import pytest

from trawlwatch.errors import VmsFormatError
from trawlwatch.tracking.activity import (
    Activity,
    activity_array,
    expand_to_pings,
    read_activity_csv,
    unestimated,
    write_truth_csv,
)


def test_labels():
    assert Activity.FISHING.label == "fishing"
    assert Activity.from_label(" Steaming ") is Activity.STEAMING
    with pytest.raises(ValueError):
        Activity.from_label("drifting")


def test_activity_array_accepts_mixed_inputs():
    codes = activity_array(["fishing", Activity.STEAMING, -1, 1])
    assert codes.dtype == np.int8
    assert list(codes) == [1, 0, -1, 1]


def test_unestimated():
    assert list(unestimated(3)) == [-1, -1, -1]


def test_expand_to_pings_repeats_last_interval():
    assert list(expand_to_pings(activity_array([0, 1, 1]))) == [0, 1, 1, 1]
    assert len(expand_to_pings(activity_array([]))) == 0


def test_truth_file_round_trip():
    truths = {("V1", "T1"): activity_array([0, 1, 1]), ("V2", "T9"): activity_array([1, -1])}
    buffer = io.StringIO()
    write_truth_csv(truths, buffer)
    assert buffer.getvalue().splitlines()[:2] == ["vessel_id,trip_id,step_index,activity", "V1,T1,0,steaming"]
    buffer.seek(0)
    back = read_activity_csv(buffer)
    assert set(back) == set(truths)
    for key, sequence in truths.items():
        assert list(back[key]) == list(sequence)


def test_extra_columns_and_row_order_are_ignored():
    text = ("vessel_id,trip_id,step_index,speed,activity\n"
            "V1,T1,1,2.0,fishing\n"
            "V1,T1,0,9.5,steaming\n")
    back = read_activity_csv(io.StringIO(text))
    assert list(back[("V1", "T1")]) == [0, 1]


def test_gap_in_step_indices():
    text = "vessel_id,trip_id,step_index,activity\nV1,T1,0,fishing\nV1,T1,2,fishing\n"
    with pytest.raises(VmsFormatError, match="contiguous"):
        read_activity_csv(io.StringIO(text))


def test_unknown_label_names_row():
    text = "vessel_id,trip_id,step_index,activity\nV1,T1,0,fishing\nV1,T1,1,resting\n"
    with pytest.raises(VmsFormatError) as excinfo:
        read_activity_csv(io.StringIO(text))
    assert excinfo.value.row == 2


def test_missing_columns():
    with pytest.raises(VmsFormatError, match="activity"):
        read_activity_csv(io.StringIO("vessel_id,trip_id,step_index\nV1,T1,0\n"))
