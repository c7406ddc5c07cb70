#!/usr/bin/env python3
"""
Activity sequences for trawlwatch
Per-interval activity codes and their CSV representation
"""

import enum
import logging
from collections import defaultdict
from typing import Dict, IO, List, Tuple, Union

import numpy as np
import pandas as pd

from ..errors import VmsFormatError

logger = logging.getLogger(__name__)

TRUTH_COLUMNS = ["vessel_id", "trip_id", "step_index", "activity"]


class Activity(enum.IntEnum):
    UNESTIMATED = -1
    STEAMING = 0
    FISHING = 1

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "Activity":
        try:
            return cls[label.strip().upper()]
        except KeyError:
            raise ValueError(f"Unknown activity: '{label}'")


# An activity sequence is an int8 numpy array of Activity codes, one per trip interval
ActivitySequence = np.ndarray


def activity_array(values) -> ActivitySequence:
    """Build an activity sequence from codes, Activity members or labels"""
    codes = []
    for value in values:
        if isinstance(value, str):
            codes.append(int(Activity.from_label(value)))
        else:
            codes.append(int(Activity(int(value))))
    return np.asarray(codes, dtype=np.int8)


def unestimated(n_steps: int) -> ActivitySequence:
    return np.full(n_steps, int(Activity.UNESTIMATED), dtype=np.int8)


def expand_to_pings(activity: ActivitySequence) -> ActivitySequence:
    """Per-ping activity: the final ping inherits the last interval's activity"""
    if len(activity) == 0:
        return np.asarray(activity, dtype=np.int8)
    return np.append(activity, activity[-1]).astype(np.int8)


def read_activity_csv(source: Union[str, IO]) -> Dict[Tuple[str, str], ActivitySequence]:
    """
    Read per-step activities keyed by (vessel_id, trip_id)
    Accepts truth files and classify output (extra columns are ignored)
    """
    df = pd.read_csv(source, dtype=str, keep_default_na=False)
    missing = [c for c in TRUTH_COLUMNS if c not in df.columns]
    if missing:
        raise VmsFormatError(f"missing activity columns: {', '.join(missing)}")

    steps: Dict[Tuple[str, str], List[Tuple[int, int]]] = defaultdict(list)
    for i, record in enumerate(df.itertuples(index=False)):
        try:
            step = int(record.step_index)
            code = int(Activity.from_label(record.activity))
        except ValueError as e:
            raise VmsFormatError(str(e), row=i + 1, field="activity")
        steps[(record.vessel_id, record.trip_id)].append((step, code))

    sequences = {}
    for key, entries in steps.items():
        entries.sort()
        indices = [step for step, _ in entries]
        if indices != list(range(len(indices))):
            raise VmsFormatError(f"step indices of trip {key[0]}/{key[1]} are not contiguous from 0")
        sequences[key] = np.asarray([code for _, code in entries], dtype=np.int8)

    logger.info(f"Read activities for {len(sequences)} trips")
    return sequences


def write_truth_csv(truths: Dict[Tuple[str, str], ActivitySequence], destination: Union[str, IO]):
    """Write ground-truth activities as vessel_id,trip_id,step_index,activity"""
    records = []
    for (vessel_id, trip_id), sequence in truths.items():
        for step, code in enumerate(sequence):
            records.append((vessel_id, trip_id, step, Activity(int(code)).label))
    df = pd.DataFrame.from_records(records, columns=TRUTH_COLUMNS)
    df.to_csv(destination, index=False, lineterminator="\n")
