#!/usr/bin/env python3
"""
Accuracy evaluation for trawlwatch
Scores estimated activities against ground truth with the global match,
Fishing-as-Steaming, Steaming-as-Fishing and Unestimated rates, per method
and grouping mode, and sweeps the number of components.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, IO, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..config.run_config import TrajectoryConfig
from ..models.em import EmConfig
from ..tracking.activity import Activity, ActivitySequence
from ..tracking.vms_reader import Trip
from .pipeline import GroupingMode, MethodSpec, TripKey, fit_all, prepare_trip

logger = logging.getLogger(__name__)

COMPARISON_COLUMNS = ["method", "grouping", "K", "global_match", "f_as_s", "s_as_f", "unestimated",
                      "adj_global_match", "wall_s"]


def _percent(numerator: int, denominator: int) -> float:
    return 100.0 * numerator / denominator if denominator else 0.0


@dataclass(frozen=True)
class AccuracyReport:
    """
    Raw counts over all scored steps
    Plain rates use estimated steps as denominator, adjusted rates use every step
    and so count Unestimated as a mismatch
    """
    n_steps: int = 0
    n_match: int = 0
    n_f_as_s: int = 0
    n_s_as_f: int = 0
    n_unestimated: int = 0

    @property
    def n_estimated(self) -> int:
        return self.n_steps - self.n_unestimated

    @property
    def undefined(self) -> bool:
        """True when no step was estimated, so the plain rates are reported as 0"""
        return self.n_estimated == 0

    @property
    def global_match(self) -> float:
        return _percent(self.n_match, self.n_estimated)

    @property
    def f_as_s(self) -> float:
        return _percent(self.n_f_as_s, self.n_estimated)

    @property
    def s_as_f(self) -> float:
        return _percent(self.n_s_as_f, self.n_estimated)

    @property
    def unestimated(self) -> float:
        return _percent(self.n_unestimated, self.n_steps)

    @property
    def adjusted_global_match(self) -> float:
        return _percent(self.n_match, self.n_steps)

    @property
    def adjusted_f_as_s(self) -> float:
        return _percent(self.n_f_as_s, self.n_steps)

    @property
    def adjusted_s_as_f(self) -> float:
        return _percent(self.n_s_as_f, self.n_steps)

    def __add__(self, other: "AccuracyReport") -> "AccuracyReport":
        return AccuracyReport(
            n_steps=self.n_steps + other.n_steps,
            n_match=self.n_match + other.n_match,
            n_f_as_s=self.n_f_as_s + other.n_f_as_s,
            n_s_as_f=self.n_s_as_f + other.n_s_as_f,
            n_unestimated=self.n_unestimated + other.n_unestimated,
        )


def confusion_stats(est: ActivitySequence, truth: ActivitySequence) -> AccuracyReport:
    """Count agreements and the three kinds of disagreement step by step"""
    est = np.asarray(est, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if est.shape != truth.shape:
        raise ValueError(f"estimated and true sequences differ in length: {est.shape[0]} vs {truth.shape[0]}")
    if np.any(truth == int(Activity.UNESTIMATED)):
        raise ValueError("ground truth must not contain unestimated steps")

    fishing, steaming, missing = int(Activity.FISHING), int(Activity.STEAMING), int(Activity.UNESTIMATED)
    return AccuracyReport(
        n_steps=int(truth.size),
        n_match=int(np.sum(est == truth)),
        n_f_as_s=int(np.sum((truth == fishing) & (est == steaming))),
        n_s_as_f=int(np.sum((truth == steaming) & (est == fishing))),
        n_unestimated=int(np.sum(est == missing)),
    )


@dataclass
class ComparisonRow:
    method: str
    grouping: str
    k: str
    report: AccuracyReport
    wall_s: float


@dataclass
class ComparisonTable:
    rows: List[ComparisonRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def extend(self, other: "ComparisonTable"):
        self.rows.extend(other.rows)

    def to_frame(self) -> pd.DataFrame:
        records = [
            (row.method, row.grouping, row.k, row.report.global_match, row.report.f_as_s, row.report.s_as_f,
             row.report.unestimated, row.report.adjusted_global_match, row.wall_s)
            for row in self.rows
        ]
        return pd.DataFrame.from_records(records, columns=COMPARISON_COLUMNS)

    def write_csv(self, destination: Union[str, IO], timing: bool = True):
        """Rates rounded to 6 decimals, wall time to 3; without timing wall_s is left empty"""
        frame = self.to_frame()
        rates = COMPARISON_COLUMNS[3:8]
        frame[rates] = frame[rates].round(6)
        frame["wall_s"] = frame["wall_s"].round(3) if timing else ""
        frame.to_csv(destination, index=False, lineterminator="\n")

    def format_table(self) -> str:
        """Aligned text table; adjusted rates in parentheses when steps were left unestimated"""
        header = ["method", "grouping", "K", "global match", "F as S", "S as F", "unestimated", "wall s"]
        lines = []
        for row in self.rows:
            r = row.report
            lines.append([
                row.method, row.grouping, row.k,
                self._pair(r.global_match, r.adjusted_global_match, r),
                self._pair(r.f_as_s, r.adjusted_f_as_s, r),
                self._pair(r.s_as_f, r.adjusted_s_as_f, r),
                f"{r.unestimated:.2f}",
                f"{row.wall_s:.2f}",
            ])
        widths = [max(len(str(cell)) for cell in column) for column in zip(header, *lines)]
        out = ["  ".join(str(cell).ljust(w) for cell, w in zip(header, widths)).rstrip()]
        out.append("  ".join("-" * w for w in widths))
        out.extend("  ".join(str(cell).ljust(w) for cell, w in zip(line, widths)).rstrip() for line in lines)
        return "\n".join(out)

    @staticmethod
    def _pair(plain: float, adjusted: float, report: AccuracyReport) -> str:
        if report.undefined:
            return f"n/a ({adjusted:.2f})"
        if report.n_unestimated:
            return f"{plain:.2f} ({adjusted:.2f})"
        return f"{plain:.2f}"


def check_truth(trips: Sequence[Trip], truth: Dict[TripKey, ActivitySequence]):
    for trip in trips:
        sequence = truth.get(trip.key)
        if sequence is None:
            raise ValueError(f"no ground truth for trip {trip.vessel_id}/{trip.trip_id}")
        if len(sequence) != trip.n_intervals:
            raise ValueError(f"ground truth of trip {trip.vessel_id}/{trip.trip_id} has {len(sequence)} steps, "
                             f"expected {trip.n_intervals}")


def score(trips: Sequence[Trip], estimates: Dict[TripKey, ActivitySequence],
          truth: Dict[TripKey, ActivitySequence]) -> AccuracyReport:
    """Concatenate every trip's steps in dataset order and score them once"""
    if not trips:
        return AccuracyReport()
    est = np.concatenate([np.asarray(estimates[t.key], dtype=int) for t in trips])
    true = np.concatenate([np.asarray(truth[t.key], dtype=int) for t in trips])
    return confusion_stats(est, true)


def run_comparison(trips: Sequence[Trip], truth: Dict[TripKey, ActivitySequence], methods: Iterable[MethodSpec],
                   grouping: GroupingMode, em_config: Optional[EmConfig] = None,
                   trajectory: Optional[TrajectoryConfig] = None, seed: int = 0,
                   jobs: int = 1) -> ComparisonTable:
    """Fit, label and score each method on the grouping units of a labelled dataset"""
    em_config = em_config or EmConfig()
    trajectory = trajectory or TrajectoryConfig()
    check_truth(trips, truth)
    prepared = [prepare_trip(trip, trajectory) for trip in trips]

    table = ComparisonTable()
    for spec in methods:
        start = time.perf_counter()
        results = fit_all(prepared, spec, grouping, em_config, seed, jobs)
        estimates: Dict[TripKey, ActivitySequence] = {}
        for result in results:
            estimates.update(result.activities)
        report = score(trips, estimates, truth)
        wall = time.perf_counter() - start

        failed = sum(1 for r in results if not r.ok)
        logger.info(f"{spec.label} ({grouping.value}): global match {report.global_match:.2f}%, "
                    f"unestimated {report.unestimated:.2f}%, {failed}/{len(results)} units failed, {wall:.2f} s")
        table.rows.append(ComparisonRow(method=spec.label, grouping=grouping.value, k=spec.k_column,
                                        report=report, wall_s=wall))
    return table


@dataclass
class KSweepResult:
    table: ComparisonTable
    best_k: int

    def reports(self) -> Dict[int, AccuracyReport]:
        return {int(row.k): row.report for row in self.table.rows}


def best_k_of(scores: Sequence[Tuple[int, float]]) -> int:
    """Highest global match; ties go to the smaller K"""
    best_k, best_score = None, -np.inf
    for k, value in sorted(scores):
        if value > best_score:
            best_k, best_score = k, value
    return best_k


def sweep_k(trips: Sequence[Trip], truth: Dict[TripKey, ActivitySequence], k_range: Iterable[int],
            grouping: GroupingMode, em_config: Optional[EmConfig] = None,
            trajectory: Optional[TrajectoryConfig] = None, seed: int = 0, jobs: int = 1,
            dimension: str = "speed", decoder: str = "viterbi") -> KSweepResult:
    """Run the Gaussian HMM for every K and pick the best by plain global match"""
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValueError("k_range is empty")
    if ks[0] < 2:
        raise ValueError(f"every K must be >= 2, got {ks[0]}")

    specs = [MethodSpec(name="dmkmg", k=k, dimension=dimension, decoder=decoder) for k in ks]
    table = run_comparison(trips, truth, specs, grouping, em_config, trajectory, seed, jobs)
    best = best_k_of([(int(row.k), row.report.global_match) for row in table.rows])
    logger.info(f"Best K over {ks[0]}..{ks[-1]} ({grouping.value}): {best}")
    return KSweepResult(table=table, best_k=best)


def parse_k_range(text: str) -> List[int]:
    """'2..6' or '2,3,5' into a list of K values"""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ValueError(f"empty K range: {text}")
        return list(range(lo, hi + 1))
    return [int(part) for part in text.split(",") if part.strip()]
