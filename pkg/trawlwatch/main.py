#!/usr/bin/env python3
"""
trawlwatch command-line interface
simulate -> fit -> classify -> evaluate -> effort-map, sharing one configuration
(built-in defaults, YAML file, TRAWLWATCH_* environment, command-line flags)
"""

import argparse
import io
import logging
import logging.handlers
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import yaml

from . import __version__
from .analysis.effort import BoundingBox, extract_trawl_events, grid_effort, write_effort_csv
from .analysis.evaluation import ComparisonTable, parse_k_range, run_comparison, sweep_k
from .analysis.pipeline import GroupingMode, MethodSpec, classify_unit, fit_all, group_trips, prepare_trip
from .config.run_config import DECODERS, GROUPINGS, METHODS, ConfigManager, LoggingConfig
from .errors import TrawlwatchError
from .models.gaussian_hmm import DIMENSIONS
from .models.model_io import load_models, model_filename, save_model, write_atomic
from .simulation.scenarios import BUILTIN_SCENARIOS, load_scenario
from .simulation.simulator import simulate_fleet
from .tracking.activity import Activity, read_activity_csv
from .tracking.vms_reader import TIMESTAMP_FORMAT, Trip, load_trips

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
CLASSIFY_COLUMNS = ["vessel_id", "trip_id", "step_index", "timestamp", "activity", "component"]
META_SUFFIX = ".meta.yaml"


def _component_count(text: str) -> int:
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid K: '{text}'")
    if k < 2:
        raise argparse.ArgumentTypeError(f"K must be >= 2 (labelling needs at least two components), got {k}")
    return k


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer: '{text}'")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number: '{text}'")
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def _bbox(text: str) -> List[float]:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("bbox needs LAT_MIN,LAT_MAX,LON_MIN,LON_MAX")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid bbox: '{text}'")


def _choice_list(choices):
    def parse(text: str) -> List[str]:
        values = [p.strip() for p in text.split(",") if p.strip()]
        unknown = [v for v in values if v not in choices]
        if not values or unknown:
            raise argparse.ArgumentTypeError(
                f"expected a comma-separated list of {', '.join(choices)}, got '{text}'")
        return values
    return parse


def _k_range(text: str) -> List[int]:
    try:
        ks = parse_k_range(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid K range: '{text}' (use 2..6 or 2,3,5)")
    if not ks or min(ks) < 2:
        raise argparse.ArgumentTypeError(f"every K must be >= 2, got '{text}'")
    return ks


def build_parser() -> argparse.ArgumentParser:
    """Argument parser for every subcommand; shared flags come from parent parsers"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-c', '--config', type=str, help='Configuration file path')
    common.add_argument('--seed', type=int, help='Seed for every random draw of the run')
    common.add_argument('--jobs', type=_positive_int, help='Worker processes (default: available processors)')
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('-q', '--quiet', action='store_true', help='Only log warnings and errors')
    verbosity.add_argument('-v', '--verbose', action='store_true', help='Enable verbose logging')

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument('-i', '--input', required=True, help='VMS ping CSV')
    data.add_argument('--gap-hours', type=_positive_float,
                      help='Gap between pings that starts a new trip when trip_id is absent (default 24)')

    parser = argparse.ArgumentParser(prog='trawlwatch',
                                     description='Fishing activity detection and effort mapping from VMS data')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', metavar='COMMAND')
    sub.required = True

    sim = sub.add_parser('simulate', parents=[common], help='Simulate a fleet with known activities')
    sim.add_argument('--scenario', default='dmkmg2',
                     help=f"Built-in scenario ({', '.join(sorted(BUILTIN_SCENARIOS))}) or scenario YAML file")
    sim.add_argument('--vessels', type=_positive_int, default=1, help='Number of vessels')
    sim.add_argument('--trips', type=_positive_int, default=1, help='Trips per vessel')
    sim.add_argument('--out', required=True, help='Output ping CSV')
    sim.add_argument('--truth', required=True, help='Output ground-truth activity CSV')

    fit = sub.add_parser('fit', parents=[common, data], help='Fit one model per grouping unit')
    fit.add_argument('--method', choices=METHODS, help='Model family (default dmkmg)')
    fit.add_argument('--k', type=_component_count, help='Number of Gaussian components, >= 2 (default 3)')
    fit.add_argument('--grouping', choices=GROUPINGS, help='One model for all data, per vessel or per trip')
    fit.add_argument('--dimension', choices=DIMENSIONS, help='Observation vector (default speed)')
    fit.add_argument('--per-coordinate-rho', action='store_true',
                     help='Autoregressive model: one coefficient per coordinate')
    fit.add_argument('--lo', type=float, help='Threshold method: lower fishing speed (knots)')
    fit.add_argument('--hi', type=float, help='Threshold method: upper fishing speed (knots)')
    fit.add_argument('--reported-speed', action='store_true', help='Use reported speeds where present')
    fit.add_argument('--out', required=True, help='Output directory for model files')

    cls = sub.add_parser('classify', parents=[common, data], help='Label every step with fitted models')
    cls.add_argument('--models', required=True, help='Model file or directory of model files')
    cls.add_argument('--decoder', choices=DECODERS, help='State decoder (default viterbi)')
    cls.add_argument('--dimension', choices=DIMENSIONS, help='Require models of this observation vector')
    cls.add_argument('--reported-speed', action='store_true', help='Use reported speeds where present')
    cls.add_argument('--out', required=True, help='Output activity CSV')

    ev = sub.add_parser('evaluate', parents=[common, data], help='Score methods against ground truth')
    ev.add_argument('--truth', required=True, help='Ground-truth activity CSV')
    ev.add_argument('--methods', type=_choice_list(METHODS), help='Comma-separated methods (default dmkmg)')
    ev.add_argument('--grouping', dest='groupings', type=_choice_list(GROUPINGS),
                    help='Comma-separated grouping modes (default all)')
    ev.add_argument('--k', type=_component_count, help='Components of the Gaussian model (default 3)')
    ev.add_argument('--dimensions', type=_choice_list(DIMENSIONS),
                    help='Comma-separated observation vectors for the Gaussian model')
    ev.add_argument('--k-sweep', type=_k_range, metavar='RANGE',
                    help='Score the Gaussian model for every K in RANGE (2..6 or 2,3,5) and report the best')
    ev.add_argument('--decoder', choices=DECODERS, help='State decoder (default viterbi)')
    ev.add_argument('--lo', type=float, help='Threshold method: lower fishing speed (knots)')
    ev.add_argument('--hi', type=float, help='Threshold method: upper fishing speed (knots)')
    ev.add_argument('--reported-speed', action='store_true', help='Use reported speeds where present')
    ev.add_argument('--no-timing', action='store_true', help='Leave wall_s empty in the CSV')
    ev.add_argument('--out', help='Output comparison CSV')

    eff = sub.add_parser('effort-map', parents=[common, data], help='Grid Fishing hours')
    eff.add_argument('--activities', required=True, help='Activity CSV from classify')
    eff.add_argument('--cell', type=_positive_float, help='Cell size in degrees (default 0.05)')
    eff.add_argument('--bbox', type=_bbox, help='LAT_MIN,LAT_MAX,LON_MIN,LON_MAX (default: covering the data)')
    eff.add_argument('--include-empty', action='store_true', help='Also write cells with zero hours')
    eff.add_argument('--out', required=True, help='Output grid CSV; metadata goes beside it')
    return parser


def _setup_logging(quiet: bool, verbose: bool):
    level = logging.WARNING if quiet else (logging.DEBUG if verbose else logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def _attach_file_handler(cfg: LoggingConfig, quiet: bool, verbose: bool):
    root = logging.getLogger()
    if not (quiet or verbose):
        root.setLevel(getattr(logging, str(cfg.level).upper(), logging.INFO))
    if cfg.file:
        Path(cfg.file).parent.mkdir(parents=True, exist_ok=True)
        handler = logging.handlers.RotatingFileHandler(
            cfg.file, maxBytes=int(cfg.max_size_mb) * 1024 * 1024, backupCount=int(cfg.backup_count))
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)


def _csv_text(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, lineterminator="\n")


def _meta_path(out: str) -> Path:
    path = Path(out)
    return path.with_name(path.stem + META_SUFFIX)


class TrawlwatchApplication:
    """One subcommand run against the layered configuration"""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.logger = logging.getLogger(__name__)
        self.config_manager = ConfigManager(config_file=args.config)
        self.config = self.config_manager.load_config(self._overrides(args))
        _attach_file_handler(self.config.logging, args.quiet, args.verbose)

    @staticmethod
    def _overrides(args: argparse.Namespace) -> Dict:
        def flag(name: str) -> Optional[bool]:
            return True if getattr(args, name, False) else None

        return {
            "em": {"seed": args.seed},
            "runtime": {"jobs": args.jobs},
            "trajectory": {
                "gap_threshold_hours": getattr(args, "gap_hours", None),
                "use_reported_speed": flag("reported_speed"),
            },
            "model": {
                "method": getattr(args, "method", None),
                "k": getattr(args, "k", None),
                "grouping": getattr(args, "grouping", None),
                "dimension": getattr(args, "dimension", None),
                "decoder": getattr(args, "decoder", None),
                "per_coordinate_rho": flag("per_coordinate_rho"),
            },
            "thresholds": {"lo": getattr(args, "lo", None), "hi": getattr(args, "hi", None)},
            "effort": {"cell_degrees": getattr(args, "cell", None), "bbox": getattr(args, "bbox", None)},
        }

    def run(self) -> int:
        handler = getattr(self, f"cmd_{self.args.command.replace('-', '_')}")
        return handler()

    def _load_trips(self) -> List[Trip]:
        trips = load_trips(self.args.input, self.config.trajectory.gap_threshold_hours)
        self.logger.info(f"Loaded {len(trips)} trips from {self.args.input}")
        return trips

    def _method_spec(self, method: Optional[str] = None, dimension: Optional[str] = None,
                     k: Optional[int] = None) -> MethodSpec:
        model = self.config.model
        return MethodSpec(
            name=method or model.method,
            k=k or model.k,
            dimension=dimension or model.dimension,
            decoder=model.decoder,
            per_coordinate_rho=model.per_coordinate_rho,
            thresholds=self.config.thresholds.to_config(),
        )

    def cmd_simulate(self) -> int:
        scenario = load_scenario(self.args.scenario)
        fleet = simulate_fleet(scenario, self.args.vessels, self.args.trips, self.config.seed)

        pings, truth = io.StringIO(), io.StringIO()
        fleet.write(pings, truth)
        write_atomic(self.args.out, pings.getvalue())
        write_atomic(self.args.truth, truth.getvalue())
        print(f"Simulated {len(fleet.trips)} trips ({fleet.n_steps} steps) from scenario '{scenario.name}'")
        print(f"Pings: {self.args.out}")
        print(f"Truth: {self.args.truth}")
        return 0

    def cmd_fit(self) -> int:
        trips = self._load_trips()
        spec = self._method_spec()
        grouping = GroupingMode.from_name(self.config.model.grouping)
        prepared = [prepare_trip(trip, self.config.trajectory) for trip in trips]

        start = time.perf_counter()
        results = fit_all(prepared, spec, grouping, self.config.em, self.config.seed, self.config.jobs)
        out_dir = Path(self.args.out)
        out_dir.mkdir(parents=True, exist_ok=True)

        failed = 0
        for result in results:
            artifact = result.artifact
            path = out_dir / model_filename(grouping.value, artifact.vessel_id, artifact.trip_id)
            save_model(artifact, path)
            unit = "/".join(p for p in result.key if p is not None) or "all"
            if not result.ok:
                failed += 1
                print(f"{unit}: FAILED ({artifact.failure}), wall {result.wall_s:.2f} s")
            elif spec.name == "threshold":
                print(f"{unit}: lo={artifact.params.lo:.3f} hi={artifact.params.hi:.3f}, wall {result.wall_s:.2f} s")
            else:
                d = artifact.diagnostics
                print(f"{unit}: logL={d['log_likelihood']:.4f} iterations={d['iterations']} "
                      f"wall {result.wall_s:.2f} s BIC={d['bic']:.4f}")

        print(f"{len(results) - failed}/{len(results)} unit(s) fitted in {time.perf_counter() - start:.2f} s; "
              f"models in {out_dir}")
        if results and failed == len(results):
            self.logger.error("Every unit failed to fit")
            return 1
        return 0

    def cmd_classify(self) -> int:
        artifacts = load_models(self.args.models)
        grouping = GroupingMode.from_name(artifacts[0].grouping)
        by_unit = {artifact.unit_key: artifact for artifact in artifacts}
        trips = self._load_trips()
        prepared = [prepare_trip(trip, self.config.trajectory) for trip in trips]
        decoder = self.config.model.decoder

        activities: Dict = {}
        components: Dict = {}
        for key, members in group_trips(prepared, grouping).items():
            artifact = by_unit.get(key)
            if artifact is None:
                unit = "/".join(p for p in key if p is not None) or "all"
                self.logger.warning(f"No model for unit {unit}; its steps are left unestimated")
            acts, comps = classify_unit(artifact, members, decoder, self.args.dimension)
            activities.update(acts)
            components.update(comps)

        frames = [self._classified_frame(trip, activities[trip.key], components[trip.key]) for trip in trips]
        frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=CLASSIFY_COLUMNS)
        write_atomic(self.args.out, _csv_text(frame))

        n_fishing = int((frame["activity"] == Activity.FISHING.label).sum()) if len(frame) else 0
        n_missing = int((frame["activity"] == Activity.UNESTIMATED.label).sum()) if len(frame) else 0
        print(f"Classified {len(frame)} steps of {len(trips)} trips: {n_fishing} fishing, "
              f"{n_missing} unestimated; written to {self.args.out}")
        return 0

    @staticmethod
    def _classified_frame(trip: Trip, activity: np.ndarray, component: np.ndarray) -> pd.DataFrame:
        n = trip.n_intervals
        estimated = (np.asarray(activity) != int(Activity.UNESTIMATED)) & (np.asarray(component) >= 0)
        return pd.DataFrame({
            "vessel_id": [trip.vessel_id] * n,
            "trip_id": [trip.trip_id] * n,
            "step_index": np.arange(n),
            "timestamp": [p.timestamp.strftime(TIMESTAMP_FORMAT) for p in trip.pings[:n]],
            "activity": [Activity(int(a)).label for a in activity],
            "component": [str(int(c) + 1) if e else "" for c, e in zip(component, estimated)],
        }, columns=CLASSIFY_COLUMNS)

    def cmd_evaluate(self) -> int:
        trips = self._load_trips()
        truth = read_activity_csv(self.args.truth)
        groupings = [GroupingMode.from_name(g) for g in (self.args.groupings or [self.config.model.grouping])]
        dimensions = self.args.dimensions or [self.config.model.dimension]
        cfg = self.config

        table = ComparisonTable()
        best: List[str] = []
        for grouping in groupings:
            if self.args.k_sweep:
                for dimension in dimensions:
                    result = sweep_k(trips, truth, self.args.k_sweep, grouping, cfg.em, cfg.trajectory,
                                     cfg.seed, cfg.jobs, dimension=dimension, decoder=cfg.model.decoder)
                    table.extend(result.table)
                    best.append(f"Best K ({grouping.value}, {dimension}): {result.best_k}")
                continue

            specs = []
            for method in self.args.methods or [cfg.model.method]:
                if method == "dmkmg":
                    specs.extend(self._method_spec(method, dimension) for dimension in dimensions)
                else:
                    specs.append(self._method_spec(method))
            table.extend(run_comparison(trips, truth, specs, grouping, cfg.em, cfg.trajectory,
                                        cfg.seed, cfg.jobs))

        if self.args.out:
            buffer = io.StringIO()
            table.write_csv(buffer, timing=not self.args.no_timing)
            write_atomic(self.args.out, buffer.getvalue())
        print(table.format_table())
        for line in best:
            print(line)
        return 0

    def cmd_effort_map(self) -> int:
        trips = self._load_trips()
        activities = read_activity_csv(self.args.activities)
        cell = self.config.effort.cell_degrees

        events = []
        missing = 0
        for trip in trips:
            activity = activities.get(trip.key)
            if activity is None:
                missing += 1
                continue
            events.extend(extract_trawl_events(activity, trip))
        if missing:
            self.logger.warning(f"{missing} trip(s) have no activities and contribute no effort")

        bbox_values = self.config.effort.bbox
        bbox = BoundingBox.from_sequence(bbox_values) if bbox_values else BoundingBox.covering(trips, cell, cell)
        grid = grid_effort(events, cell, bbox)

        buffer = io.StringIO()
        write_effort_csv(grid, buffer, include_empty=self.args.include_empty)
        write_atomic(self.args.out, buffer.getvalue())

        metadata = grid.metadata()
        metadata["n_trips"] = len(trips)
        metadata["trips_without_activities"] = missing
        meta_path = _meta_path(self.args.out)
        write_atomic(meta_path, yaml.safe_dump(metadata, default_flow_style=False, sort_keys=False))

        print(f"{grid.n_events} trawling events, {grid.total_hours:.2f} fishing hours in {grid.n_lat}x{grid.n_lon} "
              f"cells ({grid.outside_hours:.2f} h outside), mean event {grid.mean_event_hours:.2f} h")
        print(f"Grid: {self.args.out}")
        print(f"Metadata: {meta_path}")
        return 0


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.quiet, args.verbose)
    logger = logging.getLogger(__name__)

    try:
        app = TrawlwatchApplication(args)
        return app.run()
    except TrawlwatchError as e:
        logger.error(f"{args.command}: {e}")
    except (ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
    return 1


if __name__ == "__main__":
    sys.exit(main())
