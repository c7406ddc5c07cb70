#!/usr/bin/env python3
"""
trawlwatch scale check
Runs the full command-line pipeline on a simulated fleet of production size:
simulate -> fit vessel by vessel (K = 3) -> classify -> effort-map
and reports the wall time of every stage
"""

import json
import sys
import tempfile
import time
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional

import psutil

# Add project root to path for imports
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from trawlwatch.main import main as trawlwatch_main

TIME_BUDGET_S = 600.0


def run_scale_check(n_vessels: int = 131, trips_per_vessel: int = 49, seed: int = 2009,
                    jobs: Optional[int] = None, workdir: Optional[str] = None) -> Dict:
    """Run every stage once and return per-stage wall times in seconds"""
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        root = Path(tmp)
        pings, truth = root / "pings.csv", root / "truth.csv"
        models, activities, grid = root / "models", root / "activities.csv", root / "effort.csv"
        common = ["--seed", str(seed), "-q"] + (["--jobs", str(jobs)] if jobs else [])

        stages = [
            ("simulate", ["simulate", "--scenario", "dmkmg3", "--vessels", str(n_vessels),
                          "--trips", str(trips_per_vessel), "--out", str(pings), "--truth", str(truth)]),
            ("fit", ["fit", "-i", str(pings), "--k", "3", "--grouping", "vessel", "--out", str(models)]),
            ("classify", ["classify", "-i", str(pings), "--models", str(models), "--out", str(activities)]),
            ("effort-map", ["effort-map", "-i", str(pings), "--activities", str(activities), "--out", str(grid)]),
        ]

        timings: Dict[str, float] = {}
        for name, args in stages:
            start = time.perf_counter()
            code = trawlwatch_main(args + common)
            timings[name] = time.perf_counter() - start
            if code != 0:
                raise RuntimeError(f"stage '{name}' exited with code {code}")
            print(f"{name:<12} {timings[name]:8.1f} s")

    return {
        "timestamp": datetime.now().isoformat(),
        "n_vessels": n_vessels,
        "n_trips": n_vessels * trips_per_vessel,
        "seed": seed,
        "cpu_count": psutil.cpu_count(logical=True),
        "memory_gb": round(psutil.virtual_memory().total / 1024 ** 3, 1),
        "stages": timings,
        "total_s": sum(timings.values()),
        "budget_s": TIME_BUDGET_S,
    }


def main():
    """Main function"""
    import argparse

    parser = argparse.ArgumentParser(description="trawlwatch pipeline scale check")
    parser.add_argument("--vessels", type=int, default=131, help="Number of simulated vessels")
    parser.add_argument("--trips", type=int, default=49, help="Trips per vessel")
    parser.add_argument("--seed", type=int, default=2009, help="Master seed")
    parser.add_argument("--jobs", type=int, help="Worker processes (default: available processors)")
    parser.add_argument("-o", "--output", type=str, help="Save results to this JSON file")
    args = parser.parse_args()

    print(f"Scale check: {args.vessels} vessels x {args.trips} trips")
    try:
        results = run_scale_check(args.vessels, args.trips, args.seed, args.jobs)
    except KeyboardInterrupt:
        print("\nScale check interrupted")
        sys.exit(1)
    except RuntimeError as e:
        print(f"\nScale check failed: {e}")
        sys.exit(1)

    within = results["total_s"] <= TIME_BUDGET_S
    print(f"Total {results['total_s']:.1f} s on {results['cpu_count']} CPUs "
          f"({'within' if within else 'over'} the {TIME_BUDGET_S:.0f} s budget)")

    if args.output:
        with open(args.output, "w") as f:
            json.dump(results, f, indent=2)
        print(f"Results saved to: {args.output}")

    sys.exit(0 if within else 1)


if __name__ == "__main__":
    main()
