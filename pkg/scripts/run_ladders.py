"""Run the shipped ladder experiments and print the tau table for each.

    python scripts/run_ladders.py [--out-dir results] [--configs configs/lambda_ladder.json ...]
"""

import argparse
import logging
from pathlib import Path

from ddeval.harness import ExperimentConfig, run_experiment, write_csv, write_report

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--configs", nargs="+", type=Path,
                        default=[ROOT / "configs" / "lambda_ladder.json", ROOT / "configs" / "fraction_ladder.json"])
    parser.add_argument("--out-dir", type=Path, default=ROOT / "results")
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    args.out_dir.mkdir(parents=True, exist_ok=True)

    for path in args.configs:
        config = ExperimentConfig.load(path)
        config.threads = args.threads
        report = run_experiment(config)
        stem = args.out_dir / path.stem
        write_report(report, stem.with_suffix(".json"))
        write_csv(report, stem.with_suffix(".csv"))

        print(f"\n== {config.name} ({report['timing']['runtime_s']:.0f}s)")
        for cell in report["per_cell_metrics"]:
            values = "  ".join(f"{k}={v:.4f}" for k, v in sorted(cell["metrics"].items()))
            print(f"{cell['generator']:<18} T={cell['temperature']:<4g} {values}")
        for tkey, groups in report["tau_table"].items():
            for group, entries in groups.items():
                taus = "  ".join(f"{m}={e['tau'] if e['tau'] is None else round(e['tau'], 2)}"
                                 for m, e in entries.items())
                print(f"tau {tkey} {group}: {taus}")


if __name__ == "__main__":
    main()
