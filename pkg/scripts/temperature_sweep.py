"""Re-sample one generator at several softmax temperatures and score every metric.

Writes a CSV of (temperature, metric, value) rows.  How self-BLEU and LM
score move with temperature depends on the fixture; on the shipped V=4
ladder both rise with T.

    python scripts/temperature_sweep.py --config configs/lambda_ladder.json --generator 2
"""

import argparse
import csv
from pathlib import Path

from ddeval.harness import (
    DEFAULT_TEMPERATURES, ExperimentConfig, build_families, derive_seed, prepare_real_data, temperature_sweep,
)

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", type=Path, default=ROOT / "configs" / "lambda_ladder.json")
    parser.add_argument("--family", type=int, default=0)
    parser.add_argument("--generator", type=int, default=0)
    parser.add_argument("--temperatures", type=float, nargs="+", default=list(DEFAULT_TEMPERATURES))
    parser.add_argument("--metrics", default="bleu,selfbleu,lm,rlm,fed",
                        help="comma list; add dd to train one classifier per temperature")
    parser.add_argument("--out", type=Path, default=ROOT / "results" / "temperature_sweep.csv")
    args = parser.parse_args()

    config = ExperimentConfig.load(args.config)
    real, reference = prepare_real_data(config)
    generator = build_families(config, real, reference)[args.family][args.generator]
    seed = derive_seed(config.seed, args.family, args.generator)
    rows = temperature_sweep(generator, real, args.temperatures, args.metrics.split(","), config, seed)

    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["temperature", "metric", "value"])
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(f"T={row['temperature']:<4g} {row['metric']:<10} {row['value']:.4f}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
