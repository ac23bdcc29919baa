"""Command-line entry point: ``ddeval <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ddeval import baselines, harness, oracle
from ddeval.classifier import ClassifierConfig, DdReport, accuracy, estimate_dd, train
from ddeval.corpus import (
    DEFAULT_MAX_LEN,
    Label,
    SplitSpec,
    Vocab,
    build_vocab,
    encode_lines,
    read_lines,
    split_corpus,
)
from ddeval.errors import DataError, NumericError
from ddeval.synthetic import GeneratorSpec, MarkovModel, fit_markov

log = logging.getLogger("ddeval")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_scalar(text: str) -> Any:
    if text.lower() in ("none", "null"):
        return None
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def _flag_value(default: Any, text: str) -> Any:
    if isinstance(default, (list, tuple)):
        return [_parse_scalar(x) for x in text.split(",") if x]
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes")
    return _parse_scalar(text)


def add_config_flags(parser: argparse.ArgumentParser, cls, skip: Sequence[str] = ()) -> None:
    """One ``--some-key`` flag per dataclass field; values parsed later against the default."""
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", default=None,
                            metavar="VALUE", help=f"override config key '{f.name}'")


def collect_overrides(args: argparse.Namespace, cls) -> dict:
    defaults = {f.name: (f.default if f.default is not dataclasses.MISSING else f.default_factory())
                for f in dataclasses.fields(cls)}
    out = {}
    for name, default in defaults.items():
        text = getattr(args, f"cfg_{name}", None)
        if text is not None:
            out[name] = _flag_value(default, text)
    return out


def _classifier_config(args: argparse.Namespace) -> ClassifierConfig:
    data: dict = {}
    if args.config:
        data.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
    overrides = collect_overrides(args, ClassifierConfig)
    if "conv_layers" in overrides:
        overrides["conv_layers"] = [tuple(int(v) for v in str(x).split(":")) for x in
                                    args.cfg_conv_layers.split(",")]
    if "split" in overrides:
        overrides["split"] = args.cfg_split.split(",")
    data.update(overrides)
    return harness.classifier_config_from_dict(data)


def _read_pair(args, max_len: int):
    real_lines = read_lines(args.real)
    vocab = Vocab.load(args.vocab) if args.vocab else build_vocab(real_lines)
    # both sides get the same blank-line policy so that one file read twice is one distribution
    keep = not args.skip_empty
    real = encode_lines(real_lines, vocab, Label.REAL, max_len=max_len, keep_empty=keep)
    generated = encode_lines(read_lines(args.generated), vocab, Label.GENERATED, max_len=max_len, keep_empty=keep)
    if len(real) == 0 or len(generated) == 0:
        raise DataError("empty corpus")
    return real, generated


def _emit(payload: dict, out: str | None) -> None:
    text = harness.dumps_report(harness._jsonable(payload))
    if out:
        Path(out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


# -- subcommands -------------------------------------------------------------------


def _require_out(args) -> None:
    if not args.out:
        raise UsageError(f"{args.command} needs --out")


def cmd_fit(args) -> int:
    _require_out(args)
    lines = read_lines(args.corpus)
    vocab = build_vocab(lines)
    corpus = encode_lines(lines, vocab, max_len=args.max_len, keep_empty=not args.skip_empty)
    model = fit_markov(corpus, args.order, args.alpha, max_len=args.max_len)
    model.save(args.out)
    if args.vocab_out:
        vocab.save(args.vocab_out)
    _emit({"command": "fit", "config": vars_clean(args), "vocab_size": model.vocab_size,
           "sequences": len(corpus), "skipped": corpus.skipped}, None)
    return EXIT_OK


def _load_generator(args) -> GeneratorSpec:
    base = MarkovModel.load(args.model)
    noise = MarkovModel.load(args.noise) if args.noise else None
    return GeneratorSpec(base, args.temperature, noise, args.lam)


def cmd_sample(args) -> int:
    _require_out(args)
    spec = _load_generator(args)
    vocab = Vocab.load(args.vocab) if args.vocab else None
    corpus = spec.sample(args.n, np.random.default_rng(args.seed), vocab)
    corpus.save(args.out)
    truncated = sum(len(s) == spec.max_len for s in corpus)
    _emit({"command": "sample", "config": vars_clean(args), "sequences": len(corpus),
           "truncated": truncated}, None)
    return EXIT_OK


def cmd_oracle(args) -> int:
    p, q = MarkovModel.load(args.p), MarkovModel.load(args.q)
    if args.mc:
        score = oracle.tv_mc(p, q, args.mc, args.seed)
    else:
        score = oracle.tv(p, q, args.budget, args.mc_samples, args.seed)
    _emit({"command": "oracle", "config": vars_clean(args), "dd": score.value, "score": score.to_dict()},
          args.out)
    return EXIT_OK


def cmd_train_clf(args) -> int:
    config = _classifier_config(args)
    real, generated = _read_pair(args, config.max_len)
    if args.checkpoint:
        result = train(config, real, generated, args.seed)
        result.model.save(args.checkpoint)
        r_test, g_test = result.splits["test"]
        acc = accuracy(result.model, r_test.sequences, g_test.sequences)
        report = DdReport.from_accuracy(acc, dev_accuracy=result.dev_accuracy, epochs_run=len(result.log),
                                        best_epoch=result.best_epoch,
                                        sizes={k: len(v[0]) for k, v in result.splits.items()},
                                        seed=args.seed, config=config.to_dict(), log=result.log)
    else:
        report = estimate_dd(real, generated, config, args.seed)
    _emit({"command": "train-clf", "config": vars_clean(args), "report": report.to_dict()}, args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    exp = harness.ExperimentConfig(families=[harness.FamilySpec("cli", "fraction")])
    overrides = collect_overrides(args, harness.ExperimentConfig)
    exp = dataclasses.replace(exp, **overrides)
    if args.clf_config:
        exp.classifier = json.loads(Path(args.clf_config).read_text(encoding="utf-8"))
    metrics = args.metrics.split(",") if args.metrics else list(harness.ALL_METRICS)
    unknown = set(metrics) - set(harness.ALL_METRICS)
    if unknown:
        raise UsageError(f"unknown metrics: {sorted(unknown)}")
    real, generated = _read_pair(args, DEFAULT_MAX_LEN)
    if args.real_test:
        real_test = encode_lines(read_lines(args.real_test), real.vocab, Label.REAL,
                                 keep_empty=not args.skip_empty)
    else:
        real, _, real_test = split_corpus(real, SplitSpec(Fraction(9, 10), Fraction(1, 20), Fraction(1, 20)))
    values = _score_corpora(real, real_test, generated, metrics, exp, args.seed)
    _emit({"command": "eval", "config": vars_clean(args), "metrics": values}, args.out)
    return EXIT_OK


def _score_corpora(real, real_test, generated, metrics, exp, seed) -> dict:
    out: dict[str, float] = {}
    for name in metrics:
        if name == "dd":
            out[name] = estimate_dd(real, generated, exp.classifier_config(DEFAULT_MAX_LEN), seed).dd_hat
        elif name == "bleu":
            out[name] = baselines.bleu(generated, real, exp.bleu_max_n)
        elif name == "selfbleu":
            out[name] = baselines.self_bleu(generated, exp.bleu_max_n, exp.selfbleu_cap, seed)
        elif name == "lm":
            out[name] = baselines.lm_score(real, generated, exp.kn_order, exp.kn_discount)
        elif name == "rlm":
            out[name] = baselines.reverse_lm_score(generated, real_test, exp.kn_order, exp.kn_discount)
        elif name == "fed":
            out[name] = baselines.fed(real, generated, baselines.EmbeddingModel(len(real.vocab), exp.fed_dim, seed))
    return out


def _experiment_config(args) -> harness.ExperimentConfig:
    data = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    data.update(collect_overrides(args, harness.ExperimentConfig))
    if args.seed is not None:
        data["seed"] = args.seed
    if args.metrics:
        data["metrics"] = args.metrics.split(",")
    if args.threads is not None:
        data["threads"] = args.threads
    if "families" not in data:
        raise UsageError("an experiment config with 'families' is required (--config)")
    return harness.ExperimentConfig.from_dict(data)


def cmd_rank(args) -> int:
    config = _experiment_config(args)
    try:
        report = harness.run_experiment(config)
    except harness.ExperimentError as exc:
        if args.out:
            harness.write_report(exc.partial_report, args.out)
        raise exc.__cause__ from None
    if args.csv:
        harness.write_csv(report, args.csv)
    _emit(report, args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _experiment_config(args)
    temps = config.temperatures
    real, reference = harness.prepare_real_data(config)
    families = harness.build_families(config, real, reference)
    names = [f.name for f in config.families]
    fi = names.index(args.family) if args.family else 0
    gens = families[fi]
    if not 0 <= args.generator < len(gens):
        raise UsageError(f"generator index {args.generator} out of range for family {names[fi]!r}")
    gen = gens[args.generator]
    seed = harness.derive_seed(config.seed, fi, args.generator)
    rows = harness.temperature_sweep(gen, real, temps, config.metrics, config, seed)
    _emit({"command": "sweep", "config_echo": config.to_dict(), "generator": gen.name, "rows": rows}, args.out)
    return EXIT_OK


def vars_clean(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func" and v is not None}


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--out", default=None, help="write the JSON result here as well as to stdout")
    text = argparse.ArgumentParser(add_help=False)
    text.add_argument("--skip-empty", action="store_true",
                      help="drop blank lines instead of reading them as empty sentences")

    p = _Parser(prog="ddeval", description="Distributional-discrepancy evaluation of sequence generators.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("fit", parents=[common, text], help="fit a Markov chain to a corpus file")
    s.add_argument("--corpus", required=True)
    s.add_argument("--order", type=int, default=1)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
    s.add_argument("--vocab-out", default=None)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("sample", parents=[common], help="write sentences sampled from a model file")
    s.add_argument("--model", required=True)
    s.add_argument("--n", type=int, default=320_000)
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--noise", default=None)
    s.add_argument("--lam", type=float, default=0.0)
    s.add_argument("--vocab", default=None)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("oracle", parents=[common], help="exact or Monte-Carlo DD between two model files")
    s.add_argument("--p", required=True)
    s.add_argument("--q", required=True)
    s.add_argument("--mc", type=int, default=None, help="force Monte-Carlo with this many samples per side")
    s.add_argument("--budget", type=int, default=oracle.DEFAULT_BUDGET)
    s.add_argument("--mc-samples", type=int, default=oracle.DEFAULT_MC_SAMPLES)
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("train-clf", parents=[common, text],
                       help="train the discriminator and report the DD estimate")
    s.add_argument("--real", required=True)
    s.add_argument("--generated", required=True)
    s.add_argument("--vocab", default=None)
    s.add_argument("--config", default=None, help="JSON file of classifier settings")
    s.add_argument("--checkpoint", default=None)
    add_config_flags(s, ClassifierConfig)
    s.set_defaults(func=cmd_train_clf)

    s = sub.add_parser("eval", parents=[common, text], help="score any metric subset for two corpora")
    s.add_argument("--real", required=True)
    s.add_argument("--generated", required=True)
    s.add_argument("--real-test", default=None)
    s.add_argument("--vocab", default=None)
    s.add_argument("--metrics", default=None, help="comma list of " + ",".join(harness.ALL_METRICS))
    s.add_argument("--clf-config", default=None)
    add_config_flags(s, harness.ExperimentConfig, skip=("reference", "families", "metrics", "seed", "threads",
                                                         "classifier", "schema_version", "temperatures"))
    s.set_defaults(func=cmd_eval)

    for name, func, helptext in (("rank", cmd_rank, "run a full experiment config"),
                                 ("sweep", cmd_sweep, "temperature sweep of one generator")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--config", default=None)
        s.add_argument("--metrics", default=None)
        add_config_flags(s, harness.ExperimentConfig, skip=("reference", "families", "metrics", "seed",
                                                             "threads", "classifier"))
        if name == "rank":
            s.add_argument("--csv", default=None)
        else:
            s.add_argument("--family", default=None)
            s.add_argument("--generator", type=int, default=0)
        s.set_defaults(func=func)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("DDEVAL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("fit", "sample", "oracle", "train-clf", "eval") and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ddeval: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"ddeval: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, IsADirectoryError, ValueError, json.JSONDecodeError) as exc:
        print(f"ddeval: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
