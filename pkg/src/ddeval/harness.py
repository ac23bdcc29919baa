"""Experiment orchestration: generator families, metric tables, gold orders and Kendall's tau.

An experiment samples a reference corpus, builds one or more generator
families (interpolation ladders or training-fraction ladders), scores every
(generator, temperature) cell with the configured metrics, and compares each
metric's ranking with the gold order inside every family and pooled across
families.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ddeval import oracle
from ddeval.baselines import EmbeddingModel, bleu, fed, lm_score, reverse_lm_score, self_bleu
from ddeval.classifier import ClassifierConfig, estimate_dd
from ddeval.corpus import (
    DEFAULT_MAX_LEN,
    Corpus,
    Label,
    Ordering,
    SplitSpec,
    build_vocab,
    encode_lines,
    read_lines,
    split_corpus,
)
from ddeval.errors import DataError
from ddeval.synthetic import GeneratorSpec, MarkovModel, fraction_ladder, lambda_ladder

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ALL_METRICS = ("dd", "bleu", "selfbleu", "lm", "rlm", "fed")
# True where a larger value means a better generator
HIGHER_IS_BETTER = {"dd": False, "dd_oracle": False, "bleu": True, "selfbleu": False, "lm": False,
                    "rlm": False, "fed": False}
DEFAULT_TEMPERATURES = (0.8, 0.9, 1.0, 1.1, 1.2)


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=tuple(keys)).generate_state(1)[0])


# -- configuration ---------------------------------------------------------------


@dataclass
class ModelSpec:
    """A random reference/noise chain, or a model file, or (reference only) a corpus file."""

    vocab_size: int = 4
    order: int = 1
    max_len: int = 4
    concentration: float = 0.5
    eos_weight: float = 1.0
    seed: int = 0
    path: str | None = None
    corpus: str | None = None

    def build(self) -> MarkovModel:
        if self.path:
            return MarkovModel.load(self.path)
        return MarkovModel.random(self.vocab_size, self.order, self.max_len, self.concentration,
                                  self.eos_weight, self.seed)


@dataclass
class FamilySpec:
    name: str
    kind: str  # "lambda" | "fraction"
    lambdas: list[float] = field(default_factory=lambda: [0.2, 0.4, 0.6, 0.8, 1.0])
    noise: ModelSpec | None = None
    fractions: list[float] = field(default_factory=lambda: [0.2, 0.4, 0.6, 0.8, 1.0])
    order: int = 1
    alpha: float = 1.0
    fit_size: int = 100
    fit_seed: int = 7

    def __post_init__(self):
        if self.kind not in ("lambda", "fraction"):
            raise DataError(f"unknown family kind {self.kind!r}")
        if isinstance(self.noise, dict):
            self.noise = ModelSpec(**self.noise)
        if self.kind == "lambda" and self.noise is None:
            raise DataError(f"family {self.name!r}: a lambda ladder needs a noise model")


@dataclass
class ExperimentConfig:
    reference: ModelSpec = field(default_factory=ModelSpec)
    families: list[FamilySpec] = field(default_factory=list)
    temperatures: list[float] = field(default_factory=lambda: list(DEFAULT_TEMPERATURES))
    n_samples: int = 20_000
    n_real_test: int = 2_000
    metrics: list[str] = field(default_factory=lambda: list(ALL_METRICS))
    seed: int = 0
    classifier: dict = field(default_factory=dict)
    bleu_max_n: int = 5
    selfbleu_cap: int = 1000
    baseline_cap: int | None = 2000
    kn_order: int = 5
    kn_discount: float = 0.75
    fed_dim: int = 128
    oracle_budget: int = oracle.DEFAULT_BUDGET
    oracle_mc_samples: int = oracle.DEFAULT_MC_SAMPLES
    tie_decimals: int | None = None
    threads: int = 1
    name: str = "experiment"
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if isinstance(self.reference, dict):
            self.reference = ModelSpec(**self.reference)
        self.families = [FamilySpec(**f) if isinstance(f, dict) else f for f in self.families]
        if not self.families:
            raise DataError("an experiment needs at least one generator family")
        if any(t <= 0 for t in self.temperatures) or not self.temperatures:
            raise DataError("temperatures must be positive and non-empty")
        unknown = set(self.metrics) - set(ALL_METRICS)
        if unknown:
            raise DataError(f"unknown metrics: {sorted(unknown)}")
        if self.schema_version != SCHEMA_VERSION:
            raise DataError(f"unsupported config schema version {self.schema_version}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise DataError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def classifier_config(self, max_len: int) -> ClassifierConfig:
        return classifier_config_from_dict(self.classifier, max_len)


def classifier_config_from_dict(data: dict, max_len: int | None = None) -> ClassifierConfig:
    data = dict(data)
    split = data.pop("split", None)
    if split is not None:
        if isinstance(split, dict):
            fr = [Fraction(x) for x in split["fractions"]]
            ordering = Ordering(split.get("ordering", "sequential"))
            data["split"] = SplitSpec(*fr, ordering=ordering, seed=split.get("seed", 0))
        else:
            data["split"] = SplitSpec(*(Fraction(str(x)) for x in split))
    if "conv_layers" in data:
        data["conv_layers"] = tuple(tuple(layer) for layer in data["conv_layers"])
    if max_len is not None:
        data.setdefault("max_len", max_len)
    return ClassifierConfig(**data)


# -- ranking ---------------------------------------------------------------------


def kendall_tau(rank_a: Sequence, rank_b: Sequence) -> float:
    """Kendall's tau-a between two orderings of the same items (best first)."""
    n = len(rank_a)
    if n < 2:
        raise ValueError("Kendall's tau needs at least two items")
    if sorted(rank_a) != sorted(rank_b) or len(set(rank_a)) != n:
        raise ValueError("rankings must be permutations of the same distinct items")
    pos_a = {item: i for i, item in enumerate(rank_a)}
    pos_b = {item: i for i, item in enumerate(rank_b)}
    items = list(rank_a)
    score = 0
    for i in range(n):
        for j in range(i + 1, n):
            x, y = items[i], items[j]
            score += 1 if (pos_a[x] - pos_a[y]) * (pos_b[x] - pos_b[y]) > 0 else -1
    return score / (n * (n - 1) / 2)


def rank_by(values: Sequence[float], higher_is_better: bool = False, decimals: int | None = None
            ) -> tuple[list[int], list[list[int]]]:
    """Indices best first; ties keep declaration order. Also returns the tie groups."""
    keyed = [round(v, decimals) if decimals is not None else v for v in values]
    sign = -1.0 if higher_is_better else 1.0
    order = sorted(range(len(values)), key=lambda i: (sign * keyed[i], i))
    groups: dict[float, list[int]] = {}
    for i in order:
        groups.setdefault(keyed[i], []).append(i)
    return order, [g for g in groups.values() if len(g) > 1]


# -- scoring ---------------------------------------------------------------------


@dataclass
class RealData:
    train: Corpus
    test: Corpus
    reference: MarkovModel | None


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    return obj


def _cap(corpus: Corpus, cap: int | None, seed: int) -> Corpus:
    if cap is None or len(corpus) <= cap:
        return corpus
    return corpus.subset(np.sort(np.random.default_rng(seed).choice(len(corpus), cap, replace=False)))


def score_generator(spec: GeneratorSpec, real: RealData, config: ExperimentConfig, seed: int,
                    metrics: Sequence[str] | None = None) -> dict:
    """Sample from ``spec`` and evaluate every requested metric against ``real``."""
    metrics = list(config.metrics if metrics is None else metrics)
    n = len(real.train)
    generated = spec.sample(n, np.random.default_rng(derive_seed(seed, 0)), real.train.vocab)
    values: dict[str, float] = {}
    extra: dict[str, Any] = {}
    if real.reference is not None:
        score = oracle.tv(real.reference, spec, config.oracle_budget, config.oracle_mc_samples,
                          derive_seed(seed, 1))
        values["dd_oracle"] = score.value
        extra["oracle"] = score.to_dict()
    cand = _cap(generated, config.baseline_cap, derive_seed(seed, 2))
    refs = _cap(real.train, config.baseline_cap, derive_seed(seed, 3))
    for name in metrics:
        if name == "dd":
            report = estimate_dd(real.train, generated, config.classifier_config(spec.max_len), derive_seed(seed, 4))
            values["dd"] = report.dd_hat
            summary = report.to_dict()
            extra["training_log"] = summary.pop("log")
            extra["dd_report"] = summary
        elif name == "bleu":
            values["bleu"] = bleu(cand, refs, config.bleu_max_n)
        elif name == "selfbleu":
            values["selfbleu"] = self_bleu(generated, config.bleu_max_n, config.selfbleu_cap, derive_seed(seed, 5))
        elif name == "lm":
            values["lm"] = lm_score(refs, cand, config.kn_order, config.kn_discount)
        elif name == "rlm":
            values["rlm"] = reverse_lm_score(cand, real.test, config.kn_order, config.kn_discount)
        elif name == "fed":
            emb = EmbeddingModel(len(real.train.vocab), config.fed_dim, config.seed)
            values["fed"] = fed(refs, cand, emb)
    return {"metrics": values, **extra}


def prepare_real_data(config: ExperimentConfig) -> tuple[RealData, MarkovModel | None]:
    ref = config.reference
    if ref.corpus:
        lines = read_lines(ref.corpus)
        vocab = build_vocab(lines)
        corpus = encode_lines(lines, vocab, Label.REAL, max_len=DEFAULT_MAX_LEN)
        train, _, test = split_corpus(corpus, SplitSpec())
        return RealData(train, test, None), None
    model = ref.build()
    train = model.sample(config.n_samples, np.random.default_rng(derive_seed(config.seed, 1000)))
    test = model.sample(config.n_real_test, np.random.default_rng(derive_seed(config.seed, 1001)))
    train.label = test.label = Label.REAL
    return RealData(train, test, model), model


def build_families(config: ExperimentConfig, real: RealData, reference: MarkovModel | None
                   ) -> list[list[GeneratorSpec]]:
    families = []
    for fam in config.families:
        if fam.kind == "lambda":
            if reference is None:
                raise DataError("lambda ladders need a reference model, not a corpus")
            noise = fam.noise.build()
            gens = lambda_ladder(reference, noise, fam.lambdas)
            gens = [GeneratorSpec(g.base, 1.0, g.noise, g.lam, name=f"{fam.name}:lam={g.lam:g}") for g in gens]
        else:
            if reference is not None:
                source = reference.sample(fam.fit_size, np.random.default_rng(fam.fit_seed))
                max_len = reference.max_len
            else:
                source, max_len = real.train, DEFAULT_MAX_LEN
            gens = fraction_ladder(source, fam.fractions, fam.order, fam.alpha, max_len=max_len,
                                   name=f"{fam.name}:frac=")
            if reference is not None and any(g.vocab_size != reference.vocab_size for g in gens):
                raise DataError("fitted generators and reference disagree on vocabulary size")
        families.append(gens)
    return families


def _gold(cells: list[dict], reference: MarkovModel | None) -> list[float]:
    """Gold score per cell: exact/MC TV when a reference density exists, else less data = worse."""
    if reference is not None:
        return [c["metrics"]["dd_oracle"] for c in cells]
    return [-(c["spec"]["training_fraction"] or 0.0) for c in cells]


def tau_table(cells: list[dict], family_names: list[str], metrics: Sequence[str], reference: MarkovModel | None,
              decimals: int | None = None) -> tuple[dict, dict]:
    """Kendall's tau per temperature x (family | pooled) x metric, plus gold orders."""
    taus: dict = {}
    gold_orders: dict = {}
    temps = sorted({c["temperature"] for c in cells})
    groups = [(name, [name]) for name in family_names]
    if len(family_names) > 1:
        groups.append(("pooled", list(family_names)))
    for T in temps:
        tkey = f"T={T:g}"
        taus[tkey], gold_orders[tkey] = {}, {}
        for group, members in groups:
            sub = [c for c in cells if c["temperature"] == T and c["family"] in members]
            labels = [c["generator"] for c in sub]
            gold = _gold(sub, reference)
            gold_order, gold_ties = rank_by(gold, False, None)
            gold_orders[tkey][group] = {"order": [labels[i] for i in gold_order],
                                        "scores": gold, "ties": [[labels[i] for i in g] for g in gold_ties]}
            entry = {}
            for m in metrics:
                vals = [c["metrics"][m] for c in sub]
                order, ties = rank_by(vals, HIGHER_IS_BETTER[m], decimals)
                rec = {"order": [labels[i] for i in order], "ties": [[labels[i] for i in g] for g in ties]}
                if len(sub) < 2:
                    rec.update(tau=None, flag="single-generator")
                elif len(gold_ties) == 1 and len(gold_ties[0]) == len(sub):
                    rec.update(tau=None, flag="tie-degenerate")
                elif len(ties) == 1 and len(ties[0]) == len(sub):
                    rec.update(tau=None, flag="tie-degenerate")
                else:
                    rec.update(tau=kendall_tau(gold_order, order), flag="ties-broken" if ties or gold_ties else None)
                entry[m] = rec
            taus[tkey][group] = entry
    return taus, gold_orders


class ExperimentError(RuntimeError):
    def __init__(self, message: str, partial_report: dict):
        super().__init__(message)
        self.partial_report = partial_report


def run_experiment(config: ExperimentConfig, temperatures: Sequence[float] | None = None) -> dict:
    """Score every (generator, temperature) cell and rank metrics against the gold order."""
    t0 = time.perf_counter()
    temperatures = list(config.temperatures if temperatures is None else temperatures)
    report: dict = {
        "schema_version": SCHEMA_VERSION,
        "config_echo": _jsonable(config.to_dict()),
        "per_cell_metrics": [],
        "gold_order": {},
        "tau_table": {},
        "logs": {},
        "partial": False,
    }
    try:
        real, reference = prepare_real_data(config)
        families = build_families(config, real, reference)
        jobs = []
        for fi, (fam, gens) in enumerate(zip(config.families, families)):
            for gi, gen in enumerate(gens):
                for T in temperatures:
                    jobs.append((fam.name, gi, gen, T, derive_seed(config.seed, fi, gi)))

        def run(job):
            fam_name, gi, gen, T, seed = job
            log.info("cell %s T=%g", gen.name, T)
            return score_generator(gen.with_temperature(T), real, config, seed)

        if config.threads > 1:
            with ThreadPoolExecutor(config.threads) as pool:
                results = list(pool.map(run, jobs))
        else:
            results = [run(job) for job in jobs]

        cells = []
        for (fam_name, gi, gen, T, seed), res in zip(jobs, results):
            cell = {
                "family": fam_name,
                "generator": gen.name,
                "index": gi,
                "temperature": T,
                "seed": seed,
                "spec": gen.with_temperature(T).describe(),
                "metrics": res["metrics"],
            }
            if "oracle" in res:
                cell["oracle"] = res["oracle"]
            if "dd_report" in res:
                cell["dd_report"] = res["dd_report"]
                report["logs"][f"{gen.name}@T={T:g}"] = res["training_log"]
            cells.append(cell)
            report["per_cell_metrics"].append(cell)
        metrics = [m for m in config.metrics] + (["dd_oracle"] if reference is not None else [])
        report["tau_table"], report["gold_order"] = tau_table(
            cells, [f.name for f in config.families], metrics, reference, config.tie_decimals)
    except Exception as exc:  # noqa: BLE001 - recorded in the partial report, then re-raised
        report["partial"] = True
        report["error"] = f"{type(exc).__name__}: {exc}"
        report["timing"] = _timing(t0)
        raise ExperimentError(str(exc), _jsonable(report)) from exc
    report["timing"] = _timing(t0)
    return _jsonable(report)


def _timing(t0: float) -> dict:
    return {"finished_at": datetime.now(timezone.utc).isoformat(), "runtime_s": time.perf_counter() - t0}


def temperature_sweep(generator: GeneratorSpec, real: RealData, temperatures: Sequence[float],
                      metrics: Sequence[str], config: ExperimentConfig, seed: int = 0) -> list[dict]:
    """Rows of (temperature, metric, value); every temperature reuses ``seed``."""
    rows = []
    for T in temperatures:
        if T <= 0:
            raise DataError("temperatures must be positive")
        res = score_generator(generator.with_temperature(T), real, config, seed, metrics)
        for name, value in res["metrics"].items():
            rows.append({"temperature": T, "metric": name, "value": float(value)})
    return rows


# -- output ----------------------------------------------------------------------


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(dumps_report(report), encoding="utf-8")


def write_csv(report: dict, path: str | Path) -> None:
    """Flatten per-cell metrics to ``family,generator,temperature,metric,value`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["family", "generator", "temperature", "metric", "value"])
        for cell in report["per_cell_metrics"]:
            for name, value in sorted(cell["metrics"].items()):
                writer.writerow([cell["family"], cell["generator"], cell["temperature"], name, repr(value)])
