"""Emulated pool-based active learning runs.

One run (``run_single``) goes through ``iterations + 1`` entries. Entry 0 is
the random seed set; entry ``k >= 1`` queries the pool with the acquisition
model of entry ``k - 1``. In every entry the newly selected sentences get
their gold tags revealed, the labelled set is re-split into train/dev, the
acquisition model is retrained from scratch on the train part and evaluated
on the test corpus, and (when it differs) the successor model as well.

Records are written as ``<out>/<config hash>/<run seed>.json``. Wall-clock
timings go to a ``<run seed>.timing.json`` sidecar so the main record is
byte-identical for identical inputs.
"""

from __future__ import annotations

import concurrent.futures as cf
import functools
import json
import logging
import os
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig, ModelSpec
from .corpus import ColumnMap, Corpus, Sentence, SynthSpec, parse_conll, split_corpus, synth_corpus
from .crf import train_crf
from .metrics import F1Report, LearningCurve, aggregate_runs, span_f1
from .neural import NeuralConfig, train_neural
from .strategies import PoolState, score_pool, select_batch

log = logging.getLogger(__name__)

RECORD_VERSION = 1


class LabelAccessError(LookupError):
    pass


class ExperimentError(RuntimeError):
    def __init__(self, message: str, completed: Sequence[int] = ()):
        self.completed = list(completed)
        super().__init__(message)


class GoldOracle:
    """Emulated annotator: hands out gold tags only for revealed sentences.

    Every access is counted; asking for an unrevealed sentence raises.
    """

    def __init__(self, corpus: Corpus):
        self._gold = {s.id: s for s in corpus.sentences}
        self._masked = {s.id: s.masked() for s in corpus.sentences}
        self.revealed: set[int] = set()
        self.reads: Counter = Counter()
        self.denied = 0

    def reveal(self, ids: Sequence[int]) -> None:
        self.revealed.update(ids)

    def labeled(self, ids: Sequence[int]) -> list[Sentence]:
        hidden = [i for i in ids if i not in self.revealed]
        if hidden:
            self.denied += len(hidden)
            raise LabelAccessError(f"gold tags requested for unrevealed sentences {hidden[:5]}")
        self.reads.update(ids)
        return [self._gold[i] for i in ids]

    def unlabeled(self, ids: Sequence[int]) -> list[Sentence]:
        return [self._masked[i] for i in ids]

    @property
    def unrevealed_reads(self) -> int:
        return sum(n for i, n in self.reads.items() if i not in self.revealed)


@dataclass
class IterationEntry:
    iteration: int
    labeled_token_count: int
    labeled_sentences: int
    acquisition: F1Report
    successor: F1Report
    selected_ids: list[int]
    train_seconds: float = 0.0
    query_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "labeled_token_count": self.labeled_token_count,
            "labeled_sentences": self.labeled_sentences,
            "acquisition": self.acquisition.to_dict(),
            "successor": self.successor.to_dict(),
            "selected_ids": self.selected_ids,
        }


@dataclass
class RunRecord:
    config_hash: str
    run_seed: int
    config: dict
    total_tokens: int
    entries: list[IterationEntry] = field(default_factory=list)
    truncated: bool = False
    complete: bool = False

    def to_dict(self) -> dict:
        return {
            "version": RECORD_VERSION,
            "config_hash": self.config_hash,
            "run_seed": self.run_seed,
            "config": self.config,
            "total_tokens": self.total_tokens,
            "truncated": self.truncated,
            "complete": self.complete,
            "entries": [e.to_dict() for e in self.entries],
        }

    def timing_dict(self) -> dict:
        return {"run_seed": self.run_seed,
                "train_seconds": [e.train_seconds for e in self.entries],
                "query_seconds": [e.query_seconds for e in self.entries]}

    @classmethod
    def from_dicts(cls, d: dict, timing: dict | None = None) -> "RunRecord":
        if d.get("version") != RECORD_VERSION:
            raise ValueError(f"unsupported record version {d.get('version')!r}")
        entries = []
        for k, e in enumerate(d["entries"]):
            entries.append(IterationEntry(
                e["iteration"], e["labeled_token_count"], e["labeled_sentences"],
                F1Report.from_dict(e["acquisition"]), F1Report.from_dict(e["successor"]),
                list(e["selected_ids"]),
                timing["train_seconds"][k] if timing else 0.0,
                timing["query_seconds"][k] if timing else 0.0,
            ))
        return cls(d["config_hash"], d["run_seed"], d["config"], d["total_tokens"], entries,
                   d["truncated"], d["complete"])

    @property
    def strategy(self) -> str:
        return self.config["strategy"]

    @property
    def mc_variant(self) -> str:
        return self.config["mc"]["variant"]

    @property
    def label(self) -> str:
        acq = self.config["acquisition_model"]["kind"]
        succ = self.config["successor_model"]["kind"]
        s = f"{acq}+{self.strategy}"
        if self.mc_variant != "NONE":
            s += f"({self.mc_variant})"
        if self.config["successor_model"] != self.config["acquisition_model"]:
            s += f"->{succ}"
        return s


def record_paths(out_dir: str | os.PathLike, config_hash: str, run_seed: int) -> tuple[Path, Path]:
    base = Path(out_dir) / config_hash
    return base / f"{run_seed}.json", base / f"{run_seed}.timing.json"


def dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def save_record(record: RunRecord, out_dir: str | os.PathLike) -> Path:
    main, timing = record_paths(out_dir, record.config_hash, record.run_seed)
    dump_json(record.to_dict(), main)
    dump_json(record.timing_dict(), timing)
    return main


def load_record(path: str | os.PathLike) -> RunRecord:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    timing_path = path.with_name(path.stem + ".timing.json")
    timing = None
    if timing_path.exists():
        with open(timing_path, encoding="utf-8") as fh:
            timing = json.load(fh)
    return RunRecord.from_dicts(d, timing)


def load_records(root: str | os.PathLike) -> list[RunRecord]:
    """All complete records under ``root`` (searched recursively)."""
    records = []
    for p in sorted(Path(root).rglob("*.json")):
        if p.name.endswith(".timing.json") or p.name == "config.json":
            continue
        try:
            rec = load_record(p)
        except (ValueError, KeyError, json.JSONDecodeError):
            log.warning("skipping unreadable record %s", p)
            continue
        if rec.complete:
            records.append(rec)
    return records


# -- corpora and models ------------------------------------------------------------

@functools.lru_cache(maxsize=8)
def _synthetic_pair(spec: SynthSpec, test_size: int) -> tuple[Corpus, Corpus]:
    full = synth_corpus(SynthSpec(**{**spec.__dict__, "size": spec.size + test_size}))
    return split_corpus(full, spec.size)


def load_corpora(config: ExperimentConfig) -> tuple[Corpus, Corpus]:
    src = config.corpus
    if src.synthetic is not None:
        return _synthetic_pair(src.synthetic, src.test_size)
    cmap = ColumnMap(**dict(src.columns))
    train = parse_conll(src.train_path, cmap, src.scheme)
    test = parse_conll(src.test_path, cmap, src.scheme)
    labels = sorted(set(train.tagset.entity_types) | set(test.tagset.entity_types))
    tagset = type(train.tagset).from_types(labels, src.scheme)
    return Corpus(train.sentences, tagset), Corpus(test.sentences, tagset)


def train_model(spec: ModelSpec, train: Sequence[Sentence], dev: Sequence[Sentence], tagset, seed: int):
    if spec.kind == "crf":
        kw = spec.kwargs
        # the CRF runs a fixed iteration budget and does not look at the dev part
        return train_crf(train, tagset, l1=kw["l1"], l2=kw["l2"], max_iter=kw["max_iter"], seed=seed)
    if spec.kind == "neural":
        return train_neural(train, tagset, NeuralConfig(**spec.kwargs), seed=seed, dev=dev)
    raise ValueError(f"unknown model kind {spec.kind!r}")


def evaluate(model, test: Corpus) -> F1Report:
    pred = model.predict(test.sentences)
    return span_f1(pred, [s.tags for s in test.sentences], test.tagset.scheme)


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def split_labeled(ids: Sequence[int], dev_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Random train/dev split by sentence; the train part is never empty."""
    ids = sorted(ids)
    perm = np.random.default_rng(seed).permutation(len(ids))
    n_dev = min(int(dev_fraction * len(ids)), len(ids) - 1)
    dev = sorted(ids[i] for i in perm[:n_dev])
    train = sorted(ids[i] for i in perm[n_dev:])
    return train, dev


def seed_selection(pool: PoolState, budget: float, seed: int) -> list[int]:
    """Random sentences until the token budget is met."""
    ids = sorted(pool.unlabeled)
    chosen, tokens = [], 0
    for i in np.random.default_rng(seed).permutation(len(ids)):
        if tokens >= budget:
            break
        chosen.append(ids[i])
        tokens += pool.lengths[ids[i]]
    return chosen


# -- runs ------------------------------------------------------------------------

def run_single(config: ExperimentConfig, run_seed: int, *, out_dir: str | os.PathLike | None = None,
               force: bool = False, oracle: GoldOracle | None = None) -> RunRecord:
    """Run (or reload) one seeded AL emulation."""
    config.validate()
    if out_dir is not None and not force:
        main, _ = record_paths(out_dir, config.hash, run_seed)
        if main.exists():
            rec = load_record(main)
            if rec.complete:
                log.info("skipped seed %d: complete record at %s", run_seed, main)
                return rec

    train_corpus, test = load_corpora(config)
    tagset = train_corpus.tagset
    oracle = oracle or GoldOracle(train_corpus)
    pool = PoolState({s.id: len(s) for s in train_corpus.sentences})
    total = pool.total_tokens
    record = RunRecord(config.hash, run_seed, config.identity(), total)

    acq_spec, succ_spec = config.acquisition, config.successor_spec
    model = None
    for k in range(config.iterations + 1):
        t0 = time.perf_counter()
        if k == 0:
            # seeding depends on the run seed only, so strategies compared
            # under one seed start from the same labelled set
            selected = seed_selection(pool, config.seed_fraction * total, _derived_seed(run_seed, 0xA1))
        else:
            if not pool.unlabeled:
                record.truncated = True
                log.info("seed %d: pool exhausted before iteration %d", run_seed, k)
                break
            unl = sorted(pool.unlabeled)
            scores = score_pool(model, oracle.unlabeled(unl), config.strategy, config.mc,
                                seed=_derived_seed(run_seed, k, 3))
            selected = select_batch(scores, pool, config.step_fraction * total)
        query_seconds = time.perf_counter() - t0

        pool.add(selected)
        oracle.reveal(selected)
        train_ids, dev_ids = split_labeled(sorted(pool.labeled), config.dev_fraction,
                                           _derived_seed(run_seed, k, 1))
        train_part, dev_part = oracle.labeled(train_ids), oracle.labeled(dev_ids)
        model_seed = _derived_seed(run_seed, k, 2)

        t0 = time.perf_counter()
        model = train_model(acq_spec, train_part, dev_part, tagset, model_seed)
        train_seconds = time.perf_counter() - t0

        acq_report = evaluate(model, test)
        if succ_spec != acq_spec:
            successor = train_model(succ_spec, train_part, dev_part, tagset, model_seed)
            succ_report = evaluate(successor, test)
        else:
            succ_report = acq_report

        record.entries.append(IterationEntry(
            iteration=k,
            labeled_token_count=pool.labeled_tokens,
            labeled_sentences=len(pool.labeled),
            acquisition=acq_report,
            successor=succ_report,
            selected_ids=list(selected),
            train_seconds=train_seconds,
            query_seconds=query_seconds,
        ))
        log.debug("seed %d iter %d: %d tokens, F1 %.4f", run_seed, k, pool.labeled_tokens, succ_report.f1)

    record.complete = True
    if out_dir is not None:
        save_record(record, out_dir)
    return record


def run_mismatch(config: ExperimentConfig, *, out_dir=None, force: bool = False) -> list[RunRecord]:
    """Acquisition model selects, a (possibly different) successor model is
    trained on the same labelled sets; both evaluations are recorded."""
    config.validate()
    return [run_single(config, config.base_seed + r, out_dir=out_dir, force=force)
            for r in range(config.repeats)]


def worker_count() -> int:
    raw = os.environ.get("AL_SEQTAG_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"AL_SEQTAG_THREADS must be an integer, got {raw!r}") from None
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def _run_one(args):
    config, seed, out_dir, force = args
    return run_single(config, seed, out_dir=out_dir, force=force)


def run_experiment(config: ExperimentConfig, *, out_dir: str | os.PathLike | None = None,
                   force: bool = False, workers: int | None = None) -> tuple[list[RunRecord], LearningCurve]:
    """All seeded repeats of ``config`` plus their aggregated learning curve.

    Repeats may run in separate processes (``workers``, default from
    ``AL_SEQTAG_THREADS``); each finished record is persisted immediately,
    so a failure leaves the completed seeds on disk.
    """
    config.validate()
    out_dir = config.output_dir if out_dir is None else out_dir
    seeds = [config.base_seed + r for r in range(config.repeats)]
    workers = worker_count() if workers is None else workers
    Path(out_dir, config.hash).mkdir(parents=True, exist_ok=True)
    dump_json(config.to_dict(), Path(out_dir, config.hash, "config.json"))

    records: dict[int, RunRecord] = {}
    try:
        if workers > 1 and len(seeds) > 1:
            with cf.ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as ex:
                for seed, rec in zip(seeds, ex.map(_run_one, [(config, s, out_dir, force) for s in seeds])):
                    records[seed] = rec
        else:
            for seed in seeds:
                records[seed] = run_single(config, seed, out_dir=out_dir, force=force)
    except Exception as exc:
        raise ExperimentError(f"run failed after seeds {sorted(records)}: {exc}", sorted(records)) from exc
    ordered = [records[s] for s in seeds]
    return ordered, aggregate_runs(ordered, label=config.label)
