"""Experiment configuration: JSON schema, validation and loading."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any

import jsonschema

from .corpus import SynthSpec
from .neural import McConfig, McVariant, NeuralConfig
from .strategies import Strategy


class ConfigError(ValueError):
    """Invalid experiment configuration; ``problems`` lists one message per field."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


_FRACTION = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
_DROPOUT = {"type": "number", "minimum": 0, "exclusiveMaximum": 1}

_MODEL_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "kind": {"const": "crf"},
                "l1": {"type": "number", "minimum": 0},
                "l2": {"type": "number", "minimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "neural"},
                "dim": {"type": "integer", "minimum": 1},
                "hidden": {"type": "integer", "minimum": 1},
                "window": {"type": "integer", "minimum": 0},
                "buckets": {"type": "integer", "minimum": 1},
                "p_word": _DROPOUT,
                "p_locked": _DROPOUT,
                "p_last": _DROPOUT,
                "epochs": {"type": "integer", "minimum": 1},
                "base_batch": {"type": "integer", "minimum": 1},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "select_best_epoch": {"type": "boolean"},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
    ]
}

CONFIG_SCHEMA: dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "properties": {
        "corpus": {
            "oneOf": [
                {
                    "type": "object",
                    "properties": {
                        "synthetic": {
                            "type": "object",
                            "properties": {
                                "n_types": {"type": "integer", "minimum": 1},
                                "vocab_size": {"type": "integer", "minimum": 1},
                                "length_range": {"type": "array", "items": {"type": "integer", "minimum": 1},
                                                 "minItems": 2, "maxItems": 2},
                                "train_size": {"type": "integer", "minimum": 1},
                                "test_size": {"type": "integer", "minimum": 1},
                                "seed": {"type": "integer"},
                                "entity_rate": _FRACTION,
                                "empty_rate": {"type": "number", "minimum": 0, "maximum": 1},
                                "ambiguity": {"type": "number", "minimum": 0, "maximum": 1},
                                "label_noise": {"type": "number", "minimum": 0, "maximum": 1},
                            },
                            "required": ["train_size", "test_size", "seed"],
                            "additionalProperties": False,
                        }
                    },
                    "required": ["synthetic"],
                    "additionalProperties": False,
                },
                {
                    "type": "object",
                    "properties": {
                        "train": {"type": "string"},
                        "test": {"type": "string"},
                        "scheme": {"enum": ["IOB1", "IOB2"]},
                        "columns": {
                            "type": "object",
                            "properties": {
                                "surface": {"type": "integer"},
                                "tag": {"type": "integer"},
                                "pos": {"type": ["integer", "null"]},
                                "width": {"type": "integer", "minimum": 1},
                            },
                            "required": ["surface", "tag", "width"],
                            "additionalProperties": False,
                        },
                    },
                    "required": ["train", "test", "scheme", "columns"],
                    "additionalProperties": False,
                },
            ]
        },
        "acquisition_model": _MODEL_SCHEMA,
        "successor_model": {"oneOf": [{"type": "null"}, _MODEL_SCHEMA]},
        "strategy": {"enum": [s.value for s in Strategy]},
        "mc": {
            "type": "object",
            "properties": {
                "variant": {"enum": [v.value for v in McVariant]},
                "passes": {"type": "integer", "minimum": 1},
            },
            "required": ["variant", "passes"],
            "additionalProperties": False,
        },
        "seed_fraction": _FRACTION,
        "step_fraction": _FRACTION,
        "iterations": {"type": "integer", "minimum": 1},
        "dev_fraction": _FRACTION,
        "repeats": {"type": "integer", "minimum": 1},
        "base_seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
    },
    "required": ["corpus", "acquisition_model", "strategy"],
    "additionalProperties": False,
}


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    params: tuple[tuple[str, Any], ...] = ()

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        kind = d.pop("kind")
        if kind == "crf":
            full = {"l1": 0.1, "l2": 0.1, "max_iter": 100}
        elif kind == "neural":
            full = asdict(NeuralConfig())
        else:
            raise ConfigError([f"model.kind: unknown model kind {kind!r}"])
        unknown = set(d) - set(full)
        if unknown:
            raise ConfigError([f"model: unknown keys {sorted(unknown)}"])
        full.update(d)
        return cls(kind, tuple(sorted(full.items())))

    def to_dict(self) -> dict:
        return {"kind": self.kind, **dict(self.params)}

    @property
    def kwargs(self) -> dict:
        return dict(self.params)

    @property
    def label(self) -> str:
        return self.kind


@dataclass(frozen=True)
class CorpusSource:
    synthetic: SynthSpec | None = None
    test_size: int = 0
    train_path: str | None = None
    test_path: str | None = None
    scheme: str = "IOB2"
    columns: tuple[tuple[str, Any], ...] = ()

    def to_dict(self) -> dict:
        if self.synthetic is not None:
            s = asdict(self.synthetic)
            s["length_range"] = list(s["length_range"])
            s["train_size"] = s.pop("size")
            s["test_size"] = self.test_size
            return {"synthetic": s}
        return {"train": self.train_path, "test": self.test_path, "scheme": self.scheme,
                "columns": dict(self.columns)}


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: CorpusSource
    acquisition: ModelSpec
    strategy: Strategy
    successor: ModelSpec | None = None
    mc: McConfig = field(default_factory=McConfig)
    seed_fraction: float = 0.02
    step_fraction: float = 0.02
    iterations: int = 24
    dev_fraction: float = 0.25
    repeats: int = 1
    base_seed: int = 0
    output_dir: str = "runs"

    @property
    def successor_spec(self) -> ModelSpec:
        return self.successor or self.acquisition

    @property
    def is_mismatch(self) -> bool:
        return self.successor is not None and self.successor != self.acquisition

    def validate(self) -> None:
        problems = []
        for name in ("seed_fraction", "step_fraction", "dev_fraction"):
            v = getattr(self, name)
            if not 0 < v < 1:
                problems.append(f"{name}: must be in (0, 1), got {v}")
        if self.iterations < 1:
            problems.append(f"iterations: must be >= 1, got {self.iterations}")
        if self.repeats < 1:
            problems.append(f"repeats: must be >= 1, got {self.repeats}")
        if self.seed_fraction + self.iterations * self.step_fraction > 1 + 1e-9:
            problems.append("seed_fraction + iterations * step_fraction: exceeds 1")
        if self.strategy.needs_mc:
            if self.acquisition.kind != "neural":
                problems.append(f"strategy: {self.strategy.value} needs a neural acquisition model")
            if self.mc.variant is McVariant.NONE:
                problems.append(f"mc.variant: {self.strategy.value} needs an MC dropout variant")
        if problems:
            raise ConfigError(problems)

    def identity(self) -> dict:
        """Everything that determines a run's outcome apart from its seed."""
        return {
            "corpus": self.corpus.to_dict(),
            "acquisition_model": self.acquisition.to_dict(),
            "successor_model": self.successor_spec.to_dict(),
            "strategy": self.strategy.value,
            "mc": {"variant": self.mc.variant.value, "passes": self.mc.passes},
            "seed_fraction": self.seed_fraction,
            "step_fraction": self.step_fraction,
            "iterations": self.iterations,
            "dev_fraction": self.dev_fraction,
        }

    def to_dict(self) -> dict:
        return {**self.identity(), "repeats": self.repeats, "base_seed": self.base_seed,
                "output_dir": self.output_dir}

    @property
    def hash(self) -> str:
        blob = json.dumps(self.identity(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def label(self) -> str:
        s = f"{self.acquisition.label}+{self.strategy.value}"
        if self.mc.variant is not McVariant.NONE:
            s += f"({self.mc.variant.value})"
        if self.is_mismatch:
            s += f"->{self.successor_spec.label}"
        return s


def _schema_problems(doc: Any) -> list[str]:
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    problems = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path))):
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        msg = err.message
        if err.context:
            # oneOf failures: report the branch whose "kind" matched, else the deepest complaint
            branches: dict[int, list] = {}
            for sub in err.context:
                branches.setdefault(sub.relative_schema_path[0], []).append(sub)
            matched = [errs for errs in branches.values()
                       if not any(e.validator in ("const", "type") for e in errs)]
            chosen = matched[0] if len(matched) == 1 else [
                max(err.context, key=lambda e: len(list(e.absolute_path)))]
            for sub in chosen:
                sub_where = ".".join(str(p) for p in sub.absolute_path) or where
                problems.append(f"{sub_where}: {sub.message}")
            continue
        problems.append(f"{where}: {msg}")
    return problems


def _mc_config(d: dict) -> McConfig:
    try:
        return McConfig(McVariant(d["variant"]), d["passes"])
    except ValueError as exc:
        raise ConfigError([f"mc.passes: {exc}"]) from exc


def config_from_dict(doc: dict) -> ExperimentConfig:
    problems = _schema_problems(doc)
    if problems:
        raise ConfigError(problems)
    c = doc["corpus"]
    if "synthetic" in c:
        s = dict(c["synthetic"])
        test_size = s.pop("test_size")
        s["size"] = s.pop("train_size")
        if "length_range" in s:
            s["length_range"] = tuple(s["length_range"])
        corpus = CorpusSource(synthetic=SynthSpec(**s), test_size=test_size)
    else:
        corpus = CorpusSource(train_path=c["train"], test_path=c["test"], scheme=c["scheme"],
                              columns=tuple(sorted(c["columns"].items())))
    succ = doc.get("successor_model")
    mc = doc.get("mc", {"variant": "NONE", "passes": 10})
    cfg = ExperimentConfig(
        corpus=corpus,
        acquisition=ModelSpec.from_dict(doc["acquisition_model"]),
        successor=ModelSpec.from_dict(succ) if succ else None,
        strategy=Strategy(doc["strategy"]),
        mc=_mc_config(mc),
        **{k: doc[k] for k in ("seed_fraction", "step_fraction", "iterations", "dev_fraction",
                               "repeats", "base_seed", "output_dir") if k in doc},
    )
    cfg.validate()
    return cfg


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"<file>: invalid JSON ({exc})"]) from exc
    return config_from_dict(doc)

