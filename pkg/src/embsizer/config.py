"""Run configuration: published JSON schema, loading, overrides, resolution.

A run is described by one JSON document validated against ``CONFIG_SCHEMA``
before any stage executes. Command-line flags override individual fields.
``RunConfig.resolved()`` returns the fully-explicit form that every stage
writes next to its outputs, so a run can be reproduced from its artifacts.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import jsonschema

from .data import SyntheticFieldSpec, SyntheticSpec
from .errors import ConfigError
from .models import ARCHITECTURES, ModelConfig
from .search import MODE_PRESETS, PenaltyConfig, SearchConfig
from .supernet import SCHEMES, CandidateSet

_POS_INT = {"type": "integer", "minimum": 1}
_UNIT = {"type": "number", "minimum": 0.0, "maximum": 1.0}
_NONNEG = {"type": "number", "minimum": 0.0}

CONFIG_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "embsizer run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "schema": {"type": "object"},
                "synthetic": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["fields", "n_samples"],
                    "properties": {
                        "fields": {
                            "type": "array",
                            "minItems": 1,
                            "items": {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["name", "cardinality"],
                                "properties": {
                                    "name": {"type": "string", "minLength": 1},
                                    "cardinality": _POS_INT,
                                    "weight": _UNIT,
                                    "multi_valued": {"type": "boolean"},
                                },
                            },
                        },
                        "n_samples": {"type": "integer", "minimum": 3},
                        "noise": _NONNEG,
                        "first_order_scale": _NONNEG,
                        "interaction_scale": _NONNEG,
                        "interaction_rank": _POS_INT,
                        "base_rate": {"type": "number",
                                      "exclusiveMinimum": 0.0,
                                      "exclusiveMaximum": 1.0},
                        "split": {"type": "array", "minItems": 3, "maxItems": 3,
                                  "items": _POS_INT},
                    },
                },
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "architecture": {"enum": list(ARCHITECTURES)},
                "hidden": {"type": "array", "minItems": 1, "items": _POS_INT},
                "d_f": _POS_INT,
                "learning_rate": {"type": "number", "exclusiveMinimum": 0.0},
                "use_wide": {"type": ["boolean", "null"]},
                "use_fm": {"type": ["boolean", "null"]},
                "use_first_order": {"type": ["boolean", "null"]},
                "dtype": {"enum": ["float64", "float32"]},
            },
        },
        "candidates": {"type": "array", "minItems": 1, "items": _POS_INT},
        "scheme": {"enum": list(SCHEMES)},
        "sampler": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["adaptive", "random", "vanilla_uniform",
                                  "weight_uniform"]},
                "lambda_fs": _UNIT,
                "eta_e": {"type": "number", "exclusiveMinimum": 0.0},
                "eta_f": {"type": "number", "exclusiveMinimum": 0.0},
                "p_min": {"type": "number", "exclusiveMinimum": 0.0,
                          "exclusiveMaximum": 1.0},
                "p_max": {"type": "number", "exclusiveMinimum": 0.0,
                          "exclusiveMaximum": 1.0},
                "p_f_init": {"type": "number", "exclusiveMinimum": 0.0,
                             "exclusiveMaximum": 1.0},
            },
        },
        "supernet": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": _POS_INT,
                "batch_size": _POS_INT,
            },
        },
        "search": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": list(MODE_PRESETS)},
                "lambda_r": _NONNEG,
                "lambda_c": _NONNEG,
                "lambda_rew": {"type": "number", "exclusiveMinimum": 0.0},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0.0},
                "max_steps": _POS_INT,
                "entropy_threshold": {"type": "number", "exclusiveMinimum": 0.0},
                "eval_batches": _POS_INT,
                "eval_batch_size": _POS_INT,
                "metric": {"enum": ["auc", "logloss"]},
                "use_baseline": {"type": "boolean"},
                "baseline_decay": _UNIT,
            },
        },
        "retrain": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": _POS_INT,
                "batch_size": _POS_INT,
                "inherit": {"type": "boolean"},
                "baseline_size": _POS_INT,
            },
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "consistency_k": {"type": "integer", "minimum": 2},
                "stability_runs": _POS_INT,
                "standalone_epochs": _POS_INT,
                "eval_samples": _POS_INT,
            },
        },
        "seeds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "data": {"type": "integer", "minimum": 0},
                "supernet": {"type": "integer", "minimum": 0},
                "search": {"type": "integer", "minimum": 0},
                "retrain": {"type": "integer", "minimum": 0},
            },
        },
        "out": {"type": "string"},
    },
}


def validate_config(doc: dict) -> None:
    """Check a raw config document against the published schema."""
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None


@dataclass(frozen=True)
class RunConfig:
    """Fully-resolved run description; every field is explicit."""

    model: ModelConfig
    candidates: CandidateSet
    scheme: str = "shared"
    sampler_kind: str = "adaptive"
    sampler_rates: dict = field(default_factory=dict)
    search: SearchConfig = field(default_factory=SearchConfig)
    supernet_epochs: int = 5
    supernet_batch: int = 512
    retrain_epochs: int = 5
    retrain_batch: int = 512
    retrain_inherit: bool = False
    baseline_size: int = 32
    consistency_k: int = 20
    stability_runs: int = 10
    standalone_epochs: int = 2
    eval_samples: int = 10_240
    seeds: dict = field(default_factory=dict)
    synthetic: SyntheticSpec | None = None
    dataset_path: str | None = None
    dataset_schema: dict | None = None
    out: str | None = None

    def seed(self, stage: str) -> int:
        return int(self.seeds.get(stage, 0))

    def resolved(self) -> dict:
        """Explicit JSON form; writing this next to outputs reproduces the run."""
        doc: dict[str, Any] = {
            "dataset": {},
            "model": {
                "architecture": self.model.architecture,
                "hidden": list(self.model.hidden),
                "d_f": self.model.d_f,
                "learning_rate": self.model.learning_rate,
                "use_wide": self.model.use_wide,
                "use_fm": self.model.use_fm,
                "use_first_order": self.model.use_first_order,
                "dtype": self.model.dtype,
            },
            "candidates": list(self.candidates.sizes),
            "scheme": self.scheme,
            "sampler": {"kind": self.sampler_kind, **self.sampler_rates},
            "supernet": {"epochs": self.supernet_epochs,
                         "batch_size": self.supernet_batch},
            "search": {
                "lambda_r": self.search.penalty.lambda_r,
                "lambda_c": self.search.penalty.lambda_c,
                "lambda_rew": self.search.penalty.lambda_rew,
                "learning_rate": self.search.learning_rate,
                "max_steps": self.search.max_steps,
                "entropy_threshold": self.search.entropy_threshold,
                "eval_batches": self.search.eval_batches,
                "eval_batch_size": self.search.eval_batch_size,
                "metric": self.search.metric,
                "use_baseline": self.search.use_baseline,
                "baseline_decay": self.search.baseline_decay,
            },
            "retrain": {"epochs": self.retrain_epochs,
                        "batch_size": self.retrain_batch,
                        "inherit": self.retrain_inherit,
                        "baseline_size": self.baseline_size},
            "analysis": {"consistency_k": self.consistency_k,
                         "stability_runs": self.stability_runs,
                         "standalone_epochs": self.standalone_epochs,
                         "eval_samples": self.eval_samples},
            "seeds": {stage: self.seed(stage)
                      for stage in ("data", "supernet", "search", "retrain")},
        }
        if self.synthetic is not None:
            syn = asdict(self.synthetic)
            syn.pop("seed")              # owned by seeds.data
            syn["split"] = list(syn["split"])
            syn["fields"] = [dict(f) for f in syn["fields"]]
            doc["dataset"]["synthetic"] = syn
        if self.dataset_path is not None:
            doc["dataset"]["path"] = self.dataset_path
        if self.dataset_schema is not None:
            doc["dataset"]["schema"] = self.dataset_schema
        if self.out is not None:
            doc["out"] = self.out
        return doc


def _build_search(section: dict) -> SearchConfig:
    """Mode preset supplies the penalty weights; explicit values win."""
    mode = section.get("mode")
    penalty = PenaltyConfig.preset(mode) if mode else PenaltyConfig()
    overrides = {k: section[k] for k in ("lambda_r", "lambda_c", "lambda_rew")
                 if k in section}
    if overrides:
        penalty = PenaltyConfig(
            lambda_r=overrides.get("lambda_r", penalty.lambda_r),
            lambda_c=overrides.get("lambda_c", penalty.lambda_c),
            lambda_rew=overrides.get("lambda_rew", penalty.lambda_rew))
    kwargs = {k: section[k] for k in
              ("learning_rate", "max_steps", "entropy_threshold",
               "eval_batches", "eval_batch_size", "metric",
               "use_baseline", "baseline_decay") if k in section}
    return SearchConfig(penalty=penalty, **kwargs)


def _build_synthetic(section: dict, data_seed: int) -> SyntheticSpec:
    fields = tuple(
        SyntheticFieldSpec(name=f["name"], cardinality=int(f["cardinality"]),
                           weight=float(f.get("weight", 0.0)),
                           multi_valued=bool(f.get("multi_valued", False)))
        for f in section["fields"])
    kwargs = {k: section[k] for k in
              ("noise", "first_order_scale", "interaction_scale",
               "interaction_rank", "base_rate") if k in section}
    if "split" in section:
        kwargs["split"] = tuple(int(v) for v in section["split"])
    return SyntheticSpec(fields=fields, n_samples=int(section["n_samples"]),
                         seed=data_seed, **kwargs)


def from_dict(doc: dict) -> RunConfig:
    """Validate a raw config document and resolve it into a ``RunConfig``."""
    validate_config(doc)
    model_sec = doc.get("model", {})
    if "hidden" in model_sec:
        model_sec = {**model_sec, "hidden": tuple(model_sec["hidden"])}
    model = ModelConfig(**model_sec)

    candidates = CandidateSet(tuple(int(d) for d in doc.get("candidates",
                                                            (2, 8, 16, 32, 64))))
    sampler_sec = dict(doc.get("sampler", {}))
    sampler_kind = sampler_sec.pop("kind", "adaptive")

    seeds = {k: int(v) for k, v in doc.get("seeds", {}).items()}
    dataset = doc.get("dataset", {})
    synthetic = None
    if "synthetic" in dataset:
        synthetic = _build_synthetic(dataset["synthetic"], seeds.get("data", 0))

    supernet_sec = doc.get("supernet", {})
    retrain_sec = doc.get("retrain", {})
    analysis_sec = doc.get("analysis", {})
    return RunConfig(
        model=model,
        candidates=candidates,
        scheme=doc.get("scheme", "shared"),
        sampler_kind=sampler_kind,
        sampler_rates=sampler_sec,
        search=_build_search(doc.get("search", {})),
        supernet_epochs=int(supernet_sec.get("epochs", 5)),
        supernet_batch=int(supernet_sec.get("batch_size", 512)),
        retrain_epochs=int(retrain_sec.get("epochs", 5)),
        retrain_batch=int(retrain_sec.get("batch_size", 512)),
        retrain_inherit=bool(retrain_sec.get("inherit", False)),
        baseline_size=int(retrain_sec.get("baseline_size", 32)),
        consistency_k=int(analysis_sec.get("consistency_k", 20)),
        stability_runs=int(analysis_sec.get("stability_runs", 10)),
        standalone_epochs=int(analysis_sec.get("standalone_epochs", 2)),
        eval_samples=int(analysis_sec.get("eval_samples", 10_240)),
        seeds=seeds,
        synthetic=synthetic,
        dataset_path=dataset.get("path"),
        dataset_schema=dataset.get("schema"),
        out=doc.get("out"),
    )


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Read a config file, apply flag overrides, and resolve it.

    ``overrides`` uses dotted paths (``"search.lambda_r"``) mapped to values;
    ``None`` values are skipped so unset flags leave the file untouched.
    The special key ``"seed"`` sets every stage seed at once.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return from_dict(apply_overrides(doc, overrides or {}))


def apply_overrides(doc: dict, overrides: dict) -> dict:
    """Return a copy of ``doc`` with dotted-path overrides applied."""
    out = json.loads(json.dumps(doc))   # deep copy, JSON-safe by construction
    for dotted, value in overrides.items():
        if value is None:
            continue
        if dotted == "seed":
            out["seeds"] = {stage: int(value)
                            for stage in ("data", "supernet", "search", "retrain")}
            continue
        parts = dotted.split(".")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override {dotted}: "
                                  f"{part} is not an object")
        node[parts[-1]] = value
    return out
