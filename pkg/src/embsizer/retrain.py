"""Final-stage retraining with a searched per-field size assignment.

The assignment read off the search (per-row argmax, ties toward the smaller
width) sizes a fresh model: new embedding tables at the chosen widths, new
width-to-unified transforms, new main model. Nothing is inherited from the
supernet by default, so uniform-size baselines and searched assignments are
compared on equal footing; warm-starting from the supernet sits behind a flag.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .core.rng import RngStream
from .data import DatasetSplit, FieldSchema, schema_hash
from .errors import ConfigError
from .models import FixedSizeModel, ModelConfig
from .supernet import CandidateSet, Supernet, parameter_reduction


@dataclass(frozen=True)
class SizeAssignment:
    sizes: tuple[int, ...]
    schema_hash: str | None = None

    def __post_init__(self):
        if not self.sizes or any(d < 1 for d in self.sizes):
            raise ConfigError("assignment sizes must be positive")

    def validated(self, candidates: CandidateSet, schemas: list[FieldSchema]
                  ) -> "SizeAssignment":
        if len(self.sizes) != len(schemas):
            raise ConfigError("assignment must size every field")
        bad = [d for d in self.sizes if d not in candidates.sizes]
        if bad:
            raise ConfigError(f"sizes {bad} not in candidate set {candidates.sizes}")
        return SizeAssignment(self.sizes, schema_hash(schemas))


def extract_assignment(p: np.ndarray, sizes: tuple[int, ...]) -> list[int]:
    """Per-row argmax of the transition matrix, read as widths.

    Rows are distributions over the ascending candidate list, so the first
    maximal entry — what argmax returns — is the smaller width on exact ties.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != len(sizes):
        raise ConfigError("transition matrix must have one column per candidate")
    return [int(sizes[j]) for j in np.argmax(p, axis=1)]


def flops_estimate(sizes: list[int], schemas: list[FieldSchema],
                   config: ModelConfig) -> int:
    """Multiply-add count for one sample's forward pass.

    transform:    Σ_i d*_i · d_f          (affine projection per field)
    pooling:      Σ_i d*_i over multi-valued fields (mean over looked-up rows;
                  single-valued lookup is an index, zero multiplies)
    tower:        Σ_k w_k · w_{k+1} with w_0 = M · d_f
    interactions: (M + 1) · d_f when the pairwise term is enabled (per-field
                  squares plus the squared sum)
    Scalar/bias terms are lookups and adds — zero multiplies.
    """
    m = len(schemas)
    if len(sizes) != m:
        raise ConfigError("one size per field required")
    transform = sum(d * config.d_f for d in sizes)
    pooling = sum(d for d, s in zip(sizes, schemas) if s.multi_valued)
    widths = [m * config.d_f] + list(config.hidden)
    tower = sum(widths[k] * widths[k + 1] for k in range(len(config.hidden)))
    interactions = (m + 1) * config.d_f if config.fm_enabled else 0
    return transform + pooling + tower + interactions


def config_hash(config: ModelConfig) -> str:
    payload = json.dumps(asdict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class RetrainResult:
    model: FixedSizeModel
    sizes: list[int]
    auc: float
    logloss: float
    p_r: float
    flops: int
    epoch_losses: list[float]
    seed: int


def retrain(sizes: list[int], split: DatasetSplit, config: ModelConfig,
            epochs: int, batch_size: int, seed: int,
            inherit_from: Supernet | None = None,
            baseline_size: int = 32) -> RetrainResult:
    """Train a fresh model under the assignment and score it on the test split.

    ``inherit_from`` warm-starts every matching parameter from the supernet
    (candidate table slices, the transforms for the used widths, the main
    model) instead of drawing fresh initial values.
    """
    schemas = split.schemas
    if len(sizes) != len(schemas):
        raise ConfigError("one size per field required")
    model = FixedSizeModel(config, schemas, sizes, seed=seed, with_transform=True)
    if inherit_from is not None:
        _warm_start(model, inherit_from, sizes)
    losses = model.fit(split.train, epochs=epochs, batch_size=batch_size,
                       rng=RngStream(seed).child("batches"))
    metrics = model.evaluate(split.test)
    return RetrainResult(
        model=model, sizes=list(sizes), auc=metrics["auc"],
        logloss=metrics["logloss"],
        p_r=parameter_reduction(schemas, sizes, baseline_size),
        flops=flops_estimate(sizes, schemas, config),
        epoch_losses=losses, seed=seed)


def _warm_start(model: FixedSizeModel, net: Supernet, sizes: list[int]) -> None:
    if net.candidates.sizes != tuple(sorted(set(net.candidates.sizes))):
        raise ConfigError("supernet candidate set is malformed")
    for d in sizes:
        if d not in net.candidates.sizes:
            raise ConfigError(f"size {d} not in supernet candidates")
    for i, d in enumerate(sizes):
        j = net.candidates.sizes.index(d)
        model.tables[i].data[:] = net.candidate_array(i, j)
    for d in model.transforms:
        src_affine, src_bn = net.transforms[d]
        dst_affine, dst_bn = model.transforms[d]
        dst_affine.W.data[:] = src_affine.W.data
        dst_affine.b.data[:] = src_affine.b.data
        dst_bn.gamma.data[:] = src_bn.gamma.data
        dst_bn.beta.data[:] = src_bn.beta.data
        dst_bn.running_mean[:] = src_bn.running_mean
        dst_bn.running_var[:] = src_bn.running_var
    for src, dst in zip(net.main.parameters(), model.main.parameters()):
        if src.data.shape != dst.data.shape:
            raise ConfigError(f"main-model shape mismatch for {src.name}")
        dst.data[:] = src.data


def build_report(result: RetrainResult, schemas: list[FieldSchema],
                 config: ModelConfig) -> dict:
    """The run's summary as plain JSON-ready data; key order is canonical."""
    return {
        "assignment": {s.name: d for s, d in zip(schemas, result.sizes)},
        "auc": result.auc,
        "config_hash": config_hash(config),
        "flops": result.flops,
        "logloss": result.logloss,
        "p_r": result.p_r,
        "seed": result.seed,
    }
