"""Weight-sharing supernet over candidate embedding sizes.

One model holds every candidate width per field, under one of two storage
schemes: ``independent`` keeps a separate table per (field, width);
``shared`` keeps a single max-width table per field and reads candidate j as
its first d_j columns (so narrower candidates alias the wide table). A bank of
width-keyed transforms (affine + batchnorm, shared across fields) projects
whichever width was sampled to the unified input size of the main model.

Training draws one subnet per batch from a sampler, updates only the touched
parameters, and feeds table-variance and gradient-magnitude signals back to
the sampler.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import autograd as ag
from .core.autograd import Tensor
from .core.checkpoint import read_container, write_container
from .core.layers import Affine, BatchNorm, Parameter, embedding_init
from .core.optim import Adam, zero_grads
from .core.rng import RngStream
from .data import DatasetSplit, FieldSchema, SampleBlock, iter_batches, schema_hash
from .errors import ConfigError, DataError, StaleArtifactError
from .models import (MainModel, ModelConfig, _stable_sigmoid, embed_lookup,
                     grouped_transform)

SCHEMES = ("independent", "shared")
DEFAULT_CANDIDATES = (2, 8, 16, 32, 64)


@dataclass(frozen=True)
class CandidateSet:
    sizes: tuple[int, ...] = DEFAULT_CANDIDATES

    def __post_init__(self):
        if not self.sizes:
            raise ConfigError("candidate set must not be empty")
        if any(d < 1 for d in self.sizes):
            raise ConfigError("candidate sizes must be >= 1")
        if any(a >= b for a, b in zip(self.sizes, self.sizes[1:])):
            raise ConfigError("candidate sizes must be strictly ascending")

    @property
    def count(self) -> int:
        return len(self.sizes)

    @property
    def max_size(self) -> int:
        return self.sizes[-1]


def embedding_param_count(schemas: list[FieldSchema], candidates: CandidateSet,
                          scheme: str) -> int:
    cards = sum(s.cardinality for s in schemas)
    if scheme == "independent":
        return cards * sum(candidates.sizes)
    if scheme == "shared":
        return cards * candidates.max_size
    raise ConfigError(f"unknown scheme {scheme!r}")


def assignment_param_count(schemas: list[FieldSchema], sizes: list[int]) -> int:
    if len(sizes) != len(schemas):
        raise ConfigError("one size per field required")
    return sum(s.cardinality * d for s, d in zip(schemas, sizes))


def parameter_reduction(schemas: list[FieldSchema], sizes: list[int],
                        baseline_size: int = 32) -> float:
    """Embedding-parameter reduction relative to a uniform baseline width."""
    base = sum(s.cardinality * baseline_size for s in schemas)
    return 1.0 - assignment_param_count(schemas, sizes) / base


class Supernet:
    """Candidate tables + transform bank + main model, trained jointly."""

    def __init__(self, config: ModelConfig, schemas: list[FieldSchema],
                 candidates: CandidateSet, scheme: str, seed: int):
        if scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {scheme!r}")
        self.config = config
        self.schemas = schemas
        self.candidates = candidates
        self.scheme = scheme
        self.seed = seed
        dt = config.np_dtype
        root = RngStream(seed)
        init = root.child("init")

        self.tables: list[list[Parameter]] | list[Parameter]
        if scheme == "independent":
            self.tables = [
                [Parameter(embedding_init(s.cardinality, d,
                                          init.child(f"emb/{i}/d{d}"), dtype=dt),
                           f"emb/{i}/d{d}")
                 for d in candidates.sizes]
                for i, s in enumerate(schemas)]
        else:
            d_max = candidates.max_size
            self.tables = [
                Parameter(embedding_init(s.cardinality, d_max,
                                         init.child(f"emb/{i}/d{d_max}"), dtype=dt),
                          f"emb/{i}")
                for i, s in enumerate(schemas)]

        self.transforms: dict[int, tuple[Affine, BatchNorm]] = {
            d: (Affine(d, config.d_f, init.child(f"transform/d{d}"),
                       f"transform/d{d}", dtype=dt),
                BatchNorm(config.d_f, f"transform/d{d}/bn", dtype=dt))
            for d in candidates.sizes}
        self.main = MainModel(config, schemas, config.d_f, init.child("main"))
        self.opt = Adam(lr=config.learning_rate)
        self.batches_trained = 0

    # -- accessors ---------------------------------------------------------

    @property
    def n_fields(self) -> int:
        return len(self.schemas)

    def candidate_array(self, i: int, j: int) -> np.ndarray:
        """Raw candidate table values; in the shared scheme this is a live view
        of the max-table's leading columns."""
        d = self.candidates.sizes[j]
        if self.scheme == "independent":
            return self.tables[i][j].data
        return self.tables[i].data[:, :d]

    def table_parameter(self, i: int, j: int) -> Parameter:
        return self.tables[i][j] if self.scheme == "independent" else self.tables[i]

    def embedding_params(self) -> int:
        if self.scheme == "independent":
            return sum(t.data.size for row in self.tables for t in row)
        return sum(t.data.size for t in self.tables)

    def table_variances(self) -> np.ndarray:
        """(M, T) value variance per candidate table — the sampler's signal."""
        out = np.empty((self.n_fields, self.candidates.count))
        for i in range(self.n_fields):
            for j in range(self.candidates.count):
                out[i, j] = float(np.var(self.candidate_array(i, j)))
        return out

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        if self.scheme == "independent":
            for row in self.tables:
                params.extend(row)
        else:
            params.extend(self.tables)
        for d in self.candidates.sizes:
            affine, bn = self.transforms[d]
            params.extend(affine.parameters())
            params.extend(bn.parameters())
        params.extend(self.main.parameters())
        return params

    # -- forward -----------------------------------------------------------

    def _candidate_embedding(self, i: int, j: int, block: SampleBlock) -> Tensor:
        d = self.candidates.sizes[j]
        if self.scheme == "independent":
            return embed_lookup(self.tables[i][j], block.columns[i])
        full = embed_lookup(self.tables[i], block.columns[i])
        if d == self.candidates.max_size:
            return full
        return ag.slice_cols(full, 0, d)

    def forward(self, selection: np.ndarray, include: np.ndarray, block: SampleBlock,
                train: bool, collect: list | None = None) -> Tensor:
        """Subnet forward pass. ``collect`` (if given) receives the per-field
        pre-transform embedding tensors (None for excluded fields)."""
        selection = np.asarray(selection, dtype=np.int64)
        include = np.asarray(include, dtype=bool)
        if len(selection) != self.n_fields or len(include) != self.n_fields:
            raise ConfigError("selection and inclusion must cover every field")
        if np.any((selection < 0) | (selection >= self.candidates.count)):
            raise ConfigError("candidate index out of range")
        embs: list[Tensor | None] = []
        sizes: list[int] = []
        for i in range(self.n_fields):
            if include[i]:
                embs.append(self._candidate_embedding(i, int(selection[i]), block))
            else:
                embs.append(None)
            sizes.append(self.candidates.sizes[int(selection[i])])
        if collect is not None:
            collect.extend(embs)
        projected = grouped_transform(embs, sizes, self.transforms, train)
        return self.main.forward_from_embeddings(projected, block, train)

    # -- training ----------------------------------------------------------

    def train_batch(self, block: SampleBlock, selection: np.ndarray,
                    include: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        """One step on one sampled subnet.

        Returns (loss, per-field mean |embedding gradient|, per-field mean
        |embedding value|) — the feedback signals for inclusion-rate updates.
        Only touched parameters move: sampled candidate tables (row- and, in
        the shared scheme, column-restricted), sampled transforms, and the
        main model.
        """
        selection = np.asarray(selection, dtype=np.int64)
        include = np.asarray(include, dtype=bool)
        params = self.parameters()
        zero_grads(params)
        raw_embs: list[Tensor | None] = []
        loss = ag.bce_with_logits(
            self.forward(selection, include, block, train=True, collect=raw_embs),
            block.labels.astype(self.config.np_dtype))
        loss.backward()

        grad_scores = np.zeros(self.n_fields)
        value_scores = np.zeros(self.n_fields)
        for i, emb in enumerate(raw_embs):
            if emb is None:
                continue
            value_scores[i] = float(np.mean(np.abs(emb.data)))
            if emb.grad is not None:
                grad_scores[i] = float(np.mean(np.abs(emb.grad)))

        sampled_sizes = set()
        for i in range(self.n_fields):
            if not include[i]:
                continue
            j = int(selection[i])
            d = self.candidates.sizes[j]
            sampled_sizes.add(d)
            rows = np.unique(block.columns[i].values)
            if self.scheme == "independent":
                self.opt.step_param(self.tables[i][j], rows=rows)
            else:
                col_end = None if d == self.candidates.max_size else d
                self.opt.step_param(self.tables[i], rows=rows, col_end=col_end)
        for d in sorted(sampled_sizes):
            affine, bn = self.transforms[d]
            for p in affine.parameters() + bn.parameters():
                self.opt.step_param(p)
        for layer in self.main.mlp:
            for p in layer.parameters():
                self.opt.step_param(p)
        self.opt.step_param(self.main.bias)
        for i, scalar in enumerate(self.main.scalars):
            if not include[i]:
                continue
            self.opt.step_param(scalar, rows=np.unique(block.columns[i].values))
        self.batches_trained += 1
        return loss.item(), grad_scores, value_scores

    # -- checkpointing -----------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        records = {p.name: p.data for p in self.parameters()}
        for d in self.candidates.sizes:
            records.update(self.transforms[d][1].state_arrays())
        return records

    def save(self, path, data_schema_hash: str, sampler_state: dict | None = None) -> None:
        records = self.state_arrays()
        meta = {
            "scheme": self.scheme,
            "candidates": list(self.candidates.sizes),
            "d_f": self.config.d_f,
            "architecture": self.config.architecture,
            "hidden": list(self.config.hidden),
            "dtype": self.config.dtype,
            "seed": self.seed,
            "schema_hash": data_schema_hash,
            "schemas": [{"name": s.name, "cardinality": s.cardinality,
                         "multi_valued": s.multi_valued} for s in self.schemas],
            "batches_trained": self.batches_trained,
            "learning_rate": self.config.learning_rate,
        }
        records["meta"] = np.frombuffer(
            json.dumps(meta, sort_keys=True, separators=(",", ":")).encode(),
            dtype=np.uint8).copy()
        if sampler_state:
            for k, v in sampler_state.items():
                records[f"sampler/{k}"] = v
        write_container(path, records, version=2)


def load_supernet(path, expected_schema_hash: str | None = None
                  ) -> tuple[Supernet, dict[str, np.ndarray]]:
    """Rebuild a supernet from its checkpoint.

    Returns (supernet, sampler state arrays). When ``expected_schema_hash`` is
    given it must match the hash stored at save time, otherwise the artifact
    belongs to a different dataset.
    """
    version, records = read_container(path)
    if version != 2 or "meta" not in records:
        raise DataError(f"{path}: not a supernet checkpoint")
    meta = json.loads(records["meta"].tobytes().decode())
    if expected_schema_hash is not None and meta["schema_hash"] != expected_schema_hash:
        raise StaleArtifactError(
            f"{path}: checkpoint was built for a different dataset "
            f"(schema {meta['schema_hash'][:12]}.. != {expected_schema_hash[:12]}..)")
    schemas = [FieldSchema(s["name"], s["cardinality"], s["multi_valued"])
               for s in meta["schemas"]]
    config = ModelConfig(architecture=meta["architecture"],
                         hidden=tuple(meta["hidden"]), d_f=meta["d_f"],
                         learning_rate=meta["learning_rate"], dtype=meta["dtype"])
    net = Supernet(config, schemas, CandidateSet(tuple(meta["candidates"])),
                   meta["scheme"], meta["seed"])
    dt = config.np_dtype
    for p in net.parameters():
        if p.name not in records:
            raise DataError(f"{path}: checkpoint missing parameter {p.name}")
        if records[p.name].shape != p.data.shape:
            raise DataError(f"{path}: checkpoint shape mismatch for {p.name}")
        p.data[:] = records[p.name].astype(dt)
    for d in net.candidates.sizes:
        net.transforms[d][1].load_state({k: v.astype(dt) for k, v in records.items()})
    net.batches_trained = meta["batches_trained"]
    sampler_state = {k[len("sampler/"):]: v for k, v in records.items()
                     if k.startswith("sampler/")}
    return net, sampler_state


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    p_e: np.ndarray | None
    p_f: np.ndarray | None


def train_supernet(net: Supernet, sampler, split: DatasetSplit, epochs: int,
                   batch_size: int, run_seed: int,
                   batch_losses: list[float] | None = None) -> list[EpochRecord]:
    """The supernet training loop.

    Per batch: draw a subnet from the sampler, take one descent step on its
    touched parameters, then hand the sampler its feedback (candidate-table
    variances plus embedding gradient/value magnitudes). Returns per-epoch
    records with rate snapshots for diagnostics.
    """
    batches_rng = RngStream(run_seed).child("batches")
    n = split.train.n_samples
    history: list[EpochRecord] = []
    for epoch in range(epochs):
        epoch_rng = batches_rng.child(f"epoch/{epoch}")
        total, count = 0.0, 0
        for idx in iter_batches(n, batch_size, epoch_rng, drop_last=True):
            block = split.train.take(idx)
            selection, include = sampler.sample()
            loss, grad_scores, value_scores = net.train_batch(block, selection, include)
            sampler.observe(net.table_variances(), include, grad_scores, value_scores)
            total += loss
            count += 1
            if batch_losses is not None:
                batch_losses.append(loss)
        rates = getattr(sampler, "rates", None)
        history.append(EpochRecord(
            epoch, total / max(count, 1),
            None if rates is None else rates.p_e.copy(),
            None if rates is None else rates.p_f.copy()))
    return history


def evaluate_subnet(net: Supernet, selection: np.ndarray, include: np.ndarray,
                    block: SampleBlock, batch_size: int = 4096) -> np.ndarray:
    """Inference-mode probabilities for one subnet; never mutates the supernet."""
    out = np.empty(block.n_samples, dtype=np.float64)
    for idx in iter_batches(block.n_samples, batch_size):
        logits = net.forward(selection, include, block.take(idx), train=False)
        out[idx] = _stable_sigmoid(logits.data.reshape(-1))
    return out
