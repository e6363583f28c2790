"""Base recommenders: an embedding layer feeding an MLP tower, with optional
factorization-machine and per-value scalar terms.

Two classic shapes fall out of the config: a wide-and-deep model (MLP plus a
per-value linear "wide" term) and a deep FM (MLP plus pairwise interactions
plus first-order effects). Both read M fields, each embedded and optionally
projected to a unified width, concatenated into the tower.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import auc, log_loss
from .core import autograd as ag
from .core.autograd import Tensor
from .core.checkpoint import read_container, write_container
from .core.layers import Affine, BatchNorm, Parameter, embedding_init
from .core.optim import Adam, zero_grads
from .core.rng import RngStream
from .data import FieldColumn, FieldSchema, SampleBlock, iter_batches
from .errors import ConfigError, DataError, DegenerateBatchError

ARCHITECTURES = ("wide_deep", "deep_fm")


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "deep_fm"
    hidden: tuple[int, ...] = (128, 64, 1)
    d_f: int = 16
    learning_rate: float = 0.001
    use_wide: bool | None = None         # per-value linear term (wide&deep reading)
    use_fm: bool | None = None           # pairwise interaction term
    use_first_order: bool | None = None  # per-value scalar term (FM reading)
    dtype: str = "float64"

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if not self.hidden or self.hidden[-1] != 1:
            raise ConfigError("hidden widths must end in 1")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")
        if self.d_f < 1:
            raise ConfigError("d_f must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")

    @property
    def wide_enabled(self) -> bool:
        if self.use_wide is not None:
            return self.use_wide
        return self.architecture == "wide_deep"

    @property
    def fm_enabled(self) -> bool:
        if self.use_fm is not None:
            return self.use_fm
        return self.architecture == "deep_fm"

    @property
    def first_order_enabled(self) -> bool:
        if self.use_first_order is not None:
            return self.use_first_order
        return self.architecture == "deep_fm"

    @property
    def scalar_enabled(self) -> bool:
        return self.wide_enabled or self.first_order_enabled

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


def embed_lookup(table: Tensor, col: FieldColumn) -> Tensor:
    """Embed one field: indexed row for singletons, mean of rows for multi-hot."""
    if np.any(col.counts() < 1):
        raise DataError("sample with no value in embedding lookup")
    return ag.gather_mean(table, col.values, col.offsets)


def grouped_transform(embs: list[Tensor | None], sizes: list[int],
                      transforms: dict[int, tuple[Affine, BatchNorm]],
                      train: bool) -> list[Tensor | None]:
    """Project per-field embeddings to the unified width.

    Fields sharing a source width share one affine + batchnorm; their rows are
    stacked into a single call so batch statistics are computed jointly and
    deterministically (ascending width, then field order).
    """
    out: list[Tensor | None] = list(embs)
    by_size: dict[int, list[int]] = {}
    for i, e in enumerate(embs):
        if e is not None:
            by_size.setdefault(sizes[i], []).append(i)
    for size in sorted(by_size):
        members = by_size[size]
        affine, bn = transforms[size]
        stacked = embs[members[0]] if len(members) == 1 \
            else ag.concat_rows([embs[i] for i in members])
        projected = bn(affine(stacked), train=train)
        if len(members) == 1:
            out[members[0]] = projected
        else:
            b = embs[members[0]].data.shape[0]
            for k, i in enumerate(members):
                out[i] = ag.slice_rows(projected, k * b, (k + 1) * b)
    return out


class MainModel:
    """Everything after the embeddings: MLP tower, optional FM and scalar terms."""

    def __init__(self, config: ModelConfig, schemas: list[FieldSchema],
                 input_width: int, rng: RngStream):
        self.config = config
        self.schemas = schemas
        self.input_width = input_width
        dt = config.np_dtype
        widths = [input_width * len(schemas)] + list(config.hidden)
        self.mlp = [Affine(widths[k], widths[k + 1], rng.child(f"mlp/{k}"),
                           f"mlp/{k}", dtype=dt)
                    for k in range(len(config.hidden))]
        self.bias = Parameter(np.zeros((1, 1), dtype=dt), "bias")
        self.scalars: list[Parameter] = []
        if config.scalar_enabled:
            self.scalars = [Parameter(np.zeros((s.cardinality, 1), dtype=dt),
                                      f"scalar/{i}")
                            for i, s in enumerate(schemas)]

    def forward_from_embeddings(self, embs: list[Tensor | None], block: SampleBlock,
                                train: bool) -> Tensor:
        del train  # uniform signature with transform-bearing wrappers
        cfg = self.config
        b = block.n_samples
        dt = cfg.np_dtype
        for e in embs:
            if e is not None and e.data.shape[1] != self.input_width:
                raise ConfigError(
                    f"embedding width {e.data.shape[1]} != unified width {self.input_width}")
        parts = [e if e is not None else Tensor(np.zeros((b, self.input_width), dtype=dt))
                 for e in embs]
        h = ag.concat_cols(parts)
        for k, layer in enumerate(self.mlp):
            h = layer(h)
            if k + 1 < len(self.mlp):
                h = ag.relu(h)
        logit = h
        present = [e for e in embs if e is not None]
        if cfg.fm_enabled and len(present) >= 2:
            total = present[0]
            sq = ag.mul(present[0], present[0])
            for e in present[1:]:
                total = ag.add(total, e)
                sq = ag.add(sq, ag.mul(e, e))
            fm = ag.mul(ag.sum_axis(ag.add(ag.mul(total, total), ag.mul(sq, -1.0)), 1), 0.5)
            logit = ag.add(logit, fm)
        if cfg.scalar_enabled:
            for i, e in enumerate(embs):
                if e is None:
                    continue
                logit = ag.add(logit, embed_lookup(self.scalars[i], block.columns[i]))
        return ag.add(logit, self.bias)

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for layer in self.mlp:
            params.extend(layer.parameters())
        params.append(self.bias)
        params.extend(self.scalars)
        return params


class FixedSizeModel:
    """A recommender with one fixed embedding size per field.

    ``with_transform=False`` is the classic uniform-size model: all fields share
    one width feeding the tower directly. ``with_transform=True`` allows mixed
    per-field widths, projected to ``d_f`` through width-shared affine+batchnorm
    blocks (the same layout the weight-sharing trainer uses).
    """

    def __init__(self, config: ModelConfig, schemas: list[FieldSchema],
                 sizes: list[int], seed: int, with_transform: bool = True):
        if len(sizes) != len(schemas):
            raise ConfigError("one size per field required")
        if any(d < 1 for d in sizes):
            raise ConfigError("embedding sizes must be >= 1")
        if not with_transform and len(set(sizes)) > 1:
            raise ConfigError("mixed sizes require the unifying transform")
        self.config = config
        self.schemas = schemas
        self.sizes = list(sizes)
        self.with_transform = with_transform
        self.seed = seed
        dt = config.np_dtype
        root = RngStream(seed)
        init = root.child("init")
        self.tables = [
            Parameter(embedding_init(s.cardinality, d, init.child(f"emb/{i}/d{d}"),
                                     dtype=dt), f"emb/{i}")
            for i, (s, d) in enumerate(zip(schemas, sizes))]
        self.transforms: dict[int, tuple[Affine, BatchNorm]] = {}
        if with_transform:
            for d in sorted(set(sizes)):
                self.transforms[d] = (
                    Affine(d, config.d_f, init.child(f"transform/d{d}"),
                           f"transform/d{d}", dtype=dt),
                    BatchNorm(config.d_f, f"transform/d{d}/bn", dtype=dt))
            main_width = config.d_f
        else:
            main_width = sizes[0]
        self.main = MainModel(config, schemas, main_width, init.child("main"))
        self.opt = Adam(lr=config.learning_rate)

    # -- forward / training ------------------------------------------------

    def forward(self, block: SampleBlock, train: bool) -> Tensor:
        embs: list[Tensor | None] = [
            embed_lookup(t, c) for t, c in zip(self.tables, block.columns)]
        if self.with_transform:
            embs = grouped_transform(embs, self.sizes, self.transforms, train)
        return self.main.forward_from_embeddings(embs, block, train)

    def parameters(self) -> list[Parameter]:
        params = list(self.tables)
        for d in sorted(self.transforms):
            affine, bn = self.transforms[d]
            params.extend(affine.parameters())
            params.extend(bn.parameters())
        params.extend(self.main.parameters())
        return params

    def train_step(self, block: SampleBlock) -> float:
        if block.n_samples == 0:
            raise DegenerateBatchError("empty training batch")
        zero_grads(self.parameters())
        loss = ag.bce_with_logits(self.forward(block, train=True),
                                  block.labels.astype(self.config.np_dtype))
        loss.backward()
        for i, table in enumerate(self.tables):
            rows = np.unique(block.columns[i].values)
            self.opt.step_param(table, rows=rows)
        for d in sorted(self.transforms):
            affine, bn = self.transforms[d]
            for p in affine.parameters() + bn.parameters():
                self.opt.step_param(p)
        for layer in self.main.mlp:
            for p in layer.parameters():
                self.opt.step_param(p)
        self.opt.step_param(self.main.bias)
        for i, scalar in enumerate(self.main.scalars):
            rows = np.unique(block.columns[i].values)
            self.opt.step_param(scalar, rows=rows)
        return loss.item()

    def fit(self, train_block: SampleBlock, epochs: int, batch_size: int,
            rng: RngStream) -> list[float]:
        """Epoch losses from shuffled mini-batch training."""
        losses = []
        n = train_block.n_samples
        for epoch in range(epochs):
            epoch_rng = rng.child(f"epoch/{epoch}")
            total, batches = 0.0, 0
            for idx in iter_batches(n, batch_size, epoch_rng, drop_last=True):
                total += self.train_step(train_block.take(idx))
                batches += 1
            if batches == 0:
                raise DegenerateBatchError(
                    f"batch size {batch_size} exceeds training set of {n}")
            losses.append(total / batches)
        return losses

    def predict(self, block: SampleBlock, batch_size: int = 4096) -> np.ndarray:
        """Probabilities in inference mode (running batchnorm statistics)."""
        out = np.empty(block.n_samples, dtype=np.float64)
        for idx in iter_batches(block.n_samples, batch_size):
            logits = self.forward(block.take(idx), train=False)
            out[idx] = _stable_sigmoid(logits.data.reshape(-1))
        return out

    def evaluate(self, block: SampleBlock, batch_size: int = 4096) -> dict:
        probs = self.predict(block, batch_size)
        return {"auc": auc(probs, block.labels),
                "logloss": log_loss(probs, block.labels)}

    # -- checkpointing -----------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        records = {p.name: p.data for p in self.parameters()}
        for d in sorted(self.transforms):
            records.update(self.transforms[d][1].state_arrays())
        return records

    def save(self, path) -> None:
        write_container(path, self.state_arrays(), version=1)

    def load(self, path) -> None:
        _, records = read_container(path)
        dt = self.config.np_dtype
        for p in self.parameters():
            if p.name not in records:
                raise DataError(f"checkpoint missing parameter {p.name}")
            if records[p.name].shape != p.data.shape:
                raise DataError(f"checkpoint shape mismatch for {p.name}")
            p.data[:] = records[p.name].astype(dt)
        for d in sorted(self.transforms):
            self.transforms[d][1].load_state(
                {k: v.astype(dt) for k, v in records.items()})


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out
