"""Metrics and experiment harnesses.

Metrics: rank-based AUC, LogLoss, tie-adjusted Kendall tau. Harnesses built on
them: supernet consistency (do inherited-weight scores rank architectures the
way stand-alone training does?) and search stability (does the size search land
on the same answer across seeds?).
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .core.rng import RngStream
from .errors import MetricError


def auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic; ties count 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricError("scores and labels must be equal-length vectors")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos + n_neg != len(y):
        raise MetricError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined with a single class")
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    pos_rank_sum = float(ranks[y == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def log_loss(probs, labels) -> float:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1-1e-7]."""
    p = np.clip(np.asarray(probs, dtype=np.float64), 1e-7, 1.0 - 1e-7)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1 or len(p) == 0:
        raise MetricError("probs and labels must be equal-length non-empty vectors")
    return float(np.mean(-y * np.log(p) - (1.0 - y) * np.log(1.0 - p)))


def kendall_tau(a, b) -> float:
    """Tie-adjusted rank correlation (tau-b) by exhaustive pair counting."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError("rankings must be equal-length vectors")
    n = len(x)
    if n < 2:
        raise MetricError("kendall tau needs at least 2 items")
    concordant = discordant = ties_x = ties_y = 0
    for i in range(n - 1):
        dx = x[i + 1:] - x[i]
        dy = y[i + 1:] - y[i]
        prod = dx * dy
        concordant += int(np.sum(prod > 0))
        discordant += int(np.sum(prod < 0))
        ties_x += int(np.sum((dx == 0) & (dy != 0)))
        ties_y += int(np.sum((dy == 0) & (dx != 0)))
    denom = np.sqrt((concordant + discordant + ties_x)
                    * (concordant + discordant + ties_y))
    if denom == 0:
        raise MetricError("kendall tau undefined: a ranking is constant")
    return float((concordant - discordant) / denom)


# -- experiment harnesses ---------------------------------------------------

@dataclass(frozen=True)
class RankingPair:
    architecture: tuple[int, ...]
    score_inherited: float
    score_standalone: float

    def __post_init__(self):
        for v in (self.score_inherited, self.score_standalone):
            if not 0.0 <= v <= 1.0:
                raise MetricError(f"score {v} outside [0, 1]")


def tau_of_pairs(pairs: "list[RankingPair]") -> float:
    return kendall_tau([p.score_inherited for p in pairs],
                       [p.score_standalone for p in pairs])


@dataclass
class ConsistencyRow:
    architecture: tuple[int, ...]
    sizes: tuple[int, ...]
    auc_inherited: float
    auc_standalone: float
    logloss_inherited: float
    logloss_standalone: float


@dataclass
class ConsistencyResult:
    k: int
    tau_auc: float
    tau_logloss: float
    rows: list[ConsistencyRow]


def _distinct_assignments(m: int, t: int, k: int, rng) -> list[tuple[int, ...]]:
    total = t ** m
    if k > total:
        warnings.warn(f"requested {k} assignments but only {total} exist; capped",
                      stacklevel=3)
        k = total
    if k == total:
        chosen = list(itertools.product(range(t), repeat=m))
    else:
        seen: set[tuple[int, ...]] = set()
        while len(seen) < k:
            seen.add(tuple(int(v) for v in rng.integers(0, t, size=m)))
        chosen = list(seen)
    return sorted(chosen)


def _standalone_unit(net, split, block, retrain_epochs, batch_size, item):
    """Retrain one architecture from scratch and score it (pool-friendly)."""
    from .models import FixedSizeModel

    idx, arch = item
    sizes = [int(net.candidates.sizes[j]) for j in arch]
    model = FixedSizeModel(net.config, net.schemas, sizes,
                           seed=1_000_003 + idx, with_transform=True)
    model.fit(split.train, epochs=retrain_epochs, batch_size=batch_size,
              rng=RngStream(1_000_003 + idx).child("batches"))
    st = model.predict(block)
    return auc(st, block.labels), log_loss(st, block.labels)


def consistency_eval(net, split, k, rng, retrain_epochs: int = 2,
                     batch_size: int = 256, eval_samples: int = 10_240,
                     standalone_fn=None, map_fn=map) -> ConsistencyResult:
    """Do inherited supernet weights rank architectures like stand-alone training?

    Samples ``k`` distinct assignments from the candidate grid, scores each
    twice — once with inherited supernet weights, once freshly retrained on a
    short fixed budget — on the identical validation subsample, and returns the
    Kendall tau between the two rankings for AUC and for LogLoss.

    ``standalone_fn(selection, block) -> (auc, logloss)`` replaces the
    retraining leg when given (testing hook). ``map_fn`` runs the independent
    retrainings; pass an executor's map to parallelize — results are consumed
    in input order, so the outcome is identical either way.
    """
    from functools import partial
    from .supernet import evaluate_subnet

    if k < 2:
        raise MetricError("consistency evaluation needs at least 2 architectures")
    m, t = net.n_fields, net.candidates.count
    n_valid = split.valid.n_samples
    take = min(n_valid, eval_samples)
    order = rng.child("eval").permutation(n_valid)[:take]
    block = split.valid.take(np.sort(order))
    include = np.ones(m, dtype=bool)

    archs = _distinct_assignments(m, t, k, rng.child("archs"))
    if standalone_fn is not None:
        standalone = [standalone_fn(np.asarray(a, dtype=np.int64), block)
                      for a in archs]
    else:
        unit = partial(_standalone_unit, net, split, block,
                       retrain_epochs, batch_size)
        standalone = list(map_fn(unit, list(enumerate(archs))))

    rows = []
    for arch, (auc_st, ll_st) in zip(archs, standalone):
        selection = np.asarray(arch, dtype=np.int64)
        sizes = tuple(net.candidates.sizes[j] for j in arch)
        probs = evaluate_subnet(net, selection, include, block)
        auc_in = auc(probs, block.labels)
        ll_in = log_loss(probs, block.labels)
        rows.append(ConsistencyRow(arch, sizes, auc_in, auc_st, ll_in, ll_st))

    return ConsistencyResult(
        k=len(rows),
        tau_auc=kendall_tau([r.auc_inherited for r in rows],
                            [r.auc_standalone for r in rows]),
        tau_logloss=kendall_tau([r.logloss_inherited for r in rows],
                                [r.logloss_standalone for r in rows]),
        rows=rows)


def consistency_report(result: ConsistencyResult) -> dict:
    return {
        "K": result.k,
        "rows": [{
            "architecture": list(r.architecture),
            "auc_inherited": r.auc_inherited,
            "auc_standalone": r.auc_standalone,
            "logloss_inherited": r.logloss_inherited,
            "logloss_standalone": r.logloss_standalone,
            "sizes": list(r.sizes),
        } for r in result.rows],
        "tau_auc": result.tau_auc,
        "tau_logloss": result.tau_logloss,
    }


@dataclass
class StabilityReport:
    field_names: list[str]
    sizes: tuple[int, ...]
    histogram: np.ndarray          # (M, T) counts over R searches
    runs: int

    def __post_init__(self):
        if self.histogram.shape != (len(self.field_names), len(self.sizes)):
            raise MetricError("histogram shape must be fields x candidates")
        if np.any(self.histogram.sum(axis=1) != self.runs):
            raise MetricError("per-field histogram counts must sum to the run count")

    @property
    def mode_sizes(self) -> list[int]:
        return [int(self.sizes[j]) for j in np.argmax(self.histogram, axis=1)]

    @property
    def mode_frequency(self) -> np.ndarray:
        return self.histogram.max(axis=1) / self.runs


def _search_unit(net, split, config):
    """Run one search and return its selection (pool-friendly)."""
    from .search import run_search
    return [int(j) for j in run_search(net, split, config).selection]


def stability_eval(net, split, search_config, seeds, search_fn=None,
                   map_fn=map) -> StabilityReport:
    """Repeat the search across seeds and histogram the chosen size per field.

    ``map_fn`` runs the independent searches; pass an executor's map to
    parallelize — selections are consumed in seed order either way.
    """
    from dataclasses import replace
    from functools import partial

    seed_list = sorted(seeds)
    configs = [replace(search_config, seed=seed) for seed in seed_list]
    if search_fn is not None:
        selections = [search_fn(net, split, cfg).selection for cfg in configs]
    else:
        selections = list(map_fn(partial(_search_unit, net, split), configs))

    m, t = net.n_fields, net.candidates.count
    hist = np.zeros((m, t), dtype=np.int64)
    for selection in selections:
        for i, j in enumerate(selection):
            hist[i, int(j)] += 1
    return StabilityReport([s.name for s in net.schemas], net.candidates.sizes,
                           hist, len(seed_list))


def stability_csv(report: StabilityReport) -> str:
    """Field-by-size histogram, one row per field."""
    header = "field," + ",".join(f"d{d}" for d in report.sizes)
    lines = [header]
    for name, counts in zip(report.field_names, report.histogram):
        lines.append(name + "," + ",".join(str(int(c)) for c in counts))
    return "\n".join(lines) + "\n"
