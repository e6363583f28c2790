"""Subnet samplers for weight-sharing training.

Each training step draws one subnet: a candidate width per field (embedding
selection) and a per-field inclusion flag (field selection). The adaptive
sampler keeps both distributions as state and moves them from training
feedback: candidate rates follow table-variance signals (less-trained
candidates get more chances), inclusion rates follow gradient/value magnitude
(fields that matter get more chances). Three fixed-rate baselines cover the
ablation grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core.rng import RngStream
from .errors import ConfigError

P_E_FLOOR = 1e-3
MAX_INCLUSION_REDRAWS = 16

# Below this size every reduction in the update rules runs over fewer than 8
# elements, where numpy sums are sequential — so scalar arithmetic produces
# bit-identical results while avoiding per-op dispatch overhead that would
# otherwise dominate each step on desk-scale schemas.
_SMALL = 8


def _is_small(m: int, t: int) -> bool:
    return m < _SMALL and t < _SMALL


@dataclass
class SampleRates:
    """Adaptive sampling state: candidate distributions and inclusion rates."""

    p_e: np.ndarray                 # (M, T), each row a distribution
    p_f: np.ndarray                 # (M,), inclusion probabilities
    eta_e: float = 0.05
    eta_f: float = 0.05
    lambda_fs: float = 0.6
    p_min: float = 0.1
    p_max: float = 0.95

    def __post_init__(self):
        self.p_e = np.asarray(self.p_e, dtype=np.float64)
        self.p_f = np.asarray(self.p_f, dtype=np.float64)
        if self.p_e.ndim != 2 or self.p_f.shape != (self.p_e.shape[0],):
            raise ConfigError("rate shapes inconsistent: need (M,T) and (M,)")
        if not 0.0 <= self.lambda_fs <= 1.0:
            raise ConfigError("lambda_fs must be in [0, 1]")
        if not 0.0 < self.p_min <= self.p_max < 1.0:
            raise ConfigError("need 0 < p_min <= p_max < 1")
        self.validate()

    @classmethod
    def initial(cls, n_fields: int, n_candidates: int, p_f_init: float = 0.6,
                **kw) -> "SampleRates":
        p_e = np.full((n_fields, n_candidates), 1.0 / n_candidates)
        p_f = np.full(n_fields, p_f_init)
        return cls(p_e, p_f, **kw)

    def validate(self) -> None:
        if np.any(self.p_e < P_E_FLOOR - 1e-12):
            raise ConfigError("candidate rate below floor")
        if not np.allclose(self.p_e.sum(axis=1), 1.0, atol=1e-9):
            raise ConfigError("candidate rate rows must sum to 1")
        if np.any(self.p_f < self.p_min - 1e-12) or np.any(self.p_f > self.p_max + 1e-12):
            raise ConfigError("inclusion rate outside clamps")


def project_row_to_floor_simplex(q: np.ndarray, floor: float = P_E_FLOOR) -> np.ndarray:
    """Nearest-in-spirit redistribution of a perturbed row back onto the simplex
    with a per-entry floor; rows already valid pass through unchanged."""
    t = len(q)
    if t * floor > 1.0:
        raise ConfigError("floor too large for row width")
    w = np.maximum(q, floor)
    excess = w - floor
    total = excess.sum()
    if total <= 0.0:
        return np.full(t, 1.0 / t)
    return floor + excess * ((1.0 - t * floor) / total)


def standardize(v: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance normalization; an all-equal vector maps to zeros."""
    m = v.mean()
    s = v.std()
    if s == 0.0 or not np.isfinite(s):
        return np.zeros_like(v)
    return (v - m) / s


def es_sample(p_e: np.ndarray, rng: RngStream) -> np.ndarray:
    """One candidate index per field, drawn from each row's distribution."""
    m, t = p_e.shape
    u = rng.random(m)
    if _is_small(m, t):
        return _es_sample_py(p_e, u)
    return _es_sample_np(p_e, u)


def _es_sample_np(p_e: np.ndarray, u: np.ndarray) -> np.ndarray:
    t = p_e.shape[1]
    cdf = np.cumsum(p_e, axis=1)
    out = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(out, t - 1)


def _es_sample_py(p_e: np.ndarray, u: np.ndarray) -> np.ndarray:
    t = p_e.shape[1]
    out = []
    for row, ui in zip(p_e.tolist(), u.tolist()):
        acc = 0.0
        c = 0
        for pj in row:
            acc += pj
            if acc <= ui:
                c += 1
        out.append(c if c < t else t - 1)
    return np.array(out, dtype=np.int64)


def fs_sample(p_f: np.ndarray, rng: RngStream) -> np.ndarray:
    """Independent per-field inclusion flags; an all-excluded draw is retried,
    and after the retry budget the highest-rate field is forced in."""
    m = len(p_f)
    if m < _SMALL:
        pf = p_f.tolist()
        for _ in range(MAX_INCLUSION_REDRAWS):
            u = rng.random(m).tolist()
            include = [ui < pi for ui, pi in zip(u, pf)]
            if any(include):
                return np.array(include, dtype=bool)
    else:
        for _ in range(MAX_INCLUSION_REDRAWS):
            include = rng.random(m) < p_f
            if include.any():
                return include
    include = np.zeros(m, dtype=bool)
    include[int(np.argmax(p_f))] = True
    return include


def update_pe(rates: SampleRates, table_variances: np.ndarray) -> None:
    """Shift candidate rates toward less-trained candidates.

    ``table_variances[i, j]`` is the value variance of field i's candidate-j
    table. Within each field the variances are standardized across candidates
    and subtracted (scaled by eta_e): lower variance ends up with more
    probability. Rows with all-equal variances stay untouched.
    """
    m, t = rates.p_e.shape
    if table_variances.shape != (m, t):
        raise ConfigError("variance matrix shape mismatch")
    if t * P_E_FLOOR > 1.0:
        raise ConfigError("floor too large for row width")
    if _is_small(m, t):
        _update_pe_py(rates, table_variances)
    else:
        _update_pe_np(rates, table_variances)


def _update_pe_np(rates: SampleRates, table_variances: np.ndarray) -> None:
    t = rates.p_e.shape[1]
    mean = table_variances.mean(axis=1, keepdims=True)
    std = table_variances.std(axis=1, keepdims=True)
    safe = np.isfinite(std) & (std > 0.0)
    direction = np.where(
        safe, (table_variances - mean) / np.where(safe, std, 1.0), 0.0)
    active = direction.any(axis=1)
    if not active.any():
        return
    q = rates.p_e[active] - rates.eta_e * direction[active]
    w = np.maximum(q, P_E_FLOOR)
    excess = w - P_E_FLOOR
    total = excess.sum(axis=1, keepdims=True)
    scale = (1.0 - t * P_E_FLOOR) / np.where(total > 0.0, total, 1.0)
    rates.p_e[active] = np.where(
        total > 0.0, P_E_FLOOR + excess * scale, 1.0 / t)


def _update_pe_py(rates: SampleRates, table_variances: np.ndarray) -> None:
    m, t = rates.p_e.shape
    eta = rates.eta_e
    span = 1.0 - t * P_E_FLOOR
    var_rows = table_variances.tolist()
    pe_rows = rates.p_e.tolist()
    changed = False
    for i in range(m):
        row = var_rows[i]
        s = 0.0
        for v in row:
            s += v
        mean = s / t
        d = [v - mean for v in row]
        s2 = 0.0
        for x in d:
            s2 += x * x
        std = math.sqrt(s2 / t)
        if std == 0.0 or not math.isfinite(std):
            continue
        direction = [x / std for x in d]
        if not any(x != 0.0 for x in direction):
            continue
        p_row = pe_rows[i]
        excess = [max(p_row[j] - eta * direction[j], P_E_FLOOR) - P_E_FLOOR
                  for j in range(t)]
        total = 0.0
        for x in excess:
            total += x
        if total > 0.0:
            scale = span / total
            pe_rows[i] = [P_E_FLOOR + x * scale for x in excess]
        else:
            pe_rows[i] = [1.0 / t] * t
        changed = True
    if changed:
        rates.p_e[:] = pe_rows


def update_pf(rates: SampleRates, sampled: np.ndarray, grad_scores: np.ndarray,
              value_scores: np.ndarray) -> None:
    """Shift inclusion rates toward fields whose embeddings carry more signal.

    ``grad_scores``/``value_scores`` hold the mean absolute embedding gradient
    and mean absolute embedding value for the fields sampled this step (mean
    per entry, which replaces a global 1/(M*T) normalization constant — any
    constant factor is removed by the standardization anyway). With fewer than
    two sampled fields the standardization is undefined and no update happens;
    unsampled fields are never touched.
    """
    if len(rates.p_f) < _SMALL:
        _update_pf_py(rates, sampled, grad_scores, value_scores)
    else:
        _update_pf_np(rates, sampled, grad_scores, value_scores)


def _update_pf_np(rates: SampleRates, sampled: np.ndarray,
                  grad_scores: np.ndarray, value_scores: np.ndarray) -> None:
    idx = np.flatnonzero(sampled)
    if len(idx) < 2:
        return
    scores = rates.lambda_fs * grad_scores[idx] + (1.0 - rates.lambda_fs) * value_scores[idx]
    direction = standardize(scores)
    rates.p_f[idx] = np.clip(rates.p_f[idx] + rates.eta_f * direction,
                             rates.p_min, rates.p_max)


def _update_pf_py(rates: SampleRates, sampled: np.ndarray,
                  grad_scores: np.ndarray, value_scores: np.ndarray) -> None:
    idx = [i for i, flag in enumerate(sampled.tolist()) if flag]
    k = len(idx)
    if k < 2:
        return
    lam = rates.lambda_fs
    rem = 1.0 - lam
    g = grad_scores.tolist()
    v = value_scores.tolist()
    scores = [lam * g[i] + rem * v[i] for i in idx]
    s = 0.0
    for x in scores:
        s += x
    mean = s / k
    d = [x - mean for x in scores]
    s2 = 0.0
    for x in d:
        s2 += x * x
    std = math.sqrt(s2 / k)
    if std == 0.0 or not math.isfinite(std):
        return
    eta = rates.eta_f
    p_min, p_max = rates.p_min, rates.p_max
    p_f = rates.p_f
    pf_list = p_f.tolist()
    for pos, i in enumerate(idx):
        p_f[i] = min(max(pf_list[i] + eta * (d[pos] / std), p_min), p_max)


class AdaptiveSampler:
    """Two-layer sampler with learned candidate and inclusion rates."""

    kind = "adaptive"

    def __init__(self, rates: SampleRates, rng: RngStream):
        self.rates = rates
        self.rng = rng

    def sample(self) -> tuple[np.ndarray, np.ndarray]:
        selection = es_sample(self.rates.p_e, self.rng)
        include = fs_sample(self.rates.p_f, self.rng)
        return selection, include

    def observe(self, table_variances: np.ndarray, sampled: np.ndarray,
                grad_scores: np.ndarray, value_scores: np.ndarray) -> None:
        update_pe(self.rates, table_variances)
        update_pf(self.rates, sampled, grad_scores, value_scores)


class _FixedRateSampler:
    """Baselines: constant inclusion and candidate rates, feedback ignored."""

    kind = "fixed"

    def __init__(self, inclusion: np.ndarray, candidate: np.ndarray, rng: RngStream):
        self.rates = SampleRates(candidate, np.clip(inclusion, 0.1, 0.95))
        self.rng = rng

    def sample(self) -> tuple[np.ndarray, np.ndarray]:
        selection = es_sample(self.rates.p_e, self.rng)
        include = fs_sample(self.rates.p_f, self.rng)
        return selection, include

    def observe(self, *_args) -> None:
        return


def make_sampler(kind: str, cardinalities: list[int], candidates: list[int],
                 rng: RngStream, rate_kwargs: dict | None = None):
    """Build a sampler by name.

    random:          inclusion 0.6, candidates uniform.
    vanilla_uniform: inclusion 0.6, candidate probability proportional to width.
    weight_uniform:  inclusion proportional to field cardinality (normalized to
                     mean 0.6, clamped), candidate probability proportional to width.
    adaptive:        learned rates starting uniform / 0.6.
    """
    m, t = len(cardinalities), len(candidates)
    if m < 1 or t < 1:
        raise ConfigError("need at least one field and one candidate")
    widths = np.asarray(candidates, dtype=np.float64)
    if kind == "adaptive":
        rates = SampleRates.initial(m, t, **(rate_kwargs or {}))
        return AdaptiveSampler(rates, rng)
    if kind == "random":
        candidate = np.full((m, t), 1.0 / t)
        inclusion = np.full(m, 0.6)
    elif kind == "vanilla_uniform":
        candidate = np.tile(widths / widths.sum(), (m, 1))
        inclusion = np.full(m, 0.6)
    elif kind == "weight_uniform":
        candidate = np.tile(widths / widths.sum(), (m, 1))
        cards = np.asarray(cardinalities, dtype=np.float64)
        inclusion = 0.6 * cards / cards.mean()
    else:
        raise ConfigError(f"unknown sampler kind {kind!r}")
    return _FixedRateSampler(inclusion, candidate, rng)


SAMPLER_KINDS = ("adaptive", "random", "vanilla_uniform", "weight_uniform")
