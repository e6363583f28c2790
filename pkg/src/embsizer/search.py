"""Size-assignment search over a frozen supernet.

A small transformer policy reads the current per-field size choice and emits a
transition matrix P (one distribution over candidate sizes per field). Each
step samples an assignment from P, scores it on a fixed validation subsample
of the frozen supernet, and applies a policy-gradient update whose loss also
carries a resource-competition penalty: an expected-size term that charges for
parameters, and a competition term that rewards rows for committing away from
uniform. The search stops once the rows are near-deterministic (mean entropy
below a threshold) and reads off the per-field argmax.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import auc
from .core import autograd as ag
from .core.autograd import Tensor
from .core.layers import Affine, LayerNorm, Parameter, embedding_init
from .core.optim import Adam, zero_grads
from .core.rng import RngStream
from .data import DatasetSplit, SampleBlock
from .errors import ConfigError, NumericsError
from .supernet import Supernet, evaluate_subnet

MODE_PRESETS = {
    "effect_first": (0.0025, 0.08),
    "resource_first": (0.005, 0.04),
}


@dataclass(frozen=True)
class PenaltyConfig:
    lambda_r: float = 0.0025    # weight on expected embedding size
    lambda_c: float = 0.08      # weight on distance-from-uniform (competition)
    lambda_rew: float = 1.0     # reward scale

    def __post_init__(self):
        if self.lambda_r < 0 or self.lambda_c < 0:
            raise ConfigError("penalty weights must be >= 0")
        if self.lambda_rew <= 0:
            raise ConfigError("reward scale must be > 0")

    @classmethod
    def preset(cls, mode: str, lambda_rew: float = 1.0) -> "PenaltyConfig":
        if mode not in MODE_PRESETS:
            raise ConfigError(f"unknown mode {mode!r}; choose from {sorted(MODE_PRESETS)}")
        lr, lc = MODE_PRESETS[mode]
        return cls(lambda_r=lr, lambda_c=lc, lambda_rew=lambda_rew)


@dataclass(frozen=True)
class SearchConfig:
    penalty: PenaltyConfig = PenaltyConfig()
    max_steps: int = 500
    entropy_threshold: float = 0.1   # nats, mean over rows
    learning_rate: float = 0.0005
    eval_batches: int = 20
    eval_batch_size: int = 512
    metric: str = "auc"              # "auc" | "accuracy"
    use_baseline: bool = True
    baseline_decay: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.metric not in ("auc", "accuracy"):
            raise ConfigError(f"unknown metric {self.metric!r}")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ConfigError("baseline decay must be in [0, 1)")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")


class PolicyNet:
    """Transformer policy over (field, current size) tokens.

    Each field contributes one token: its identity embedding plus the embedding
    of its currently assigned size. One encoder block (multi-head self-attention
    and a feed-forward layer, each with residual + layer normalization) mixes
    the tokens, and a zero-initialized head maps each to candidate logits — so
    the initial transition matrix is exactly uniform.
    """

    def __init__(self, n_fields: int, n_candidates: int, seed: int,
                 d_model: int = 32, n_heads: int = 4, ffn_width: int = 64):
        if d_model % n_heads != 0:
            raise ConfigError("model width must divide evenly across heads")
        self.n_fields = n_fields
        self.n_candidates = n_candidates
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        rng = RngStream(seed).child("policy")
        self.field_emb = Parameter(
            embedding_init(n_fields, d_model, rng.child("field_emb")), "field_emb")
        self.size_emb = Parameter(
            embedding_init(n_candidates, d_model, rng.child("size_emb")), "size_emb")
        self.wq = Affine(d_model, d_model, rng.child("wq"), "wq")
        self.wk = Affine(d_model, d_model, rng.child("wk"), "wk")
        self.wv = Affine(d_model, d_model, rng.child("wv"), "wv")
        self.wo = Affine(d_model, d_model, rng.child("wo"), "wo")
        self.ln1 = LayerNorm(d_model, "ln1")
        self.ln2 = LayerNorm(d_model, "ln2")
        self.ffn1 = Affine(d_model, ffn_width, rng.child("ffn1"), "ffn1")
        self.ffn2 = Affine(ffn_width, d_model, rng.child("ffn2"), "ffn2")
        self.head = Affine(d_model, n_candidates, rng.child("head"), "head",
                           zero_init=True)

    def parameters(self) -> list[Parameter]:
        params = [self.field_emb, self.size_emb]
        for block in (self.wq, self.wk, self.wv, self.wo,
                      self.ln1, self.ffn1, self.ffn2, self.ln2, self.head):
            params.extend(block.parameters())
        return params

    def logits(self, state: np.ndarray) -> Tensor:
        state = np.asarray(state, dtype=np.int64)
        if state.shape != (self.n_fields,):
            raise ConfigError("state must assign one candidate per field")
        if np.any((state < 0) | (state >= self.n_candidates)):
            raise ConfigError("state candidate index out of range")
        x = ag.add(self.field_emb, ag.gather_rows(self.size_emb, state))
        q, k, v = self.wq(x), self.wk(x), self.wv(x)
        scale = 1.0 / math.sqrt(self.d_head)
        heads = []
        for h in range(self.n_heads):
            lo, hi = h * self.d_head, (h + 1) * self.d_head
            qh = ag.slice_cols(q, lo, hi)
            kh = ag.slice_cols(k, lo, hi)
            vh = ag.slice_cols(v, lo, hi)
            attn = ag.softmax_rows(ag.mul(ag.matmul(qh, ag.transpose(kh)), scale))
            heads.append(ag.matmul(attn, vh))
        x = self.ln1(ag.add(x, self.wo(ag.concat_cols(heads))))
        x = self.ln2(ag.add(x, self.ffn2(ag.relu(self.ffn1(x)))))
        return self.head(x)

    def forward(self, state: np.ndarray) -> Tensor:
        """Transition matrix P: one distribution over candidate sizes per field."""
        return ag.softmax_rows(self.logits(state))


def policy_forward(policy: PolicyNet, state: np.ndarray) -> Tensor:
    return policy.forward(state)


def initial_state(sizes: tuple[int, ...], n_fields: int, anchor: int = 16) -> np.ndarray:
    """Start every field at the candidate nearest the anchor width (ties → smaller)."""
    j = int(np.argmin([abs(d - anchor) for d in sizes]))
    return np.full(n_fields, j, dtype=np.int64)


def eval_subsample(split: DatasetSplit, config: SearchConfig) -> SampleBlock:
    """The fixed validation subsample every evaluation in a run shares."""
    n = split.valid.n_samples
    if n == 0:
        raise ConfigError("validation split is empty")
    want = min(n, config.eval_batches * config.eval_batch_size)
    order = RngStream(config.seed).child("eval").permutation(n)[:want]
    return split.valid.take(np.sort(order))


def subnet_score(net: Supernet, selection: np.ndarray, block: SampleBlock,
                 metric: str = "auc") -> float:
    """Accuracy signal for one all-fields-included subnet, inference mode."""
    include = np.ones(net.n_fields, dtype=bool)
    probs = evaluate_subnet(net, selection, include, block)
    if metric == "accuracy":
        return float(np.mean((probs >= 0.5) == (block.labels == 1)))
    return auc(probs, block.labels)


def compute_penalty(p: Tensor, sizes: tuple[int, ...], config: PenaltyConfig) -> Tensor:
    """λ_r · mean expected size − λ_c · mean distance from the uniform row.

    The first term charges rows for probability mass on wide candidates; the
    second rewards rows for committing (L2 distance from uniform), so fields
    compete for width instead of all hedging.
    """
    m, t = p.data.shape
    widths = Tensor(np.asarray(sizes, dtype=p.data.dtype).reshape(1, t))
    resource = ag.mul(ag.mean_all(ag.sum_axis(ag.mul(p, widths), 1)), config.lambda_r)
    centered = ag.add(p, -1.0 / t)
    row_norm = ag.sqrt(ag.sum_axis(ag.mul(centered, centered), 1))
    competition = ag.mul(ag.mean_all(row_norm), config.lambda_c)
    return ag.add(resource, ag.mul(competition, -1.0))


def row_entropy(p: np.ndarray) -> float:
    """Mean per-row entropy in nats."""
    q = np.clip(p, 1e-12, 1.0)
    return float(np.mean(-np.sum(q * np.log(q), axis=1)))


@dataclass
class StepRecord:
    step: int
    reward: float
    advantage: float
    penalty: float
    resource: float
    competition: float
    entropy: float
    selection: list[int]


@dataclass
class SearchResult:
    p: np.ndarray                 # final M×T transition matrix
    selection: np.ndarray         # per-field argmax candidate index
    sizes: list[int]              # per-field chosen width
    assignment: dict[str, int]    # field name → width
    history: list[StepRecord] = field(default_factory=list)
    converged: bool = False

    @property
    def steps(self) -> int:
        return len(self.history)


class _Baseline:
    """Exponential moving average of the scaled reward."""

    def __init__(self, decay: float, enabled: bool):
        self.decay = decay
        self.enabled = enabled
        self.value: float | None = None

    def advantage(self, scaled_reward: float) -> float:
        if not self.enabled:
            return scaled_reward
        if self.value is None:
            self.value = scaled_reward
        adv = scaled_reward - self.value
        self.value = self.decay * self.value + (1 - self.decay) * scaled_reward
        return adv


def reinforce_loss(policy: PolicyNet, state: np.ndarray, actions: np.ndarray,
                   advantage: float, sizes: tuple[int, ...],
                   config: PenaltyConfig) -> Tensor:
    """−(Σ_i log P[i, a_i]) · advantage + penalty(P), built for backprop."""
    p = policy.forward(state)
    log_p = ag.take_per_row(ag.log(p), np.asarray(actions, dtype=np.int64))
    score = ag.mul(ag.sum_all(log_p), -float(advantage))
    return ag.add(score, compute_penalty(p, sizes, config))


def reinforce_step(policy: PolicyNet, opt: Adam, state: np.ndarray,
                   actions: np.ndarray, advantage: float,
                   sizes: tuple[int, ...], config: PenaltyConfig) -> float:
    params = policy.parameters()
    zero_grads(params)
    loss = reinforce_loss(policy, state, actions, advantage, sizes, config)
    loss.backward()
    opt.step(params)
    return loss.item()


def run_search(net: Supernet, split: DatasetSplit, config: SearchConfig,
               policy: PolicyNet | None = None) -> SearchResult:
    """Policy-gradient search for a per-field size assignment.

    Loop: read P from the policy, sample one assignment, score it on the fixed
    validation subsample of the frozen supernet, update the policy. Stops when
    the mean row entropy of P drops below the threshold or the step budget runs
    out. The supernet is never written.
    """
    sizes = net.candidates.sizes
    t = len(sizes)
    if policy is None:
        policy = PolicyNet(net.n_fields, t, config.seed)
    opt = Adam(lr=config.learning_rate)
    action_rng = RngStream(config.seed).child("actions")
    block = eval_subsample(split, config)
    baseline = _Baseline(config.baseline_decay, config.use_baseline)

    state = initial_state(sizes, net.n_fields)
    history: list[StepRecord] = []
    converged = False
    for step in range(config.max_steps):
        p = policy.forward(state)
        entropy = row_entropy(p.data)
        if entropy < config.entropy_threshold:
            converged = True
            break
        cum = np.cumsum(p.data, axis=1)
        draws = action_rng.child(f"step/{step}").random(net.n_fields)
        actions = np.minimum(
            np.sum(draws[:, None] >= cum, axis=1), t - 1).astype(np.int64)
        reward = subnet_score(net, actions, block, config.metric)
        if not np.isfinite(reward):
            raise NumericsError(
                f"non-finite reward at step {step} for selection "
                f"{[sizes[a] for a in actions]}")
        advantage = baseline.advantage(config.penalty.lambda_rew * reward)
        widths = np.asarray(sizes, dtype=np.float64)
        resource = float(config.penalty.lambda_r * np.mean(p.data @ widths))
        competition = float(config.penalty.lambda_c * np.mean(
            np.linalg.norm(p.data - 1.0 / t, axis=1)))
        reinforce_step(policy, opt, state, actions, advantage, sizes, config.penalty)
        history.append(StepRecord(step, reward, advantage, resource - competition,
                                  resource, competition, entropy,
                                  [int(a) for a in actions]))
        state = actions

    p_final = policy.forward(state).data
    selection = np.argmax(p_final, axis=1).astype(np.int64)
    chosen = [int(sizes[j]) for j in selection]
    assignment = {s.name: d for s, d in zip(net.schemas, chosen)}
    return SearchResult(p_final, selection, chosen, assignment, history, converged)


def expected_param_count(net: Supernet, p: np.ndarray) -> float:
    """Σ_i n_i · Σ_j d_j P_{i,j}: embedding parameters under the soft assignment."""
    widths = np.asarray(net.candidates.sizes, dtype=np.float64)
    per_field = p @ widths
    cards = np.asarray([s.cardinality for s in net.schemas], dtype=np.float64)
    return float(np.sum(cards * per_field))
