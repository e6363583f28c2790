"""Shared builders for tests that need capacity-sensitive synthetic data.

The recipe keeps first-order effects deliberately weak (they are learnable at
any embedding width) and puts most of the signal into rank-4 pairwise
interactions, which a width-2 embedding cannot represent — so that assigning
width actually matters and size-ordering oracles have something to detect.
"""
import numpy as np

from embsizer.core.rng import RngStream
from embsizer.data import SyntheticFieldSpec, SyntheticSpec, generate_synthetic
from embsizer.models import ModelConfig
from embsizer.sampling import make_sampler
from embsizer.supernet import CandidateSet, Supernet, train_supernet

SMALL_CONFIG = ModelConfig(architecture="deep_fm", hidden=(8, 1), d_f=4,
                           learning_rate=0.01)

# The heavier recipe behind ranking oracles: enough data and signal that
# retrained-AUC rankings of assignments are reproducible across replica seeds.
ORACLE_CONFIG = ModelConfig(architecture="deep_fm", hidden=(8, 1), d_f=4,
                            learning_rate=0.005)
ORACLE_CANDIDATES = (2, 16)
ORACLE_SUPERNET_EPOCHS = 40
ORACLE_SUPERNET_BATCH = 256
ORACLE_RETRAIN_EPOCHS = 10
ORACLE_RETRAIN_BATCH = 512
ORACLE_REWARD_SCALE = 10.0


def capacity_split(seed, n=6000, weights=(0.8, 0.6, 0.0), cardinality=25,
                   noise=0.4):
    spec = SyntheticSpec(
        fields=tuple(SyntheticFieldSpec(f"f{i}", cardinality, weight=w)
                     for i, w in enumerate(weights)),
        n_samples=n, noise=noise, seed=seed,
        first_order_scale=0.6, interaction_scale=1.8, interaction_rank=4)
    return generate_synthetic(spec)


def oracle_split(seed, n=12_000, weights=(0.9, 0.7, 0.0)):
    spec = SyntheticSpec(
        fields=tuple(SyntheticFieldSpec(f"f{i}", 20, weight=w)
                     for i, w in enumerate(weights)),
        n_samples=n, noise=0.25, seed=seed,
        first_order_scale=0.4, interaction_scale=3.0, interaction_rank=4)
    return generate_synthetic(spec)


def oracle_supernet(split, seed, sampler_kind="adaptive",
                    candidates=ORACLE_CANDIDATES,
                    epochs=ORACLE_SUPERNET_EPOCHS):
    return capacity_supernet(split, seed, candidates=candidates, epochs=epochs,
                             batch_size=ORACLE_SUPERNET_BATCH,
                             sampler_kind=sampler_kind, config=ORACLE_CONFIG)


def capacity_supernet(split, seed, candidates=(2, 16), epochs=10,
                      batch_size=128, sampler_kind="adaptive",
                      config=SMALL_CONFIG, scheme="shared"):
    net = Supernet(config, split.schemas, CandidateSet(tuple(candidates)),
                   scheme, seed=seed)
    sampler = make_sampler(sampler_kind,
                           [s.cardinality for s in split.schemas],
                           list(candidates), RngStream(seed).child("sampler"))
    train_supernet(net, sampler, split, epochs=epochs, batch_size=batch_size,
                   run_seed=seed)
    return net, sampler
