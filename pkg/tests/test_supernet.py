"""Weight-sharing supernet: storage schemes, subnet forward, sampled training."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embsizer.core.rng import RngStream
from embsizer.data import (DatasetSplit, FieldSchema, SampleBlock, FieldColumn,
                           SyntheticFieldSpec, SyntheticSpec, generate_synthetic,
                           iter_batches, schema_hash)
from embsizer.errors import ConfigError, DataError, StaleArtifactError
from embsizer.models import FixedSizeModel, ModelConfig
from embsizer.sampling import make_sampler
from embsizer.supernet import (CandidateSet, Supernet, assignment_param_count,
                               embedding_param_count, evaluate_subnet,
                               load_supernet, parameter_reduction, train_supernet)

SCHEMAS = [FieldSchema("a", 100), FieldSchema("b", 10)]
CONFIG = ModelConfig(architecture="deep_fm", hidden=(8, 1), d_f=4,
                     learning_rate=0.01)


def tiny_block(n=8, seed=0):
    r = RngStream(seed)
    cols = [FieldColumn.from_lists([[int(v)] for v in r.integers(0, 100, n)]),
            FieldColumn.from_lists([[int(v)] for v in r.integers(0, 10, n)])]
    labels = (r.random(n) < 0.5).astype(np.uint8)
    return SampleBlock(cols, labels, None)


class AllOnSampler:
    """Always include every field at candidate 0; never adapts."""

    def __init__(self, m):
        self.m = m
        self.rates = None

    def sample(self):
        return np.zeros(self.m, dtype=np.int64), np.ones(self.m, dtype=bool)

    def observe(self, *args):
        pass


def synthetic_split(seed=0, n=2400):
    spec = SyntheticSpec(
        fields=(SyntheticFieldSpec("f0", 30, weight=0.9),
                SyntheticFieldSpec("f1", 20, weight=0.6),
                SyntheticFieldSpec("f2", 10, weight=0.0)),
        n_samples=n, noise=0.6, seed=seed)
    return generate_synthetic(spec)


# -- candidate sets and parameter counting ---------------------------------

def test_default_candidates():
    assert CandidateSet().sizes == (2, 8, 16, 32, 64)


def test_candidates_must_ascend():
    with pytest.raises(ConfigError):
        CandidateSet((8, 2))
    with pytest.raises(ConfigError):
        CandidateSet((2, 2, 8))
    with pytest.raises(ConfigError):
        CandidateSet(())


def test_param_count_examples():
    cands = CandidateSet((2, 8))
    assert embedding_param_count(SCHEMAS, cands, "independent") == 1100
    assert embedding_param_count(SCHEMAS, cands, "shared") == 880


def test_store_matches_formula():
    for scheme in ("independent", "shared"):
        net = Supernet(CONFIG, SCHEMAS, CandidateSet((2, 8)), scheme, seed=3)
        assert net.embedding_params() == embedding_param_count(
            SCHEMAS, CandidateSet((2, 8)), scheme)


def test_parameter_reduction_examples():
    assert parameter_reduction(SCHEMAS, [32, 32]) == 0.0
    assert abs(parameter_reduction(SCHEMAS, [8, 2]) - 0.767) < 1e-3
    assert parameter_reduction(SCHEMAS, [64, 64]) == -1.0


def test_assignment_param_count_validates():
    with pytest.raises(ConfigError):
        assignment_param_count(SCHEMAS, [8])


# -- shared-scheme aliasing -------------------------------------------------

def test_shared_candidates_alias_the_max_table():
    net = Supernet(CONFIG, SCHEMAS, CandidateSet((2, 8)), "shared", seed=1)
    net.candidate_array(0, 0)[:, 0] = 99.0  # write through the narrow view
    assert np.all(net.candidate_array(0, 1)[:, 0] == 99.0)


def test_shared_prefix_property_after_training():
    split = synthetic_split()
    schemas = split.schemas
    net = Supernet(CONFIG, schemas, CandidateSet((2, 8)), "shared", seed=1)
    sampler = make_sampler("adaptive", [s.cardinality for s in schemas], [2, 8],
                           RngStream(7).child("sampler"))
    train_supernet(net, sampler, split, epochs=1, batch_size=256, run_seed=7)
    for i in range(len(schemas)):
        for j, d in enumerate(net.candidates.sizes):
            assert net.candidate_array(i, j).base is net.tables[i].data
            np.testing.assert_array_equal(net.candidate_array(i, j),
                                          net.tables[i].data[:, :d])


def test_independent_candidates_do_not_alias():
    net = Supernet(CONFIG, SCHEMAS, CandidateSet((2, 8)), "independent", seed=1)
    before = net.candidate_array(0, 1).copy()
    net.candidate_array(0, 0)[:, 0] = 99.0
    np.testing.assert_array_equal(net.candidate_array(0, 1), before)


# -- subnet forward ---------------------------------------------------------

def test_forward_rejects_bad_selection():
    net = Supernet(CONFIG, SCHEMAS, CandidateSet((2, 8)), "shared", seed=1)
    block = tiny_block()
    with pytest.raises(ConfigError):
        net.forward([0, 2], [True, True], block, train=False)
    with pytest.raises(ConfigError):
        net.forward([0], [True], block, train=False)


def test_all_excluded_predicts_from_biases_only():
    net = Supernet(CONFIG, SCHEMAS, CandidateSet((2, 8)), "shared", seed=1)
    block = tiny_block()
    logits = net.forward([0, 0], [False, False], block, train=False).data
    assert np.all(logits == logits[0])  # constant: no per-sample signal


def test_different_selections_differ():
    net = Supernet(CONFIG, SCHEMAS, CandidateSet((2, 8)), "shared", seed=1)
    block = tiny_block()
    a = net.forward([0, 0], [True, True], block, train=False).data
    b = net.forward([1, 1], [True, True], block, train=False).data
    assert not np.allclose(a, b)


def test_forward_shapes():
    for scheme in ("independent", "shared"):
        net = Supernet(CONFIG, SCHEMAS, CandidateSet((2, 8, 16)), scheme, seed=1)
        block = tiny_block(n=6)
        out = net.forward([2, 1], [True, True], block, train=True)
        assert out.data.shape == (6, 1)


# -- sampled training: touched-parameter sparsity ---------------------------

def snapshot(net):
    return {p.name: p.data.copy() for p in net.parameters()}


def test_untouched_tables_stay_bit_identical_independent():
    net = Supernet(CONFIG, SCHEMAS, CandidateSet((2, 8)), "independent", seed=1)
    block = tiny_block(n=8)
    before = snapshot(net)
    net.train_batch(block, np.array([0, 1]), np.array([True, False]))
    # sampled: field 0 candidate 0 only
    assert not np.array_equal(net.tables[0][0].data, before["emb/0/d2"])
    np.testing.assert_array_equal(net.tables[0][1].data, before["emb/0/d8"])
    np.testing.assert_array_equal(net.tables[1][0].data, before["emb/1/d2"])
    np.testing.assert_array_equal(net.tables[1][1].data, before["emb/1/d8"])
    # transforms: only the d=2 pair moved
    assert not np.array_equal(net.transforms[2][0].W.data, before["transform/d2/W"])
    np.testing.assert_array_equal(net.transforms[8][0].W.data,
                                  before["transform/d8/W"])


def test_untouched_rows_and_columns_stay_bit_identical_shared():
    net = Supernet(CONFIG, SCHEMAS, CandidateSet((2, 8)), "shared", seed=1)
    block = tiny_block(n=8)
    before = net.tables[0].data.copy()
    net.train_batch(block, np.array([0, 0]), np.array([True, True]))
    touched_rows = np.unique(block.columns[0].values)
    # columns beyond the sampled width never move
    np.testing.assert_array_equal(net.tables[0].data[:, 2:], before[:, 2:])
    # rows absent from the batch never move
    untouched = np.setdiff1d(np.arange(100), touched_rows)
    np.testing.assert_array_equal(net.tables[0].data[untouched], before[untouched])
    # sampled region did move
    assert not np.array_equal(net.tables[0].data[touched_rows, :2],
                              before[touched_rows, :2])


def test_zero_batches_leaves_supernet_unchanged():
    split = synthetic_split(n=60)
    net = Supernet(CONFIG, split.schemas, CandidateSet((2, 8)), "shared", seed=1)
    before = snapshot(net)
    sampler = AllOnSampler(len(split.schemas))
    # batch size exceeds the training split, drop_last discards everything
    history = train_supernet(net, sampler, split, epochs=1, batch_size=10_000,
                             run_seed=0)
    after = snapshot(net)
    for name in before:
        np.testing.assert_array_equal(before[name], after[name])
    assert net.batches_trained == 0
    assert history[0].mean_loss == 0.0


# -- learnability -----------------------------------------------------------

def test_training_reduces_loss_across_seeds():
    drops = []
    for seed in range(5):
        split = synthetic_split(seed=seed)
        schemas = split.schemas
        net = Supernet(CONFIG, schemas, CandidateSet((2, 8, 16)), "shared",
                       seed=seed)
        sampler = make_sampler("adaptive", [s.cardinality for s in schemas],
                               [2, 8, 16], RngStream(seed).child("sampler"))
        history = train_supernet(net, sampler, split, epochs=3, batch_size=128,
                                 run_seed=seed)
        drops.append((history[0].mean_loss - history[-1].mean_loss)
                     / history[0].mean_loss)
    assert np.median(drops) >= 0.20, f"median loss drop {np.median(drops):.3f}"


def test_epoch_records_include_rate_snapshots():
    split = synthetic_split(n=600)
    schemas = split.schemas
    net = Supernet(CONFIG, schemas, CandidateSet((2, 8)), "shared", seed=0)
    sampler = make_sampler("adaptive", [s.cardinality for s in schemas], [2, 8],
                           RngStream(0).child("sampler"))
    history = train_supernet(net, sampler, split, epochs=2, batch_size=64,
                             run_seed=0)
    assert len(history) == 2
    assert history[0].p_e.shape == (3, 2)
    assert history[1].p_f.shape == (3,)
    np.testing.assert_allclose(history[0].p_e.sum(axis=1), 1.0)


# -- single-candidate equivalence ------------------------------------------

def test_single_candidate_training_matches_fixed_model():
    """With one candidate and inclusion forced on, supernet training is the
    fixed-size model with transform, batch for batch, bit for bit."""
    split = synthetic_split(n=600)
    schemas = split.schemas
    seed, run_seed, epochs, bs = 11, 13, 2, 64

    for scheme in ("independent", "shared"):
        net = Supernet(CONFIG, schemas, CandidateSet((8,)), scheme, seed=seed)
        super_losses: list[float] = []
        train_supernet(net, AllOnSampler(len(schemas)), split, epochs=epochs,
                       batch_size=bs, run_seed=run_seed,
                       batch_losses=super_losses)

        model = FixedSizeModel(CONFIG, schemas, [8] * len(schemas), seed=seed,
                               with_transform=True)
        fixed_losses = []
        batches_rng = RngStream(run_seed).child("batches")
        for epoch in range(epochs):
            epoch_rng = batches_rng.child(f"epoch/{epoch}")
            for idx in iter_batches(split.train.n_samples, bs, epoch_rng,
                                    drop_last=True):
                fixed_losses.append(model.train_step(split.train.take(idx)))

        assert super_losses == fixed_losses, scheme
        probs_net = evaluate_subnet(net, np.zeros(3, dtype=np.int64),
                                    np.ones(3, dtype=bool), split.test)
        probs_fixed = model.predict(split.test)
        np.testing.assert_array_equal(probs_net, probs_fixed)


# -- checkpointing ----------------------------------------------------------

def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    split = synthetic_split(n=600)
    schemas = split.schemas
    net = Supernet(CONFIG, schemas, CandidateSet((2, 8)), "shared", seed=5)
    sampler = make_sampler("adaptive", [s.cardinality for s in schemas], [2, 8],
                           RngStream(5).child("sampler"))
    train_supernet(net, sampler, split, epochs=1, batch_size=64, run_seed=5)
    h = schema_hash(schemas)
    path = tmp_path / "super.bin"
    net.save(path, h, sampler_state={"p_e": sampler.rates.p_e,
                                     "p_f": sampler.rates.p_f})

    loaded, sampler_state = load_supernet(path, expected_schema_hash=h)
    for p, q in zip(net.parameters(), loaded.parameters()):
        assert p.name == q.name
        np.testing.assert_array_equal(p.data, q.data)
    np.testing.assert_array_equal(sampler_state["p_e"], sampler.rates.p_e)
    np.testing.assert_array_equal(sampler_state["p_f"], sampler.rates.p_f)
    assert loaded.batches_trained == net.batches_trained

    sel = np.array([1, 0, 1])
    inc = np.ones(3, dtype=bool)
    np.testing.assert_array_equal(evaluate_subnet(net, sel, inc, split.test),
                                  evaluate_subnet(loaded, sel, inc, split.test))


def test_checkpoint_rejects_wrong_dataset(tmp_path):
    net = Supernet(CONFIG, SCHEMAS, CandidateSet((2, 8)), "shared", seed=5)
    path = tmp_path / "super.bin"
    net.save(path, schema_hash(SCHEMAS))
    other = [FieldSchema("a", 100), FieldSchema("b", 11)]
    with pytest.raises(StaleArtifactError):
        load_supernet(path, expected_schema_hash=schema_hash(other))
    load_supernet(path, expected_schema_hash=schema_hash(SCHEMAS))  # same: fine


def test_checkpoint_rejects_non_supernet_file(tmp_path):
    from embsizer.core.checkpoint import write_container
    path = tmp_path / "other.bin"
    write_container(path, {"x": np.zeros(3, dtype=np.float64)}, version=2)
    with pytest.raises(DataError):
        load_supernet(path)


def test_evaluate_subnet_does_not_mutate():
    split = synthetic_split(n=300)
    net = Supernet(CONFIG, split.schemas, CandidateSet((2, 8)), "shared", seed=2)
    before = snapshot(net)
    evaluate_subnet(net, np.array([1, 1, 0]), np.ones(3, dtype=bool), split.test)
    after = snapshot(net)
    for name in before:
        np.testing.assert_array_equal(before[name], after[name])


# -- properties across random shapes ---------------------------------------

@settings(max_examples=15, deadline=None)
@given(st.data())
def test_store_shapes_and_counts_property(data):
    m = data.draw(st.integers(1, 4), label="fields")
    cards = [data.draw(st.integers(1, 40), label=f"card{i}") for i in range(m)]
    sizes = tuple(sorted(data.draw(
        st.sets(st.integers(1, 12), min_size=1, max_size=3), label="sizes")))
    scheme = data.draw(st.sampled_from(["independent", "shared"]), label="scheme")
    schemas = [FieldSchema(f"f{i}", c) for i, c in enumerate(cards)]
    net = Supernet(CONFIG, schemas, CandidateSet(sizes), scheme, seed=0)
    assert net.embedding_params() == embedding_param_count(
        schemas, CandidateSet(sizes), scheme)
    for i in range(m):
        for j, d in enumerate(sizes):
            assert net.candidate_array(i, j).shape == (cards[i], d)
