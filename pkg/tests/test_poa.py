import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordlab import rng
from ordlab.data import PreprocessConfig, synthetic_blobs
from ordlab.errors import ConfigError, DegenerateScoreError, ShapeError
from ordlab.metrics import write_metrics_csv, strip_wall_seconds
from ordlab.nn import ModelSpec, SGD, build_model, softmax_cross_entropy, state_hash
from ordlab.poa import (
    LearningItem,
    LoaderConfig,
    ScoreRecord,
    make_external_reference,
    order_next,
    run_poa_training,
    sample_batch,
    sampling_probabilities,
    score_max_loss_delta,
    score_sample_loss,
    select_candidates,
)
from ordlab.training import TrainConfig, TrainState, run_training, train_step

PREP = PreprocessConfig()
SPEC = ModelSpec("mlp", (4,), 3, widths=(6,))


@pytest.fixture(scope="module")
def blobs():
    train = synthetic_blobs(3, 20, 4, 3.0, seed=1)
    test = synthetic_blobs(3, 20, 4, 3.0, seed=1, split="test")
    return train, test


def _state(seed=0, steps=0, train=None):
    state = TrainState.create(SPEC, TrainConfig(lr=0.05, batch_size=10), seed)
    for i in range(steps):
        idx = np.arange(i * 5, i * 5 + 5) % len(train)
        train_step(state, train.images[idx], train.labels[idx], PREP)
    return state


# items and config


def test_learning_item_validation():
    with pytest.raises(ShapeError):
        LearningItem(0, "batch", ())
    with pytest.raises(ShapeError):
        LearningItem(0, "sample", (1, 2))
    with pytest.raises(ShapeError):
        LearningItem(0, "tile", (1,))
    with pytest.raises(ShapeError):
        LearningItem(0, "batch", (0, 9)).check_range(5)
    LearningItem(0, "batch", (0, 4)).check_range(5)


def test_score_record_must_be_finite():
    with pytest.raises(ShapeError):
        ScoreRecord(1, float("nan"), 0)
    with pytest.raises(ShapeError):
        ScoreRecord(1, math.inf, 0)


def test_loader_config_validation():
    assert LoaderConfig().ordering
    assert not LoaderConfig(strategy="inverse").ordering
    for bad in ({"kappa": 0}, {"scorer": "oracle"}, {"strategy": "random"}, {"rescore": "never"},
                {"epsilon": 0.0}, {"delta_mode": "ratio"}):
        with pytest.raises(ConfigError):
            LoaderConfig(**bad)


# scorers


def test_sample_loss_uniform_model_is_log_classes():
    ds = synthetic_blobs(10, 2, 4, 1.0, seed=0)
    model = build_model(ModelSpec("mlp", (4,), 10), rng.stream(0))
    model.zero_()
    score = score_sample_loss(model, LearningItem(0, "batch", tuple(range(20))), ds, PREP)
    assert score == pytest.approx(math.log(10), abs=1e-6)


def test_sample_loss_perfect_fit_is_near_zero():
    ds = synthetic_blobs(2, 4, 2, 1.0, seed=0)
    model = build_model(ModelSpec("mlp", (2,), 2, dtype="float64"), rng.stream(0))
    model.zero_()
    model.layers[-1].params["bias"][...] = np.array([0.0, 0.0])
    # a single sample with a huge logit margin in its favour
    model.layers[-1].params["bias"][ds.labels[0]] = 60.0
    model.bump_version()
    assert score_sample_loss(model, LearningItem(0, "sample", (0,)), ds, PREP) < 1e-20


def test_sample_loss_matches_direct_evaluation(blobs):
    train, _ = blobs
    state = _state(train=train, steps=3)
    item = LearningItem(0, "batch", (3, 7, 11, 40))
    direct, _ = softmax_cross_entropy(state.model.forward(train.images[[3, 7, 11, 40]]), train.labels[[3, 7, 11, 40]])
    before = state_hash(state.model, state.optimizer)
    assert score_sample_loss(state.model, item, train, PREP) == direct
    assert state_hash(state.model, state.optimizer) == before


def test_delta_arithmetic(monkeypatch):
    from ordlab.poa import scoring

    losses = iter([2.0, 1.5, 2.0, 1.5])
    monkeypatch.setattr(scoring, "_loss", lambda *a: next(losses))
    train = synthetic_blobs(3, 2, 4, 1.0, seed=0)
    model = build_model(SPEC, rng.stream(0))
    opt = SGD(model.parameters(), 0.1)
    item = LearningItem(0, "batch", (0, 1))
    assert score_max_loss_delta(model, opt, item, train, PREP, mode="absolute") == 0.5
    assert score_max_loss_delta(model, opt, item, train, PREP, mode="relative") == 0.25


def test_relative_delta_with_zero_previous_loss(monkeypatch):
    from ordlab.poa import scoring

    monkeypatch.setattr(scoring, "_loss", lambda *a: 0.0)
    train = synthetic_blobs(3, 2, 4, 1.0, seed=0)
    model = build_model(SPEC, rng.stream(0))
    with pytest.raises(DegenerateScoreError):
        score_max_loss_delta(model, SGD(model.parameters(), 0.1), LearningItem(0, "batch", (0,)), train, PREP,
                             mode="relative")


def test_delta_matches_manual_trial_step(blobs):
    train, test = blobs
    state = _state(train=train, steps=2)
    idx = [1, 2, 30]
    item = LearningItem(0, "batch", tuple(idx))
    score = score_max_loss_delta(state.model, state.optimizer, item, train, PREP, reference=test)

    clone = state.clone()
    prev, _ = softmax_cross_entropy(clone.model.forward(test.images), test.labels)
    _, g = softmax_cross_entropy(clone.model.forward(train.images[idx]), train.labels[idx])
    clone.model.backward(g)
    clone.optimizer.step(clone.model.gradients())
    clone.model.bump_version()
    new, _ = softmax_cross_entropy(clone.model.forward(test.images), test.labels)
    assert score == prev - new


def test_rollback_after_failure(blobs):
    train, _ = blobs
    state = _state(train=train, steps=2)
    before = state_hash(state.model, state.optimizer)
    bad = LearningItem(0, "batch", (0, 10**6))
    with pytest.raises(IndexError):
        score_max_loss_delta(state.model, state.optimizer, bad, train, PREP)
    assert state_hash(state.model, state.optimizer) == before


def test_scoring_twice_is_pure(blobs):
    train, test = blobs
    state = _state(train=train, steps=2)
    item = LearningItem(0, "batch", (4, 5, 6))
    a = score_max_loss_delta(state.model, state.optimizer, item, train, PREP, reference=test, mode="relative")
    b = score_max_loss_delta(state.model, state.optimizer, item, train, PREP, reference=test, mode="relative")
    assert a == b


def test_external_reference():
    big = synthetic_blobs(10, 1000, 2, 1.0, seed=0)
    ref = make_external_reference(big, 512, seed=3)
    assert len(ref) == 512
    assert len({tuple(r) for r in ref.images}) == 512
    again = make_external_reference(big, 512, seed=3)
    assert np.array_equal(ref.images, again.images)
    assert not np.array_equal(ref.images, make_external_reference(big, 512, seed=3, epoch=1).images)
    small = synthetic_blobs(2, 5, 2, 1.0, seed=0)
    full = make_external_reference(small, 10, seed=0)
    assert np.array_equal(full.images, small.images)
    with pytest.raises(ShapeError):
        make_external_reference(small, 11, seed=0)


# strategies


def test_select_candidates():
    pool = list(range(391))
    picks = select_candidates(pool, 8, rng.stream(0))
    assert len(set(picks)) == 8 and set(picks) <= set(pool)
    assert picks == select_candidates(pool, 8, rng.stream(0))
    assert sorted(select_candidates([4, 2, 9], 3, rng.stream(1))) == [2, 4, 9]
    with pytest.raises(ShapeError):
        select_candidates([1, 2], 3, rng.stream(0))
    with pytest.raises(ShapeError):
        select_candidates([], 1, rng.stream(0))


def test_order_next():
    scores = {0: 0.3, 1: 0.1, 2: 0.7}
    assert order_next(scores, "ascending") == 1
    assert order_next(scores, "descending") == 2
    assert order_next({0: 0.5, 1: 0.5}, "ascending") == 0
    assert order_next({3: 0.5, 1: 0.5}, "descending") == 1
    with pytest.raises(ShapeError):
        order_next({}, "ascending")


def test_direct_weighting_limit():
    ids, p = sampling_probabilities({0: 0.0, 1: 1.0}, "direct")
    assert p[0] == pytest.approx(1e-8 / (1 + 2e-8), rel=1e-9)
    _, q = sampling_probabilities({0: 1.0, 1: 3.0}, "inverse")
    assert q[0] == pytest.approx(0.75, rel=1e-7)
    with pytest.raises(ShapeError):
        sampling_probabilities({0: -1.0}, "direct")


def test_single_item_pool_always_wins():
    assert sample_batch({7: 0.4}, "inverse", rng.stream(0), 20) == [7] * 20


def test_equal_scores_give_equal_frequencies():
    n, draws = 5, 100_000
    picks = sample_batch({i: 0.7 for i in range(n)}, "direct", rng.stream(2), draws)
    counts = np.bincount(picks, minlength=n)
    sigma = math.sqrt(draws * (1 / n) * (1 - 1 / n))
    assert np.all(np.abs(counts - draws / n) < 3 * sigma)
    chi2 = float(((counts - draws / n) ** 2 / (draws / n)).sum())
    assert chi2 < 18.47  # 0.999 quantile, 4 degrees of freedom


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.integers(0, 50), st.floats(0, 100), min_size=1, max_size=12))
def test_probabilities_are_a_distribution(scores):
    for weighting in ("direct", "inverse"):
        ids, p = sampling_probabilities(scores, weighting)
        assert ids == sorted(scores)
        assert np.all(p > 0)
        assert abs(p.sum() - 1) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.integers(0, 50), st.floats(-10, 10), min_size=1, max_size=12))
def test_ordering_winner_is_extreme(scores):
    asc, desc = order_next(scores, "ascending"), order_next(scores, "descending")
    assert scores[asc] == min(scores.values())
    assert scores[desc] == max(scores.values())


# loader


def _cfg(**kw):
    base = dict(lr=0.05, batch_size=10, epochs=2, weight_decay=1e-4, eval_batch_size=30)
    base.update(kw)
    return TrainConfig(**base)


@pytest.mark.parametrize("scorer", ["sample_loss", "max_loss_delta_same", "max_loss_delta_external"])
def test_kappa_one_matches_plain_loop(blobs, tmp_path, scorer):
    train, test = blobs
    plain, s1 = run_training(train, test, SPEC, _cfg(), seed=4, run_id="r")
    poa, s2 = run_poa_training(train, test, SPEC, _cfg(), LoaderConfig(scorer=scorer, kappa=1, reference_size=20),
                               seed=4, run_id="r")
    write_metrics_csv(tmp_path / "a.csv", plain)
    write_metrics_csv(tmp_path / "b.csv", poa)
    assert strip_wall_seconds((tmp_path / "a.csv").read_text()) == strip_wall_seconds((tmp_path / "b.csv").read_text())
    assert state_hash(s1.model, s1.optimizer) == state_hash(s2.model, s2.optimizer)


def test_ordering_consumes_every_item_once(blobs):
    train, test = blobs
    seen = []
    records, state = run_poa_training(train, test, SPEC, _cfg(epochs=1), LoaderConfig(kappa=3), seed=0,
                                      on_scores=lambda s: seen.append(set(s)))
    assert state.step == 6
    assert len(records) == 1 and records[0].step == 6
    # the final decision only sees the one remaining batch
    assert len(seen[-1]) == 1


def test_sample_items_fill_batches(blobs):
    train, test = blobs
    records, state = run_poa_training(train, test, SPEC, _cfg(epochs=1),
                                      LoaderConfig(kappa=4, item_kind="sample", strategy="descending"), seed=0)
    assert state.step == 6


def test_sampling_strategy_step_count(blobs):
    train, test = blobs
    _, state = run_poa_training(train, test, SPEC, _cfg(epochs=2, batch_size=7),
                                LoaderConfig(kappa=4, strategy="inverse"), seed=0)
    assert state.step == 2 * math.ceil(60 / 7)


def test_poa_is_deterministic_and_worker_independent(blobs):
    train, test = blobs
    loader = LoaderConfig(kappa=4, scorer="max_loss_delta_external", reference_size=15, rescore="step")
    a, sa = run_poa_training(train, test, SPEC, _cfg(), loader, seed=2)
    b, sb = run_poa_training(train, test, SPEC, _cfg(), loader, seed=2, workers=3)
    strip = [(r.step, r.train_loss, r.test_acc, r.l2_norm) for r in a]
    assert strip == [(r.step, r.train_loss, r.test_acc, r.l2_norm) for r in b]
    assert state_hash(sa.model, sa.optimizer) == state_hash(sb.model, sb.optimizer)


def test_epoch_rescoring_scores_everything_once(blobs):
    train, test = blobs
    steps = []
    run_poa_training(train, test, SPEC, _cfg(epochs=1), LoaderConfig(kappa=2, rescore="epoch"), seed=0,
                     on_scores=lambda s: steps.append({r.scored_at_step for r in s.values()}))
    assert all(s == {0} for s in steps)
