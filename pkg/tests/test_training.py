import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from htnnr import autodiff as ad, training
from htnnr.training import TrainConfig

from conftest import random_encoded, toy_model
from oracles import bce_sum, pairwise_auc


class TestBce:
    def test_half(self):
        assert abs(training.bce_loss(np.full(7, 0.5), np.array([1, -1, 1, 1, -1, -1, 1])).item() - math.log(2)) < 1e-15

    def test_confident_correct(self):
        assert training.bce_loss(np.array([1 - 1e-12]), np.array([1])).item() < 1e-11

    def test_clamped(self):
        assert np.isfinite(training.bce_loss(np.array([0.0, 1.0]), np.array([1, -1])).item())

    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(1, 60))
            p = rng.uniform(1e-6, 1 - 1e-6, size=n)
            y = rng.choice([-1, 1], size=n)
            assert abs(training.bce_loss(p, y).item() - bce_sum(p, y)) <= 1e-12

    def test_length_mismatch(self):
        with pytest.raises(ad.ShapeError, match="length"):
            training.bce_loss(np.full(3, 0.5), np.array([1, -1]))


class TestAuc:
    def test_perfect(self):
        r = training.metrics_from_scores([0.9, 0.1], [1, -1])
        assert (r.auc, r.precision, r.recall) == (1.0, 1.0, 1.0)

    def test_inverted(self):
        assert training.roc_auc([0.1, 0.9], [1, -1]) == 0.0

    def test_six_mixed(self):
        scores = [0.3, 0.7, 0.7, 0.1, 0.5, 0.3]
        labels = [1, -1, 1, -1, 1, -1]
        assert training.roc_auc(scores, labels) == pairwise_auc(scores, labels)

    def test_single_class_undefined(self):
        assert training.roc_auc([0.2, 0.4], [1, 1]) is None
        r = training.metrics_from_scores([0.2, 0.4], [-1, -1])
        assert r.auc is None and r.precision is None and r.recall is None
        assert "undefined" in r.table()

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]), st.sampled_from([-1, 1])),
                    min_size=2, max_size=50))
    def test_equals_pairwise(self, pairs):
        scores, labels = zip(*pairs)
        if len(set(labels)) < 2:
            return
        assert training.roc_auc(scores, labels) == pairwise_auc(scores, labels)

    def test_monotone_invariance(self):
        rng = np.random.default_rng(1)
        s = rng.normal(size=40)
        y = rng.choice([-1, 1], size=40)
        base = training.roc_auc(s, y)
        for f in (np.exp, lambda v: 3 * v - 7, lambda v: v ** 3, np.arctan):
            assert training.roc_auc(f(s), y) == base


class TestMetrics:
    def test_counts(self):
        r = training.metrics_from_scores([0.9, 0.6, 0.4, 0.2, 0.5], [1, -1, 1, -1, -1])
        assert (r.tp, r.fp, r.tn, r.fn) == (1, 2, 1, 1)
        assert r.total == 5
        assert r.accuracy == 2 / 5
        assert r.precision == 1 / 3 and r.recall == 1 / 2

    def test_bounded(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            r = training.metrics_from_scores(rng.random(20), rng.choice([-1, 1], size=20))
            for v in (r.accuracy, r.precision, r.recall, r.auc):
                assert v is None or 0 <= v <= 1
            assert r.total == 20

    def test_json(self):
        r = training.metrics_from_scores([0.9, 0.1], [1, -1])
        assert json.loads(r.to_json())["auc"] == 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            training.metrics_from_scores([], [])


def toy_data(n, seed):
    """Instances whose label is whether code 1 appears in the history."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        x = random_encoded(rng, 6)
        out.append((x, 1 if any(1 in c for c in x.codes) else -1))
    return out


class TestAdam:
    def test_first_step_is_lr_sized(self):
        p = ad.Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad[...] = [0.3, -5.0]
        training.Adam([p], lr=0.1).step()
        assert np.allclose(p.data, [0.9, -1.9], atol=1e-6)

    def test_minimizes_quadratic(self):
        p = ad.Tensor(np.array([3.0, -4.0]), requires_grad=True)
        opt = training.Adam([p], lr=0.1)
        for _ in range(500):
            p.zero_grad()
            with ad.Tape():
                loss = (p * p).sum()
            ad.backward(loss)
            opt.step()
        assert np.all(np.abs(p.data) < 1e-2)


class TestTrain:
    def test_learns_toy_rule(self):
        model = toy_model(seed=1)
        data = toy_data(200, 0)
        res = training.train(model, data[:150], data[150:], TrainConfig(batch_size=16, lr=2e-2, max_epochs=15))
        assert res.curve[-1][1] < res.curve[0][1]
        assert training.evaluate(model, data[150:]).auc > 0.8

    def test_deterministic(self):
        curves = []
        for _ in range(2):
            model = toy_model(seed=3)
            res = training.train(model, toy_data(60, 1), toy_data(20, 2), TrainConfig(batch_size=8, max_epochs=3))
            curves.append(np.array(res.curve))
        assert np.max(np.abs(curves[0] - curves[1])) <= 1e-12

    def test_returns_best_checkpoint(self):
        model = toy_model(seed=4)
        val = toy_data(30, 6)
        res = training.train(model, toy_data(80, 5), val, TrainConfig(batch_size=8, lr=0.05, max_epochs=12, patience=3))
        vals = [c[2] for c in res.curve]
        assert res.best_val_loss == min(vals)
        assert res.best_epoch == 1 + int(np.argmin(vals))
        xs, ys = training._encode_all(model, val)
        assert abs(training.dataset_loss(model, xs, ys) - res.best_val_loss) < 1e-12

    def test_patience_one_on_training_data(self):
        data = toy_data(40, 7)
        res = training.train(toy_model(seed=5), data, data, TrainConfig(batch_size=8, lr=0.01, max_epochs=6, patience=1))
        vals = [c[2] for c in res.curve]
        if res.stopped_early:
            assert vals[-1] >= min(vals[:-1])
        else:
            assert len(vals) == 6

    def test_nan_aborts_with_location(self):
        model = toy_model(seed=6)
        model.params["classifier.w"].data[:] = np.nan
        with pytest.raises(FloatingPointError, match="epoch 1, batch 0"):
            training.train(model, toy_data(20, 8), toy_data(10, 9), TrainConfig(batch_size=8))

    def test_empty_sets(self):
        with pytest.raises(ValueError):
            training.train(toy_model(), [], toy_data(5, 0), TrainConfig())

    def test_embeddings_frozen(self):
        model = toy_model(seed=7)
        before = model.emb.vectors.copy()
        training.train(model, toy_data(30, 1), toy_data(10, 2), TrainConfig(batch_size=8, max_epochs=2))
        assert np.array_equal(model.emb.vectors, before)

    def test_params_finite_after_training(self):
        model = toy_model(seed=8)
        training.train(model, toy_data(30, 3), toy_data(10, 4), TrainConfig(batch_size=8, lr=0.1, max_epochs=3))
        assert all(np.all(np.isfinite(p.data)) for p in model.params.values())

    def test_config_validated(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)


@pytest.mark.slow
def test_planted_loss_decreases_first_three_epochs(planted):
    losses = [c[1] for c in planted.results["htnnr"].curve[:3]]
    assert losses[0] > losses[1] > losses[2]
