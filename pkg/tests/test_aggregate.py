"""Feature fusion module and plain ensembling baselines."""

import numpy as np
import pytest

from edgesplit.aggregate import (AggregationModule, aggregate,
                                 aggregate_logits, aggregator_accuracy,
                                 ensemble_average, ensemble_majority,
                                 train_aggregator)
from edgesplit.distill import (ToyClassifier, make_cluster_dataset, softmax,
                               train_teacher)
from edgesplit.errors import EmptyEnsemble, ShapeMismatch


def identity_module(d: int, num_classes: int) -> AggregationModule:
    return AggregationModule(np.eye(d), np.zeros(d),
                             np.eye(d, num_classes), np.zeros(num_classes))


class TestAggregate:
    def test_init_dimensions(self):
        m = AggregationModule.init([3, 5, 8], 6, 4, rng=0)
        assert m.w.shape == (16, 6)
        assert m.b.shape == (6,)
        assert m.head_w.shape == (6, 4)
        assert m.head_b.shape == (4,)
        assert m.d_agg == 16
        assert m.d_central == 6

    def test_identity_fusion_single_token(self):
        m = identity_module(4, 3)
        out = aggregate([np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]])], m)
        assert np.array_equal(out, np.array([1.0, 2.0, 3.0, 4.0]))

    def test_two_tokens_average(self):
        m = identity_module(2, 2)
        u = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = aggregate([u], m)
        assert np.allclose(out, np.array([2.0, 3.0]))

    def test_token_permutation_invariance(self):
        rng = np.random.default_rng(0)
        m = AggregationModule.init([3, 2], 4, 3, rng=1)
        a = rng.normal(size=(5, 3))
        b = rng.normal(size=(5, 2))
        perm = rng.permutation(5)
        assert np.allclose(aggregate([a, b], m),
                           aggregate([a[perm], b[perm]], m))

    def test_logits_apply_the_head(self):
        m = AggregationModule.init([2, 2], 3, 2, rng=2)
        feats = [np.array([[1.0, -1.0]]), np.array([[0.5, 2.0]])]
        fused = aggregate(feats, m)
        assert np.allclose(aggregate_logits(feats, m),
                           fused @ m.head_w + m.head_b)

    def test_width_mismatch(self):
        m = identity_module(4, 3)
        with pytest.raises(ShapeMismatch):
            aggregate([np.array([[1.0, 2.0, 3.0]])], m)

    def test_token_count_mismatch(self):
        m = identity_module(4, 3)
        with pytest.raises(ShapeMismatch):
            aggregate([np.ones((2, 2)), np.ones((3, 2))], m)

    def test_empty_input(self):
        with pytest.raises(EmptyEnsemble):
            aggregate([], identity_module(2, 2))


@pytest.fixture(scope="module")
def trained_members():
    data = make_cluster_dataset(n_train=200, n_val=100, spread=0.8, seed=21)
    teacher = train_teacher(data, hidden_dim=32, epochs=300, seed=21)
    subs = [ToyClassifier.init(2, w, 3, np.random.default_rng([21, w]))
            for w in (6, 10)]
    from edgesplit.distill import calibrate_sequence
    result = calibrate_sequence(teacher, subs, data, epochs=300)
    return data, list(result.models)


class TestTrainAggregator:
    def test_zero_epochs_is_identity(self, trained_members):
        data, models = trained_members
        m = AggregationModule.init([6, 10], 8, 3, rng=3)
        out = train_aggregator(m, models, data, epochs=0)
        assert np.array_equal(out.w, m.w)
        assert np.array_equal(out.head_w, m.head_w)

    def test_inputs_left_untouched(self, trained_members):
        data, models = trained_members
        m = AggregationModule.init([6, 10], 8, 3, rng=3)
        w_before = m.w.copy()
        train_aggregator(m, models, data, epochs=20)
        assert np.array_equal(m.w, w_before)

    def test_training_reduces_loss(self, trained_members):
        data, models = trained_members
        m = AggregationModule.init([6, 10], 8, 3, rng=4)
        before, _ = aggregator_accuracy(m, models, data.x_train, data.y_train)
        fitted = train_aggregator(m, models, data, epochs=200)
        after, acc = aggregator_accuracy(fitted, models, data.x_train,
                                         data.y_train)
        assert after < before
        assert acc > 0.8

    def test_feature_width_mismatch(self, trained_members):
        data, models = trained_members
        with pytest.raises(ShapeMismatch):
            train_aggregator(AggregationModule.init([4], 4, 3, rng=5),
                             models, data, epochs=1)

    def test_accuracy_bounds(self, trained_members):
        data, models = trained_members
        m = train_aggregator(AggregationModule.init([6, 10], 8, 3, rng=6),
                             models, data, epochs=100)
        loss, acc = aggregator_accuracy(m, models, data.x_val, data.y_val)
        assert loss > 0
        assert 0.0 <= acc <= 1.0


class TestEnsembles:
    def test_average_is_mean_of_softmaxes(self):
        a = np.array([[2.0, 0.0, 0.0]])
        b = np.array([[0.0, 2.0, 0.0]])
        got = ensemble_average([a, b])
        want = 0.5 * (softmax(a) + softmax(b))
        assert np.allclose(got, want)
        assert got.sum() == pytest.approx(1.0)

    def test_single_member_is_its_softmax(self):
        a = np.array([[1.0, -1.0]])
        assert np.allclose(ensemble_average([a]), softmax(a))

    def test_average_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            ensemble_average([np.zeros((1, 3)), np.zeros((1, 2))])

    def test_average_empty(self):
        with pytest.raises(EmptyEnsemble):
            ensemble_average([])

    def test_majority_modal_class(self):
        assert ensemble_majority([2, 1, 2, 0, 2]) == 2

    def test_majority_tie_breaks_low(self):
        assert ensemble_majority([1, 0, 0, 1]) == 0

    def test_majority_empty(self):
        with pytest.raises(EmptyEnsemble):
            ensemble_majority([])
