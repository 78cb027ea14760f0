"""Synthetic device profiles and the latency regressor."""

import numpy as np
import pytest

from edgesplit.errors import ConfigError, DegenerateData
from edgesplit.latency import (LAYER_OVERHEAD_MS, MEM_BANDWIDTH_FACTOR,
                               MIN_LATENCY_MS, ArchFeatures, LatencySample,
                               PredictorModel, collect_dataset,
                               dataset_from_csv, dataset_to_csv,
                               load_predictor, loss_and_grads,
                               predict_latency, save_predictor, synth_profile,
                               train_predictor)
from edgesplit.model import SubModelConfig, flops, memory


def _cfg():
    return SubModelConfig(3, 256, (4, 2, 6), (1024, 512, 768))


class TestSynthProfile:
    def test_noise_free_formula(self, base, fleet):
        dev = fleet.devices[0]
        cfg = _cfg()
        expected = (flops(cfg, base) / dev.compute
                    + memory(cfg, base) / (MEM_BANDWIDTH_FACTOR * dev.compute)
                    + LAYER_OVERHEAD_MS * cfg.layers)
        assert synth_profile(dev, cfg, base) == pytest.approx(expected,
                                                              rel=1e-12)

    def test_noise_is_multiplicative_lognormal(self, base, fleet):
        dev = fleet.devices[0]
        cfg = _cfg()
        clean = synth_profile(dev, cfg, base)
        rng = np.random.default_rng(5)
        noisy = synth_profile(dev, cfg, base, rng=rng)
        rng2 = np.random.default_rng(5)
        factor = float(np.exp(rng2.normal(0.0, 0.03)))
        assert noisy == pytest.approx(clean * factor, rel=1e-12)

    def test_sigma_zero_disables_noise(self, base, fleet):
        dev = fleet.devices[0]
        cfg = _cfg()
        rng = np.random.default_rng(5)
        assert synth_profile(dev, cfg, base, rng=rng, sigma_log=0.0) \
            == synth_profile(dev, cfg, base)

    def test_faster_device_is_faster(self, base, fleet):
        cfg = _cfg()
        nano, tx2 = fleet.devices[0], fleet.devices[1]
        assert synth_profile(tx2, cfg, base) < synth_profile(nano, cfg, base)


class TestDataset:
    def test_collect_sizes_and_device_name(self, base, fleet):
        samples = collect_dataset(fleet.devices[0], base, 32,
                                  np.random.default_rng(0))
        assert len(samples) == 32
        assert {s.device for s in samples} == {fleet.devices[0].name}
        assert all(s.latency_ms > 0 for s in samples)

    def test_csv_round_trip_is_exact(self, base, fleet):
        samples = collect_dataset(fleet.devices[1], base, 16,
                                  np.random.default_rng(1))
        back = dataset_from_csv(dataset_to_csv(samples))
        assert back == samples

    def test_csv_rejects_wrong_header(self):
        with pytest.raises(ConfigError):
            dataset_from_csv("a,b,c\n1,2,3\n")


def _toy_data(n=120, seed=0):
    """Latency-like targets from a smooth function of random features."""
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        l = int(rng.integers(1, 13))
        d = int(rng.integers(64, 769))
        h = float(rng.uniform(1, 12))
        m = float(rng.uniform(1, 3072))
        y = 0.1 * l + 1e-3 * d + 0.05 * h + 1e-4 * m
        samples.append(LatencySample(ArchFeatures(l, d, h, m), "dev", y))
    return samples


class TestPredictor:
    def test_gradients_match_central_differences(self):
        rng = np.random.default_rng(2)
        dims = [(4, 8), (8,), (8, 8), (8,), (8, 1), (1,)]
        params = tuple(rng.normal(0, 0.5, size=s) for s in dims)
        x = rng.normal(size=(5, 4))
        y = rng.normal(size=5)
        _, grads = loss_and_grads(params, x, y)
        eps = 1e-6
        for pi, grad in enumerate(grads):
            flat = params[pi].ravel()
            for j in range(flat.size):
                bumped = [p.copy() for p in params]
                bumped[pi].ravel()[j] += eps
                up, _ = loss_and_grads(tuple(bumped), x, y)
                bumped[pi].ravel()[j] -= 2 * eps
                down, _ = loss_and_grads(tuple(bumped), x, y)
                fd = (up - down) / (2 * eps)
                ref = max(1.0, abs(fd))
                assert abs(grad.ravel()[j] - fd) / ref < 1e-4

    def test_training_reduces_loss(self):
        model = train_predictor(_toy_data(), epochs=60, lr=1e-2, rng=0,
                                hidden_dim=16)
        assert model.train_losses[-1] < model.train_losses[0]

    def test_training_is_deterministic(self):
        a = train_predictor(_toy_data(), epochs=10, lr=1e-2, rng=4,
                            hidden_dim=8)
        b = train_predictor(_toy_data(), epochs=10, lr=1e-2, rng=4,
                            hidden_dim=8)
        assert np.array_equal(a.w1, b.w1)
        assert a.heldout_rmse_ms == b.heldout_rmse_ms

    def test_needs_two_samples(self):
        with pytest.raises(DegenerateData):
            train_predictor(_toy_data(n=1))

    def test_rejects_constant_feature(self):
        samples = [LatencySample(ArchFeatures(3, 128, 2.0, 64.0), "dev",
                                 float(i)) for i in range(10)]
        with pytest.raises(DegenerateData):
            train_predictor(samples)

    def test_prediction_floor(self):
        zeros = [np.zeros((4, 4)), np.zeros(4), np.zeros((4, 4)), np.zeros(4),
                 np.zeros((4, 1)), np.zeros(1)]
        model = PredictorModel(*zeros, x_mean=np.zeros(4), x_std=np.ones(4),
                               y_mean=-5.0, y_std=1.0)
        feats = ArchFeatures(1, 64, 1.0, 1.0)
        assert predict_latency(model, feats) == MIN_LATENCY_MS

    def test_save_load_round_trip(self, tmp_path):
        model = train_predictor(_toy_data(), epochs=20, lr=1e-2, rng=1,
                                hidden_dim=8)
        path = tmp_path / "predictor.json"
        save_predictor(model, path)
        loaded = load_predictor(path)
        feats = ArchFeatures(6, 300, 4.0, 1500.0)
        assert predict_latency(loaded, feats) \
            == pytest.approx(predict_latency(model, feats), rel=1e-12)

    def test_load_rejects_unknown_version(self, tmp_path):
        model = train_predictor(_toy_data(), epochs=5, lr=1e-2, rng=1,
                                hidden_dim=8)
        path = tmp_path / "predictor.json"
        save_predictor(model, path)
        text = path.read_text().replace('"format_version":1',
                                        '"format_version":99')
        path.write_text(text)
        with pytest.raises(ConfigError):
            load_predictor(path)

    def test_noise_free_predictions_track_cost_ordering(self, base, fleet):
        # deeper/wider configs must not predict faster after a clean fit
        dev = fleet.devices[1]
        rng = np.random.default_rng(9)
        samples = []
        for _ in range(400):
            l = int(rng.integers(1, base.layers + 1))
            d = int(rng.integers(base.head_dim, base.embed_dim + 1))
            h = tuple(int(x) for x in rng.integers(1, base.heads + 1, size=l))
            m = tuple(int(x) for x in rng.integers(1, base.mlp_dim + 1,
                                                   size=l))
            cfg = SubModelConfig(l, d, h, m)
            samples.append(LatencySample(ArchFeatures.from_config(cfg),
                                         dev.name,
                                         synth_profile(dev, cfg, base)))
        model = train_predictor(samples, epochs=300, lr=1e-2, rng=0,
                                hidden_dim=32)
        ladder = [SubModelConfig(l, 256, (6,) * l, (1024,) * l)
                  for l in (1, 4, 8, 12)]
        preds = [predict_latency(model, ArchFeatures.from_config(c))
                 for c in ladder]
        assert preds == sorted(preds)
