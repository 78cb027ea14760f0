"""Per-device latency profiling and a learned latency predictor.

Ground truth comes from a synthetic profiler: compute time from the FLOP
count, a memory-movement term, a per-layer launch overhead, and optional
multiplicative lognormal noise.  A small fully-connected network is trained
per device on (l, d, h_bar, D_bar) features to stand in for on-device
measurements; all gradients are analytic and checked against central
differences in the tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateData
from .model import SubModelConfig, TransformerConfig, flops, memory

PREDICTOR_FORMAT_VERSION = 1

# synthetic profiler defaults
NOISE_SIGMA_LOG = 0.03
LAYER_OVERHEAD_MS = 0.1
MEM_BANDWIDTH_FACTOR = 50.0  # effective bytes/ms per FLOP/ms of compute

MIN_LATENCY_MS = 0.01


@dataclass(frozen=True)
class ArchFeatures:
    """Sub-model summary fed to the predictor: depth, width, mean budgets."""

    layers: int
    embed_dim: int
    heads_mean: float
    mlp_mean: float

    @classmethod
    def from_config(cls, cfg: SubModelConfig) -> "ArchFeatures":
        return cls(cfg.layers, cfg.embed_dim,
                   float(np.mean(cfg.heads_per_layer)),
                   float(np.mean(cfg.mlp_dims)))

    def to_array(self) -> np.ndarray:
        return np.array([self.layers, self.embed_dim,
                         self.heads_mean, self.mlp_mean], dtype=float)


@dataclass(frozen=True)
class LatencySample:
    features: ArchFeatures
    device: str
    latency_ms: float


def synth_profile(device, cfg: SubModelConfig, base: TransformerConfig,
                  rng=None, sigma_log: float = NOISE_SIGMA_LOG,
                  layer_overhead_ms: float = LAYER_OVERHEAD_MS) -> float:
    """Synthetic single-inference latency of ``cfg`` on ``device`` in ms.

    compute + memory traffic + per-layer overhead, times lognormal noise.
    The memory channel moves MEM_BANDWIDTH_FACTOR bytes per FLOP of compute
    throughput.  Pass sigma_log=0 (or rng=None) for the noise-free value.
    """
    mem_bw = MEM_BANDWIDTH_FACTOR * device.compute  # bytes per ms
    t = (flops(cfg, base) / device.compute
         + memory(cfg, base) / mem_bw
         + layer_overhead_ms * cfg.layers)
    if rng is not None and sigma_log > 0:
        t *= float(np.exp(rng.normal(0.0, sigma_log)))
    return t


def _random_config(base: TransformerConfig, rng) -> SubModelConfig:
    l = int(rng.integers(1, base.layers + 1))
    d = int(rng.integers(base.head_dim, base.embed_dim + 1))
    heads = tuple(int(x) for x in rng.integers(1, base.heads + 1, size=l))
    mlps = tuple(int(x) for x in rng.integers(1, base.mlp_dim + 1, size=l))
    return SubModelConfig(l, d, heads, mlps)


def collect_dataset(device, base: TransformerConfig, n: int,
                    rng) -> list[LatencySample]:
    """Profile ``n`` random sub-model shapes on one device."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    samples = []
    for _ in range(n):
        cfg = _random_config(base, rng)
        t = synth_profile(device, cfg, base, rng=rng)
        samples.append(LatencySample(ArchFeatures.from_config(cfg),
                                     device.name, t))
    return samples


DATASET_HEADER = "l,d,h_bar,D_bar,device,latency_ms"


def dataset_to_csv(samples: list[LatencySample]) -> str:
    lines = [DATASET_HEADER]
    for s in samples:
        f = s.features
        lines.append(f"{f.layers},{f.embed_dim},{f.heads_mean!r},"
                     f"{f.mlp_mean!r},{s.device},{s.latency_ms!r}")
    return "\n".join(lines) + "\n"


def dataset_from_csv(text: str) -> list[LatencySample]:
    lines = [ln for ln in text.splitlines()
             if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != DATASET_HEADER:
        raise ConfigError("latency dataset missing expected header "
                          f"'{DATASET_HEADER}'")
    samples = []
    for ln in lines[1:]:
        l, d, hbar, dbar, device, latency = ln.split(",")
        samples.append(LatencySample(
            ArchFeatures(int(l), int(d), float(hbar), float(dbar)),
            device, float(latency)))
    return samples


@dataclass
class PredictorModel:
    """Two-hidden-layer ReLU regressor plus its normalization constants."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    heldout_rmse_ms: float = float("nan")
    train_losses: tuple[float, ...] = ()

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    def params(self):
        return (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3)


def _forward(params, x):
    w1, b1, w2, b2, w3, b3 = params
    h1 = np.maximum(x @ w1 + b1, 0.0)
    h2 = np.maximum(h1 @ w2 + b2, 0.0)
    out = h2 @ w3 + b3
    return out[:, 0], (h1, h2)


def loss_and_grads(params, x, y):
    """Mean squared error and its gradient for every parameter array.

    ``x`` and ``y`` are already normalized; shapes (n, 4) and (n,).
    """
    w1, b1, w2, b2, w3, b3 = params
    n = x.shape[0]
    pred, (h1, h2) = _forward(params, x)
    err = pred - y
    loss = float(np.mean(err ** 2))

    dout = (2.0 / n) * err[:, None]          # (n, 1)
    gw3 = h2.T @ dout
    gb3 = dout.sum(axis=0)
    dh2 = (dout @ w3.T) * (h2 > 0)
    gw2 = h1.T @ dh2
    gb2 = dh2.sum(axis=0)
    dh1 = (dh2 @ w2.T) * (h1 > 0)
    gw1 = x.T @ dh1
    gb1 = dh1.sum(axis=0)
    return loss, (gw1, gb1, gw2, gb2, gw3, gb3)


def _init_params(hidden_dim: int, rng) -> tuple:
    def he(fan_in, shape):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    return (he(4, (4, hidden_dim)), np.zeros(hidden_dim),
            he(hidden_dim, (hidden_dim, hidden_dim)), np.zeros(hidden_dim),
            he(hidden_dim, (hidden_dim, 1)), np.zeros(1))


def train_predictor(data: list[LatencySample], epochs: int = 200,
                    lr: float = 1e-3, rng=0, hidden_dim: int = 600,
                    batch_size: int = 64,
                    val_fraction: float = 0.2) -> PredictorModel:
    """Fit the latency regressor with mini-batch gradient descent.

    Features and targets are z-scored from the training split; the held-out
    RMSE (in ms) and the per-epoch full-train loss curve ride along on the
    returned model.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    if len(data) < 2:
        raise DegenerateData("need at least two samples to fit")
    x = np.stack([s.features.to_array() for s in data])
    y = np.array([s.latency_ms for s in data])

    stds = x.std(axis=0)
    if np.any(stds == 0):
        dead = [name for name, s in
                zip(("l", "d", "h_bar", "D_bar"), stds) if s == 0]
        raise DegenerateData(f"constant feature column(s): {', '.join(dead)}")

    order = rng.permutation(len(data))
    n_val = max(1, int(round(val_fraction * len(data))))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if train_idx.size == 0:
        raise DegenerateData("training split is empty")

    x_mean = x[train_idx].mean(axis=0)
    x_std = x[train_idx].std(axis=0)
    x_std[x_std == 0] = 1.0
    y_mean = float(y[train_idx].mean())
    y_std = float(y[train_idx].std())
    if y_std == 0:
        y_std = 1.0

    xn = (x - x_mean) / x_std
    yn = (y - y_mean) / y_std
    xt, yt = xn[train_idx], yn[train_idx]

    params = _init_params(hidden_dim, rng)
    losses = []
    for _ in range(epochs):
        perm = rng.permutation(train_idx.size)
        for start in range(0, perm.size, batch_size):
            sel = perm[start:start + batch_size]
            _, grads = loss_and_grads(params, xt[sel], yt[sel])
            params = tuple(p - lr * g for p, g in zip(params, grads))
        epoch_loss, _ = loss_and_grads(params, xt, yt)
        losses.append(epoch_loss)

    val_pred, _ = _forward(params, xn[val_idx])
    rmse = float(np.sqrt(np.mean(
        ((val_pred * y_std + y_mean) - y[val_idx]) ** 2)))

    return PredictorModel(*params, x_mean=x_mean, x_std=x_std,
                          y_mean=y_mean, y_std=y_std,
                          heldout_rmse_ms=rmse,
                          train_losses=tuple(losses))


def predict_latency(model: PredictorModel, feats: ArchFeatures) -> float:
    """Predicted latency in ms, floored at MIN_LATENCY_MS."""
    xn = (feats.to_array()[None, :] - model.x_mean) / model.x_std
    out, _ = _forward(model.params(), xn)
    return max(MIN_LATENCY_MS, float(out[0] * model.y_std + model.y_mean))


def save_predictor(model: PredictorModel, path) -> None:
    blob = {
        "format_version": PREDICTOR_FORMAT_VERSION,
        "hidden_dim": model.hidden_dim,
        "x_mean": model.x_mean.tolist(),
        "x_std": model.x_std.tolist(),
        "y_mean": model.y_mean,
        "y_std": model.y_std,
        "heldout_rmse_ms": model.heldout_rmse_ms,
        "weights": {name: arr.tolist() for name, arr in
                    zip(("w1", "b1", "w2", "b2", "w3", "b3"),
                        model.params())},
    }
    with open(path, "w") as fh:
        json.dump(blob, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_predictor(path) -> PredictorModel:
    with open(path) as fh:
        blob = json.load(fh)
    if blob.get("format_version") != PREDICTOR_FORMAT_VERSION:
        raise ConfigError(
            f"predictor file {path}: unsupported format_version "
            f"{blob.get('format_version')!r}")
    w = blob["weights"]
    return PredictorModel(
        *(np.asarray(w[name], dtype=float)
          for name in ("w1", "b1", "w2", "b2", "w3", "b3")),
        x_mean=np.asarray(blob["x_mean"], dtype=float),
        x_std=np.asarray(blob["x_std"], dtype=float),
        y_mean=float(blob["y_mean"]),
        y_std=float(blob["y_std"]),
        heldout_rmse_ms=float(blob["heldout_rmse_ms"]),
    )
