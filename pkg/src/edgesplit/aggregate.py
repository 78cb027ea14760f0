"""Fusing per-device features at the central node.

Sub-model outputs X_n (S tokens x d_n features each) are concatenated along
the feature axis, mapped by a learned affine transform, average-pooled over
tokens, and classified by a linear head:

    fused = mean_over_tokens(concat(X_1..X_N) @ W + b)      (length d_i)
    logits = fused @ head_w + head_b

Plain ensembling baselines (probability averaging, majority vote) live here
too for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .distill import ToyClassifier, ToyDataset, cross_entropy, softmax
from .errors import EmptyEnsemble, ShapeMismatch


@dataclass(frozen=True)
class AggregationModule:
    w: np.ndarray        # (d_agg, d_i)
    b: np.ndarray        # (d_i,)
    head_w: np.ndarray   # (d_i, num_classes)
    head_b: np.ndarray   # (num_classes,)

    @classmethod
    def init(cls, feature_dims: Sequence[int], d_central: int,
             num_classes: int, rng) -> "AggregationModule":
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        d_agg = int(sum(feature_dims))
        return cls(rng.normal(0.0, np.sqrt(1.0 / d_agg),
                              size=(d_agg, d_central)),
                   np.zeros(d_central),
                   rng.normal(0.0, np.sqrt(1.0 / d_central),
                              size=(d_central, num_classes)),
                   np.zeros(num_classes))

    @property
    def d_agg(self) -> int:
        return self.w.shape[0]

    @property
    def d_central(self) -> int:
        return self.w.shape[1]


def _concat(features: Sequence[np.ndarray]) -> np.ndarray:
    if not features:
        raise EmptyEnsemble("no feature blocks to aggregate")
    arrs = [np.atleast_2d(np.asarray(f, dtype=float)) for f in features]
    tokens = arrs[0].shape[0]
    for a in arrs:
        if a.shape[0] != tokens:
            raise ShapeMismatch("feature blocks disagree on token count")
    return np.concatenate(arrs, axis=1)


def aggregate(features: Sequence[np.ndarray],
              module: AggregationModule) -> np.ndarray:
    """Fuse per-device feature blocks into one length-d_i vector."""
    x = _concat(features)
    if x.shape[1] != module.d_agg:
        raise ShapeMismatch(
            f"concatenated width {x.shape[1]} != module d_agg {module.d_agg}")
    per_token = x @ module.w + module.b
    return per_token.mean(axis=0)


def aggregate_logits(features: Sequence[np.ndarray],
                     module: AggregationModule) -> np.ndarray:
    return aggregate(features, module) @ module.head_w + module.head_b


def train_aggregator(module: AggregationModule,
                     sub_models: Sequence[ToyClassifier], data: ToyDataset,
                     epochs: int = 400, lr: float = 0.1) -> AggregationModule:
    """Fit W, b and the head jointly on frozen sub-model features.

    Full-batch gradient descent on mean cross-entropy; zero epochs returns
    the module unchanged.  Toy features are single-token (S = 1).  lr above
    ~0.3 diverges on the standard cluster task; 0.1 is stable.
    """
    feats = np.concatenate([m.features(data.x_train) for m in sub_models],
                           axis=1)
    if feats.shape[1] != module.d_agg:
        raise ShapeMismatch(
            f"sub-model features width {feats.shape[1]} != module d_agg "
            f"{module.d_agg}")
    n = feats.shape[0]
    onehot = np.zeros((n, module.head_w.shape[1]))
    onehot[np.arange(n), data.y_train] = 1.0

    w, b = module.w.copy(), module.b.copy()
    hw, hb = module.head_w.copy(), module.head_b.copy()
    for _ in range(epochs):
        fused = feats @ w + b
        logits = fused @ hw + hb
        dlogits = (softmax(logits) - onehot) / n
        ghw = fused.T @ dlogits
        ghb = dlogits.sum(axis=0)
        dfused = dlogits @ hw.T
        gw = feats.T @ dfused
        gb = dfused.sum(axis=0)
        w -= lr * gw
        b -= lr * gb
        hw -= lr * ghw
        hb -= lr * ghb
    return AggregationModule(w, b, hw, hb)


def aggregator_accuracy(module: AggregationModule,
                        sub_models: Sequence[ToyClassifier], x: np.ndarray,
                        y: np.ndarray) -> tuple[float, float]:
    """(mean cross-entropy, accuracy) of the fused classifier on x, y."""
    feats = np.concatenate([m.features(x) for m in sub_models], axis=1)
    logits = (feats @ module.w + module.b) @ module.head_w + module.head_b
    loss = float(cross_entropy(logits, y).mean())
    acc = float((np.argmax(logits, axis=1) == y).mean())
    return loss, acc


def ensemble_average(logits_list: Sequence[np.ndarray]) -> np.ndarray:
    """Mean of the members' softmax distributions."""
    if len(logits_list) == 0:
        raise EmptyEnsemble("ensemble_average needs at least one member")
    arrs = [np.asarray(l, dtype=float) for l in logits_list]
    shape = arrs[0].shape
    for a in arrs:
        if a.shape != shape:
            raise ShapeMismatch("ensemble members disagree on logit shape")
    return np.mean([softmax(np.atleast_2d(a)) for a in arrs],
                   axis=0).reshape(shape)


def ensemble_majority(predictions: Sequence[int]) -> int:
    """Most common class; ties break toward the lowest class index."""
    if len(predictions) == 0:
        raise EmptyEnsemble("ensemble_majority needs at least one member")
    counts = np.bincount(np.asarray(predictions, dtype=int))
    return int(np.argmax(counts))
