"""End-to-end latency model and the scalar search objective.

Collaborative inference runs in three phases: every device executes its
sub-model in parallel (phase 1, taken from the learned latency predictor),
non-central devices ship their final-layer features to the central node
(phase 2), and the central node fuses them (phase 3).  The end-to-end
latency is

    T = max_n (t1_n + t2_n) + t3

The search objective combines an accuracy-degradation score with latency:

    psi = degradation + delta * T        (delta in 1/ms)
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import distill
from .errors import InfeasiblePolicy
from .latency import ArchFeatures, PredictorModel, predict_latency
from .model import (DecompositionPolicy, DeviceFleet, TransformerConfig,
                    flops, full_submodel, validate_policy)

DEFAULT_DELTA = 0.005  # objective weight per ms of latency
FEATURE_BITS_PER_VALUE = 32


def phase1_latency(cfg, model: PredictorModel) -> float:
    """Per-device sub-model execution time, via the learned predictor."""
    return predict_latency(model, ArchFeatures.from_config(cfg))


def phase2_latency(feature_bits: float, bandwidth: float) -> float:
    """Transmission time in ms for ``feature_bits`` at ``bandwidth`` b/ms."""
    if feature_bits < 0 or bandwidth <= 0:
        raise ValueError("feature_bits must be >= 0 and bandwidth > 0")
    return feature_bits / bandwidth


def feature_bits(seq_len: int, embed_dim: int,
                 bits_per_value: int = FEATURE_BITS_PER_VALUE) -> int:
    """Size of one device's final-layer feature map on the wire."""
    return seq_len * embed_dim * bits_per_value


def phase3_latency(seq_len: int, d_central: int, d_agg: int,
                   compute: float) -> float:
    """Aggregation cost: one (S x d_agg) @ (d_agg x d_central) matmul."""
    return 2.0 * seq_len * d_central * d_agg / compute


def end_to_end_latency(policy: DecompositionPolicy, fleet: DeviceFleet,
                       predictors: dict[str, PredictorModel],
                       base: TransformerConfig,
                       bits_per_value: int = FEATURE_BITS_PER_VALUE) -> float:
    """Three-phase latency of a feasible policy on a fleet, in ms."""
    report = validate_policy(policy, base, fleet)
    if not report.satisfied:
        raise InfeasiblePolicy(report)
    d_agg = sum(c.embed_dim for c in policy.sub_models)
    d_central = policy.sub_models[fleet.central_index].embed_dim
    slowest = 0.0
    for i, (cfg, dev) in enumerate(zip(policy.sub_models, fleet.devices)):
        t1 = phase1_latency(cfg, predictors[dev.name])
        t2 = 0.0
        if i != fleet.central_index:
            t2 = phase2_latency(
                feature_bits(base.seq_len, cfg.embed_dim, bits_per_value),
                dev.bandwidth)
        slowest = max(slowest, t1 + t2)
    t3 = phase3_latency(base.seq_len, d_central, d_agg, fleet.central.compute)
    return slowest + t3


class DegradationOracle(Protocol):
    """Scores how much accuracy a policy gives up, one value per sub-model."""

    def per_submodel_loss(self, policy: DecompositionPolicy) -> np.ndarray:
        ...


def degradation(policy: DecompositionPolicy,
                oracle: DegradationOracle) -> float:
    """Mean of the oracle's per-sub-model losses."""
    losses = np.asarray(oracle.per_submodel_loss(policy), dtype=float)
    if np.any(losses < 0):
        raise ValueError("oracle returned a negative loss")
    return float(losses.mean())


@dataclass(frozen=True)
class CapacityOracle:
    """Closed-form stand-in for accuracy degradation.

    Per sub-model: alpha * (1 - flops_ratio)^beta, plus a shared penalty
    gamma * max(0, 1 - covered_embedding_fraction).  The undivided model
    scores exactly zero.
    """

    base: TransformerConfig
    alpha: float = 2.0
    beta: float = 1.5
    gamma: float = 0.5

    def per_submodel_loss(self, policy: DecompositionPolicy) -> np.ndarray:
        full = flops(full_submodel(self.base), self.base)
        coverage = sum(c.embed_dim for c in policy.sub_models) / self.base.embed_dim
        shared = self.gamma * max(0.0, 1.0 - coverage)
        out = np.empty(len(policy))
        for i, cfg in enumerate(policy.sub_models):
            ratio = min(1.0, flops(cfg, self.base) / full)
            out[i] = self.alpha * (1.0 - ratio) ** self.beta + shared
        return out


class DistillationOracle:
    """Degradation scored by actually calibrating toy sub-models.

    A fixed dataset and teacher are built once from ``seed``; each policy
    maps to toy hidden widths proportional to its per-device FLOP share,
    and the oracle returns the calibrated models' validation losses.
    """

    def __init__(self, base: TransformerConfig, seed: int = 0,
                 teacher_hidden: int = 64, min_width: int = 4,
                 epochs: int = 200, lr: float = 0.5):
        self.base = base
        self.seed = seed
        self.teacher_hidden = teacher_hidden
        self.min_width = min_width
        self.epochs = epochs
        self.lr = lr
        self.data = distill.make_cluster_dataset(seed=seed)
        self.teacher = distill.train_teacher(self.data, teacher_hidden,
                                             seed=seed)

    def widths_for(self, policy: DecompositionPolicy) -> tuple[int, ...]:
        full = flops(full_submodel(self.base), self.base)
        return tuple(
            max(self.min_width,
                int(round(self.teacher_hidden * flops(c, self.base) / full)))
            for c in policy.sub_models)

    def per_submodel_loss(self, policy: DecompositionPolicy) -> np.ndarray:
        widths = self.widths_for(policy)
        students = [
            distill.ToyClassifier.init(
                self.data.x_train.shape[1], w, self.data.num_classes,
                np.random.default_rng([self.seed, i, w]))
            for i, w in enumerate(widths)]
        result = distill.calibrate_sequence(self.teacher, students, self.data,
                                            epochs=self.epochs, lr=self.lr)
        return np.asarray(result.val_losses)


@dataclass(frozen=True)
class ObjectiveValue:
    """One policy evaluation: degradation, latency, and their blend."""

    degradation: float
    latency_ms: float
    delta: float
    psi: float

    @classmethod
    def compute(cls, degradation_value: float, latency_ms: float,
                delta: float) -> "ObjectiveValue":
        return cls(degradation_value, latency_ms, delta,
                   degradation_value + delta * latency_ms)


def objective(policy: DecompositionPolicy, fleet: DeviceFleet,
              predictors: dict[str, PredictorModel],
              oracle: DegradationOracle, base: TransformerConfig,
              delta: float = DEFAULT_DELTA) -> ObjectiveValue:
    """Evaluate psi = degradation + delta * latency for one policy."""
    latency_ms = end_to_end_latency(policy, fleet, predictors, base)
    deg = degradation(policy, oracle)
    return ObjectiveValue.compute(deg, latency_ms, delta)


class EvaluationLog:
    """Append-only structured text log of objective evaluations."""

    HEADER = "encoding,degradation,latency_ms,psi,timestamp"

    def __init__(self, path):
        self.path = path
        with open(path, "a") as fh:
            if fh.tell() == 0:
                fh.write(self.HEADER + "\n")

    def append(self, encoding: np.ndarray, value: ObjectiveValue,
               timestamp: float | None = None) -> None:
        if timestamp is None:
            timestamp = time.time()
        enc = "|".join(repr(float(v)) for v in encoding)
        with open(self.path, "a") as fh:
            fh.write(f"{enc},{value.degradation!r},{value.latency_ms!r},"
                     f"{value.psi!r},{timestamp!r}\n")
