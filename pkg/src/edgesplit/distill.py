"""Sequential knowledge distillation with boosting-style sample weights.

Sub-models are calibrated one after another against a fixed teacher on a
small synthetic classification task.  Each sample carries a weight; the
per-sample distillation loss is

    loss_i = (w_i / 2) * (CE(student_i, y_i) + CE(student_i, y_teacher_i))

where y_teacher is the teacher's argmax label, and the batch loss is the
sum over samples.  After calibrating sub-model j, weights update as

    w_i <- w_i * exp((1/M - 1) * loss_i)        (then renormalized)

With M > 1 the exponent is negative, so high-loss samples are *down*-
weighted.  That is deliberate here (later, smaller sub-models concentrate
on the consensus mass rather than on hopeless samples); ``flip_sign=True``
selects the classical boosting direction instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateData, ShapeMismatch


@dataclass(frozen=True)
class ToyDataset:
    """Small labelled point cloud with a held-out validation split."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.x_train.shape[0] != self.y_train.shape[0]:
            raise ShapeMismatch("train features/labels length mismatch")
        if self.x_val.shape[0] != self.y_val.shape[0]:
            raise ShapeMismatch("val features/labels length mismatch")
        if self.x_train.shape[0] < self.num_classes:
            raise DegenerateData("fewer training samples than classes")
        for y in (self.y_train, self.y_val):
            if y.size and (y.min() < 0 or y.max() >= self.num_classes):
                raise DegenerateData("label outside [0, num_classes)")


def make_cluster_dataset(n_train: int = 600, n_val: int = 300,
                         num_classes: int = 3, spread: float = 1.1,
                         radius: float = 2.5, label_noise: float = 0.0,
                         seed=0) -> ToyDataset:
    """Gaussian clusters on a circle; the standard toy task.

    ``spread`` controls class overlap; ``label_noise`` flips that fraction
    of training labels uniformly (validation labels stay clean).
    """
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)

    def draw(n):
        labels = rng.integers(0, num_classes, size=n)
        points = centers[labels] + rng.normal(0.0, spread, size=(n, 2))
        return points, labels

    x_train, y_train = draw(n_train)
    x_val, y_val = draw(n_val)
    if label_noise > 0:
        flip = rng.random(n_train) < label_noise
        y_train = np.where(flip, rng.integers(0, num_classes, size=n_train),
                           y_train)
    return ToyDataset(x_train, y_train, x_val, y_val, num_classes)


@dataclass(frozen=True)
class ToyClassifier:
    """One-hidden-layer ReLU classifier; ``features`` is the hidden layer.

    ``view``, when set, is a frozen input projection applied before the
    first layer.  It stands in for the slice of the shared embedding a
    sub-model receives and is never updated by training.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    view: np.ndarray | None = None

    @classmethod
    def init(cls, in_dim: int, hidden_dim: int, num_classes: int,
             rng, view: np.ndarray | None = None) -> "ToyClassifier":
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        if view is not None and view.shape[1] != in_dim:
            raise ShapeMismatch("view output width must equal in_dim")
        return cls(rng.normal(0.0, np.sqrt(2.0 / in_dim),
                              size=(in_dim, hidden_dim)),
                   np.zeros(hidden_dim),
                   rng.normal(0.0, np.sqrt(2.0 / hidden_dim),
                              size=(hidden_dim, num_classes)),
                   np.zeros(num_classes),
                   view)

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    def project(self, x: np.ndarray) -> np.ndarray:
        return x if self.view is None else x @ self.view

    def features(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(self.project(x) @ self.w1 + self.b1, 0.0)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.features(x) @ self.w2 + self.b2

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)


def planar_view(angle: float) -> np.ndarray:
    """Unit-direction column view: projects 2-D inputs onto one axis."""
    return np.array([[np.cos(angle)], [np.sin(angle)]])


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample cross-entropy against integer labels."""
    return -log_softmax(logits)[np.arange(len(labels)), labels]


def init_weights(m: int) -> np.ndarray:
    if m < 1:
        raise DegenerateData("weight vector needs at least one sample")
    return np.full(m, 1.0 / m)


def distill_loss(student_logits: np.ndarray, labels: np.ndarray,
                 teacher_logits: np.ndarray,
                 weights: np.ndarray) -> np.ndarray:
    """Per-sample weighted two-target loss; sum it for the batch loss."""
    if student_logits.shape != teacher_logits.shape:
        raise ShapeMismatch("student/teacher logit shapes differ")
    if len(labels) != len(student_logits) or len(weights) != len(labels):
        raise ShapeMismatch("labels/weights length mismatch")
    teacher_labels = np.argmax(teacher_logits, axis=1)
    return 0.5 * weights * (cross_entropy(student_logits, labels)
                            + cross_entropy(student_logits, teacher_labels))


def distill_loss_grad(student_logits: np.ndarray, labels: np.ndarray,
                      teacher_logits: np.ndarray,
                      weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(per-sample losses, d(sum loss)/d(student_logits))."""
    losses = distill_loss(student_logits, labels, teacher_logits, weights)
    teacher_labels = np.argmax(teacher_logits, axis=1)
    p = softmax(student_logits)
    target = np.zeros_like(p)
    rows = np.arange(len(labels))
    target[rows, labels] += 0.5
    target[rows, teacher_labels] += 0.5
    grad = weights[:, None] * (p - target)
    return losses, grad


def update_weights(weights: np.ndarray, per_sample_losses: np.ndarray,
                   m: int | None = None, flip_sign: bool = False) -> np.ndarray:
    """Boosting-style reweighting, renormalized onto the simplex."""
    if len(weights) != len(per_sample_losses):
        raise ShapeMismatch("weights/losses length mismatch")
    if np.any(per_sample_losses < 0):
        raise ValueError("per-sample losses must be nonnegative")
    if m is None:
        m = len(weights)
    exponent = (1.0 - 1.0 / m) if flip_sign else (1.0 / m - 1.0)
    new = weights * np.exp(exponent * per_sample_losses)
    total = new.sum()
    if total <= 0 or not np.isfinite(total):
        raise DegenerateData("weight update collapsed to zero mass")
    return new / total


def weight_entropy(weights: np.ndarray) -> float:
    w = weights[weights > 0]
    return float(-(w * np.log(w)).sum())


def _train_ce(clf: ToyClassifier, x: np.ndarray, y: np.ndarray,
              epochs: int, lr: float,
              sample_weights: np.ndarray | None = None) -> ToyClassifier:
    """Full-batch gradient descent on (weighted) mean cross-entropy."""
    x = clf.project(x)
    w1, b1, w2, b2 = clf.w1.copy(), clf.b1.copy(), clf.w2.copy(), clf.b2.copy()
    n = len(y)
    scale = (np.full(n, 1.0 / n) if sample_weights is None
             else sample_weights)
    onehot = np.zeros((n, clf.w2.shape[1]))
    onehot[np.arange(n), y] = 1.0
    for _ in range(epochs):
        h = np.maximum(x @ w1 + b1, 0.0)
        logits = h @ w2 + b2
        dlogits = scale[:, None] * (softmax(logits) - onehot)
        gw2 = h.T @ dlogits
        gb2 = dlogits.sum(axis=0)
        dh = (dlogits @ w2.T) * (h > 0)
        gw1 = x.T @ dh
        gb1 = dh.sum(axis=0)
        w1 -= lr * gw1
        b1 -= lr * gb1
        w2 -= lr * gw2
        b2 -= lr * gb2
    return ToyClassifier(w1, b1, w2, b2, clf.view)


def train_teacher(data: ToyDataset, hidden_dim: int = 64, epochs: int = 400,
                  lr: float = 0.5, seed=0) -> ToyClassifier:
    """Train the teacher on hard labels; zero epochs returns the init."""
    clf = ToyClassifier.init(data.x_train.shape[1], hidden_dim,
                             data.num_classes, seed)
    if epochs == 0:
        return clf
    return _train_ce(clf, data.x_train, data.y_train, epochs, lr)


def _train_distilled(clf: ToyClassifier, x: np.ndarray, y: np.ndarray,
                     teacher_logits: np.ndarray, weights: np.ndarray,
                     epochs: int, lr: float) -> ToyClassifier:
    """Full-batch descent on the summed weighted distillation loss."""
    x = clf.project(x)
    w1, b1, w2, b2 = clf.w1.copy(), clf.b1.copy(), clf.w2.copy(), clf.b2.copy()
    for _ in range(epochs):
        h = np.maximum(x @ w1 + b1, 0.0)
        logits = h @ w2 + b2
        _, dlogits = distill_loss_grad(logits, y, teacher_logits, weights)
        gw2 = h.T @ dlogits
        gb2 = dlogits.sum(axis=0)
        dh = (dlogits @ w2.T) * (h > 0)
        gw1 = x.T @ dh
        gb1 = dh.sum(axis=0)
        w1 -= lr * gw1
        b1 -= lr * gb1
        w2 -= lr * gw2
        b2 -= lr * gb2
    return ToyClassifier(w1, b1, w2, b2, clf.view)


def evaluate(clf: ToyClassifier, x: np.ndarray,
             y: np.ndarray) -> tuple[float, float]:
    """(mean cross-entropy, accuracy) on the given split."""
    logits = clf.logits(x)
    loss = float(cross_entropy(logits, y).mean())
    acc = float((np.argmax(logits, axis=1) == y).mean())
    return loss, acc


@dataclass(frozen=True)
class CalibrationResult:
    models: tuple[ToyClassifier, ...]
    val_losses: tuple[float, ...]
    val_accuracies: tuple[float, ...]
    weight_entropies: tuple[float, ...]

    @property
    def mean_val_loss(self) -> float:
        return float(np.mean(self.val_losses))


def calibrate_sequence(teacher: ToyClassifier,
                       sub_models: list[ToyClassifier], data: ToyDataset,
                       epochs: int = 400, lr: float = 0.5,
                       flip_sign: bool = False) -> CalibrationResult:
    """Calibrate sub-models in order, reweighting samples between rounds.

    Returns the trained models with each one's validation loss/accuracy and
    the sample-weight entropy after each round.
    """
    m = len(data.y_train)
    weights = init_weights(m)
    teacher_logits = teacher.logits(data.x_train)
    trained: list[ToyClassifier] = []
    val_losses: list[float] = []
    val_accs: list[float] = []
    entropies: list[float] = []
    for clf in sub_models:
        fitted = _train_distilled(clf, data.x_train, data.y_train,
                                  teacher_logits, weights, epochs, lr)
        per_sample = distill_loss(fitted.logits(data.x_train), data.y_train,
                                  teacher_logits, weights)
        weights = update_weights(weights, per_sample, m, flip_sign=flip_sign)
        loss, acc = evaluate(fitted, data.x_val, data.y_val)
        trained.append(fitted)
        val_losses.append(loss)
        val_accs.append(acc)
        entropies.append(weight_entropy(weights))
    return CalibrationResult(tuple(trained), tuple(val_losses),
                             tuple(val_accs), tuple(entropies))
