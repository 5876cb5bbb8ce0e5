"""Downstream utility scoring: train classifiers on synthetic data, test on real.

Ships two deliberately simple classifiers (multinomial logistic regression
and a one-hidden-layer relu MLP, both full-batch Adam with L2 on the
weights) and rank-based ROC-AUC, step-interpolated PRC-AUC, and macro-F1
computed from scratch. Multiclass ROC/PRC are one-vs-rest macro averages.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from ntksynth import tensor as T
from ntksynth.data import LabeledDataset, SchemaError
from ntksynth.optim import Adam
from ntksynth.tensor import Rng

__all__ = [
    "ClassifierConfig", "EvalConfig", "EvalReport", "SoftmaxClassifier",
    "train_logreg", "train_mlp", "accuracy", "roc_auc", "prc_auc", "macro_f1",
    "evaluate_classifier", "synth_to_real_eval",
]

METRICS = ("accuracy", "roc_auc", "prc_auc", "macro_f1")


@dataclass(frozen=True)
class ClassifierConfig:
    n_iter: int = 400
    lr: float = 0.05
    l2: float = 1e-4
    hidden: int = 100
    seed: int = 0


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class SoftmaxClassifier:
    """Linear or one-hidden-layer softmax model over encoded features."""

    def __init__(self, weights: list[np.ndarray], hidden: bool):
        self.weights = weights
        self.hidden = hidden

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.hidden:
            w1, b1, w2, b2 = self.weights
            h = np.maximum(X @ w1 + b1, 0.0)
            return _softmax(h @ w2 + b2)
        w, b = self.weights
        return _softmax(X @ w + b)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)


def _check_trainable(train: LabeledDataset):
    present = np.flatnonzero(train.class_counts() > 0)
    if present.size < 2:
        raise ValueError("training data must contain at least two classes")


def train_logreg(train: LabeledDataset, cfg: ClassifierConfig = ClassifierConfig()
                 ) -> SoftmaxClassifier:
    """Multinomial logistic regression; zero-init, so 0 iters predicts 1/c."""
    _check_trainable(train)
    X, Y = train.features, train.labels
    n, p = X.shape
    c = Y.shape[1]
    w = T.parameter(np.zeros((p, c)))
    b = T.parameter(np.zeros(c))
    opt = Adam([w, b], cfg.lr)
    for _ in range(cfg.n_iter):
        probs = _softmax(X @ w.data + b.data)
        g_logits = (probs - Y) / n
        w.grad = X.T @ g_logits + cfg.l2 * w.data
        b.grad = g_logits.sum(axis=0)
        opt.step()
    return SoftmaxClassifier([w.data, b.data], hidden=False)


def train_mlp(train: LabeledDataset, cfg: ClassifierConfig = ClassifierConfig()
              ) -> SoftmaxClassifier:
    """One-hidden-layer relu network; output layer zero-init (uniform at 0 iters)."""
    _check_trainable(train)
    X, Y = train.features, train.labels
    n, p = X.shape
    c = Y.shape[1]
    rng = Rng(cfg.seed)
    w1 = T.parameter(rng.normal((p, cfg.hidden)) * np.sqrt(2.0 / p))
    b1 = T.parameter(np.zeros(cfg.hidden))
    w2 = T.parameter(np.zeros((cfg.hidden, c)))
    b2 = T.parameter(np.zeros(c))
    opt = Adam([w1, b1, w2, b2], cfg.lr)
    for _ in range(cfg.n_iter):
        z1 = X @ w1.data + b1.data
        h = np.maximum(z1, 0.0)
        probs = _softmax(h @ w2.data + b2.data)
        g_logits = (probs - Y) / n
        g_h = g_logits @ w2.data.T
        g_z1 = g_h * (z1 > 0)
        w2.grad = h.T @ g_logits + cfg.l2 * w2.data
        b2.grad = g_logits.sum(axis=0)
        w1.grad = X.T @ g_z1 + cfg.l2 * w1.data
        b1.grad = g_z1.sum(axis=0)
        opt.step()
    return SoftmaxClassifier([w1.data, b1.data, w2.data, b2.data], hidden=True)


# ---- metrics ----------------------------------------------------------------

def accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    pred, labels = np.asarray(pred), np.asarray(labels)
    return float(np.mean(pred == labels))


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve by the rank statistic, ties averaged."""
    scores, labels = np.asarray(scores, dtype=np.float64), np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    ranks = rankdata(scores, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def prc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the precision-recall curve, step-wise interpolation."""
    scores, labels = np.asarray(scores, dtype=np.float64), np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    if n_pos == 0 or int((~pos).sum()) == 0:
        raise ValueError("PRC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = pos[order].astype(np.float64)
    tp = np.cumsum(sorted_pos)
    fp = np.cumsum(1.0 - sorted_pos)
    # collapse tied scores: only the last index of each tie group is a
    # realizable operating point
    last_of_group = np.ones(scores.size, dtype=bool)
    last_of_group[:-1] = sorted_scores[:-1] != sorted_scores[1:]
    tp, fp = tp[last_of_group], fp[last_of_group]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def macro_f1(pred: np.ndarray, labels: np.ndarray, n_classes: int | None = None) -> float:
    """F1 averaged over classes; a class with undefined F1 contributes 0."""
    pred, labels = np.asarray(pred), np.asarray(labels)
    if n_classes is None:
        n_classes = int(max(pred.max(), labels.max())) + 1
    f1s = []
    for k in range(n_classes):
        tp = float(np.sum((pred == k) & (labels == k)))
        fp = float(np.sum((pred == k) & (labels != k)))
        fn = float(np.sum((pred != k) & (labels == k)))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(f1s))


def _ovr_macro(metric, probs: np.ndarray, labels: np.ndarray) -> float:
    """One-vs-rest macro average of a binary score metric."""
    c = probs.shape[1]
    if c == 2:
        return metric(probs[:, 1], (labels == 1).astype(int))
    vals = [metric(probs[:, k], (labels == k).astype(int)) for k in range(c)]
    return float(np.mean(vals))


def evaluate_classifier(clf: SoftmaxClassifier, test: LabeledDataset) -> dict[str, float]:
    probs = clf.predict_proba(test.features)
    pred = probs.argmax(axis=1)
    labels = test.label_indices
    return {
        "accuracy": accuracy(pred, labels),
        "roc_auc": _ovr_macro(roc_auc, probs, labels),
        "prc_auc": _ovr_macro(prc_auc, probs, labels),
        "macro_f1": macro_f1(pred, labels, n_classes=test.schema.n_classes),
    }


# ---- synthetic -> real protocol ---------------------------------------------

_TRAINERS = {"logreg": train_logreg, "mlp": train_mlp}


@dataclass(frozen=True)
class EvalConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    classifiers: tuple[str, ...] = ("logreg", "mlp")
    n_synth: int = 2000
    classifier_cfg: ClassifierConfig = ClassifierConfig()

    def __post_init__(self):
        unknown = set(self.classifiers) - set(_TRAINERS)
        if unknown:
            raise ValueError(f"unknown classifier(s) {sorted(unknown)}")


@dataclass
class EvalReport:
    """Averaged and per-seed metrics of the synthetic-to-real protocol."""

    seeds: tuple[int, ...]
    per_seed: dict[str, list[dict[str, float]]]
    averaged: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.averaged:
            self.averaged = {
                name: {m: float(np.mean([run[m] for run in runs])) for m in METRICS}
                for name, runs in self.per_seed.items()}
        for metrics in self.averaged.values():
            for m, v in metrics.items():
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"metric {m} out of [0,1]: {v}")

    def to_json(self) -> str:
        payload = {"seeds": list(self.seeds), "averaged": self.averaged,
                   "per_seed": self.per_seed}
        return json.dumps(payload, sort_keys=True, indent=2)

    def csv_header(self) -> str:
        cols = [f"{name}_{m}" for name in sorted(self.averaged) for m in METRICS]
        return ",".join(["seeds"] + cols)

    def csv_row(self) -> str:
        cells = [";".join(str(s) for s in self.seeds)]
        for name in sorted(self.averaged):
            cells.extend(repr(self.averaged[name][m]) for m in METRICS)
        return ",".join(cells)


def synth_to_real_eval(synthetic, real_test: LabeledDataset,
                       cfg: EvalConfig = EvalConfig(),
                       class_weights=None) -> EvalReport:
    """Train each configured classifier on synthetic data, score on real data.

    ``synthetic`` is either a LabeledDataset (classifier seeds vary per run)
    or a GeneratorModel (a fresh synthetic set is sampled per seed).
    """
    from ntksynth.generator import GeneratorModel, sample_dataset

    per_seed: dict[str, list[dict[str, float]]] = {name: [] for name in cfg.classifiers}
    for seed in cfg.seeds:
        if isinstance(synthetic, GeneratorModel):
            train_set = sample_dataset(synthetic, Rng(seed).derive(1), cfg.n_synth,
                                       class_weights=class_weights)
        else:
            train_set = synthetic
        if train_set.schema != real_test.schema:
            raise SchemaError("synthetic and real data carry different schemas")
        for name in cfg.classifiers:
            ccfg = ClassifierConfig(
                n_iter=cfg.classifier_cfg.n_iter, lr=cfg.classifier_cfg.lr,
                l2=cfg.classifier_cfg.l2, hidden=cfg.classifier_cfg.hidden,
                seed=seed)
            clf = _TRAINERS[name](train_set, ccfg)
            per_seed[name].append(evaluate_classifier(clf, real_test))
    return EvalReport(seeds=tuple(cfg.seeds), per_seed=per_seed)
