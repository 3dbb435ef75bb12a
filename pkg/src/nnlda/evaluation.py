"""Held-out perplexity, topic grouping, rating classification, comment generation.

Log-perplexity uses the per-document ELBO as the log-likelihood surrogate.
Grouping matches topics to ground-truth groups with the Hungarian method.
Classification uses normalized posterior topic proportions as features for
a multinomial logistic regression fitted by gradient descent.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .corpus import Corpus, kfold_indices, split
from .inference import ConfigurationError, infer, train
from .model import DimensionMismatchError, TopicModel
from .numerics import log_sum_exp

logger = logging.getLogger(__name__)


@dataclass
class GroupingReport:
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_f1: float
    classes: list
    confusion: np.ndarray  # true class x matched prediction (+ one "unmatched" column if K > G)
    topic_to_class: dict

    def metrics(self) -> dict[str, float]:
        return {
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
        }


@dataclass
class ClassificationReport:
    fold_macro_f1: list[float]

    @property
    def mean_macro_f1(self) -> float:
        return float(np.mean(self.fold_macro_f1))


@dataclass
class EvalReport:
    model: str = ""
    K: int = 0
    seed: int | None = None
    log_perplexity: float | None = None
    grouping: GroupingReport | None = None
    classification: ClassificationReport | None = None
    comments: list[tuple[str, list[str]]] = field(default_factory=list)
    elbo_ratio: float | None = None

    def rows(self) -> list[tuple]:
        """Flat (model, K, seed, metric, value) rows."""
        key = (self.model, self.K, "" if self.seed is None else self.seed)
        out = []
        if self.log_perplexity is not None:
            out.append((*key, "log_perplexity", self.log_perplexity))
        if self.grouping is not None:
            out.extend((*key, name, val) for name, val in self.grouping.metrics().items())
        if self.classification is not None:
            out.extend((*key, f"fold{i}_macro_f1", v)
                       for i, v in enumerate(self.classification.fold_macro_f1))
            out.append((*key, "mean_macro_f1", self.classification.mean_macro_f1))
        if self.elbo_ratio is not None:
            out.append((*key, "elbo_ratio_per_word", self.elbo_ratio))
        for side, words in self.comments:
            out.append((*key, f"comment[{side}]", " ".join(words)))
        return out

    def summary(self) -> str:
        lines = [f"model={self.model} K={self.K} seed={self.seed}"]
        for *_, metric, value in self.rows():
            lines.append(f"  {metric:<24} {value:.6f}" if isinstance(value, float)
                         else f"  {metric:<24} {value}")
        return "\n".join(lines)


CSV_COLUMNS = ("model", "K", "seed", "metric", "value")


def write_rows(rows: Sequence[tuple], path, append: bool = False) -> None:
    path = Path(path)
    new_file = not (append and path.exists())
    with path.open("a" if append else "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])


# -- perplexity -----------------------------------------------------------

def log_perplexity(model: TopicModel, test: Corpus) -> float:
    """-(sum of per-document ELBOs) / (total word count); lower is better."""
    _, elbos = infer(model, test)
    return float(-elbos.sum() / test.lengths.sum())


# -- grouping -------------------------------------------------------------

def grouping_from_assignments(true_groups: Sequence, pred_topics: Sequence[int],
                              K: int) -> GroupingReport:
    """Match topics to groups (Hungarian, maximizing agreement) and score.

    Documents whose topic is left unmatched (K > number of groups) count as
    misses for their true class and as predictions of no class.
    """
    classes = sorted(set(true_groups))
    G = len(classes)
    if G > K:
        raise ConfigurationError(f"{G} groups cannot be matched to {K} topics")
    gi = np.array([classes.index(g) for g in true_groups])
    pred_topics = np.asarray(pred_topics)
    raw = np.zeros((G, K), dtype=np.int64)
    np.add.at(raw, (gi, pred_topics), 1)
    rows, cols = linear_sum_assignment(-raw)
    topic_to_class = {int(t): classes[int(g)] for g, t in zip(rows, cols)}

    confusion = raw[:, cols[np.argsort(rows)]]
    unmatched = np.setdiff1d(np.arange(K), cols)
    if unmatched.size:
        confusion = np.hstack([confusion, raw[:, unmatched].sum(axis=1, keepdims=True)])

    tp = np.diag(confusion[:, :G]).astype(float)
    predicted = confusion[:, :G].sum(axis=0).astype(float)
    support = confusion.sum(axis=1).astype(float)
    precision = np.divide(tp, predicted, out=np.zeros(G), where=predicted > 0)
    recall = tp / support
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(G), where=denom > 0)
    micro_p = tp.sum() / predicted.sum() if predicted.sum() > 0 else 0.0
    micro_r = tp.sum() / support.sum()
    micro_f1 = 2 * micro_p * micro_r / (micro_p + micro_r) if micro_p + micro_r > 0 else 0.0
    return GroupingReport(
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        micro_f1=float(micro_f1),
        classes=classes,
        confusion=confusion,
        topic_to_class=topic_to_class,
    )


def grouping_metrics(model: TopicModel, corpus: Corpus) -> GroupingReport:
    """Assign each document to its largest posterior topic weight and score against groups."""
    groups = corpus.groups
    if any(g is None for g in groups):
        raise ConfigurationError("corpus has no ground-truth group labels")
    state, _ = infer(model, corpus)
    return grouping_from_assignments(groups, state.eta.argmax(axis=1), model.K)


# -- classification -------------------------------------------------------

@dataclass
class LogisticRegression:
    """Multinomial logistic regression fitted by full-batch gradient descent."""

    l2: float = 1e-4
    tol: float = 1e-6
    max_iter: int = 5000
    weights: np.ndarray | None = None  # (d + 1) x C, last row is the bias
    classes: list = field(default_factory=list)
    n_iter: int = 0

    @staticmethod
    def _design(X):
        X = np.asarray(X, dtype=np.float64)
        return np.hstack([X, np.ones((X.shape[0], 1))])

    def _loss_grad(self, Xd, Y, W):
        n = Xd.shape[0]
        logits = Xd @ W
        lse = log_sum_exp(logits, axis=1)
        P = np.exp(logits - lse[:, None])
        reg = W[:-1]
        loss = -(Y * (logits - lse[:, None])).sum() / n + 0.5 * self.l2 * (reg * reg).sum()
        grad = Xd.T @ (P - Y) / n
        grad[:-1] += self.l2 * reg
        return loss, grad

    def fit(self, X, y) -> "LogisticRegression":
        self.classes = sorted(set(y))
        Xd = self._design(X)
        Y = np.zeros((Xd.shape[0], len(self.classes)))
        Y[np.arange(Xd.shape[0]), [self.classes.index(v) for v in y]] = 1.0
        # softmax cross-entropy has Hessian <= 0.5 * X'X / n
        lipschitz = 0.5 * np.linalg.eigvalsh(Xd.T @ Xd / Xd.shape[0]).max() + self.l2
        step = 1.0 / lipschitz
        W = np.zeros((Xd.shape[1], len(self.classes)))
        loss, grad = self._loss_grad(Xd, Y, W)
        for it in range(1, self.max_iter + 1):
            W = W - step * grad
            new_loss, grad = self._loss_grad(Xd, Y, W)
            done = abs(loss - new_loss) < self.tol * max(1.0, abs(new_loss)) \
                or np.abs(grad).max() < self.tol
            loss = new_loss
            if done:
                break
        self.weights, self.n_iter = W, it
        return self

    def predict(self, X) -> list:
        idx = (self._design(X) @ self.weights).argmax(axis=1)
        return [self.classes[i] for i in idx]


def macro_f1(y_true: Sequence, y_pred: Sequence) -> float:
    """Unweighted mean F1 over the classes present in ``y_true``."""
    y_true, y_pred = np.asarray(y_true, dtype=object), np.asarray(y_pred, dtype=object)
    scores = []
    for c in sorted(set(y_true.tolist())):
        tp = np.sum((y_true == c) & (y_pred == c))
        fp = np.sum((y_true != c) & (y_pred == c))
        fn = np.sum((y_true == c) & (y_pred != c))
        scores.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return float(np.mean(scores))


def _fold_f1(X_train, y_train, X_test, y_test, fold: int) -> float:
    missing = set(y_test) - set(y_train)
    if missing or set(y_train) - set(y_test):
        logger.warning("fold %d: classes %s absent from one side; excluded from macro-F1",
                       fold, sorted(missing | (set(y_train) - set(y_test))))
    clf = LogisticRegression().fit(X_train, y_train)
    return macro_f1(y_test, clf.predict(X_test))


def cross_validate_features(X, y, num_folds: int = 10, seed: int = 0) -> ClassificationReport:
    """k-fold CV of the logistic regression on a fixed feature matrix."""
    X = np.asarray(X, dtype=np.float64)
    y = list(y)
    scores = []
    for f, test_idx in enumerate(kfold_indices(len(y), num_folds, seed)):
        mask = np.ones(len(y), dtype=bool)
        mask[test_idx] = False
        tr = np.flatnonzero(mask)
        scores.append(_fold_f1(X[tr], [y[i] for i in tr], X[test_idx],
                               [y[i] for i in test_idx], f))
    return ClassificationReport(scores)


def topic_features(eta: np.ndarray) -> np.ndarray:
    return eta / eta.sum(axis=1, keepdims=True)


def classify_ratings(model: TopicModel, corpus: Corpus, num_folds: int = 10,
                     seed: int = 0) -> ClassificationReport:
    """k-fold CV where the topic model is refit on each training split.

    ``model`` supplies the prior kind, K, training config and seed.
    """
    if num_folds < 2:
        raise ValueError("num_folds must be >= 2")
    if any(lbl is None for lbl in corpus.labels):
        raise ConfigurationError("corpus has no labels to classify")
    model.check_corpus(corpus)
    model_seed = 0 if model.seed is None else model.seed
    scores = []
    for f in range(num_folds):
        tr, te = split(corpus, fold=f, num_folds=num_folds, seed=seed)
        fitted = train(tr, model.K, model.kind, model_seed, model.config)
        test_state, _ = infer(fitted, te)
        scores.append(_fold_f1(topic_features(fitted.state.eta), tr.labels,
                               topic_features(test_state.eta), te.labels, f))
        logger.info("fold %d/%d macro-F1 %.4f", f + 1, num_folds, scores[-1])
    return ClassificationReport(scores)


# -- comment generation ---------------------------------------------------

def comment_scores(model: TopicModel, side) -> np.ndarray:
    """Per-word score: prior-mean topic proportions mixed over the topic-word rows."""
    alpha = model.alpha_for(side)
    return (alpha / alpha.sum()) @ model.beta


def generate_comment(model: TopicModel, side, length: int = 5) -> list[str]:
    """Top ``length`` words by score; ties go to the lower vocabulary id."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if length > model.V:
        logger.warning("length %d exceeds vocabulary size %d; capped", length, model.V)
        length = model.V
    order = np.argsort(-comment_scores(model, side), kind="stable")[:length]
    return [model.vocabulary.terms[j] for j in order]


# -- model comparison -----------------------------------------------------

def elbo_ratio_report(model_a: TopicModel, model_b: TopicModel, corpus: Corpus) -> float:
    """Mean over documents of (ELBO_a - ELBO_b) / N_d; positive favours ``model_a``."""
    if model_a.vocabulary != model_b.vocabulary:
        raise DimensionMismatchError("models have different vocabularies")
    if model_a.K != model_b.K:
        raise DimensionMismatchError(f"models have different K ({model_a.K} vs {model_b.K})")
    _, ea = infer(model_a, corpus)
    _, eb = infer(model_b, corpus)
    return float(np.mean((ea - eb) / corpus.lengths))
