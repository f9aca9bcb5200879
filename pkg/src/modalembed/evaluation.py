"""Frozen-feature evaluation: KNN, ranking AUC, linear probe, PCA, t-test.

Everything here consumes embeddings the encoder produced; nothing
trains the encoder.  Determinism is part of the contract: all ties
break by documented rules, and the linear probe starts from zeros so
repeated runs agree bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .errors import (
    DegenerateCovariance,
    DegenerateTest,
    EmptyTrainSet,
    InsufficientSamples,
    InvalidConfig,
    InvalidDims,
    KTooLarge,
    LengthMismatch,
    SingleClass,
)

VOTE_MODES = ("majority", "similarity-weighted")


@dataclass(frozen=True)
class KnnConfig:
    """Neighbor count and vote rule for cosine KNN."""

    k: int = 100
    vote: str = "majority"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise InvalidConfig(f"k must be >= 1, got {self.k}")
        if self.vote not in VOTE_MODES:
            raise InvalidConfig(f"vote must be one of {VOTE_MODES}, got {self.vote!r}")


@dataclass
class MetricsReport:
    """Scalar summary of one evaluation.

    auc is None when no ranking scores exist (plain prediction lists).
    precision/recall/f1 are macro averages over classes; the per-class
    vectors are kept alongside.
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float | None = None
    per_class_precision: list[float] = field(default_factory=list)
    per_class_recall: list[float] = field(default_factory=list)
    per_class_f1: list[float] = field(default_factory=list)


# Report field order used by both serializers; per-class triples follow.
_REPORT_FIELDS = ("auc", "accuracy", "precision", "recall", "f1")


def format_report(report: MetricsReport) -> str:
    """Human-readable key = value block, one metric per line."""
    lines = []
    for name in _REPORT_FIELDS:
        value = getattr(report, name)
        lines.append(f"{name} = {'nan' if value is None else format(value, '.6f')}")
    for c, (p, r, f1) in enumerate(
        zip(report.per_class_precision, report.per_class_recall, report.per_class_f1)
    ):
        lines.append(f"class{c} = {p:.6f} {r:.6f} {f1:.6f}")
    return "\n".join(lines)


def report_record(report: MetricsReport) -> str:
    """Single-line machine record.

    Fields, space-separated, 17 significant digits: auc accuracy
    precision recall f1, then per class: precision recall f1.
    """
    values = [getattr(report, name) for name in _REPORT_FIELDS]
    for triple in zip(
        report.per_class_precision, report.per_class_recall, report.per_class_f1
    ):
        values.extend(triple)
    return " ".join("nan" if v is None else f"{v:.17g}" for v in values)


def _as_labels(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise InvalidConfig(f"{name} must be 1-d, got shape {arr.shape}")
    return arr.astype(int)


def _neighbor_stats(train_emb, train_labels, query_emb, cfg: KnnConfig):
    """Per-query class vote scores and the index order of neighbors.

    Neighbors rank by descending cosine similarity with ties going to
    the lower training index (stable sort on negated similarities).
    """
    train = np.asarray(train_emb, dtype=float)
    queries = np.atleast_2d(np.asarray(query_emb, dtype=float))
    labels = _as_labels(train_labels, "train_labels")
    if train.ndim != 2 or train.shape[0] == 0:
        raise EmptyTrainSet("KNN needs at least one training row")
    if labels.shape[0] != train.shape[0]:
        raise LengthMismatch(
            f"{train.shape[0]} training rows but {labels.shape[0]} labels"
        )
    if queries.shape[1] != train.shape[1]:
        raise LengthMismatch(
            f"query dim {queries.shape[1]} != train dim {train.shape[1]}"
        )
    if cfg.k > train.shape[0]:
        raise KTooLarge(f"k={cfg.k} exceeds training size {train.shape[0]}")
    n_classes = int(labels.max()) + 1
    sims = queries @ train.T
    order = np.argsort(-sims, axis=1, kind="stable")[:, : cfg.k]
    top_labels = labels[order]
    top_sims = np.take_along_axis(sims, order, axis=1)
    counts = np.zeros((queries.shape[0], n_classes))
    sim_sums = np.zeros((queries.shape[0], n_classes))
    weighted = np.zeros((queries.shape[0], n_classes))
    for c in range(n_classes):
        mask = top_labels == c
        counts[:, c] = mask.sum(axis=1)
        sim_sums[:, c] = np.where(mask, top_sims, 0.0).sum(axis=1)
        # weights are cosines mapped affinely onto [0, 1]
        weighted[:, c] = np.where(mask, (top_sims + 1.0) / 2.0, 0.0).sum(axis=1)
    return counts, sim_sums, weighted


def _vote(counts_row, sim_row) -> int:
    """argmax with ties broken by summed similarity, then lower class."""
    best = counts_row.max()
    tied = np.flatnonzero(counts_row == best)
    if len(tied) == 1:
        return int(tied[0])
    best_sim = sim_row[tied].max()
    tied = tied[sim_row[tied] == best_sim]
    return int(tied[0])


def knn_classify(train_emb, train_labels, query_emb, cfg: KnnConfig | None = None):
    """Cosine KNN predictions plus a class-1 score per query.

    The score is the (majority: count; weighted: weight) share of
    neighbors belonging to class 1, which is the ranking score for
    binary problems.
    """
    cfg = cfg or KnnConfig()
    counts, sim_sums, weighted = _neighbor_stats(train_emb, train_labels, query_emb, cfg)
    votes = counts if cfg.vote == "majority" else weighted
    preds = np.array(
        [_vote(votes[q], sim_sums[q]) for q in range(votes.shape[0])], dtype=int
    )
    shares = class_share_scores(counts, weighted, cfg.vote)
    score = shares[:, 1] if shares.shape[1] > 1 else np.zeros(len(preds))
    return preds, score


def class_share_scores(counts, weighted, vote: str) -> np.ndarray:
    """Per-class share of the neighbor vote mass, rows summing to 1."""
    mass = counts if vote == "majority" else weighted
    totals = mass.sum(axis=1, keepdims=True)
    totals[totals == 0.0] = 1.0
    return mass / totals


def auc(scores, labels) -> float:
    """Probability a random class-1 score outranks a random class-0 score.

    Computed from the rank-sum statistic with average ranks, so exact
    ties contribute 1/2.
    """
    s = np.asarray(scores, dtype=float)
    y = _as_labels(labels, "labels")
    if s.shape != y.shape:
        raise LengthMismatch(f"{s.shape[0]} scores vs {y.shape[0]} labels")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int(len(y) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClass(f"need both classes, got {n_pos} positives of {len(y)}")
    ranks = stats.rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def classification_metrics(preds, labels, n_classes: int) -> MetricsReport:
    """Accuracy and macro precision/recall/F1 from hard predictions.

    Classes with an empty denominator contribute 0 to the macro mean.
    """
    p = _as_labels(preds, "preds")
    y = _as_labels(labels, "labels")
    if p.shape != y.shape:
        raise LengthMismatch(f"{p.shape[0]} predictions vs {y.shape[0]} labels")
    if len(p) == 0:
        raise InsufficientSamples("no predictions to score")
    if n_classes < 2:
        raise InvalidConfig(f"n_classes must be >= 2, got {n_classes}")
    for name, arr in (("preds", p), ("labels", y)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise InvalidConfig(f"{name} contain values outside [0, {n_classes})")
    confusion = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(confusion, (y, p), 1)
    tp = np.diag(confusion).astype(float)
    pred_totals = confusion.sum(axis=0).astype(float)
    true_totals = confusion.sum(axis=1).astype(float)
    precision = np.divide(tp, pred_totals, out=np.zeros(n_classes), where=pred_totals > 0)
    recall = np.divide(tp, true_totals, out=np.zeros(n_classes), where=true_totals > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros(n_classes), where=pr > 0)
    return MetricsReport(
        accuracy=float(tp.sum() / len(y)),
        precision=float(precision.mean()),
        recall=float(recall.mean()),
        f1=float(f1.mean()),
        per_class_precision=[float(v) for v in precision],
        per_class_recall=[float(v) for v in recall],
        per_class_f1=[float(v) for v in f1],
    )


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _probe_loss_and_grad(w, b, emb, labels, n_classes):
    """Mean cross-entropy of softmax(emb @ w.T + b) and its gradients."""
    n = emb.shape[0]
    probs = _softmax_rows(emb @ w.T + b)
    nll = -np.log(probs[np.arange(n), labels])
    d_logits = probs.copy()
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n
    return float(nll.mean()), d_logits.T @ emb, d_logits.sum(axis=0)


def linear_probe(
    train_emb,
    train_labels,
    test_emb,
    test_labels,
    n_classes: int,
    epochs: int = 500,
    lr: float = 0.5,
) -> MetricsReport:
    """Fit one affine layer + softmax on frozen embeddings, score the rest.

    Full-batch gradient descent from zero parameters, so the fit is a
    deterministic function of its inputs.  With zero epochs all logits
    tie and every prediction falls to class 0.
    """
    train = np.asarray(train_emb, dtype=float)
    test = np.asarray(test_emb, dtype=float)
    y_train = _as_labels(train_labels, "train_labels")
    y_test = _as_labels(test_labels, "test_labels")
    if train.shape[0] == 0:
        raise EmptyTrainSet("probe needs training rows")
    if train.shape[0] != y_train.shape[0] or test.shape[0] != y_test.shape[0]:
        raise LengthMismatch("embedding/label counts differ")
    if epochs < 0 or lr <= 0:
        raise InvalidConfig(f"bad probe schedule epochs={epochs} lr={lr}")
    w = np.zeros((n_classes, train.shape[1]))
    b = np.zeros(n_classes)
    for _ in range(epochs):
        _, g_w, g_b = _probe_loss_and_grad(w, b, train, y_train, n_classes)
        w -= lr * g_w
        b -= lr * g_b
    probs = _softmax_rows(test @ w.T + b)
    preds = np.argmax(probs, axis=1)
    report = classification_metrics(preds, y_test, n_classes)
    report.auc = _ovr_auc(probs, y_test, n_classes)
    return report


def _ovr_auc(scores: np.ndarray, labels: np.ndarray, n_classes: int) -> float:
    """Binary: AUC of the class-1 score. Multiclass: macro one-vs-rest.

    SingleClass propagates when a class is absent from labels.
    """
    if n_classes == 2:
        return auc(scores[:, 1], labels)
    per = [auc(scores[:, c], (labels == c).astype(int)) for c in range(n_classes)]
    return float(np.mean(per))


def knn_report(train_emb, train_labels, query_emb, query_labels, cfg: KnnConfig) -> MetricsReport:
    """KNN predictions scored as a MetricsReport, including ranking AUC."""
    y_query = _as_labels(query_labels, "query_labels")
    counts, sim_sums, weighted = _neighbor_stats(train_emb, train_labels, query_emb, cfg)
    votes = counts if cfg.vote == "majority" else weighted
    preds = np.array(
        [_vote(votes[q], sim_sums[q]) for q in range(votes.shape[0])], dtype=int
    )
    n_classes = max(int(np.asarray(train_labels).max()), int(y_query.max())) + 1
    shares = class_share_scores(counts, weighted, cfg.vote)
    if shares.shape[1] < n_classes:
        pad = np.zeros((shares.shape[0], n_classes - shares.shape[1]))
        shares = np.hstack([shares, pad])
    report = classification_metrics(preds, y_query, n_classes)
    report.auc = _ovr_auc(shares, y_query, n_classes)
    return report


def pca_project2(embeddings) -> np.ndarray:
    """Project rows onto the two leading principal axes.

    Components are eigenvectors of the covariance of centered rows,
    ordered by eigenvalue; each is sign-fixed so its largest-magnitude
    loading is positive.
    """
    x = np.asarray(embeddings, dtype=float)
    if x.ndim != 2 or x.shape[1] < 2:
        raise InvalidDims(f"need (n, d >= 2) embeddings, got shape {x.shape}")
    if x.shape[0] < 2:
        raise InsufficientSamples(f"need >= 2 rows, got {x.shape[0]}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[-1] <= 1e-20:
        raise DegenerateCovariance("all rows identical; covariance has rank 0")
    out = np.empty((x.shape[0], 2))
    for comp, col in enumerate((-1, -2)):
        v = eigvecs[:, col]
        if v[int(np.argmax(np.abs(v)))] < 0:
            v = -v
        out[:, comp] = centered @ v
    return out


def t_test(a, b):
    """Pooled-variance two-sample t statistic and two-sided p-value.

    p comes from the t CDF expressed through the regularized incomplete
    beta function.  Zero pooled variance with equal means gives (0, 1);
    with unequal means the statistic is undefined.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 1 or b.ndim != 1 or len(a) < 2 or len(b) < 2:
        raise InsufficientSamples(
            f"need >= 2 observations per sample, got {len(a)} and {len(b)}"
        )
    n_a, n_b = len(a), len(b)
    var_a = a.var(ddof=1)
    var_b = b.var(ddof=1)
    df = n_a + n_b - 2
    pooled = ((n_a - 1) * var_a + (n_b - 1) * var_b) / df
    diff = float(a.mean() - b.mean())
    if pooled == 0.0:
        if diff == 0.0:
            return 0.0, 1.0
        raise DegenerateTest("zero pooled variance with unequal means")
    t = diff / np.sqrt(pooled * (1.0 / n_a + 1.0 / n_b))
    p = float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))
    return float(t), p
