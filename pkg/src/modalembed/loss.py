"""Contrastive objective over patient triplets.

A batch holds three aligned sets of unit-norm embeddings, one row per
patient: ``f`` for the source image, ``f_hat`` for an independently
augmented view of it, and ``g`` for the paired second-modality image.

Every probability in the objective is a temperature-scaled softmax of
inner products against a single query embedding.  With score matrices

    a[k, i] = <f_k, f_hat_i> / tau      (query: augmented view i)
    b[k, i] = <f_k, g_i> / tau          (query: modality image i)
    c[k, i] = <f_k, f_j> / tau          (query: source image j)

the per-patient loss combines two recognition terms (the patient should
be the most likely owner of its augmented view and of its modality
image) with separation terms against every other patient's images:

    L_i = -log softmax(a[:, i])[i]
          -log( exp(-margin/tau) * softmax(b[:, i])[i] )
          -sum_{j != i} log(1 - softmax(c[:, j])[i])
          -sum_{j != i} log(1 - softmax(b[:, j])[i])

and the batch loss is the mean of the L_i.  The margin is subtracted
from the matched-pair score in the numerator only; since the
denominator is left unchanged this scales the matched probability by
exp(-margin/tau) and shifts the loss by a constant without touching
gradients.  All softmaxes are max-shifted before exponentiation so a
small temperature (default 0.1) stays in range.
"""

from __future__ import annotations

from dataclasses import InitVar, dataclass, field

import numpy as np

from .errors import (
    IndexOutOfRange,
    InvalidBatch,
    InvalidConfig,
    NumericalOverflow,
    SameIndex,
)

# Rows must be unit-norm within this tolerance when validation is on.
UNIT_TOL = 1e-8


@dataclass
class EmbeddingBatch:
    """Aligned embeddings (f, f_hat, g), one row per patient.

    Set check=False to skip the unit-norm validation; finite-difference
    probes nudge single entries off the sphere and still need the loss
    to evaluate.
    """

    f: np.ndarray
    f_hat: np.ndarray
    g: np.ndarray
    check: InitVar[bool] = True

    def __post_init__(self, check: bool) -> None:
        self.f = np.asarray(self.f, dtype=float)
        self.f_hat = np.asarray(self.f_hat, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        shapes = {self.f.shape, self.f_hat.shape, self.g.shape}
        if len(shapes) != 1 or self.f.ndim != 2:
            raise InvalidBatch(
                f"embedding matrices must share one 2-d shape, got "
                f"{self.f.shape}, {self.f_hat.shape}, {self.g.shape}"
            )
        if self.f.shape[0] < 1 or self.f.shape[1] < 1:
            raise InvalidBatch(f"empty batch shape {self.f.shape}")
        if check:
            for name, m in (("f", self.f), ("f_hat", self.f_hat), ("g", self.g)):
                norms = np.linalg.norm(m, axis=1)
                if not np.all(np.isfinite(m)):
                    raise InvalidBatch(f"{name} has non-finite entries")
                if np.any(np.abs(norms - 1.0) > UNIT_TOL):
                    worst = int(np.argmax(np.abs(norms - 1.0)))
                    raise InvalidBatch(
                        f"{name} row {worst} has norm {norms[worst]:.12g}, "
                        f"expected 1 within {UNIT_TOL}"
                    )

    @property
    def n(self) -> int:
        return self.f.shape[0]

    @property
    def dim(self) -> int:
        return self.f.shape[1]


@dataclass(frozen=True)
class LossConfig:
    """Temperature, margin and term switches for the objective.

    At least one recognition term and the separation terms must stay
    enabled; the optimization is ill-posed without both attraction and
    repulsion, so such configs are rejected outright.
    """

    tau: float = 0.1
    margin: float = 0.0
    use_transform_term: bool = True
    use_modality_term: bool = True
    use_negative_terms: bool = True

    def __post_init__(self) -> None:
        if not (np.isfinite(self.tau) and self.tau > 0.0):
            raise InvalidConfig(f"tau must be positive and finite, got {self.tau!r}")
        if not (np.isfinite(self.margin) and self.margin >= 0.0):
            raise InvalidConfig(f"margin must be >= 0, got {self.margin!r}")
        if not (self.use_transform_term or self.use_modality_term):
            raise InvalidConfig("at least one recognition term must be enabled")
        if not self.use_negative_terms:
            raise InvalidConfig("separation terms cannot be disabled")


@dataclass
class LossValue:
    """Batch loss with its per-patient decomposition."""

    total: float
    per_patient: np.ndarray = field(repr=False)


def _check_index(i: int, n: int) -> None:
    if not 0 <= i < n:
        raise IndexOutOfRange(f"patient index {i} outside [0, {n})")


def _log_col_softmax(scores: np.ndarray) -> np.ndarray:
    """log softmax down each column, max-shifted for stability."""
    shifted = scores - scores.max(axis=0, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    return shifted - lse


def _softmax_entry(logits: np.ndarray, i: int, numerator_shift: float = 0.0) -> float:
    """exp(logits[i] - numerator_shift) / sum_k exp(logits[k])."""
    m = logits.max()
    denom = np.exp(logits - m).sum()
    return float(np.exp(logits[i] - numerator_shift - m) / denom)


def positive_prob_transform(batch: EmbeddingBatch, i: int, cfg: LossConfig) -> float:
    """Probability that patient i is recognized from its augmented view."""
    _check_index(i, batch.n)
    logits = batch.f @ batch.f_hat[i] / cfg.tau
    return _softmax_entry(logits, i)


def positive_prob_modality(batch: EmbeddingBatch, i: int, cfg: LossConfig) -> float:
    """Probability that patient i is recognized from its modality image.

    The margin is subtracted from the matched score in the numerator
    only, so the result is exp(-margin/tau) times the plain softmax.
    """
    _check_index(i, batch.n)
    logits = batch.f @ batch.g[i] / cfg.tau
    return _softmax_entry(logits, i, numerator_shift=cfg.margin / cfg.tau)


def negative_prob(
    batch: EmbeddingBatch, i: int, j: int, query: str, cfg: LossConfig
) -> float:
    """Probability that patient i is (wrongly) recognized from patient j's image.

    query selects whose image asks the question: "fundus" uses f_j,
    "modality" uses g_j.  The softmax runs over all patients including
    j itself.
    """
    _check_index(i, batch.n)
    _check_index(j, batch.n)
    if i == j:
        raise SameIndex(f"negative probability needs distinct patients, got i=j={i}")
    if query == "fundus":
        q = batch.f[j]
    elif query == "modality":
        q = batch.g[j]
    else:
        raise InvalidConfig(f"query must be 'fundus' or 'modality', got {query!r}")
    logits = batch.f @ q / cfg.tau
    return _softmax_entry(logits, i)


def _log_prob_matrices(batch: EmbeddingBatch, cfg: LossConfig):
    t = cfg.tau
    la = _log_col_softmax(batch.f @ batch.f_hat.T / t)
    lb = _log_col_softmax(batch.f @ batch.g.T / t)
    lc = _log_col_softmax(batch.f @ batch.f.T / t)
    return la, lb, lc


def _off_diagonal_log1m(p: np.ndarray, what: str) -> np.ndarray:
    """log(1 - p) off the diagonal, zeros on it; overflow-checked."""
    n = p.shape[0]
    off = ~np.eye(n, dtype=bool)
    if np.any(p[off] >= 1.0):
        raise NumericalOverflow(
            f"a {what} separation probability reached 1; log(1 - p) underflows"
        )
    out = np.zeros_like(p)
    out[off] = np.log1p(-p[off])
    return out


def _per_patient_losses(batch: EmbeddingBatch, cfg: LossConfig) -> np.ndarray:
    la, lb, lc = _log_prob_matrices(batch, cfg)
    li = np.zeros(batch.n)
    if cfg.use_transform_term:
        li -= np.diag(la)
    if cfg.use_modality_term:
        # -log(exp(-margin/tau) * p) = margin/tau - log p
        li += cfg.margin / cfg.tau - np.diag(lb)
    if cfg.use_negative_terms:
        li -= _off_diagonal_log1m(np.exp(lc), "fundus").sum(axis=1)
        li -= _off_diagonal_log1m(np.exp(lb), "modality").sum(axis=1)
    if not np.all(np.isfinite(li)):
        raise NumericalOverflow("loss left the representable range")
    return li


def patient_loss(batch: EmbeddingBatch, i: int, cfg: LossConfig) -> float:
    """Loss contribution of patient i under cfg's term switches."""
    _check_index(i, batch.n)
    return float(_per_patient_losses(batch, cfg)[i])


def batch_loss(batch: EmbeddingBatch, cfg: LossConfig) -> LossValue:
    """Mean per-patient loss over the batch."""
    per = _per_patient_losses(batch, cfg)
    return LossValue(total=float(per.mean()), per_patient=per)


def _separation_grad(p: np.ndarray) -> np.ndarray:
    """d/d(scores) of -(1/n) sum over off-diagonal log(1 - p), per column.

    For one column with softmax probabilities p and per-entry upstream
    derivatives r_k = 1/(n (1 - p_k)) (zero on the diagonal), the chain
    rule through the softmax gives p_k (r_k - sum_m p_m r_m).
    """
    n = p.shape[0]
    off = ~np.eye(n, dtype=bool)
    if np.any(p[off] >= 1.0):
        raise NumericalOverflow("separation probability reached 1 in gradient")
    r = np.zeros_like(p)
    r[off] = 1.0 / (n * (1.0 - p[off]))
    colsum = (p * r).sum(axis=0, keepdims=True)
    return p * (r - colsum)


def batch_loss_gradient(batch: EmbeddingBatch, cfg: LossConfig):
    """Exact gradients of batch_loss w.r.t. the three embedding matrices.

    Returns (d_f, d_f_hat, d_g), each shaped like its matrix.  The
    entries of f, f_hat and g are treated as free variables; mapping
    back onto encoder parameters (including the normalization Jacobian)
    is the encoder's job.
    """
    la, lb, lc = _log_prob_matrices(batch, cfg)
    pa, pb, pc = np.exp(la), np.exp(lb), np.exp(lc)
    n = batch.n
    eye = np.eye(n)
    da = np.zeros((n, n))
    db = np.zeros((n, n))
    dc = np.zeros((n, n))
    if cfg.use_transform_term:
        da += (pa - eye) / n
    if cfg.use_modality_term:
        db += (pb - eye) / n
    if cfg.use_negative_terms:
        db += _separation_grad(pb)
        dc += _separation_grad(pc)
    t = cfg.tau
    d_f = (da @ batch.f_hat + db @ batch.g + (dc + dc.T) @ batch.f) / t
    d_f_hat = da.T @ batch.f / t
    d_g = db.T @ batch.f / t
    return d_f, d_f_hat, d_g
