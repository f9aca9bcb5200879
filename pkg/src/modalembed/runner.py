"""Training and evaluation drivers shared by the CLI and the tests.

Seed discipline: one user seed fans out into named PCG64 streams so
that every artifact is a pure function of (config, seed):

    stream 0   encoder initialization
    stream 1   batch sampling + augmentation draws
    stream 2   synthetic dataset noise
    stream 3   fold shuffling
    stream 10+f  per-fold training during cross-validation

Mode presets change how batches are assembled, never the loss kernel:

    ours            rows are (aug fundus, aug fundus, aug modality) per
                    patient; all objective terms active.
    enlarged-data   every image (fundus and modality alike) is its own
                    unpaired instance; a batch samples instances and
                    builds two independent views, and the second view
                    also fills the modality slot so separation runs
                    over both view sets.  Recognition-from-augmentation
                    term only.
    as-augmentation instances are patients, but the augmented view is
                    drawn from the fundus or the modality image with
                    equal probability; slots as in enlarged-data.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import data, encoder, evaluation, loss, optim
from .config import RunConfig, format_config
from .errors import InsufficientPatients, InvalidConfig
from .linalg import seeded_rng


def embed_images(params: encoder.EncoderParams, images) -> np.ndarray:
    """Unit-norm embeddings of raw (unaugmented) images."""
    e, _ = encoder.forward(params, data.input_rows(images))
    return e


def modality_alignment(params: encoder.EncoderParams, dataset: data.Dataset) -> float:
    """Mean cosine between each patient's fundus and modality embeddings."""
    e_f = embed_images(params, dataset.fundus_array())
    e_g = embed_images(params, dataset.modality_array())
    return float((e_f * e_g).sum(axis=1).mean())


def _two_view_rows(images, picks, aug_cfg, rng):
    first, second = [], []
    for idx in picks:
        img = images[int(idx)]
        first.append(data.augment(img, aug_cfg, rng))
        second.append(data.augment(img, aug_cfg, rng))
    return data.input_rows(first), data.input_rows(second)


def assemble_batch(dataset: data.Dataset, cfg: RunConfig, rng: np.random.Generator):
    """Build the three encoder input blocks for one step under cfg.mode."""
    aug_cfg = cfg.augment_config()
    n = cfg.batch_patients
    if cfg.mode == "ours":
        return data.make_batch(dataset, n, aug_cfg, rng)
    if cfg.mode == "enlarged-data":
        pool = [s.fundus for s in dataset.samples] + [s.modality for s in dataset.samples]
        if n > len(pool):
            raise InsufficientPatients(
                f"asked for {n} instances, enlarged pool has {len(pool)}"
            )
        picks = rng.choice(len(pool), size=n, replace=False)
        x, x_hat = _two_view_rows(pool, picks, aug_cfg, rng)
        return x, x_hat, x_hat
    if cfg.mode == "as-augmentation":
        if n > len(dataset):
            raise InsufficientPatients(
                f"asked for {n} distinct patients, dataset has {len(dataset)}"
            )
        picks = rng.choice(len(dataset), size=n, replace=False)
        rows_f, rows_hat = [], []
        for idx in picks:
            s = dataset.samples[int(idx)]
            rows_f.append(data.augment(s.fundus, aug_cfg, rng))
            src = s.modality if rng.random() < 0.5 else s.fundus
            rows_hat.append(data.augment(src, aug_cfg, rng))
        x = data.input_rows(rows_f)
        x_hat = data.input_rows(rows_hat)
        return x, x_hat, x_hat
    raise InvalidConfig(f"unknown mode {cfg.mode!r}")


def train_encoder(
    dataset: data.Dataset,
    cfg: RunConfig,
    rng_init: np.random.Generator,
    rng_data: np.random.Generator,
) -> tuple[encoder.EncoderParams, list[float]]:
    """Run the full training loop in memory; returns params and loss history.

    One batch per epoch: assemble views, embed all three blocks in a
    single stacked forward pass, take the objective gradient w.r.t. the
    embeddings, push it back through the encoder, and apply one Adam
    step at the scheduled learning rate.
    """
    dims = cfg.dims()
    expected = dataset.height * dataset.width
    if dims[0] != expected:
        raise InvalidConfig(
            f"encoder_dims[0] = {dims[0]} but images flatten to {expected}"
        )
    params = encoder.init_params(dims, rng_init)
    state = optim.AdamState.for_arrays(
        params.arrays(),
        base_lr=cfg.base_lr,
        decay_factor=cfg.decay_factor,
        decay_every=cfg.decay_every,
    )
    loss_cfg = cfg.loss_config()
    history = []
    n = cfg.batch_patients
    for epoch in range(cfg.epochs):
        x, x_hat, x_g = assemble_batch(dataset, cfg, rng_data)
        stacked = np.vstack([x, x_hat, x_g])
        emb, trace = encoder.forward(params, stacked, keep_trace=True)
        batch = loss.EmbeddingBatch(f=emb[:n], f_hat=emb[n : 2 * n], g=emb[2 * n :])
        value = loss.batch_loss(batch, loss_cfg)
        d_f, d_f_hat, d_g = loss.batch_loss_gradient(batch, loss_cfg)
        grads = encoder.backward(params, trace, np.vstack([d_f, d_f_hat, d_g]))
        optim.adam_step(state, params.arrays(), grads.arrays(), epoch)
        history.append(value.total)
    return params, history


def load_or_generate(cfg: RunConfig) -> data.Dataset:
    """The dataset named by cfg, or the seeded synthetic benchmark."""
    if cfg.dataset:
        return data.load_dataset(cfg.dataset)
    return data.generate_synthetic(cfg.synthetic_config(), seeded_rng(cfg.seed, 2))


@dataclass
class TrainResult:
    params: encoder.EncoderParams
    history: list[float] = field(repr=False)
    params_path: str = ""
    loss_csv_path: str = ""
    config_path: str = ""


def run_train(cfg: RunConfig) -> TrainResult:
    """Train on the configured dataset and write the run artifacts.

    Writes encoder.bin, loss.csv (epoch,lr,loss) and config.txt (the
    resolved config echo) under cfg.out_dir.  Two runs with the same
    config and seed produce bitwise-identical files.
    """
    dataset = load_or_generate(cfg)
    params, history = train_encoder(
        dataset, cfg, seeded_rng(cfg.seed, 0), seeded_rng(cfg.seed, 1)
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    params_path = os.path.join(cfg.out_dir, "encoder.bin")
    encoder.save_params(params, params_path)
    schedule = optim.AdamState.for_arrays(
        [], base_lr=cfg.base_lr, decay_factor=cfg.decay_factor, decay_every=cfg.decay_every
    )
    loss_csv_path = os.path.join(cfg.out_dir, "loss.csv")
    with open(loss_csv_path, "w", encoding="ascii") as fh:
        fh.write("epoch,lr,loss\n")
        for epoch, value in enumerate(history):
            fh.write(f"{epoch},{optim.lr_at(schedule, epoch):.17g},{value:.17g}\n")
    config_path = os.path.join(cfg.out_dir, "config.txt")
    with open(config_path, "w", encoding="ascii") as fh:
        fh.write(format_config(cfg))
    return TrainResult(
        params=params,
        history=history,
        params_path=params_path,
        loss_csv_path=loss_csv_path,
        config_path=config_path,
    )


def split_embeddings(params, dataset: data.Dataset, split: data.FoldSplit, fold: int):
    """Frozen fundus embeddings and labels for one train/test fold split."""
    train_set = dataset.subset(split.train_ids(fold))
    test_set = dataset.subset(split.test_ids(fold))
    return (
        embed_images(params, train_set.fundus_array()),
        train_set.labels(),
        embed_images(params, test_set.fundus_array()),
        test_set.labels(),
    )


def knn_eval_fold(params, dataset, split, fold, cfg: RunConfig) -> evaluation.MetricsReport:
    """KNN report on one held-out fold, k capped at the training size."""
    train_emb, train_labels, test_emb, test_labels = split_embeddings(
        params, dataset, split, fold
    )
    knn_cfg = evaluation.KnnConfig(
        k=min(cfg.knn_k, train_emb.shape[0]), vote=cfg.knn_vote
    )
    return evaluation.knn_report(train_emb, train_labels, test_emb, test_labels, knn_cfg)


@dataclass
class CvResult:
    fold_reports: list[evaluation.MetricsReport]
    mean: dict
    std: dict
    report_path: str = ""


_CV_METRICS = ("auc", "accuracy", "precision", "recall", "f1")


def run_cv(cfg: RunConfig) -> CvResult:
    """K-fold protocol: retrain from scratch per fold, evaluate frozen KNN.

    Labels are never seen by training; they only grade the held-out
    fold.  The written report (cv_report.txt) is deterministic given
    (config, seed), line format:

        fold <i> <report record>
        mean <auc> <accuracy> <precision> <recall> <f1>
        std  <auc> <accuracy> <precision> <recall> <f1>
    """
    dataset = load_or_generate(cfg)
    split = data.make_folds(dataset.ids(), cfg.folds, seeded_rng(cfg.seed, 3))
    reports = []
    for fold in range(cfg.folds):
        train_set = dataset.subset(split.train_ids(fold))
        params, _ = train_encoder(
            train_set, cfg, seeded_rng(cfg.seed, 10 + fold), seeded_rng(cfg.seed, 100 + fold)
        )
        reports.append(knn_eval_fold(params, dataset, split, fold, cfg))
    mean = {}
    std = {}
    for name in _CV_METRICS:
        values = np.array([getattr(r, name) for r in reports], dtype=float)
        mean[name] = float(values.mean())
        std[name] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    os.makedirs(cfg.out_dir, exist_ok=True)
    report_path = os.path.join(cfg.out_dir, "cv_report.txt")
    with open(report_path, "w", encoding="ascii") as fh:
        for fold, report in enumerate(reports):
            fh.write(f"fold {fold} {evaluation.report_record(report)}\n")
        fh.write("mean " + " ".join(f"{mean[m]:.17g}" for m in _CV_METRICS) + "\n")
        fh.write("std " + " ".join(f"{std[m]:.17g}" for m in _CV_METRICS) + "\n")
    return CvResult(fold_reports=reports, mean=mean, std=std, report_path=report_path)


def export_embeddings(cfg: RunConfig, params: encoder.EncoderParams, out_path: str) -> None:
    """CSV of id, label, embedding coordinates, then 2-d PCA coordinates."""
    dataset = load_or_generate(cfg)
    emb = embed_images(params, dataset.fundus_array())
    coords = evaluation.pca_project2(emb)
    ids = dataset.ids()
    labels = dataset.labels()
    d = emb.shape[1]
    header = ["patient_id", "label"] + [f"e{j}" for j in range(d)] + ["pc1", "pc2"]
    with open(out_path, "w", encoding="ascii") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(emb.shape[0]):
            row = [str(int(ids[i])), str(int(labels[i]))]
            row += [f"{v:.17g}" for v in emb[i]]
            row += [f"{coords[i, 0]:.17g}", f"{coords[i, 1]:.17g}"]
            fh.write(",".join(row) + "\n")
