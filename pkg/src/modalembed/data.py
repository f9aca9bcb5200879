"""Synthetic two-modality dataset, augmentation, batches and file formats.

Each patient owns a grayscale source image ("fundus") and a second
image derived from it by a fixed deterministic transform plus noise
("modality" -- a stand-in for a paired acquisition).  Class structure
comes from smooth prototype fields: every class has one prototype, and
patients are noisy copies of it.

Datasets serialize to a line-oriented text format

    SSLDS v1 <H> <W> <n_classes> <n_samples>
    P <patient_id> <label>
    F <H*W pixel values>
    M <H*W pixel values>
    ...

with pixels printed to 17 significant digits so round-trips are exact.
Binary mode mirrors this with fixed-width little-endian fields behind
the magic "SSLDSBIN".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    FormatError,
    InsufficientPatients,
    InvalidConfig,
    InvalidK,
)
from .linalg import seeded_rng

TEXT_HEADER = "SSLDS v1"
BINARY_MAGIC = b"SSLDSBIN"

# Prototype construction: each class prototype is an equal-power blend of
# a shared background field and a class-specific field, all drawn as
# smoothed white noise and orthonormalized so the blend weights are exact.
# Class 0 doubles as a baseline appearance: every other class keeps a fixed
# admixture (_BASE_MIX) of the class-0 field, so the classes share a family
# resemblance to the baseline.  The contrast amplitude is kept small
# relative to the per-patient pixel noise so class structure is faint in
# raw pixels and has to be distilled by training.
_FIELD_SIGMA = 2.0
_CLASS_AMP = 0.15
_BASE_MIX = 0.45
_BLEND = math.sqrt(0.5)

# 3x3 binomial smoothing kernel used by the modality transform.
_SMOOTH_KERNEL = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 16.0


@dataclass(frozen=True)
class SyntheticConfig:
    """Shape and noise levels of the generated benchmark."""

    n_classes: int = 4
    patients_per_class: int = 50
    height: int = 16
    width: int = 16
    class_pattern_seed: int = 7
    within_class_noise_sigma: float = 0.05
    modality_noise_sigma: float = 0.02

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise InvalidConfig(f"need >= 2 classes, got {self.n_classes}")
        if self.patients_per_class < 1:
            raise InvalidConfig(
                f"need >= 1 patient per class, got {self.patients_per_class}"
            )
        if self.height < 2 or self.width < 2:
            raise InvalidConfig(f"image size {self.height}x{self.width} too small")
        if self.within_class_noise_sigma < 0 or self.modality_noise_sigma < 0:
            raise InvalidConfig("noise sigmas must be >= 0")


@dataclass(frozen=True)
class AugmentConfig:
    """Stochastic view pipeline: area crop, mirror, brightness/contrast.

    grayscale_prob is accepted for config compatibility but is a no-op
    on single-channel images.
    """

    crop_scale_range: tuple[float, float] = (0.2, 1.0)
    flip_prob: float = 0.5
    grayscale_prob: float = 0.2
    jitter_range: tuple[float, float] = (0.6, 1.4)

    def __post_init__(self) -> None:
        lo, hi = self.crop_scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise InvalidConfig(f"crop_scale_range {self.crop_scale_range} invalid")
        if not (0.0 <= self.flip_prob <= 1.0 and 0.0 <= self.grayscale_prob <= 1.0):
            raise InvalidConfig("probabilities must lie in [0, 1]")
        jlo, jhi = self.jitter_range
        if not (0.0 <= jlo <= jhi):
            raise InvalidConfig(f"jitter_range {self.jitter_range} invalid")


@dataclass
class PatientSample:
    patient_id: int
    label: int
    fundus: np.ndarray = field(repr=False)
    modality: np.ndarray = field(repr=False)


@dataclass
class Dataset:
    samples: list[PatientSample]
    height: int
    width: int
    n_classes: int

    def __len__(self) -> int:
        return len(self.samples)

    def ids(self) -> np.ndarray:
        return np.array([s.patient_id for s in self.samples], dtype=int)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=int)

    def fundus_array(self) -> np.ndarray:
        return np.stack([s.fundus for s in self.samples])

    def modality_array(self) -> np.ndarray:
        return np.stack([s.modality for s in self.samples])

    def subset(self, ids) -> "Dataset":
        wanted = set(int(i) for i in ids)
        picked = [s for s in self.samples if s.patient_id in wanted]
        if len(picked) != len(wanted):
            missing = wanted - {s.patient_id for s in picked}
            raise InvalidConfig(f"unknown patient ids {sorted(missing)}")
        return Dataset(
            samples=picked,
            height=self.height,
            width=self.width,
            n_classes=self.n_classes,
        )


@dataclass
class FoldSplit:
    """Assignment of patient ids to folds; sizes differ by at most one."""

    n_folds: int
    assignment: dict[int, int]

    def _check(self, fold: int) -> None:
        if not 0 <= fold < self.n_folds:
            raise InvalidK(f"fold {fold} outside [0, {self.n_folds})")

    def test_ids(self, fold: int) -> list[int]:
        self._check(fold)
        return sorted(i for i, f in self.assignment.items() if f == fold)

    def train_ids(self, fold: int) -> list[int]:
        self._check(fold)
        return sorted(i for i, f in self.assignment.items() if f != fold)


def _smooth_field(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean, unit-RMS smooth random field."""
    noise = rng.standard_normal((height, width))
    f = ndimage.gaussian_filter(noise, sigma=_FIELD_SIGMA, mode="wrap")
    f -= f.mean()
    rms = math.sqrt(float(np.mean(f * f)))
    return f / rms


def _orthonormal_fields(count: int, height: int, width: int, seed: int) -> list[np.ndarray]:
    """Gram-Schmidt orthonormalized (unit-RMS) smooth random fields."""
    basis: list[np.ndarray] = []
    for s in range(count):
        u = _smooth_field(height, width, seeded_rng(seed, s)).ravel()
        for b in basis:
            u -= (u @ b) / (b @ b) * b
        u /= np.sqrt((u @ u) / u.size)
        basis.append(u)
    return basis


def class_prototypes(cfg: SyntheticConfig) -> np.ndarray:
    """(n_classes, H, W) prototype images, fixed by class_pattern_seed.

    Class 0 is the baseline appearance; classes k > 0 blend their own
    field with the baseline field, so in raw pixel space every class
    resembles the baseline more than it resembles any other class.
    """
    fields = _orthonormal_fields(
        cfg.n_classes + 1, cfg.height, cfg.width, cfg.class_pattern_seed
    )
    shared, base = fields[0], fields[1]
    carry = math.sqrt(1.0 - _BASE_MIX**2)
    protos = []
    for k in range(cfg.n_classes):
        direction = base if k == 0 else carry * fields[k + 1] + _BASE_MIX * base
        f = _BLEND * shared + _BLEND * direction
        protos.append(
            np.clip(0.5 + _CLASS_AMP * f.reshape(cfg.height, cfg.width), 0.0, 1.0)
        )
    return np.stack(protos)


def synthesize_modality(fundus: np.ndarray) -> np.ndarray:
    """Deterministic second-modality image: clamp(1 - smooth3x3(fundus)).

    The smoothing kernel is a fixed 3x3 binomial filter with edge
    replication, so constant images map to constant images.
    """
    img = np.asarray(fundus, dtype=float)
    if img.ndim != 2:
        raise InvalidConfig(f"expected a 2-d image, got shape {img.shape}")
    h, w = img.shape
    padded = np.pad(img, 1, mode="edge")
    acc = np.zeros_like(img)
    for di in range(3):
        for dj in range(3):
            acc += _SMOOTH_KERNEL[di, dj] * padded[di : di + h, dj : dj + w]
    return np.clip(1.0 - acc, 0.0, 1.0)


def generate_synthetic(cfg: SyntheticConfig, rng: np.random.Generator) -> Dataset:
    """Sample a labeled two-modality dataset.

    Prototypes depend only on cfg.class_pattern_seed; patient noise
    comes from rng, so one seed pins the whole dataset.
    """
    protos = class_prototypes(cfg)
    samples = []
    pid = 0
    for k in range(cfg.n_classes):
        for _ in range(cfg.patients_per_class):
            noise = rng.standard_normal((cfg.height, cfg.width))
            fundus = np.clip(protos[k] + cfg.within_class_noise_sigma * noise, 0.0, 1.0)
            mnoise = rng.standard_normal((cfg.height, cfg.width))
            modality = np.clip(
                synthesize_modality(fundus) + cfg.modality_noise_sigma * mnoise,
                0.0,
                1.0,
            )
            samples.append(
                PatientSample(patient_id=pid, label=k, fundus=fundus, modality=modality)
            )
            pid += 1
    return Dataset(
        samples=samples, height=cfg.height, width=cfg.width, n_classes=cfg.n_classes
    )


def _resize_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel centers; identity when sizes match."""
    in_h, in_w = src.shape
    rows = np.clip((np.arange(out_h) + 0.5) * in_h / out_h - 0.5, 0.0, in_h - 1.0)
    cols = np.clip((np.arange(out_w) + 0.5) * in_w / out_w - 0.5, 0.0, in_w - 1.0)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, in_h - 1)
    c1 = np.minimum(c0 + 1, in_w - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    top = src[np.ix_(r0, c0)] * (1 - fc) + src[np.ix_(r0, c1)] * fc
    bot = src[np.ix_(r1, c0)] * (1 - fc) + src[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bot * fr


def augment(image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """One stochastic view of an image; output stays in [0, 1].

    Draw order (fixed; tests replay it): crop area fraction u, crop top,
    crop left, flip coin, jitter contrast a, jitter brightness b.
    Pipeline: square crop of side floor(sqrt(u) * side_in) at a uniform
    position, bilinearly resized back; horizontal mirror with
    probability flip_prob; then clamp(a * (img - mean) + b * mean).
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise InvalidConfig(f"expected a 2-d image, got shape {img.shape}")
    h, w = img.shape
    u = rng.uniform(cfg.crop_scale_range[0], cfg.crop_scale_range[1])
    side = max(1, int(math.floor(math.sqrt(u) * min(h, w))))
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    out = _resize_bilinear(img[top : top + side, left : left + side], h, w)
    if rng.random() < cfg.flip_prob:
        out = out[:, ::-1]
    a = rng.uniform(cfg.jitter_range[0], cfg.jitter_range[1])
    b = rng.uniform(cfg.jitter_range[0], cfg.jitter_range[1])
    mean = out.mean()
    return np.clip(a * (out - mean) + b * mean, 0.0, 1.0)


def input_rows(images) -> np.ndarray:
    """Flatten images to encoder input rows, subtracting each row's mean.

    Centering removes the global-brightness direction so embeddings see
    structure, not exposure; it is the one fixed preprocessing step and
    is applied identically at train and evaluation time.
    """
    stack = np.stack([np.asarray(im, dtype=float).ravel() for im in images])
    return stack - stack.mean(axis=1, keepdims=True)


def make_batch(dataset: Dataset, n: int, cfg: AugmentConfig, rng: np.random.Generator):
    """Sample n distinct patients and build the three encoder input blocks.

    Returns (x, x_hat, x_g): augmented fundus, an independently
    augmented fundus, and augmented modality rows, aligned by patient.
    Per patient the rng is consumed in exactly that order.
    """
    if n < 1:
        raise InvalidConfig(f"batch size must be >= 1, got {n}")
    if n > len(dataset):
        raise InsufficientPatients(
            f"asked for {n} distinct patients, dataset has {len(dataset)}"
        )
    chosen = rng.choice(len(dataset), size=n, replace=False)
    rows_f, rows_hat, rows_g = [], [], []
    for idx in chosen:
        s = dataset.samples[int(idx)]
        rows_f.append(augment(s.fundus, cfg, rng))
        rows_hat.append(augment(s.fundus, cfg, rng))
        rows_g.append(augment(s.modality, cfg, rng))
    return input_rows(rows_f), input_rows(rows_hat), input_rows(rows_g)


def make_folds(ids, k: int, rng: np.random.Generator) -> FoldSplit:
    """Shuffle ids and deal them round-robin into k folds."""
    ids = [int(i) for i in ids]
    if len(set(ids)) != len(ids):
        raise InvalidConfig("patient ids must be unique")
    if not 2 <= k <= len(ids):
        raise InvalidK(f"fold count {k} outside [2, {len(ids)}]")
    perm = rng.permutation(len(ids))
    assignment = {ids[int(p)]: pos % k for pos, p in enumerate(perm)}
    return FoldSplit(n_folds=k, assignment=assignment)


def _format_pixels(img: np.ndarray) -> str:
    return " ".join(f"{v:.17g}" for v in img.ravel())


def save_dataset(dataset: Dataset, path: str, binary: bool = False) -> None:
    """Write a dataset in the documented text (default) or binary layout."""
    if binary:
        import struct

        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(
                struct.pack(
                    "<4I", dataset.height, dataset.width, dataset.n_classes, len(dataset)
                )
            )
            for s in dataset.samples:
                fh.write(struct.pack("<qi", s.patient_id, s.label))
                fh.write(np.ascontiguousarray(s.fundus, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(s.modality, dtype="<f8").tobytes())
        return
    lines = [
        f"{TEXT_HEADER} {dataset.height} {dataset.width} "
        f"{dataset.n_classes} {len(dataset)}"
    ]
    for s in dataset.samples:
        lines.append(f"P {s.patient_id} {s.label}")
        lines.append("F " + _format_pixels(s.fundus))
        lines.append("M " + _format_pixels(s.modality))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_pixel_line(line: str, lineno: int, tag: str, count: int, shape) -> np.ndarray:
    parts = line.split()
    if not parts or parts[0] != tag:
        raise FormatError(f"line {lineno}: expected '{tag} ...', got {line[:40]!r}")
    if len(parts) - 1 != count:
        raise FormatError(
            f"line {lineno}: expected {count} pixel values, got {len(parts) - 1}"
        )
    try:
        values = np.array([float(v) for v in parts[1:]])
    except ValueError as exc:
        raise FormatError(f"line {lineno}: bad pixel value ({exc})") from exc
    if np.any(values < 0.0) or np.any(values > 1.0) or not np.all(np.isfinite(values)):
        raise FormatError(f"line {lineno}: pixel values must lie in [0, 1]")
    return values.reshape(shape)


def _load_text(path: str) -> Dataset:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 6 or " ".join(head[:2]) != TEXT_HEADER:
        raise FormatError(f"{path}: bad header {lines[0]!r}")
    try:
        h, w, n_classes, n_samples = (int(v) for v in head[2:])
    except ValueError as exc:
        raise FormatError(f"{path}: non-integer header field ({exc})") from exc
    if h < 1 or w < 1 or n_classes < 1 or n_samples < 0:
        raise FormatError(f"{path}: nonsensical header {lines[0]!r}")
    expected = 1 + 3 * n_samples
    body = [ln for ln in lines if ln.strip()]
    if len(body) != expected:
        raise FormatError(
            f"{path}: expected {expected} non-blank lines for {n_samples} samples, "
            f"got {len(body)}"
        )
    samples = []
    seen_ids = set()
    for s in range(n_samples):
        base = 1 + 3 * s
        p_parts = body[base].split()
        if len(p_parts) != 3 or p_parts[0] != "P":
            raise FormatError(f"line {base + 1}: expected 'P <id> <label>'")
        try:
            pid, label = int(p_parts[1]), int(p_parts[2])
        except ValueError as exc:
            raise FormatError(f"line {base + 1}: bad id/label ({exc})") from exc
        if not 0 <= label < n_classes:
            raise FormatError(f"line {base + 1}: label {label} outside [0, {n_classes})")
        if pid in seen_ids:
            raise FormatError(f"line {base + 1}: duplicate patient id {pid}")
        seen_ids.add(pid)
        fundus = _parse_pixel_line(body[base + 1], base + 2, "F", h * w, (h, w))
        modality = _parse_pixel_line(body[base + 2], base + 3, "M", h * w, (h, w))
        samples.append(
            PatientSample(patient_id=pid, label=label, fundus=fundus, modality=modality)
        )
    return Dataset(samples=samples, height=h, width=w, n_classes=n_classes)


def _load_binary(path: str) -> Dataset:
    import struct

    with open(path, "rb") as fh:
        raw = fh.read()
    off = len(BINARY_MAGIC)
    try:
        h, w, n_classes, n_samples = struct.unpack_from("<4I", raw, off)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header ({exc})") from exc
    off += 16
    img_bytes = h * w * 8
    samples = []
    seen_ids = set()
    for s in range(n_samples):
        if off + 12 + 2 * img_bytes > len(raw):
            raise FormatError(f"{path}: truncated at sample {s} (byte {off})")
        pid, label = struct.unpack_from("<qi", raw, off)
        off += 12
        if not 0 <= label < n_classes:
            raise FormatError(f"{path}: sample {s} label {label} outside [0, {n_classes})")
        if pid in seen_ids:
            raise FormatError(f"{path}: duplicate patient id {pid}")
        seen_ids.add(pid)
        fundus = np.frombuffer(raw, "<f8", h * w, off).reshape(h, w).astype(float)
        off += img_bytes
        modality = np.frombuffer(raw, "<f8", h * w, off).reshape(h, w).astype(float)
        off += img_bytes
        for name, img in (("fundus", fundus), ("modality", modality)):
            if np.any(img < 0.0) or np.any(img > 1.0) or not np.all(np.isfinite(img)):
                raise FormatError(f"{path}: sample {s} {name} pixels outside [0, 1]")
        samples.append(
            PatientSample(patient_id=int(pid), label=int(label), fundus=fundus, modality=modality)
        )
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return Dataset(samples=samples, height=h, width=w, n_classes=n_classes)


def load_dataset(path: str) -> Dataset:
    """Read either serialization; the leading bytes pick the decoder."""
    with open(path, "rb") as fh:
        head = fh.read(len(BINARY_MAGIC))
    if head == BINARY_MAGIC:
        return _load_binary(path)
    return _load_text(path)
