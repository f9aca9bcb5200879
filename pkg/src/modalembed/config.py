"""Run configuration: defaults, key = value files, and overrides.

A config file is line-based ASCII: blank lines and lines starting with
'#' are ignored, everything else must be "key = value" with a known
key.  Every key can also be supplied as a --key command-line flag; flag
values win over file values, which win over defaults.  format_config
echoes a config in the same syntax, so an echoed file reproduces the
run that wrote it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .data import AugmentConfig, SyntheticConfig
from .errors import FormatError, InvalidConfig
from .loss import LossConfig

MODES = ("ours", "enlarged-data", "as-augmentation")


@dataclass
class RunConfig:
    """Flat bag of every tunable the CLI understands."""

    # run identity / IO
    seed: int = 0
    dataset: str = ""  # path; empty means "generate the synthetic benchmark"
    out_dir: str = "runs/latest"
    params: str = ""  # encoder parameter file consumed by eval commands

    # synthetic benchmark
    n_classes: int = 4
    patients_per_class: int = 50
    image_size: int = 16
    class_pattern_seed: int = 7
    within_class_noise_sigma: float = 0.05
    modality_noise_sigma: float = 0.02

    # augmentation
    crop_scale_min: float = 0.2
    crop_scale_max: float = 1.0
    flip_prob: float = 0.5
    grayscale_prob: float = 0.2
    jitter_min: float = 0.6
    jitter_max: float = 1.4

    # encoder
    encoder_dims: str = "256,112,128,128"

    # objective
    tau: float = 0.1
    margin: float = 0.0
    use_transform_term: bool = True
    use_modality_term: bool = True
    use_negative_terms: bool = True
    mode: str = "ours"

    # optimization
    batch_patients: int = 75
    epochs: int = 200
    base_lr: float = 1e-4
    decay_factor: float = 0.1
    decay_every: int = 1000

    # evaluation
    knn_k: int = 100
    knn_vote: str = "majority"
    folds: int = 5
    holdout_fold: int = 0
    probe_epochs: int = 500
    probe_lr: float = 0.5

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 0:
            raise InvalidConfig(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_patients < 1:
            raise InvalidConfig(f"batch_patients must be >= 1, got {self.batch_patients}")
        if self.image_size < 2:
            raise InvalidConfig(f"image_size must be >= 2, got {self.image_size}")
        self.dims()  # validates encoder_dims eagerly

    def dims(self) -> list[int]:
        try:
            dims = [int(part) for part in self.encoder_dims.split(",") if part.strip()]
        except ValueError as exc:
            raise InvalidConfig(f"encoder_dims {self.encoder_dims!r}: {exc}") from exc
        if len(dims) < 2:
            raise InvalidConfig(f"encoder_dims needs >= 2 entries, got {dims}")
        return dims

    def synthetic_config(self) -> SyntheticConfig:
        return SyntheticConfig(
            n_classes=self.n_classes,
            patients_per_class=self.patients_per_class,
            height=self.image_size,
            width=self.image_size,
            class_pattern_seed=self.class_pattern_seed,
            within_class_noise_sigma=self.within_class_noise_sigma,
            modality_noise_sigma=self.modality_noise_sigma,
        )

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(
            crop_scale_range=(self.crop_scale_min, self.crop_scale_max),
            flip_prob=self.flip_prob,
            grayscale_prob=self.grayscale_prob,
            jitter_range=(self.jitter_min, self.jitter_max),
        )

    def loss_config(self) -> LossConfig:
        """Objective switches after applying the mode preset.

        The two single-positive presets treat every image as its own
        instance with no cross-modality pairing, so they run with the
        recognition-from-augmentation term only.
        """
        use_modality = self.use_modality_term and self.mode == "ours"
        return LossConfig(
            tau=self.tau,
            margin=self.margin,
            use_transform_term=self.use_transform_term,
            use_modality_term=use_modality,
            use_negative_terms=self.use_negative_terms,
        )


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, text: str):
    kind = _FIELDS[name].type
    text = text.strip()
    if kind == "bool":
        lowered = text.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise InvalidConfig(f"{name}: expected a boolean, got {text!r}")
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError as exc:
        raise InvalidConfig(f"{name}: {exc}") from exc
    return text


def parse_config_file(path: str) -> dict:
    """Read a key = value file into a dict of typed values."""
    values: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in _FIELDS:
                raise InvalidConfig(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _coerce(key, value)
    return values


def resolve_config(config_path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults <- config file <- overrides, validated as a RunConfig."""
    values: dict = {}
    if config_path:
        values.update(parse_config_file(config_path))
    for key, value in (overrides or {}).items():
        if key not in _FIELDS:
            raise InvalidConfig(f"unknown config key {key!r}")
        values[key] = _coerce(key, value) if isinstance(value, str) else value
    return RunConfig(**values)


def format_config(cfg: RunConfig) -> str:
    """Echo a config as a parseable key = value block (field order fixed)."""
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
