"""Synthetic benchmark generation, augmentation, folds, and dataset I/O."""

import math

import numpy as np
import pytest

from modalembed import data
from modalembed.errors import (
    FormatError,
    InsufficientPatients,
    InvalidConfig,
    InvalidK,
)
from modalembed.linalg import seeded_rng

IDENTITY_AUG = data.AugmentConfig(
    crop_scale_range=(1.0, 1.0), flip_prob=0.0, jitter_range=(1.0, 1.0)
)


def _tiny_dataset(n_classes=2, per_class=3, size=4, seed=401, sigma=0.05):
    cfg = data.SyntheticConfig(
        n_classes=n_classes,
        patients_per_class=per_class,
        height=size,
        width=size,
        within_class_noise_sigma=sigma,
    )
    return data.generate_synthetic(cfg, seeded_rng(seed, 2))


# ---------------------------------------------------------------- generation

def test_generate_counts_and_ids():
    ds = data.generate_synthetic(data.SyntheticConfig(), seeded_rng(400, 2))
    assert len(ds) == 200
    labels = ds.labels()
    for k in range(4):
        assert int((labels == k).sum()) == 50
    ids = ds.ids()
    assert len(set(int(i) for i in ids)) == 200
    assert ds.height == ds.width == 16
    for s in ds.samples:
        assert s.fundus.shape == (16, 16)
        assert 0.0 <= s.fundus.min() and s.fundus.max() <= 1.0
        assert 0.0 <= s.modality.min() and s.modality.max() <= 1.0


def test_zero_noise_collapses_classes_to_prototypes():
    cfg = data.SyntheticConfig(within_class_noise_sigma=0.0)
    ds = data.generate_synthetic(cfg, seeded_rng(402, 2))
    labels = ds.labels()
    fundus = ds.fundus_array()
    for k in range(cfg.n_classes):
        members = fundus[labels == k]
        assert np.all(members == members[0])


def test_within_class_distance_below_between_class():
    """Exhaustive pairwise pixel distances on the default benchmark."""
    ds = data.generate_synthetic(data.SyntheticConfig(), seeded_rng(403, 2))
    flat = ds.fundus_array().reshape(len(ds), -1)
    labels = ds.labels()
    sq = ((flat[:, None, :] - flat[None, :, :]) ** 2).sum(axis=2)
    dist = np.sqrt(sq)
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(ds), dtype=bool)
    assert dist[same & off].mean() < dist[~same].mean()


def test_prototypes_deterministic_and_seed_sensitive():
    cfg = data.SyntheticConfig()
    a = data.class_prototypes(cfg)
    b = data.class_prototypes(cfg)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (4, 16, 16)
    assert a.min() >= 0.0 and a.max() <= 1.0
    other = data.class_prototypes(data.SyntheticConfig(class_pattern_seed=8))
    assert not np.array_equal(a, other)


def test_config_validation():
    with pytest.raises(InvalidConfig):
        data.SyntheticConfig(n_classes=1)
    with pytest.raises(InvalidConfig):
        data.SyntheticConfig(patients_per_class=0)
    with pytest.raises(InvalidConfig):
        data.SyntheticConfig(height=1)
    with pytest.raises(InvalidConfig):
        data.SyntheticConfig(within_class_noise_sigma=-0.1)
    with pytest.raises(InvalidConfig):
        data.AugmentConfig(crop_scale_range=(0.0, 1.0))
    with pytest.raises(InvalidConfig):
        data.AugmentConfig(flip_prob=1.5)
    with pytest.raises(InvalidConfig):
        data.AugmentConfig(jitter_range=(1.4, 0.6))


# ------------------------------------------------------- modality transform

def test_modality_inverts_constant_images():
    zeros = np.zeros((5, 5))
    ones = np.ones((5, 5))
    np.testing.assert_allclose(data.synthesize_modality(zeros), 1.0, atol=1e-15)
    np.testing.assert_allclose(data.synthesize_modality(ones), 0.0, atol=1e-15)


def test_modality_matches_hand_unrolled_convolution():
    img = np.array(
        [
            [0.0, 0.2, 0.4, 0.1],
            [0.9, 0.5, 0.3, 0.8],
            [0.6, 0.0, 1.0, 0.2],
            [0.3, 0.7, 0.4, 0.5],
        ]
    )
    kernel = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=float) / 16.0
    want = np.zeros((4, 4))
    for r in range(4):
        for c in range(4):
            acc = 0.0
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr = min(max(r + dr, 0), 3)  # edge replication
                    cc = min(max(c + dc, 0), 3)
                    acc += kernel[dr + 1, dc + 1] * img[rr, cc]
            want[r, c] = min(max(1.0 - acc, 0.0), 1.0)
    np.testing.assert_allclose(data.synthesize_modality(img), want, atol=1e-12)


def test_modality_deterministic():
    rng = seeded_rng(404)
    img = rng.uniform(0, 1, (6, 6))
    np.testing.assert_array_equal(
        data.synthesize_modality(img), data.synthesize_modality(img)
    )


# ---------------------------------------------------------------- augmenting

def test_identity_draws_reproduce_input():
    rng = seeded_rng(405)
    img = rng.uniform(0, 1, (8, 8))
    out = data.augment(img, IDENTITY_AUG, seeded_rng(406))
    np.testing.assert_allclose(out, img, atol=1e-12)


def test_forced_flip_mirrors():
    cfg = data.AugmentConfig(
        crop_scale_range=(1.0, 1.0), flip_prob=1.0, jitter_range=(1.0, 1.0)
    )
    img = np.array([[0.0, 1.0], [0.0, 0.0]])
    out = data.augment(img, cfg, seeded_rng(407))
    np.testing.assert_allclose(out, [[1.0, 0.0], [0.0, 0.0]], atol=1e-12)


def test_augment_range_shape_and_rng_replay():
    """Replaying the documented draw order reproduces augment exactly."""
    base = data.generate_synthetic(data.SyntheticConfig(), seeded_rng(408, 2))
    img = base.samples[0].fundus
    cfg = data.AugmentConfig()
    rng = seeded_rng(409)
    replay = seeded_rng(409)
    h = w = 16
    lo_side = int(math.floor(math.sqrt(0.2) * 16))
    for _ in range(1000):
        out = data.augment(img, cfg, rng)
        assert out.shape == (16, 16)
        assert out.min() >= 0.0 and out.max() <= 1.0

        u = replay.uniform(0.2, 1.0)
        side = max(1, int(math.floor(math.sqrt(u) * 16)))
        assert lo_side <= side <= 16
        top = int(replay.integers(0, h - side + 1))
        left = int(replay.integers(0, w - side + 1))
        expect = data._resize_bilinear(img[top : top + side, left : left + side], h, w)
        if replay.random() < cfg.flip_prob:
            expect = expect[:, ::-1]
        a = replay.uniform(0.6, 1.4)
        b = replay.uniform(0.6, 1.4)
        mean = expect.mean()
        expect = np.clip(a * (expect - mean) + b * mean, 0.0, 1.0)
        np.testing.assert_array_equal(out, expect)


# ------------------------------------------------------------------- batches

def test_make_batch_shapes_and_determinism():
    ds = data.generate_synthetic(data.SyntheticConfig(), seeded_rng(410, 2))
    x, x_hat, x_g = data.make_batch(ds, 75, data.AugmentConfig(), seeded_rng(411))
    assert x.shape == x_hat.shape == x_g.shape == (75, 256)
    y, y_hat, y_g = data.make_batch(ds, 75, data.AugmentConfig(), seeded_rng(411))
    np.testing.assert_array_equal(x, y)
    np.testing.assert_array_equal(x_hat, y_hat)
    np.testing.assert_array_equal(x_g, y_g)
    # rows are mean-centered encoder inputs
    np.testing.assert_allclose(x.mean(axis=1), 0.0, atol=1e-12)


def test_full_batch_uses_every_patient_once():
    ds = _tiny_dataset(n_classes=2, per_class=4, size=4, sigma=0.2)
    x, _, _ = data.make_batch(ds, len(ds), IDENTITY_AUG, seeded_rng(412))
    # The identity augmentation still computes (img - mean) + mean, so
    # replicate that arithmetic exactly rather than comparing to the raw
    # pixels.
    views = []
    for s in ds.samples:
        mean = s.fundus.mean()
        views.append(np.clip(1.0 * (s.fundus - mean) + 1.0 * mean, 0.0, 1.0))
    want = {row.tobytes() for row in data.input_rows(views)}
    got = {row.tobytes() for row in x}
    assert got == want


def test_make_batch_errors():
    ds = _tiny_dataset()
    with pytest.raises(InsufficientPatients):
        data.make_batch(ds, len(ds) + 1, data.AugmentConfig(), seeded_rng(413))
    with pytest.raises(InvalidConfig):
        data.make_batch(ds, 0, data.AugmentConfig(), seeded_rng(413))


# --------------------------------------------------------------------- folds

def test_folds_partition_and_sizes():
    split = data.make_folds(list(range(100, 110)), 5, seeded_rng(414))
    sizes = sorted(len(split.test_ids(f)) for f in range(5))
    assert sizes == [2, 2, 2, 2, 2]
    split = data.make_folds(list(range(11)), 5, seeded_rng(415))
    sizes = sorted(len(split.test_ids(f)) for f in range(5))
    assert sizes == [2, 2, 2, 2, 3]
    all_ids = set()
    for f in range(5):
        test = set(split.test_ids(f))
        train = set(split.train_ids(f))
        assert test.isdisjoint(all_ids)
        assert test | train == set(range(11))
        assert test.isdisjoint(train)
        all_ids |= test
    assert all_ids == set(range(11))


def test_folds_deterministic_and_validated():
    a = data.make_folds(list(range(20)), 4, seeded_rng(416)).assignment
    b = data.make_folds(list(range(20)), 4, seeded_rng(416)).assignment
    assert a == b
    with pytest.raises(InvalidK):
        data.make_folds(list(range(20)), 1, seeded_rng(417))
    with pytest.raises(InvalidK):
        data.make_folds(list(range(3)), 4, seeded_rng(417))
    with pytest.raises(InvalidConfig):
        data.make_folds([1, 1, 2], 2, seeded_rng(417))
    split = data.make_folds(list(range(6)), 3, seeded_rng(418))
    with pytest.raises(InvalidK):
        split.test_ids(3)


# ----------------------------------------------------------------------- I/O

def test_text_round_trip_bitwise(tmp_path):
    ds = _tiny_dataset(sigma=0.1)
    path = str(tmp_path / "ds.txt")
    data.save_dataset(ds, path)
    back = data.load_dataset(path)
    assert len(back) == len(ds)
    assert (back.height, back.width, back.n_classes) == (ds.height, ds.width, ds.n_classes)
    for a, b in zip(ds.samples, back.samples):
        assert (a.patient_id, a.label) == (b.patient_id, b.label)
        np.testing.assert_array_equal(a.fundus, b.fundus)
        np.testing.assert_array_equal(a.modality, b.modality)


def test_binary_round_trip_bitwise(tmp_path):
    ds = _tiny_dataset(sigma=0.1, seed=419)
    path = str(tmp_path / "ds.bin")
    data.save_dataset(ds, path, binary=True)
    back = data.load_dataset(path)
    for a, b in zip(ds.samples, back.samples):
        assert (a.patient_id, a.label) == (b.patient_id, b.label)
        np.testing.assert_array_equal(a.fundus, b.fundus)
        np.testing.assert_array_equal(a.modality, b.modality)


def test_empty_dataset_round_trips(tmp_path):
    empty = data.Dataset(samples=[], height=4, width=4, n_classes=2)
    for binary in (False, True):
        path = str(tmp_path / f"empty{int(binary)}")
        data.save_dataset(empty, path, binary=binary)
        back = data.load_dataset(path)
        assert len(back) == 0
        assert (back.height, back.n_classes) == (4, 2)


def test_hand_written_fixture_parses(tmp_path):
    text = "\n".join(
        [
            "SSLDS v1 2 2 2 2",
            "P 7 0",
            "F 0 0.25 0.5 1",
            "M 1 0.75 0.5 0",
            "P 9 1",
            "F 0.1 0.2 0.3 0.4",
            "M 0.9 0.8 0.7 0.6",
            "",
        ]
    )
    path = str(tmp_path / "fixture.txt")
    with open(path, "w") as fh:
        fh.write(text)
    ds = data.load_dataset(path)
    assert [s.patient_id for s in ds.samples] == [7, 9]
    assert [s.label for s in ds.samples] == [0, 1]
    np.testing.assert_array_equal(ds.samples[0].fundus, [[0.0, 0.25], [0.5, 1.0]])
    np.testing.assert_array_equal(ds.samples[1].modality, [[0.9, 0.8], [0.7, 0.6]])


def _write(tmp_path, name, text):
    path = str(tmp_path / name)
    with open(path, "w") as fh:
        fh.write(text)
    return path


def test_text_format_errors(tmp_path):
    with pytest.raises(FormatError):
        data.load_dataset(_write(tmp_path, "empty", ""))
    with pytest.raises(FormatError):
        data.load_dataset(_write(tmp_path, "header", "WRONG v9 2 2 2 0\n"))
    base = "SSLDS v1 2 2 2 1\n"
    cases = {
        "badcount": base + "P 1 0\nF 0 0 0\nM 0 0 0 0\n",
        "badrange": base + "P 1 0\nF 0 0 0 2\nM 0 0 0 0\n",
        "badlabel": base + "P 1 5\nF 0 0 0 0\nM 0 0 0 0\n",
        "badtag": base + "P 1 0\nX 0 0 0 0\nM 0 0 0 0\n",
        "missing": base + "P 1 0\nF 0 0 0 0\n",
        "badpixel": base + "P 1 0\nF 0 0 0 zero\nM 0 0 0 0\n",
    }
    for name, text in cases.items():
        with pytest.raises(FormatError):
            data.load_dataset(_write(tmp_path, name, text))
    dup = "SSLDS v1 2 2 2 2\n" + "P 1 0\nF 0 0 0 0\nM 0 0 0 0\n" * 2
    with pytest.raises(FormatError):
        data.load_dataset(_write(tmp_path, "dup", dup))


def test_binary_format_errors(tmp_path):
    ds = _tiny_dataset(seed=420)
    good = str(tmp_path / "good.bin")
    data.save_dataset(ds, good, binary=True)
    blob = open(good, "rb").read()

    short = str(tmp_path / "short.bin")
    with open(short, "wb") as fh:
        fh.write(blob[:-10])
    with pytest.raises(FormatError):
        data.load_dataset(short)

    padded = str(tmp_path / "padded.bin")
    with open(padded, "wb") as fh:
        fh.write(blob + b"\x00" * 4)
    with pytest.raises(FormatError):
        data.load_dataset(padded)


def test_subset_selects_by_patient_id():
    ds = _tiny_dataset(n_classes=2, per_class=3)
    ids = [int(i) for i in ds.ids()[:3]]
    sub = ds.subset(ids)
    assert [s.patient_id for s in sub.samples] == ids
    assert sub.n_classes == ds.n_classes
