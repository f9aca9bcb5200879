"""Encoder forward/backward, initialization statistics, serialization."""

import math

import numpy as np
import pytest

from modalembed import encoder
from modalembed.errors import (
    FormatError,
    InvalidDims,
    ShapeMismatch,
    TraceMismatch,
    ZeroVector,
)
from modalembed.linalg import normalize_rows, seeded_rng
from modalembed.loss import EmbeddingBatch, LossConfig, batch_loss, batch_loss_gradient


def test_init_deterministic_and_shapes():
    a = encoder.init_params([4, 2], seeded_rng(5))
    b = encoder.init_params([4, 2], seeded_rng(5))
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa, wb)

    p = encoder.init_params([4, 8, 128], seeded_rng(6))
    assert [w.shape for w in p.weights] == [(8, 4), (128, 8)]
    assert [b.shape for b in p.biases] == [(8,), (128,)]
    for b in p.biases:
        np.testing.assert_array_equal(b, 0.0)


def test_init_variance_tracks_fan_in_and_gain():
    """Empirical weight variance per layer within 30% of gain^2/fan_in."""
    p = encoder.init_params([256, 64, 128], seeded_rng(7))
    targets = [1.0 / 256, encoder._HEAD_GAIN**2 / 64]
    for w, target in zip(p.weights, targets):
        assert w.size >= 8000  # enough draws for a stable sample variance
        var = float(w.var())
        assert abs(var - target) < 0.3 * target
        assert abs(float(w.mean())) < 3.0 * math.sqrt(target / w.size) * 2


def test_init_rejects_bad_dims():
    for dims in ([4], [4, 0], [0, 3], [4, -1, 2]):
        with pytest.raises(InvalidDims):
            encoder.init_params(dims, seeded_rng(0))


def test_forward_identity_network():
    params = encoder.EncoderParams(
        layer_dims=[2, 2],
        weights=[np.eye(2)],
        biases=[np.zeros(2)],
    )
    e, trace = encoder.forward(params, np.array([[1.0, 0.0]]))
    np.testing.assert_allclose(e, [[1.0, 0.0]], atol=1e-15)
    assert trace is None
    e, _ = encoder.forward(params, np.array([[3.0, 4.0]]))
    np.testing.assert_allclose(e, [[0.6, 0.8]], atol=1e-15)


def test_forward_matches_scalar_loop_oracle():
    """Straight-line per-element recomputation of a 2-hidden-layer net."""
    rng = seeded_rng(8)
    dims = [5, 7, 6, 4]
    params = encoder.init_params(dims, rng)
    x = rng.standard_normal((3, 5))
    got, _ = encoder.forward(params, x)

    for r in range(3):
        h = [float(v) for v in x[r]]
        for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
            out = []
            for i in range(w.shape[0]):
                z = float(b[i])
                for j in range(w.shape[1]):
                    z += float(w[i, j]) * h[j]
                if layer < len(params.weights) - 1:
                    z = max(z, 0.0)
                out.append(z)
            h = out
        norm = math.sqrt(sum(v * v for v in h))
        for c in range(4):
            assert abs(got[r, c] - h[c] / norm) < 1e-12


def test_forward_unit_norm_and_determinism():
    rng = seeded_rng(9)
    params = encoder.init_params([10, 8, 6], rng)
    x = rng.standard_normal((20, 10))
    e1, _ = encoder.forward(params, x)
    e2, _ = encoder.forward(params, x)
    np.testing.assert_array_equal(e1, e2)
    np.testing.assert_allclose(np.linalg.norm(e1, axis=1), 1.0, atol=1e-10)


def test_forward_errors():
    params = encoder.init_params([4, 3], seeded_rng(10))
    with pytest.raises(ShapeMismatch):
        encoder.forward(params, np.ones((2, 5)))
    dead = encoder.EncoderParams(
        layer_dims=[2, 2], weights=[np.zeros((2, 2))], biases=[np.zeros(2)]
    )
    with pytest.raises(ZeroVector):
        encoder.forward(dead, np.array([[1.0, 2.0]]))


def test_backward_zero_upstream_gives_zero_grads():
    rng = seeded_rng(11)
    params = encoder.init_params([6, 5, 4], rng)
    x = rng.standard_normal((3, 6))
    e, trace = encoder.forward(params, x, keep_trace=True)
    grads = encoder.backward(params, trace, np.zeros_like(e))
    for g in grads.weights + grads.biases:
        np.testing.assert_array_equal(g, 0.0)


def test_backward_trace_mismatch():
    rng = seeded_rng(12)
    p1 = encoder.init_params([6, 5, 4], rng)
    p2 = encoder.init_params([6, 4], rng)
    x = rng.standard_normal((3, 6))
    e, trace = encoder.forward(p1, x, keep_trace=True)
    with pytest.raises(TraceMismatch):
        encoder.backward(p2, trace, np.zeros_like(e))
    with pytest.raises(TraceMismatch):
        encoder.backward(p1, trace, np.zeros((2, 4)))


def _end_to_end_loss(params, x, n, cfg):
    e, _ = encoder.forward(params, x)
    batch = EmbeddingBatch(f=e[:n], f_hat=e[n : 2 * n], g=e[2 * n :], check=False)
    return batch_loss(batch, cfg).total


def test_parameter_gradients_match_finite_differences():
    """Composite objective -> encoder gradient checked coordinatewise."""
    rng = seeded_rng(13)
    n = 3
    cfg = LossConfig(tau=0.5)
    params = encoder.init_params([6, 5, 4], rng)
    x = rng.standard_normal((3 * n, 6))

    e, trace = encoder.forward(params, x, keep_trace=True)
    batch = EmbeddingBatch(f=e[:n], f_hat=e[n : 2 * n], g=e[2 * n :], check=False)
    d_f, d_hat, d_g = batch_loss_gradient(batch, cfg)
    grads = encoder.backward(params, trace, np.vstack([d_f, d_hat, d_g]))

    # A single step size can straddle a rectifier kink for the unlucky
    # coordinate, so keep each coordinate's best match over a step
    # ladder; the straddle disappears one rung down.
    worst = 0.0
    for analytic, arr in zip(grads.weights + grads.biases, params.weights + params.biases):
        flat = arr.ravel()
        for idx in range(flat.size):
            keep = flat[idx]
            best = np.inf
            for h in (1e-4, 1e-5, 1e-6, 1e-7, 1e-8):
                flat[idx] = keep + h
                up = _end_to_end_loss(params, x, n, cfg)
                flat[idx] = keep - h
                down = _end_to_end_loss(params, x, n, cfg)
                flat[idx] = keep
                fd = (up - down) / (2 * h)
                a = analytic.ravel()[idx]
                best = min(best, abs(a - fd) / max(abs(a), abs(fd), 1e-3))
            worst = max(worst, best)
    assert worst < 1e-5


def test_rectifier_boundary_subgradient_zero_is_bracketed():
    """A pre-activation of exactly 0 reports subgradient 0, and the
    one-sided differences of the scalar loss straddle that value."""
    params = encoder.EncoderParams(
        layer_dims=[1, 1, 2],
        weights=[np.array([[1.0]]), np.array([[1.0], [2.0]])],
        biases=[np.array([0.0]), np.array([1.0, 0.0])],
    )
    x = np.array([[0.0]])  # hidden pre-activation is exactly 0
    w_loss = np.array([[0.6, 0.8]])

    e, trace = encoder.forward(params, x, keep_trace=True)
    assert trace.pre_acts[0][0, 0] == 0.0
    grads = encoder.backward(params, trace, w_loss)
    reported = float(grads.biases[0][0])
    assert reported == 0.0

    def loss_at(b0):
        probe = encoder.EncoderParams(
            layer_dims=[1, 1, 2],
            weights=[w.copy() for w in params.weights],
            biases=[np.array([b0]), params.biases[1].copy()],
        )
        e_probe, _ = encoder.forward(probe, x)
        return float((w_loss * e_probe).sum())

    h = 1e-6
    d_plus = (loss_at(h) - loss_at(0.0)) / h
    d_minus = (loss_at(0.0) - loss_at(-h)) / h
    lo, hi = min(d_plus, d_minus), max(d_plus, d_minus)
    assert lo - 1e-9 <= reported <= hi + 1e-9
    assert hi > 0.5  # the active side has real slope, so the bracket is informative


def test_save_load_round_trip(tmp_path):
    rng = seeded_rng(14)
    params = encoder.init_params([9, 7, 5], rng)
    path = str(tmp_path / "enc.bin")
    encoder.save_params(params, path)
    back = encoder.load_params(path)
    assert back.layer_dims == params.layer_dims
    for a, b in zip(params.weights + params.biases, back.weights + back.biases):
        np.testing.assert_array_equal(a, b)


def test_load_rejects_malformed_files(tmp_path):
    rng = seeded_rng(15)
    params = encoder.init_params([4, 3], rng)
    good = str(tmp_path / "good.bin")
    encoder.save_params(params, good)
    blob = open(good, "rb").read()

    bad_magic = str(tmp_path / "magic.bin")
    with open(bad_magic, "wb") as fh:
        fh.write(b"NOTANENC" + blob[8:])
    with pytest.raises(FormatError):
        encoder.load_params(bad_magic)

    truncated = str(tmp_path / "short.bin")
    with open(truncated, "wb") as fh:
        fh.write(blob[:-16])
    with pytest.raises(FormatError):
        encoder.load_params(truncated)

    padded = str(tmp_path / "long.bin")
    with open(padded, "wb") as fh:
        fh.write(blob + b"\x00" * 8)
    with pytest.raises(FormatError):
        encoder.load_params(padded)


def test_embeddings_feed_loss_without_renormalization():
    """Encoder output satisfies the batch's unit-norm contract directly."""
    rng = seeded_rng(16)
    params = encoder.init_params([8, 6, 4], rng)
    x = rng.standard_normal((9, 8))
    e, _ = encoder.forward(params, x)
    batch = EmbeddingBatch(f=e[:3], f_hat=e[3:6], g=e[6:])
    assert batch_loss(batch, LossConfig()).total > 0.0
    np.testing.assert_allclose(e, normalize_rows(e), atol=1e-12)
