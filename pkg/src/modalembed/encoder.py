"""Feed-forward encoder mapping flattened images to unit-norm embeddings.

The network is a stack of affine layers with rectifier activations on
every hidden layer; the final affine output is l2-normalized row by
row.  Forward keeps an explicit trace so backward can run reverse-mode
differentiation by hand, including the normalization Jacobian
(I - e e^T) / ||z||.  The rectifier subgradient at exactly 0 is 0.

Parameters serialize to a flat little-endian binary file:

    magic  b"FFENC001"
    u32    number of layer dims
    u32[]  layer dims
    f64[]  per layer, weights row-major then biases

Weight matrices are stored (fan_out, fan_in) so layer l maps
h @ W_l.T + b_l.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    FormatError,
    InvalidDims,
    ShapeMismatch,
    TraceMismatch,
    ZeroVector,
)
from .linalg import NORM_EPS

MAGIC = b"FFENC001"


@dataclass
class EncoderParams:
    """Layer dimensions plus one weight matrix and bias vector per layer."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def embedding_dim(self) -> int:
        return self.layer_dims[-1]

    def arrays(self) -> list[np.ndarray]:
        """All trainable arrays in a fixed order (weights, then biases)."""
        return [*self.weights, *self.biases]


@dataclass
class EncoderGrads:
    """Parameter gradients, shaped exactly like EncoderParams."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]


@dataclass
class ForwardTrace:
    """Intermediates from one forward pass, consumed by backward."""

    layer_dims: list[int]
    inputs: list[np.ndarray] = field(repr=False)  # input to each layer
    pre_acts: list[np.ndarray] = field(repr=False)  # affine outputs per layer
    prenorm: np.ndarray = field(repr=False)  # final affine output
    norms: np.ndarray = field(repr=False)  # row norms of prenorm
    embeddings: np.ndarray = field(repr=False)  # normalized output


def _check_dims(layer_dims) -> list[int]:
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise InvalidDims(f"need at least input and output dims, got {dims}")
    if any(d < 1 for d in dims):
        raise InvalidDims(f"layer dims must be positive, got {dims}")
    if dims[-1] < 2:
        raise InvalidDims(f"embedding dim must be >= 2, got {dims[-1]}")
    return dims


# Scale applied on top of 1/fan_in init for every layer after the first.
# The output is row-normalized and biases start at zero, so positive
# per-layer gains cancel out of the untrained embedding geometry entirely
# (ReLU is positively homogeneous); what they do change is the relative
# step size Adam takes on each layer.  A small-gain head keeps the
# first-layer features near their initial scale while the head is shaped
# from near scratch, which trains noticeably better here than uniform
# scaling.
_HEAD_GAIN = 0.05


def init_params(layer_dims, rng: np.random.Generator) -> EncoderParams:
    """Fan-in-scaled Gaussian weights (variance gain^2/fan_in), zero biases.

    The first layer uses gain 1; all later layers use _HEAD_GAIN.
    """
    dims = _check_dims(layer_dims)
    weights = []
    biases = []
    for l, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        w = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        if l > 0:
            w *= _HEAD_GAIN
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return EncoderParams(layer_dims=dims, weights=weights, biases=biases)


def forward(params: EncoderParams, x: np.ndarray, keep_trace: bool = False):
    """Embed a batch of flattened inputs.

    x is (batch, layer_dims[0]).  Returns (embeddings, trace); trace is
    None unless keep_trace is set.  Raises ZeroVector if any pre-norm
    output row collapses to (near) zero length.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != params.layer_dims[0]:
        raise ShapeMismatch(
            f"input has {x.shape[1]} features, encoder expects {params.layer_dims[0]}"
        )
    inputs = [x]
    pre_acts = []
    h = x
    last = params.n_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        pre_acts.append(z)
        if l < last:
            h = np.maximum(z, 0.0)
            inputs.append(h)
    prenorm = pre_acts[-1]
    norms = np.linalg.norm(prenorm, axis=1)
    if np.any(norms <= NORM_EPS) or not np.all(np.isfinite(norms)):
        bad = int(np.argmin(norms))
        raise ZeroVector(f"encoder output row {bad} has norm {norms[bad]!r}")
    e = prenorm / norms[:, None]
    if not keep_trace:
        return e, None
    trace = ForwardTrace(
        layer_dims=list(params.layer_dims),
        inputs=inputs,
        pre_acts=pre_acts,
        prenorm=prenorm,
        norms=norms,
        embeddings=e,
    )
    return e, trace


def backward(params: EncoderParams, trace: ForwardTrace, d_embeddings: np.ndarray) -> EncoderGrads:
    """Reverse-mode gradients of sum(loss) given d loss / d embeddings.

    The trace must come from forward(params, ..., keep_trace=True) with
    these same parameters.
    """
    if trace.layer_dims != list(params.layer_dims):
        raise TraceMismatch(
            f"trace built for dims {trace.layer_dims}, params have {params.layer_dims}"
        )
    d_e = np.asarray(d_embeddings, dtype=float)
    if d_e.shape != trace.embeddings.shape:
        raise TraceMismatch(
            f"upstream gradient shape {d_e.shape} does not match "
            f"embeddings {trace.embeddings.shape}"
        )
    e = trace.embeddings
    # through row normalization: d_z = (d_e - (d_e . e) e) / ||z||
    inner = (d_e * e).sum(axis=1, keepdims=True)
    delta = (d_e - inner * e) / trace.norms[:, None]

    g_w: list[np.ndarray] = [None] * params.n_layers  # type: ignore[list-item]
    g_b: list[np.ndarray] = [None] * params.n_layers  # type: ignore[list-item]
    for l in range(params.n_layers - 1, -1, -1):
        if l < params.n_layers - 1:
            # rectifier: pass gradient only where the pre-activation was > 0
            delta = delta * (trace.pre_acts[l] > 0.0)
        g_w[l] = delta.T @ trace.inputs[l]
        g_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = delta @ params.weights[l]
    return EncoderGrads(weights=g_w, biases=g_b)


def save_params(params: EncoderParams, path: str) -> None:
    """Write parameters in the documented little-endian binary layout."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(params.layer_dims)))
        fh.write(struct.pack(f"<{len(params.layer_dims)}I", *params.layer_dims))
        for w, b in zip(params.weights, params.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_params(path: str) -> EncoderParams:
    """Read parameters written by save_params; validates magic and sizes."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}")
    off = len(MAGIC)
    try:
        (n_dims,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = list(struct.unpack_from(f"<{n_dims}I", raw, off))
        off += 4 * n_dims
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header ({exc})") from exc
    dims = _check_dims(dims)
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        need = 8 * (fan_out * fan_in + fan_out)
        if off + need > len(raw):
            raise FormatError(
                f"{path}: truncated at byte {off}, layer needs {need} more bytes"
            )
        w = np.frombuffer(raw, dtype="<f8", count=fan_out * fan_in, offset=off)
        off += 8 * fan_out * fan_in
        b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(w.reshape(fan_out, fan_in).astype(float))
        biases.append(b.astype(float))
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes after parameters")
    return EncoderParams(layer_dims=dims, weights=weights, biases=biases)
