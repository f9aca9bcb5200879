"""Adam with a stepped learning-rate schedule.

The schedule is indexed by epoch: lr(epoch) = base_lr * decay_factor **
(epoch // decay_every).  Moments live in AdamState and are updated in
place, as are the parameter arrays; a state must only ever be used with
the parameter list it was built for.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, ShapeMismatch


@dataclass
class AdamState:
    """First/second moment accumulators plus the schedule constants."""

    first: list[np.ndarray] = field(repr=False)
    second: list[np.ndarray] = field(repr=False)
    step_count: int = 0
    base_lr: float = 1e-4
    decay_factor: float = 0.1
    decay_every: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_arrays(
        cls,
        arrays: list[np.ndarray],
        base_lr: float = 1e-4,
        decay_factor: float = 0.1,
        decay_every: int = 1000,
    ) -> "AdamState":
        if not (np.isfinite(base_lr) and base_lr > 0):
            raise InvalidConfig(f"base_lr must be positive, got {base_lr!r}")
        if not (0 < decay_factor <= 1):
            raise InvalidConfig(f"decay_factor must be in (0, 1], got {decay_factor!r}")
        if decay_every < 1:
            raise InvalidConfig(f"decay_every must be >= 1, got {decay_every!r}")
        return cls(
            first=[np.zeros_like(a) for a in arrays],
            second=[np.zeros_like(a) for a in arrays],
            base_lr=base_lr,
            decay_factor=decay_factor,
            decay_every=decay_every,
        )


def lr_at(state: AdamState, epoch: int) -> float:
    """Learning rate for a (0-based) epoch index."""
    if epoch < 0:
        raise InvalidConfig(f"epoch must be >= 0, got {epoch}")
    return state.base_lr * state.decay_factor ** (epoch // state.decay_every)


def adam_step(
    state: AdamState,
    params: list[np.ndarray],
    grads: list[np.ndarray],
    epoch: int,
) -> None:
    """One bias-corrected Adam update, in place on params and state."""
    if len(params) != len(state.first) or len(grads) != len(params):
        raise ShapeMismatch(
            f"got {len(params)} params, {len(grads)} grads for state of "
            f"{len(state.first)} arrays"
        )
    lr = lr_at(state, epoch)
    state.step_count += 1
    t = state.step_count
    correct1 = 1.0 - state.beta1**t
    correct2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.first, state.second):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"shape {g.shape} gradient for {p.shape} parameter")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= lr * (m / correct1) / (np.sqrt(v / correct2) + state.eps)
