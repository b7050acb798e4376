"""Graph-convolution layers with PReLU, their reverse pass, and Adam.

A layer computes ``PReLU(Op @ H @ W)`` with one PReLU slope per output
channel.  The propagation operator is symmetric, so the reverse pass
reuses it as its own transpose.  Everything is float64 and never forms a
dense ``n x n`` matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .mesh import PropagationOperator

__all__ = [
    "GcnLayer",
    "Tape",
    "AdamState",
    "NonFiniteError",
    "gcn_forward",
    "gcn_backward",
    "init_layer",
    "init_params",
    "adam_step",
    "learning_rate",
    "BETA_INIT",
]

BETA_INIT = 0.25


class NonFiniteError(FloatingPointError):
    """A NaN or inf showed up in activations, gradients or parameters."""


@dataclass
class GcnLayer:
    """Weights ``W`` (c_in x c_out) and per-channel PReLU slopes ``beta``."""

    W: np.ndarray
    beta: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        if self.W.ndim != 2 or self.beta.shape != (self.W.shape[1],):
            raise ValueError(
                f"layer {self.name!r}: W {self.W.shape} and beta {self.beta.shape} disagree"
            )

    @property
    def c_in(self) -> int:
        return self.W.shape[0]

    @property
    def c_out(self) -> int:
        return self.W.shape[1]

    @property
    def n_params(self) -> int:
        return self.W.size + self.beta.size


@dataclass
class _Record:
    op: PropagationOperator
    H: np.ndarray
    Z: np.ndarray
    layer: GcnLayer


@dataclass
class Tape:
    """Stack of per-layer intermediates; backward pops in reverse order."""

    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def clear(self):
        self.records.clear()


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")


def gcn_forward(op: PropagationOperator, H, layer: GcnLayer, tape: Tape | None = None):
    """``PReLU(Op @ H @ W)``; records on ``tape`` when given."""
    H = np.ascontiguousarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != op.n_nodes:
        raise ValueError(
            f"layer {layer.name!r}: features {H.shape} do not match {op.n_nodes} nodes"
        )
    if H.shape[1] != layer.c_in:
        raise ValueError(
            f"layer {layer.name!r}: features have {H.shape[1]} channels, W expects {layer.c_in}"
        )
    # propagate the narrower side
    if layer.c_in <= layer.c_out:
        Z = op.apply(H) @ layer.W
    else:
        Z = op.apply(H @ layer.W)
    Z = np.ascontiguousarray(Z)
    out = _backend.kernels().prelu_forward(Z, layer.beta)
    _check_finite(out, f"output of layer {layer.name!r}")
    if tape is not None:
        tape.records.append(_Record(op, H, Z, layer))
    return out


def gcn_backward(tape: Tape, G):
    """Pop the last layer off ``tape``; return ``(dW, dbeta, dH)``."""
    if tape is None or not tape.records:
        raise RuntimeError("backward called without a recorded forward pass")
    rec = tape.records.pop()
    G = np.ascontiguousarray(G, dtype=np.float64)
    if G.shape != rec.Z.shape:
        raise ValueError(f"upstream gradient {G.shape} does not match output {rec.Z.shape}")
    M, dbeta = _backend.kernels().prelu_backward(rec.Z, rec.layer.beta, G)
    W = rec.layer.W
    OpM = rec.op.apply(M)
    dW = rec.H.T @ OpM
    dH = OpM @ W.T
    return dW, np.asarray(dbeta), dH


def init_layer(c_in, c_out, rng, name="") -> GcnLayer:
    """Glorot-uniform weights, slopes at :data:`BETA_INIT`."""
    bound = np.sqrt(6.0 / (c_in + c_out))
    W = rng.uniform(-bound, bound, size=(c_in, c_out))
    return GcnLayer(W, np.full(c_out, BETA_INIT), name)


def init_params(shapes, seed=0) -> list[GcnLayer]:
    """One layer per ``(c_in, c_out)`` in ``shapes``, drawn in order from ``seed``."""
    rng = np.random.default_rng(seed)
    return [init_layer(a, b, rng, name=f"layer{i}") for i, (a, b) in enumerate(shapes)]


def learning_rate(epoch, lr0=1e-3, decay=0.9, interval=30) -> float:
    """Step schedule ``lr0 * decay ** floor(epoch / interval)``."""
    return lr0 * decay ** (int(epoch) // int(interval))


@dataclass
class AdamState:
    lr0: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 0.9
    interval: int = 30
    step: int = 0
    epoch: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr0 <= 0 or self.eps <= 0 or self.interval < 1:
            raise ValueError("lr0, eps and interval must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")

    @property
    def lr(self) -> float:
        return learning_rate(self.epoch, self.lr0, self.decay, self.interval)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam update; arrays in ``params`` are updated in place.

    ``params`` and ``grads`` map names to arrays of equal shape.
    """
    for key, g in grads.items():
        if key not in params:
            raise KeyError(f"gradient for unknown parameter {key!r}")
        if g.shape != params[key].shape:
            raise ValueError(f"gradient of {key!r} has shape {g.shape}, expected {params[key].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {key!r}")
    state.step += 1
    t = state.step
    lr = state.lr
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for key, g in grads.items():
        p = params[key]
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
        v = state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
