"""Minimal dense-network machinery for the toy backbone and the deviation net.

Everything is 64-bit numpy and layer-wise hand-rolled reverse mode: the only
compositions needed are MLP forward passes and squared-error losses, so a
general autodiff tape would be dead weight. All operations are pure functions
of (inputs, seed); repeated runs are bit-identical. Batched forwards fix the
per-row summation order (plain GEMM), which is what makes that guarantee hold.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Checkpoint file is missing a field, corrupt, or from another format version."""


@dataclass
class MlpModel:
    """Fully-connected network: affine layers, tanh on hidden, identity output.

    ``weights[i]`` has shape ``(layer_dims[i], layer_dims[i+1])`` and
    ``biases[i]`` shape ``(layer_dims[i+1],)``, all float64 row-major.
    ``feature_config`` is free-form JSON-serializable metadata (embedding
    sizes and the like) that wrappers need to rebuild their input pipeline
    from a checkpoint.
    """

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    feature_config: dict

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpModel":
        return MlpModel(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            dict(self.feature_config),
        )


def mlp_init(layer_dims, seed, feature_config=None) -> MlpModel:
    """Build a model with uniform +-sqrt(6/(d_in+d_out)) weights and zero biases.

    Deterministic: the same ``(layer_dims, seed)`` pair always yields
    bit-identical parameters.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ValueError(f"need input and output widths, got layer_dims={dims}")
    if any(d < 1 for d in dims):
        raise ValueError(f"all layer widths must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return MlpModel(dims, weights, biases, dict(feature_config or {}))


def sinusoidal_features(s, n_freq: int) -> np.ndarray:
    """Embed a scalar as ``[sin(2^k pi s), cos(2^k pi s)]`` for k = 0..n_freq-1.

    Accepts a scalar (returns shape ``(2*n_freq,)``) or an array of scalars
    (returns ``(..., 2*n_freq)``); frequency pairs are interleaved sin, cos.
    """
    if n_freq < 1:
        raise ValueError(f"n_freq must be >= 1, got {n_freq}")
    s = np.asarray(s, dtype=np.float64)
    angles = s[..., None] * ((2.0 ** np.arange(n_freq)) * math.pi)
    out = np.empty(angles.shape[:-1] + (2 * n_freq,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def mlp_forward_cached(model: MlpModel, x) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass that also returns the per-layer activations for backprop.

    The cache is ``[input, hidden_1, ..., output]`` where entry ``i`` is the
    (post-tanh) input to layer ``i``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = np.atleast_2d(x)
    if a.shape[1] != model.layer_dims[0]:
        raise ValueError(
            f"input width {a.shape[1]} does not match layer_dims[0]={model.layer_dims[0]}"
        )
    acts = [a]
    last = model.n_layers - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        a = z if i == last else np.tanh(z)
        acts.append(a)
    return (acts[-1][0] if single else acts[-1]), acts


def mlp_forward(model: MlpModel, x) -> np.ndarray:
    """Batched affine+tanh composition; rows are independent."""
    return mlp_forward_cached(model, x)[0]


def mlp_backward(model: MlpModel, acts: list[np.ndarray], grad_out) -> list[tuple]:
    """Reverse-mode pass from d(loss)/d(output) to per-layer ``(dW, db)`` pairs."""
    delta = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
    grads: list[tuple] = [None] * model.n_layers
    for i in range(model.n_layers - 1, -1, -1):
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            # tanh'(z) = 1 - tanh(z)^2, and acts[i] is already tanh(z).
            delta = (delta @ model.weights[i].T) * (1.0 - acts[i] ** 2)
    return grads


def grad_mse(model: MlpModel, inputs, targets) -> tuple[float, list[tuple]]:
    """Mean squared error over all batch and output entries, with gradients.

    Returns ``(loss, grads)`` where grads mirrors the parameter structure as
    per-layer ``(dW, db)`` tuples.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    tgt = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if tgt.shape != (x.shape[0], model.layer_dims[-1]):
        raise ValueError(
            f"target shape {tgt.shape} does not match (batch={x.shape[0]}, "
            f"out={model.layer_dims[-1]})"
        )
    y, acts = mlp_forward_cached(model, x)
    err = acts[-1] - tgt
    loss = float(np.mean(err**2))
    grads = mlp_backward(model, acts, (2.0 / err.size) * err)
    return loss, grads


def zero_grads(model: MlpModel) -> list[tuple]:
    return [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(model.weights, model.biases)]


def accumulate_grads(total: list[tuple], extra: list[tuple]) -> None:
    for (tw, tb), (ew, eb) in zip(total, extra):
        tw += ew
        tb += eb


@dataclass
class AdamState:
    """Adam moments mirroring the parameter structure; step counts from 0."""

    lr: float
    step: int
    m: list[tuple]
    v: list[tuple]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(model: MlpModel, lr: float) -> AdamState:
    return AdamState(lr=lr, step=0, m=zero_grads(model), v=zero_grads(model))


def adam_step(model: MlpModel, grads: list[tuple], state: AdamState):
    """One bias-corrected Adam update; returns new ``(model, state)``, inputs untouched."""
    if len(grads) != model.n_layers:
        raise ValueError("gradient structure does not mirror the model")
    t = state.step + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new_w, new_b, new_m, new_v = [], [], [], []
    for (w, b), (gw, gb), (mw, mb), (vw, vb) in zip(
        zip(model.weights, model.biases), grads, state.m, state.v
    ):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise ValueError("gradient shapes do not mirror parameter shapes")
        mw = state.beta1 * mw + (1.0 - state.beta1) * gw
        mb = state.beta1 * mb + (1.0 - state.beta1) * gb
        vw = state.beta2 * vw + (1.0 - state.beta2) * gw**2
        vb = state.beta2 * vb + (1.0 - state.beta2) * gb**2
        new_w.append(w - state.lr * (mw / c1) / (np.sqrt(vw / c2) + state.eps))
        new_b.append(b - state.lr * (mb / c1) / (np.sqrt(vb / c2) + state.eps))
        new_m.append((mw, mb))
        new_v.append((vw, vb))
    model = MlpModel(list(model.layer_dims), new_w, new_b, dict(model.feature_config))
    return model, replace(state, step=t, m=new_m, v=new_v)


def _layers_payload(model: MlpModel) -> list[dict]:
    return [
        {"w": w.tolist(), "b": b.tolist()}
        for w, b in zip(model.weights, model.biases)
    ]


def _payload_crc(layers: list[dict]) -> int:
    blob = json.dumps(layers, separators=(",", ":"), sort_keys=True).encode("utf-8")
    return zlib.crc32(blob)


def save_checkpoint(model: MlpModel, path, kind: str = "mlp") -> None:
    """Write a self-describing JSON container; round-trips parameters bit-exactly.

    JSON floats are emitted via shortest round-trip repr, so 64-bit values
    survive the text encoding unchanged. A crc32 of the serialized parameter
    block guards against truncation and silent edits.
    """
    layers = _layers_payload(model)
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": kind,
        "layer_dims": list(model.layer_dims),
        "feature_config": model.feature_config,
        "layers": layers,
        "crc32": _payload_crc(layers),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_checkpoint(path, expected_kind: str | None = None) -> MlpModel:
    """Load a checkpoint written by :func:`save_checkpoint`.

    Raises ``FileNotFoundError`` for a missing file and ``CheckpointError``
    for parse failures, version or kind mismatches, checksum mismatches, or
    non-finite parameters.
    """
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no checkpoint at {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {p}: {exc}") from exc
    if not isinstance(doc, dict):
        raise CheckpointError(f"checkpoint {p} is not a JSON object")
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {p} has format_version {version!r}, "
            f"expected {CHECKPOINT_FORMAT_VERSION}"
        )
    if expected_kind is not None and doc.get("kind") != expected_kind:
        raise CheckpointError(
            f"checkpoint {p} has kind {doc.get('kind')!r}, expected {expected_kind!r}"
        )
    try:
        layer_dims = [int(d) for d in doc["layer_dims"]]
        layers = doc["layers"]
        stored_crc = int(doc["crc32"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint {p} is missing fields: {exc}") from exc
    if _payload_crc(layers) != stored_crc:
        raise CheckpointError(f"checkpoint {p} failed its crc32 check")
    weights, biases = [], []
    for entry, d_in, d_out in zip(layers, layer_dims[:-1], layer_dims[1:]):
        w = np.asarray(entry["w"], dtype=np.float64)
        b = np.asarray(entry["b"], dtype=np.float64)
        if w.shape != (d_in, d_out) or b.shape != (d_out,):
            raise CheckpointError(f"checkpoint {p} has inconsistent layer shapes")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise CheckpointError(f"checkpoint {p} contains non-finite parameters")
        weights.append(w)
        biases.append(b)
    if len(weights) != len(layer_dims) - 1:
        raise CheckpointError(f"checkpoint {p} layer count does not match layer_dims")
    return MlpModel(layer_dims, weights, biases, dict(doc.get("feature_config", {})))


def checkpoint_kind(path) -> str:
    """Read the kind tag of a checkpoint without validating the payload."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    return str(doc.get("kind", ""))
