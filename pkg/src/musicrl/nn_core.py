"""Small numpy MLP engine: forward/backward passes, Adam, Polyak averaging
and a portable binary checkpoint format.

Parameters of a network are kept in a plain ``dict`` mapping ``"W0"``,
``"b0"``, ``"W1"``, ... to float32 arrays. Weight matrices are stored as
``(fan_in, fan_out)`` so a layer computes ``x @ W + b``.

All functions are pure: they never modify the arrays they are given.
Computation happens in the dtype of the parameters (float32 unless a caller
explicitly passes float64 copies, which the gradient checks do).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from .errors import (
    CheckpointIntegrityError,
    CheckpointVersionError,
    DimensionError,
    NonFiniteError,
    UsageError,
)

ParamSet = Dict[str, np.ndarray]

_HIDDEN_ACTIVATIONS = ("relu", "tanh")
_OUTPUT_ACTIVATIONS = ("linear", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths and activations of a fully connected network."""

    layer_sizes: Tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError(f"need at least input and output sizes, got {sizes}")
        if any(s <= 0 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if self.hidden_activation not in _HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in _OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]


def mlp_spec(input_size: int, hidden: Tuple[int, ...], output_size: int,
             hidden_activation="relu", output_activation="linear") -> MlpSpec:
    return MlpSpec((input_size, *hidden, output_size), hidden_activation, output_activation)


def init_params(spec: MlpSpec, rng: np.random.Generator) -> ParamSet:
    """Weights uniform in +-1/sqrt(fan_in), biases zero."""
    params: ParamSet = {}
    for i, (fan_in, fan_out) in enumerate(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        params[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32)
        params[f"b{i}"] = np.zeros(fan_out, dtype=np.float32)
    return params


def zeros_like(params: Mapping[str, np.ndarray]) -> ParamSet:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: Mapping[str, np.ndarray]) -> ParamSet:
    return {k: v.copy() for k, v in params.items()}


def param_count(params: Mapping[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def check_params(spec: MlpSpec, params: Mapping[str, np.ndarray]) -> None:
    for i, (fan_in, fan_out) in enumerate(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
        w, b = params.get(f"W{i}"), params.get(f"b{i}")
        if w is None or b is None:
            raise DimensionError(f"missing parameters for layer {i}")
        if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
            raise DimensionError(
                f"layer {i}: expected W{(fan_in, fan_out)} b({fan_out},), "
                f"got W{w.shape} b{b.shape}")


@dataclass
class ForwardCache:
    """Activations recorded by a forward pass, needed by :func:`mlp_backward`."""

    inputs: List[np.ndarray] = field(default_factory=list)  # input to each layer
    outputs: List[np.ndarray] = field(default_factory=list)  # post-activation per layer


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(name: str, out: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    if name == "relu":
        return upstream * (out > 0)
    if name == "tanh":
        return upstream * (1 - out * out)
    return upstream


def mlp_forward(spec: MlpSpec, params: Mapping[str, np.ndarray], batch, keep: bool = False):
    """Run the network on a ``(n, input_size)`` batch.

    Returns the ``(n, output_size)`` output, or ``(output, cache)`` when
    ``keep`` is true.
    """
    x = np.asarray(batch)
    if x.ndim != 2 or x.shape[1] != spec.input_size:
        raise DimensionError(f"expected batch of shape (n, {spec.input_size}), got {x.shape}")
    dtype = params["W0"].dtype
    x = x.astype(dtype, copy=False)
    cache = ForwardCache() if keep else None
    last = spec.n_layers - 1
    for i in range(spec.n_layers):
        if cache is not None:
            cache.inputs.append(x)
        z = x @ params[f"W{i}"] + params[f"b{i}"]
        x = _activate(spec.output_activation if i == last else spec.hidden_activation, z)
        if cache is not None:
            cache.outputs.append(x)
    return (x, cache) if keep else x


def mlp_backward(spec: MlpSpec, params: Mapping[str, np.ndarray],
                 cache: Optional[ForwardCache], upstream) -> Tuple[ParamSet, np.ndarray]:
    """Backpropagate ``upstream`` (dLoss/dOutput) through a cached forward pass.

    Returns ``(param_grads, input_grad)``.
    """
    if cache is None or len(cache.inputs) != spec.n_layers:
        raise UsageError("mlp_backward needs the cache of a forward pass run with keep=True")
    g = np.asarray(upstream, dtype=params["W0"].dtype)
    if g.shape != cache.outputs[-1].shape:
        raise DimensionError(f"upstream shape {g.shape} != output shape {cache.outputs[-1].shape}")
    grads: ParamSet = {}
    last = spec.n_layers - 1
    for i in reversed(range(spec.n_layers)):
        act = spec.output_activation if i == last else spec.hidden_activation
        g = _activation_grad(act, cache.outputs[i], g)
        grads[f"W{i}"] = cache.inputs[i].T @ g
        grads[f"b{i}"] = g.sum(axis=0)
        g = g @ params[f"W{i}"].T
    return {k: grads[k] for k in params}, g


# ---------------------------------------------------------------------------
# Optimisation


@dataclass
class AdamState:
    first_moment: ParamSet
    second_moment: ParamSet
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params: Mapping[str, np.ndarray], learning_rate: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    return AdamState(zeros_like(params), zeros_like(params), 0,
                     learning_rate, beta1, beta2, epsilon)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState) -> Tuple[ParamSet, AdamState]:
    """One bias-corrected Adam descent step. Raises on non-finite gradients."""
    if set(grads) != set(params):
        raise DimensionError("gradient names do not match parameter names")
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise DimensionError(f"gradient {k} has shape {g.shape}, expected {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {k!r}; update rejected")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params, m_new, v_new = {}, {}, {}
    for k, p in params.items():
        g = grads[k].astype(p.dtype, copy=False)
        m = b1 * state.first_moment[k] + (1 - b1) * g
        v = b2 * state.second_moment[k] + (1 - b2) * g * g
        step = state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        new_params[k] = (p - step).astype(p.dtype, copy=False)
        m_new[k] = m.astype(p.dtype, copy=False)
        v_new[k] = v.astype(p.dtype, copy=False)
    new_state = AdamState(m_new, v_new, t, state.learning_rate, b1, b2, state.epsilon)
    return new_params, new_state


def polyak_update(target: Mapping[str, np.ndarray], online: Mapping[str, np.ndarray],
                  coefficient: float) -> ParamSet:
    """``coefficient * target + (1 - coefficient) * online`` per entry."""
    if not 0.0 <= coefficient <= 1.0:
        raise ValueError(f"polyak coefficient must be in [0, 1], got {coefficient}")
    if set(target) != set(online):
        raise DimensionError("target and online parameter names differ")
    out = {}
    for k, t in target.items():
        o = online[k]
        if t.shape != o.shape:
            raise DimensionError(f"{k}: target {t.shape} vs online {o.shape}")
        if coefficient == 1.0:
            out[k] = t.copy()
        elif coefficient == 0.0:
            out[k] = o.copy()
        else:
            # t + (1-c)(o-t) is exact when online == target
            out[k] = (t + (1.0 - coefficient) * (o - t)).astype(t.dtype, copy=False)
    return out


# ---------------------------------------------------------------------------
# Checkpoints
#
# Layout (all integers little-endian):
#   8 bytes   magic b"MUSICKPT"
#   uint32    format version
#   uint32    number of arrays
#   per array:
#     uint32  name length, then UTF-8 name bytes
#     uint32  ndim, then ndim x uint32 dims
#     prod(dims) x float32 payload, row-major

CHECKPOINT_MAGIC = b"MUSICKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(arrays: Mapping[str, np.ndarray], path) -> Path:
    path = Path(path)
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(arrays))]
    for name, arr in arrays.items():
        a = np.asarray(arr)
        if not np.issubdtype(a.dtype, np.number):
            raise TypeError(f"array {name!r} is not numeric")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
        chunks.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointIntegrityError(
                f"checkpoint truncated: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    """Read a checkpoint back into a dict of float32 arrays (insertion order kept)."""
    data = Path(path).read_bytes()
    r = _Reader(data)
    if len(data) < len(CHECKPOINT_MAGIC) or r.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointIntegrityError(f"{path}: bad magic bytes, not a checkpoint")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, this reader supports {CHECKPOINT_VERSION}")
    count = r.u32()
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = r.u32()
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointIntegrityError(f"{path}: corrupt array name") from exc
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        n = int(np.prod(shape, dtype=np.int64))
        payload = r.take(4 * n)
        arrays[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
    if r.pos != len(data):
        raise CheckpointIntegrityError(f"{path}: {len(data) - r.pos} unexpected trailing bytes")
    return arrays


def prefixed(prefix: str, params: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {f"{prefix}/{k}": v for k, v in params.items()}


def unprefixed(prefix: str, arrays: Mapping[str, np.ndarray]) -> ParamSet:
    head = prefix + "/"
    return {k[len(head):]: np.array(v, dtype=np.float32) for k, v in arrays.items()
            if k.startswith(head)}
