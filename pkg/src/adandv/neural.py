"""A small numpy MLP with manual backpropagation, Adam, and a checkpoint codec."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

FORMAT_VERSION = 1
MAGIC = b"ADANDVCK"


class CheckpointError(ValueError):
    pass


class Mlp:
    """Affine layers with ReLU between them and an identity output."""

    def __init__(self, layer_dims: Sequence[int], weights=None, biases=None, seed: int = 0):
        self.layer_dims = tuple(int(d) for d in layer_dims)
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ValueError(f"bad layer dims {self.layer_dims}")
        pairs = list(zip(self.layer_dims[:-1], self.layer_dims[1:]))
        if weights is None:
            rng = np.random.default_rng(seed)
            weights = []
            for fan_in, fan_out in pairs:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        if biases is None:
            biases = [np.zeros(fan_out) for _, fan_out in pairs]
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for (fan_in, fan_out), w, b in zip(pairs, self.weights, self.biases):
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ValueError("parameter shapes do not match layer dims")

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "Mlp":
        return Mlp(self.layer_dims, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, x: np.ndarray, keep: bool = False):
        """Forward pass on a vector or a ``(batch, in)`` matrix.

        With ``keep=True`` also returns the per-layer inputs needed by
        :meth:`backward`.
        """
        h = np.asarray(x, dtype=np.float64)
        if h.shape[-1] != self.layer_dims[0]:
            raise ValueError(f"expected input width {self.layer_dims[0]}, got {h.shape[-1]}")
        acts = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            acts.append(h)
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        return (h, acts) if keep else h

    def backward(self, acts: list[np.ndarray], upstream: np.ndarray):
        """Reverse pass.  Returns ``(grads, d_input)`` with grads in ``params`` order."""
        g = np.asarray(upstream, dtype=np.float64)
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            a = acts[i]
            if a.ndim == 1:
                grads[2 * i] = np.outer(a, g)
                grads[2 * i + 1] = g.copy()
            else:
                grads[2 * i] = a.T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                # acts[i] is the post-ReLU output of layer i - 1
                g = g * (a > 0.0)
        return grads, g


def mlp_forward(m: Mlp, x) -> np.ndarray:
    return m.forward(x)


def mlp_gradients(m: Mlp, x, upstream):
    _, acts = m.forward(x, keep=True)
    return m.backward(acts, upstream)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(model: Mlp, state: AdamState, grads: Sequence[np.ndarray]) -> None:
    """In-place Adam update of ``model`` with bias correction."""
    params = model.params
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def numeric_gradient(loss: Callable[[], float], param: np.ndarray, index, h: float = 1e-5) -> float:
    """Central finite difference of ``loss`` wrt ``param[index]`` (mutated and restored)."""
    old = param[index]
    param[index] = old + h
    up = loss()
    param[index] = old - h
    down = loss()
    param[index] = old
    return (up - down) / (2.0 * h)


def encode_bundle(nets: dict[str, Mlp], header: dict) -> bytes:
    """Serialize named networks behind a JSON header.

    Layout: ``MAGIC``, little-endian uint32 header length, UTF-8 JSON header,
    then every network's ``W0, b0, W1, b1, ...`` as row-major ``<f8``.
    """
    head = dict(header)
    head["format_version"] = FORMAT_VERSION
    head["networks"] = [{"name": k, "layer_dims": list(v.layer_dims)} for k, v in nets.items()]
    head["payload_bytes"] = 8 * sum(n.n_params for n in nets.values())
    blob = json.dumps(head, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(
        np.ascontiguousarray(p, dtype="<f8").tobytes() for net in nets.values() for p in net.params
    )
    return MAGIC + struct.pack("<I", len(blob)) + blob + body


def decode_bundle(data: bytes) -> tuple[dict[str, Mlp], dict]:
    if len(data) < len(MAGIC) + 4 or not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint (bad magic or truncated header)")
    (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
    start = len(MAGIC) + 4
    if len(data) < start + hlen:
        raise CheckpointError("truncated header")
    try:
        head = json.loads(data[start:start + hlen])
    except ValueError as exc:
        raise CheckpointError(f"corrupt header: {exc}") from None
    if head.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"format version {head.get('format_version')} unsupported (expected {FORMAT_VERSION})"
        )
    body = data[start + hlen:]
    if len(body) != head["payload_bytes"]:
        raise CheckpointError(
            f"payload is {len(body)} bytes, header promises {head['payload_bytes']}"
        )
    nets = {}
    offset = 0
    for spec in head["networks"]:
        dims = spec["layer_dims"]
        ws, bs = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = np.frombuffer(body, "<f8", fan_in * fan_out, offset).reshape(fan_in, fan_out)
            offset += 8 * w.size
            b = np.frombuffer(body, "<f8", fan_out, offset)
            offset += 8 * b.size
            ws.append(w.astype(np.float64))
            bs.append(b.astype(np.float64))
        nets[spec["name"]] = Mlp(dims, ws, bs)
    return nets, head
