"""Parameter containers, SGD/Adam updates, and the checkpoint container.

Checkpoints are a flat binary file: a little-endian uint32 header length,
a JSON header {"version": "amc-ckpt-1", "arrays": {name: shape}}, then the
raw float64 little-endian array bytes concatenated in sorted name order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict

import numpy as np

from .autodiff import Tensor
from .errors import ShapeMismatch

CKPT_VERSION = "amc-ckpt-1"


class Params:
    """An ordered name -> Tensor map for one model's parameters."""

    def __init__(self, tensors: "OrderedDict[str, Tensor] | None" = None):
        self._map: OrderedDict[str, Tensor] = tensors or OrderedDict()

    def __getitem__(self, name: str) -> Tensor:
        return self._map[name]

    def __setitem__(self, name: str, t: Tensor) -> None:
        self._map[name] = t

    def __contains__(self, name: str) -> bool:
        return name in self._map

    def __iter__(self):
        return iter(self._map)

    def names(self) -> list[str]:
        return list(self._map)

    def tensors(self, names=None) -> list[Tensor]:
        if names is None:
            return list(self._map.values())
        return [self._map[n] for n in names]

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self._map.items()}

    def clone(self, requires_grad: bool | None = None) -> "Params":
        out = OrderedDict()
        for n, t in self._map.items():
            rg = t.requires_grad if requires_grad is None else requires_grad
            out[n] = Tensor(t.data.copy(), requires_grad=rg)
        return Params(out)

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for n, t in self._map.items():
            if n not in arrays:
                raise KeyError(f"checkpoint missing array {n!r}")
            if arrays[n].shape != t.data.shape:
                raise ShapeMismatch(f"{n}: checkpoint {arrays[n].shape} vs model {t.data.shape}")
            t.data = np.ascontiguousarray(arrays[n], dtype=np.float64)

    def subset(self, names: list[str]) -> "Params":
        return Params(OrderedDict((n, self._map[n]) for n in names))

    def merged(self, other: "Params") -> "Params":
        out = OrderedDict(self._map)
        out.update(other._map)
        return Params(out)


def sgd_step(params: list[Tensor], grads: list[np.ndarray], lr: float) -> None:
    """In-place vanilla SGD update."""
    if len(params) != len(grads):
        raise ShapeMismatch("params/grads length mismatch")
    for p, g in zip(params, grads):
        if p.data.shape != g.shape:
            raise ShapeMismatch(f"sgd {p.data.shape} vs grad {g.shape}")
        p.data = p.data - lr * g


class AdamState:
    """First and second moment buffers plus the step counter."""

    def __init__(self, params: list[Tensor]):
        self.step = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(
    params: list[Tensor],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Standard Adam with bias correction; mutates params and state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params/grads/state length mismatch")
    state.step += 1
    t = state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.data.shape != g.shape:
            raise ShapeMismatch(f"adam {p.data.shape} vs grad {g.shape}")
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        m_hat = state.m[i] / (1.0 - beta1**t)
        v_hat = state.v[i] / (1.0 - beta2**t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def accumulate(into: list[np.ndarray] | None, grads: list[np.ndarray]) -> list[np.ndarray]:
    """Explicit gradient accumulation across minibatches."""
    if into is None:
        return [g.copy() for g in grads]
    if len(into) != len(grads):
        raise ShapeMismatch("accumulator length mismatch")
    for acc, g in zip(into, grads):
        acc += g
    return into


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    names = sorted(arrays)
    header = {
        "version": CKPT_VERSION,
        "arrays": {n: list(arrays[n].shape) for n in names},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("version") != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
        arrays = {}
        for n in sorted(header["arrays"]):
            shape = tuple(header["arrays"][n])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            arrays[n] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
    return arrays


def params_digest(arrays: dict[str, np.ndarray]) -> str:
    """Stable content hash used by the meta-test isolation checks."""
    h = hashlib.sha256()
    for n in sorted(arrays):
        h.update(n.encode("utf-8"))
        h.update(str(arrays[n].shape).encode("utf-8"))
        h.update(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())
    return h.hexdigest()
