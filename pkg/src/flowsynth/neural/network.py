"""Sequential networks, the Adam optimiser and parameter blob I/O."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .layers import Flatten, Layer, ShapeError, build_layer

# Default window CNN: 14 layers, filter counts doubling per stage.
FULL_TRUNK = (
    "conv3x3:32", "conv3x3:32", "batchnorm", "relu", "maxpool2",
    "conv3x3:64", "conv3x3:64", "batchnorm", "relu", "maxpool2",
    "conv3x3:128", "conv3x3:128", "batchnorm", "relu",
)
# Same topology at a quarter of the width, for single-core desk runs.
DESK_TRUNK = tuple(
    d if not d.startswith("conv") else f"conv3x3:{int(d.split(':')[1]) // 4}" for d in FULL_TRUNK
)
NAIVE_TRUNK: tuple[str, ...] = ()

TRUNK_PRESETS = {"full": FULL_TRUNK, "desk": DESK_TRUNK, "naive": NAIVE_TRUNK}


def resolve_trunk(trunk) -> tuple[str, ...]:
    if isinstance(trunk, str):
        try:
            return TRUNK_PRESETS[trunk]
        except KeyError:
            raise ValueError(f"unknown trunk preset {trunk!r}; choose from {sorted(TRUNK_PRESETS)}")
    return tuple(trunk)


class Network:
    """A chain of layers with fixed per-sample input shape."""

    def __init__(self, layers: Sequence[str], input_shape, rng, dtype=np.float32):
        self.spec = tuple(layers)
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.layers: list[Layer] = [build_layer(d) for d in self.spec]
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.init(shape, rng, self.dtype)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({self.spec[i]}): {exc}") from None
        self.output_shape = shape

    def forward(self, x, train=False):
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"network input: expected (N, {self.input_shape}), got {x.shape}")
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, train)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({self.spec[i]}): {exc}") from None
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def parameters(self):
        """(param, grad-key) pairs in a stable order."""
        return [(layer, name) for layer in self.layers for name in layer.params]

    def tensors(self) -> dict[str, np.ndarray]:
        """All persistent arrays (params and buffers) keyed ``<index>.<kind>.<name>``."""
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in {**layer.params, **layer.buffers}.items():
                out[f"{i}.{layer.kind}.{name}"] = arr
        return out

    def load_tensors(self, tensors: dict[str, np.ndarray]):
        for i, layer in enumerate(self.layers):
            for store in (layer.params, layer.buffers):
                for name in store:
                    key = f"{i}.{layer.kind}.{name}"
                    if key not in tensors or tensors[key].shape != store[name].shape:
                        raise ValueError(f"missing or misshapen tensor {key}")
                    store[name] = tensors[key].astype(self.dtype)
        self.zero_grad()


def with_flatten(layers: Sequence[str]) -> tuple[str, ...]:
    layers = tuple(layers)
    return layers if layers and layers[-1] == "flatten" else layers + ("flatten",)


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


class Adam:
    """Adam over (layer, key) references so updates land in the owning layer."""

    def __init__(self, refs, lr):
        self.refs = list(refs)
        self.state = AdamState(lr=lr)
        self.state.m = [np.zeros_like(self._p(r)) for r in self.refs]
        self.state.v = [np.zeros_like(self._p(r)) for r in self.refs]

    @staticmethod
    def _p(ref):
        layer, key = ref
        return layer.params[key]

    @staticmethod
    def _g(ref):
        layer, key = ref
        return layer.grads[key]

    def step(self):
        st = self.state
        grads = [self._g(r) for r in self.refs]
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient in Adam step")
        st.step += 1
        c1 = 1.0 - st.beta1 ** st.step
        c2 = 1.0 - st.beta2 ** st.step
        for i, (ref, g) in enumerate(zip(self.refs, grads)):
            p = self._p(ref)
            st.m[i] = st.beta1 * st.m[i] + (1 - st.beta1) * g
            st.v[i] = st.beta2 * st.v[i] + (1 - st.beta2) * g * g
            mhat = st.m[i] / c1
            vhat = st.v[i] / c2
            p -= (st.lr * mhat / (np.sqrt(vhat) + st.eps)).astype(p.dtype)


def adam_step(state: AdamState, params: list, grads: list) -> list:
    """Functional Adam update on plain arrays; mutates ``state`` and returns new params."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient in Adam step")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g * g
        out.append(p - state.lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps))
    return out


# Blob layout: u16 name length, utf-8 name, u8 ndim, u32 dims..., float32 LE data.
def write_blobs(fh, tensors: dict[str, np.ndarray]):
    for name, arr in tensors.items():
        raw = name.encode()
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise EOFError("truncated parameter blob")
    return data


def read_blobs(fh, count: int) -> dict[str, np.ndarray]:
    out = {}
    for _ in range(count):
        (ln,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, ln).decode()
        (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
        shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(_read_exact(fh, 4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    return out


__all__ = [
    "Adam", "AdamState", "adam_step", "Network", "Flatten", "FULL_TRUNK", "DESK_TRUNK",
    "NAIVE_TRUNK", "TRUNK_PRESETS", "resolve_trunk", "with_flatten", "read_blobs", "write_blobs",
]
