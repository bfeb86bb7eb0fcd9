"""Parameter storage, initialization, seeded RNG and the Adam optimizer."""
from __future__ import annotations

import math

import numpy as np

from ..errors import NumericError, ParameterError
from .tensor import Tensor


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based Philox generator keyed by ``seed`` and optional sub-keys."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class ParameterStore:
    """Named learnable tensors, non-learnable buffers and Adam moments."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params or name in self.buffers:
            raise ParameterError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def add_buffer(self, name: str, value) -> np.ndarray:
        if name in self.params or name in self.buffers:
            raise ParameterError(f"duplicate buffer name {name!r}")
        arr = np.array(value, dtype=self.dtype)
        self.buffers[name] = arr
        return arr

    def linear(self, name: str, rng, d_in: int, d_out: int, bias: bool = True):
        W = self.add(f"{name}.weight", glorot_uniform(rng, (d_in, d_out), d_in, d_out, self.dtype))
        b = self.add(f"{name}.bias", np.zeros(d_out)) if bias else None
        return W, b

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __len__(self):
        return len(self.params)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def arrays(self) -> dict[str, np.ndarray]:
        """Parameters followed by buffers, in registration order."""
        out = {name: t.data for name, t in self.params.items()}
        out.update(self.buffers)
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.arrays().items()}

    def restore(self, arrays: dict[str, np.ndarray]):
        expected = set(self.params) | set(self.buffers)
        if set(arrays) != expected:
            missing, extra = expected - set(arrays), set(arrays) - expected
            raise ParameterError(f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, arr in arrays.items():
            target = self.params[name].data if name in self.params else self.buffers[name]
            if target.shape != arr.shape:
                raise ParameterError(f"{name}: shape {arr.shape} != {target.shape}")
            target[...] = arr

    def astype(self, dtype) -> "ParameterStore":
        """Copy with every tensor cast (e.g. a float64 copy for gradient checks)."""
        other = ParameterStore(dtype)
        for name, t in self.params.items():
            other.add(name, t.data)
        for name, arr in self.buffers.items():
            other.add_buffer(name, arr)
        return other


def adam_step(store: ParameterStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> ParameterStore:
    """One bias-corrected Adam update; moments are kept in float64."""
    for name, t in store.params.items():
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise NumericError(f"non-finite gradient in parameter {name!r} at step {store.step + 1}")
    store.step += 1
    c1 = 1.0 - beta1 ** store.step
    c2 = 1.0 - beta2 ** store.step
    for name, t in store.params.items():
        g = np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64)
        m, v = store.moments.get(name, (None, None))
        if m is None:
            m, v = np.zeros(t.shape), np.zeros(t.shape)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        store.moments[name] = (m, v)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        t.data[...] = (t.data.astype(np.float64) - update).astype(store.dtype)
    return store
