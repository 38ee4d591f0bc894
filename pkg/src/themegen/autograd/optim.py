from __future__ import annotations

from collections.abc import Iterator

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Named parameters plus Adam moments and step count."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True, name=name)
        t.grad = np.zeros_like(t.data)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = np.zeros_like(t.data)

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    def astype(self, dtype) -> "ParamStore":
        """Copy with every parameter and moment cast to ``dtype``."""
        out = ParamStore(dtype)
        for name, t in self.params.items():
            out.add(name, t.data)
            out.m[name] = self.m[name].astype(dtype)
            out.v[name] = self.v[name].astype(dtype)
        out.step = self.step
        return out


def adam_step(
    store: ParamStore,
    lr: float = 2e-4,
    beta1: float = 0.9,
    beta2: float = 0.99,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update of every parameter, then zero the grads."""
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in store.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data -= update.astype(p.dtype)
        p.grad = np.zeros_like(p.data)
