from __future__ import annotations

from typing import Iterator, Mapping

import numpy as np

from .tensor import ShapeError, Tensor, param


class ParamStore:
    """Named parameters plus Adam moment state."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already exists")
        t = param(value, name)
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

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray | None]:
        return {k: p.grad for k, p in self.params.items()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def restore(self, values: Mapping[str, np.ndarray]) -> None:
        for k, v in values.items():
            if self.params[k].shape != v.shape:
                raise ShapeError(f"{k}: stored {v.shape} vs parameter {self.params[k].shape}")
            self.params[k].data = v.copy()

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, p in self.params.items():
            out.add(k, p.data.copy())
            out.m[k] = self.m[k].copy()
            out.v[k] = self.v[k].copy()
        out.step = self.step
        return out

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())


def _check(store: ParamStore, grads: Mapping[str, np.ndarray | None] | None, scale: float):
    if not 0.0 <= scale <= 1.0:
        raise ValueError(f"scale must lie in [0, 1], got {scale}")
    grads = store.grads() if grads is None else grads
    for k, g in grads.items():
        if g is not None and g.shape != store.params[k].shape:
            raise ShapeError(f"gradient for {k}: {g.shape} vs parameter {store.params[k].shape}")
    return grads


def adam_step(
    store: ParamStore,
    grads: Mapping[str, np.ndarray | None] | None = None,
    base_lr: float = 2e-4,
    scale: float = 1.0,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam with effective step ``base_lr * scale``.

    Parameters without a gradient are left untouched, moments included.
    """
    grads = _check(store, grads, scale)
    b1, b2 = betas
    store.step += 1
    t = store.step
    lr = base_lr * scale
    for k, g in grads.items():
        if g is None:
            continue
        m = store.m[k] = b1 * store.m[k] + (1 - b1) * g
        v = store.v[k] = b2 * store.v[k] + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p = store.params[k]
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)


def sgd_step(
    store: ParamStore,
    grads: Mapping[str, np.ndarray | None] | None = None,
    base_lr: float = 2e-4,
    scale: float = 1.0,
) -> None:
    grads = _check(store, grads, scale)
    store.step += 1
    for k, g in grads.items():
        if g is not None:
            p = store.params[k]
            p.data = p.data - (base_lr * scale) * g
