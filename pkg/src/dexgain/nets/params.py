from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from dexgain.nets.tensor import Tensor


class ParamSet:
    """Ordered name -> leaf Tensor map; shapes are fixed at creation."""

    def __init__(self):
        self._p: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._p:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._p[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._p[name]

    def __contains__(self, name: str) -> bool:
        return name in self._p

    def __iter__(self) -> Iterator[str]:
        return iter(self._p)

    def __len__(self) -> int:
        return len(self._p)

    def items(self):
        return self._p.items()

    def names(self) -> list[str]:
        return list(self._p)

    def shapes(self) -> dict:
        return {k: t.shape for k, t in self._p.items()}

    def zero_grad(self) -> None:
        for t in self._p.values():
            t.grad = None

    def grads(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict(
            (k, t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in self._p.items()
        )

    def values(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.value) for k, t in self._p.items())

    def set_values(self, values: dict) -> None:
        for k, v in values.items():
            t = self._p[k]
            v = np.asarray(v, dtype=np.float64)
            if v.shape != t.shape:
                raise ValueError(f"{k}: shape {v.shape} != {t.shape}")
            t.value = v.copy()

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for k, t in self._p.items():
            out.add(k, t.value.copy())
        return out

    def frozen(self) -> "ParamSet":
        """Copy whose tensors do not record gradients; forward passes then skip the tape."""
        out = ParamSet()
        for k, t in self._p.items():
            out._p[k] = Tensor(t.value, requires_grad=False)
        return out

    def subset(self, prefix: str) -> "ParamSet":
        """View sharing the same leaf tensors for every name under ``prefix``."""
        out = ParamSet()
        for k, t in self._p.items():
            if k.startswith(prefix):
                out._p[k] = t
        return out

    def num_values(self) -> int:
        return int(sum(t.value.size for t in self._p.values()))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.value)) for t in self._p.values())
