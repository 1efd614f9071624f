"""Parameter storage and Adam."""
from dataclasses import dataclass, field

import numpy as np

from .core import Tensor


class ParamStore:
    """Ordered name -> Tensor map using dotted names (``encoder.block3.conv1.weight``)."""

    def __init__(self):
        self._params = {}

    def add(self, name, value, requires_grad=True):
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        t = Tensor(value, requires_grad=requires_grad, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def __iter__(self):
        return iter(self._params)

    def names(self, prefix=None):
        if prefix is None:
            return list(self._params)
        p = prefix.rstrip(".") + "."
        return [n for n in self._params if n.startswith(p)]

    def items(self):
        return self._params.items()

    def scope(self, prefix):
        return Scope(self, prefix)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def set_requires_grad(self, flag, prefix=None):
        for n in self.names(prefix):
            self._params[n].requires_grad = flag

    def state_dict(self):
        return {n: t.data for n, t in self._params.items()}

    def load_state_dict(self, state, prefix=None, strict=True):
        """Copy arrays into existing parameters; returns the names loaded."""
        targets = self.names(prefix)
        loaded = []
        for n in targets:
            if n not in state:
                if strict:
                    raise KeyError(f"missing tensor {n!r} in state")
                continue
            arr = np.asarray(state[n], dtype=np.float64)
            if arr.shape != self._params[n].shape:
                raise ValueError(f"{n}: shape {arr.shape} != {self._params[n].shape}")
            self._params[n].data = arr.copy()
            loaded.append(n)
        return loaded


class Scope:
    """Prefix view into a :class:`ParamStore`."""

    def __init__(self, store, prefix):
        self.store = store
        self.prefix = prefix

    def __getitem__(self, name):
        return self.store[f"{self.prefix}.{name}"]

    def __contains__(self, name):
        return f"{self.prefix}.{name}" in self.store

    def add(self, name, value, requires_grad=True):
        return self.store.add(f"{self.prefix}.{name}", value, requires_grad)

    def scope(self, name):
        return Scope(self.store, f"{self.prefix}.{name}")


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state, names=None, lr=None):
    """One bias-corrected Adam update over ``names`` (default: all), then zero their grads.

    ``params`` may be a :class:`ParamStore` or a ``{name: Tensor}`` mapping.
    """
    items = params.items() if names is None else [(n, params[n]) for n in names]
    items = list(items)
    for n, t in items:
        if t.grad is None:
            raise ValueError(f"adam_step: parameter {n!r} has no gradient")
    state.step += 1
    t_ = state.step
    lr = state.lr if lr is None else lr
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t_
    c2 = 1.0 - b2 ** t_
    for n, t in items:
        g = t.grad
        m = state.m.get(n)
        if m is None:
            m = np.zeros_like(t.data)
            state.v[n] = np.zeros_like(t.data)
        v = state.v[n]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[n], state.v[n] = m, v
        t.data = t.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        t.grad = None
