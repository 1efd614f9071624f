"""Finite-difference gradient checking."""
import numpy as np

from .core import Tape, Tensor, backward, no_grad
from .ops import mul, sum


def _scalarize(out, proj):
    if out.data.size == 1:
        return sum(out)
    return sum(mul(out, Tensor(proj)))


def grad_check(fn, inputs, eps=1e-5, seed=0):
    """Max over all input coordinates of ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.

    ``fn(*inputs)`` may return any shape; non-scalar outputs are reduced with a
    fixed random projection so every output coordinate contributes.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    inputs = list(inputs)
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    with no_grad():
        probe = fn(*inputs)
    proj = np.random.default_rng(seed).standard_normal(probe.shape) if probe.data.size > 1 else None

    with Tape() as tape:
        loss = _scalarize(fn(*inputs), proj)
        backward(loss)
    del tape
    analytic = [np.zeros(x.shape) if x.grad is None else x.grad.copy() for x in inputs]

    def f():
        with no_grad():
            return float(_scalarize(fn(*inputs), proj).data)

    worst = 0.0
    for x, a in zip(inputs, analytic):
        flat = x.data.reshape(-1)
        af = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f()
            flat[i] = orig - eps
            fm = f()
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            err = abs(af[i] - num) / max(1.0, abs(af[i]), abs(num))
            worst = max(worst, err)
    return worst
