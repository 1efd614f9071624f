"""Tensor and gradient tape.

Every differentiable op appends a node ``(out, parents, backward_fn)`` to the
active :class:`Tape` when any parent requires grad. :func:`backward` walks the
tape once in reverse, sums contributions per tensor and consumes the tape.
"""
import numpy as np


class ShapeError(ValueError):
    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes " + " vs ".join(str(tuple(s)) for s in shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(FloatingPointError):
    def __init__(self, where, count=None):
        self.where = where
        msg = f"non-finite values produced by {where}"
        if count is not None:
            msg += f" ({count} entries)"
        super().__init__(msg)


class TapeError(RuntimeError):
    pass


_grad_enabled = True
_tape_stack = []
_default_tape = None


class _Node:
    __slots__ = ("out", "parents", "backward", "op")

    def __init__(self, out, parents, backward, op):
        self.out = out
        self.parents = parents
        self.backward = backward
        self.op = op


class Tape:
    """Ordered record of differentiable operations.

    Used as a context manager to scope recording::

        with Tape() as tape:
            loss = f(x)
            tape.backward(loss)
    """

    def __init__(self):
        self.nodes = []
        self.consumed = False

    def record(self, out, parents, backward, op):
        if self.consumed:
            raise TapeError("tape already consumed by backward(); call reset() first")
        self.nodes.append(_Node(out, parents, backward, op))
        out._tape = self

    def reset(self):
        self.nodes = []
        self.consumed = False

    def backward(self, loss):
        if loss._tape is not self:
            raise TapeError("loss was not recorded on this tape")
        backward(loss)

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack.pop()
        return False


def current_tape():
    global _default_tape
    if _tape_stack:
        return _tape_stack[-1]
    if _default_tape is None or _default_tape.consumed:
        _default_tape = Tape()
    return _default_tape


class no_grad:
    """Disable recording inside the block."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled():
    return _grad_enabled


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64, copy=True)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"Tensor({name or 'unnamed'})", int((~np.isfinite(arr)).sum()))
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._tape = None

    @classmethod
    def _wrap(cls, arr):
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.name = None
        t._tape = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        from . import ops
        return ops.stop_gradient(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}{flag})"

    def __len__(self):
        return self.shape[0]

    # arithmetic sugar; the actual ops live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis, keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


check_finite = True


def make_result(out, parents, backward, op):
    """Wrap ``out`` and record it on the active tape when needed."""
    # a single sum is non-finite iff some entry is (barring overflow of the sum itself)
    if check_finite and not np.isfinite(np.add.reduce(out, axis=None)):
        bad = int((~np.isfinite(out)).sum())
        if bad:
            raise NonFiniteError(op, bad)
    t = Tensor._wrap(out)
    if _grad_enabled and any(p.requires_grad for p in parents):
        t.requires_grad = True
        current_tape().record(t, parents, backward, op)
    return t


def backward(loss):
    """Populate ``.grad`` on every requires-grad tensor reachable from ``loss``.

    Leaf gradients accumulate across calls; intermediate tensors receive the
    gradient of this traversal only.
    """
    if loss.data.size != 1:
        raise ShapeError("backward", loss.shape, detail="loss must be a scalar")
    if not loss.requires_grad:
        raise TapeError("loss does not require grad (nothing recorded)")
    tape = loss._tape
    if tape is None:
        # loss is itself a leaf
        g = np.ones_like(loss.data)
        loss.grad = g if loss.grad is None else loss.grad + g
        return
    if tape.consumed:
        raise TapeError("second backward() on a consumed tape; reset it and recompute")
    if not tape.nodes:
        raise TapeError("tape is empty")

    grads = {id(loss): np.ones_like(loss.data)}
    owners = {id(loss): loss}
    for node in reversed(tape.nodes):
        key = id(node.out)
        g = grads.pop(key, None)
        if g is None:
            continue
        owners.pop(key, None)
        node.out.grad = g
        in_grads = node.backward(g)
        for p, pg in zip(node.parents, in_grads):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            if k in grads:
                grads[k] = grads[k] + pg
            else:
                grads[k] = pg
                owners[k] = p
    for k, g in grads.items():
        leaf = owners[k]
        g = np.array(g, dtype=np.float64, copy=True).reshape(leaf.shape)
        leaf.grad = g if leaf.grad is None else leaf.grad + g
    tape.consumed = True
    tape.nodes = []
