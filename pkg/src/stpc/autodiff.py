"""Dense float64 tensors with taped reverse-mode differentiation.

Small engine in the micrograd lineage: every differentiable operation
builds the output tensor eagerly with numpy, stores references to its
parents plus a backward closure, and records itself on the active tape.
``backward`` replays the reachable subgraph in reverse topological order.
Everything is float64; the intended scale is thousands of points, not
millions, so gradient-check fidelity beats throughput.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Incompatible operand shapes for an op."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(tuple(s)) for s in shapes)}")


# Test hook: name of a primitive whose backward rule is deliberately broken.
# Used by the gradcheck harness to prove it can detect a bad rule.
_BACKWARD_FAULT = None


def set_backward_fault(op_name):
    """Install (or clear, with None) a deliberate backward-rule fault."""
    global _BACKWARD_FAULT
    _BACKWARD_FAULT = op_name


class Tape:
    """Execution-ordered record of op nodes, for replay checks and cleanup.

    Ops append their output tensor whenever any input requires grad, so the
    node list is always a valid topological order of the recorded graph.
    Clearing drops parent links and backward closures, releasing every value
    the closures captured.
    """

    def __init__(self):
        self.nodes = []

    def record(self, tensor):
        self.nodes.append(tensor)

    def clear(self):
        for t in self.nodes:
            t._parents = ()
            t._backward = None
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        global _ACTIVE_TAPE
        self._outer = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._outer
        self.clear()
        return False


_ACTIVE_TAPE = Tape()


def active_tape():
    return _ACTIVE_TAPE


class Tensor:
    """Row-major float64 array plus optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def grad(self):
        """Gradient buffer; present only on tensors that require grad."""
        if not self.requires_grad:
            return None
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    def zero_grad(self):
        if self._grad is not None:
            self._grad.fill(0.0)

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # Operator sugar; everything routes through the module-level functions.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(parent, grad):
    if parent.requires_grad:
        buf = parent.grad
        buf += grad


def _from_op(data, parents, backward, op):
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        _ACTIVE_TAPE.record(out)
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(op, a.data.shape, b.data.shape) from None


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b):
    _check_broadcast("add", a, b)
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _from_op(out_data, (a, b), backward, "add")


def sub(a, b):
    _check_broadcast("sub", a, b)
    out_data = a.data - b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _from_op(out_data, (a, b), backward, "sub")


def mul(a, b):
    _check_broadcast("mul", a, b)
    out_data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _from_op(out_data, (a, b), backward, "mul")


def div(a, b):
    _check_broadcast("div", a, b)
    out_data = a.data / b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _from_op(out_data, (a, b), backward, "div")


def exp(a):
    out_data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out_data)

    return _from_op(out_data, (a,), backward, "exp")


def log(a):
    out_data = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return _from_op(out_data, (a,), backward, "log")


def sqrt(a):
    out_data = np.sqrt(a.data)

    def backward(g):
        _accumulate(a, g * 0.5 / out_data)

    return _from_op(out_data, (a,), backward, "sqrt")


def leaky_relu(a, slope=0.2):
    out_data = np.where(a.data > 0.0, a.data, slope * a.data)

    def backward(g):
        s = 0.3 if _BACKWARD_FAULT == "leaky_relu" else slope
        _accumulate(a, g * np.where(a.data > 0.0, 1.0, s))

    return _from_op(out_data, (a,), backward, "leaky_relu")


# ---------------------------------------------------------------------------
# linear algebra and structure


def matmul(a, b):
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError("matmul", a.data.shape, b.data.shape)
    try:
        out_data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.data.shape, b.data.shape) from None

    def backward(g):
        _accumulate(a, _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.data.shape))
        _accumulate(b, _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.data.shape))

    return _from_op(out_data, (a, b), backward, "matmul")


def reshape(a, *shape):
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out_data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _from_op(out_data, (a,), backward, "reshape")


def transpose(a, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out_data = a.data.transpose(axes)

    def backward(g):
        _accumulate(a, g.transpose(inverse))

    return _from_op(out_data, (a,), backward, "transpose")


def concat(tensors, axis=-1):
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: empty tensor list")
    try:
        out_data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.data.shape for t in tensors]) from None
    ax = axis if axis >= 0 else out_data.ndim + axis
    splits = np.cumsum([t.data.shape[ax] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=ax)):
            _accumulate(t, piece)

    return _from_op(out_data, tuple(tensors), backward, "concat")


def gather(a, indices):
    """Select rows along axis 0; repeated indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise IndexError(f"gather: index out of range for axis of extent {a.data.shape[0]}")
    out_data = a.data[idx]

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, g)
            _accumulate(a, buf)

    return _from_op(out_data, (a,), backward, "gather")


# ---------------------------------------------------------------------------
# reductions


def sum_(a, axis=None, keepdims=False):
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return _from_op(out_data, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape) / count)

    return _from_op(out_data, (a,), backward, "mean")


def max_(a, axis, keepdims=False):
    """Max over one axis; gradient routes to the first argmax (ties)."""
    out_data = a.data.max(axis=axis, keepdims=keepdims)
    arg = np.argmax(a.data, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, np.expand_dims(arg, axis), np.asarray(g), axis)
        _accumulate(a, buf)

    return _from_op(out_data, (a,), backward, "max")


# ---------------------------------------------------------------------------
# composite / loss ops


def softmax(a, axis=-1):
    """Numerically stable softmax along one axis.

    The row max is subtracted as a constant before exponentiation; the
    gradient is unchanged because softmax is shift invariant.
    """
    if not np.isfinite(a.data).all():
        raise ValueError("softmax: input contains non-finite values")
    shifted = sub(a, Tensor(a.data.max(axis=axis, keepdims=True)))
    e = exp(shifted)
    return div(e, sum_(e, axis=axis, keepdims=True))


def cross_entropy(logits, labels, ignore_label=None):
    """Mean negative log-softmax of the true class over non-ignored rows.

    logits: (N, C) tensor; labels: (N,) integer array. Rows whose label
    equals ignore_label contribute nothing. If every row is ignored the
    loss is 0 with zero gradient, so partial batches never crash a step.
    """
    if logits.data.ndim != 2:
        raise ShapeError("cross_entropy", logits.data.shape)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise ShapeError("cross_entropy", logits.data.shape, labels.shape)
    valid = np.ones(n, dtype=bool) if ignore_label is None else labels != ignore_label
    checked = labels[valid]
    if checked.size and (checked.min() < 0 or checked.max() >= c):
        bad = checked[(checked < 0) | (checked >= c)][0]
        raise ValueError(f"cross_entropy: label {bad} outside [0, {c})")
    count = int(valid.sum())

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    if count == 0:
        out_data = 0.0
    else:
        safe = np.where(valid, labels, 0)
        out_data = -float(logp[np.arange(n), safe][valid].sum()) / count

    def backward(g):
        if count == 0 or not logits.requires_grad:
            return
        soft = np.exp(logp)
        safe = np.where(valid, labels, 0)
        soft[np.arange(n), safe] -= 1.0
        soft[~valid] = 0.0
        _accumulate(logits, soft * (float(g) / count))

    return _from_op(out_data, (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss):
    """Populate grads of every requires_grad tensor reachable from loss.

    Gradients accumulate additively across fan-out and across repeated
    backward calls; callers zero them between optimization steps.
    """
    if loss.data.size != 1:
        raise ShapeError("backward: loss must be scalar", loss.data.shape)
    if not loss.requires_grad:
        raise ValueError("backward: loss does not require grad (nothing recorded)")

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss.grad += np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node._grad)


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second moment buffers and step counter for one param group."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.step = 0


def adam_step(params, grads, state, lr):
    """Standard bias-corrected Adam update, applied in place.

    params is a list of Tensors; grads a parallel list of arrays (pass
    None to read each param's own .grad buffer).
    """
    if lr <= 0:
        raise ValueError(f"adam_step: lr must be positive, got {lr}")
    if grads is None:
        grads = [None] * len(params)
    if len(grads) != len(params):
        raise ShapeError("adam_step", (len(params),), (len(grads),))
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = p.grad if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeError("adam_step", p.data.shape, g.shape)
        if i not in state.m:
            state.m[i] = np.zeros_like(p.data)
            state.v[i] = np.zeros_like(p.data)
        m = state.m[i]
        v = state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def finite_difference(f, x, h=1e-6):
    """Central-difference gradient of scalar f w.r.t. array x (oracle)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    grad = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return out


def relative_error(a, b, floor=1e-3):
    """Max elementwise |a-b| / max(|a|, |b|, floor).

    The floor keeps finite-difference noise on near-zero entries from
    registering as gradient error.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
