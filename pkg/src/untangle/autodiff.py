"""Minimal reverse-mode differentiation over 2-D float64 arrays.

A :class:`Graph` records nodes in creation order, which is a valid topological
order, so :meth:`Graph.backward` is a single reverse sweep. Binary ops follow
numpy broadcasting restricted to 2-D shapes, e.g. ``(n, m) + (1, m)``.

Example::

    g = Graph()
    x = g.constant(batch)
    h = g.tanh(g.affine(x, g.param("W", W), g.param("b", b)))
    loss = g.mean(h * h)
    grads = g.backward(loss)      # {"W": ..., "b": ...}
"""

import math

import numba
import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


def _as2d(value):
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
    return arr


def _broadcast_shape(a, b):
    out = []
    for x, y in zip(a, b):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise ShapeError(f"cannot broadcast shapes {a} and {b}")
    return tuple(out)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Node:
    __slots__ = ("graph", "value", "grad", "inputs", "backward_fn", "kind", "name")

    def __init__(self, graph, value, kind, inputs=(), backward_fn=None, name=None):
        self.graph = graph
        self.value = value
        self.grad = None
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.kind = kind
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.kind}, shape={self.shape})"

    def _lift(self, other):
        return other if isinstance(other, Node) else self.graph.constant(other)

    def __add__(self, other):
        return self.graph.add(self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.graph.sub(self, self._lift(other))

    def __rsub__(self, other):
        return self.graph.sub(self._lift(other), self)

    def __mul__(self, other):
        return self.graph.mul(self, self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.graph.div(self, self._lift(other))

    def __neg__(self):
        return self.graph.neg(self)

    def __matmul__(self, other):
        return self.graph.matmul(self, other)

    @property
    def T(self):
        return self.graph.transpose(self)


class Graph:
    """Single-owner tape; build one per forward/backward pass."""

    def __init__(self):
        self.nodes = []
        self.params = {}

    def _push(self, value, kind, inputs=(), backward_fn=None, name=None):
        node = Node(self, value, kind, inputs, backward_fn, name)
        self.nodes.append(node)
        return node

    @staticmethod
    def _accumulate(node, grad):
        # constants never need gradients; grads are never updated in place,
        # so views can be stored as-is
        if node.kind == "const":
            return
        node.grad = grad if node.grad is None else node.grad + grad

    # -- leaves ------------------------------------------------------------

    def constant(self, value):
        return self._push(_as2d(value), "const")

    def param(self, name, value):
        if name in self.params:
            raise ValueError(f"parameter {name!r} registered twice")
        node = self._push(_as2d(value), "param", name=name)
        self.params[name] = node
        return node

    # -- elementwise binary ------------------------------------------------

    def _binary(self, a, b, kind, value, grad_a, grad_b):
        acc = self._accumulate
        sa, sb = a.shape, b.shape

        def backward(g):
            if a.kind != "const":
                acc(a, _unbroadcast(grad_a(g), sa))
            if b.kind != "const":
                acc(b, _unbroadcast(grad_b(g), sb))

        return self._push(value, kind, (a, b), backward)

    def add(self, a, b):
        _broadcast_shape(a.shape, b.shape)
        return self._binary(a, b, "add", a.value + b.value, lambda g: g, lambda g: g)

    def sub(self, a, b):
        _broadcast_shape(a.shape, b.shape)
        return self._binary(a, b, "sub", a.value - b.value, lambda g: g, lambda g: -g)

    def mul(self, a, b):
        _broadcast_shape(a.shape, b.shape)
        av, bv = a.value, b.value
        return self._binary(a, b, "mul", av * bv, lambda g: g * bv, lambda g: g * av)

    def div(self, a, b):
        _broadcast_shape(a.shape, b.shape)
        av, bv = a.value, b.value
        out = av / bv
        return self._binary(a, b, "div", out, lambda g: g / bv, lambda g: -g * out / bv)

    # -- elementwise unary -------------------------------------------------

    def _unary(self, x, kind, value, local_grad):
        acc = self._accumulate
        return self._push(value, kind, (x,), lambda g: acc(x, g * local_grad()))

    def neg(self, x):
        acc = self._accumulate
        return self._push(-x.value, "neg", (x,), lambda g: acc(x, -g))

    def relu(self, x):
        mask = x.value > 0
        return self._unary(x, "relu", np.where(mask, x.value, 0.0), lambda: mask)

    def tanh(self, x):
        out = np.tanh(x.value)
        return self._unary(x, "tanh", out, lambda: 1.0 - out * out)

    def sigmoid(self, x):
        out = _sigmoid(x.value)
        return self._unary(x, "sigmoid", out, lambda: out * (1.0 - out))

    def exp(self, x):
        out = np.exp(x.value)
        return self._unary(x, "exp", out, lambda: out)

    def log(self, x):
        xv = x.value
        return self._unary(x, "log", np.log(xv), lambda: 1.0 / xv)

    def square(self, x):
        xv = x.value
        return self._unary(x, "square", xv * xv, lambda: 2.0 * xv)

    def abs(self, x):
        xv = x.value
        return self._unary(x, "abs", np.abs(xv), lambda: np.sign(xv))

    def softplus(self, x):
        xv = x.value
        return self._unary(x, "softplus", _softplus(xv), lambda: _sigmoid(xv))

    # -- linear algebra and reshaping --------------------------------------

    def matmul(self, a, b):
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")
        av, bv = a.value, b.value
        acc = self._accumulate

        def backward(g):
            if a.kind != "const":
                acc(a, g @ bv.T)
            if b.kind != "const":
                acc(b, av.T @ g)

        return self._push(av @ bv, "matmul", (a, b), backward)

    def transpose(self, x):
        acc = self._accumulate
        return self._push(x.value.T, "transpose", (x,), lambda g: acc(x, g.T))

    def affine(self, x, w, b):
        """``x @ w + b`` with ``b`` of shape (1, out)."""
        if x.shape[1] != w.shape[0] or b.shape != (1, w.shape[1]):
            raise ShapeError(f"affine shapes x{x.shape} W{w.shape} b{b.shape}")
        xv, wv = x.value, w.value
        acc = self._accumulate

        def backward(g):
            if x.kind != "const":
                acc(x, g @ wv.T)
            acc(w, xv.T @ g)
            acc(b, g.sum(axis=0, keepdims=True))

        return self._push(xv @ wv + b.value, "affine", (x, w, b), backward)

    def concat(self, xs, axis=1):
        xs = list(xs)
        other = 1 - axis
        if len({x.shape[other] for x in xs}) != 1:
            raise ShapeError(f"concat along axis {axis}: {[x.shape for x in xs]}")
        sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
        acc = self._accumulate

        def backward(g):
            for x, part in zip(xs, np.split(g, sizes, axis=axis)):
                acc(x, part)

        out = np.concatenate([x.value for x in xs], axis=axis)
        return self._push(out, "concat", tuple(xs), backward)

    def cols(self, x, start, stop=None):
        """Column slice ``x[:, start:stop]`` (a single column if ``stop`` is None)."""
        stop = start + 1 if stop is None else stop
        if not 0 <= start < stop <= x.shape[1]:
            raise ShapeError(f"column slice {start}:{stop} of shape {x.shape}")
        acc = self._accumulate
        shape = x.shape

        def backward(g):
            full = np.zeros(shape)
            full[:, start:stop] = g
            acc(x, full)

        return self._push(x.value[:, start:stop], "cols", (x,), backward)

    # -- reductions ---------------------------------------------------------

    def sum(self, x, axis=None):
        acc = self._accumulate
        shape = x.shape
        if axis is None:
            out = np.array([[x.value.sum()]])
        else:
            out = x.value.sum(axis=axis, keepdims=True)
        return self._push(out, "sum", (x,), lambda g: acc(x, np.broadcast_to(g, shape)))

    def mean(self, x, axis=None):
        count = x.value.size if axis is None else x.shape[axis]
        return self.sum(x, axis) * (1.0 / count)

    def logsumexp(self, x, axis=1):
        xv = x.value
        top = xv.max(axis=axis, keepdims=True)
        shifted = np.exp(xv - top)
        total = shifted.sum(axis=axis, keepdims=True)
        out = top + np.log(total)
        weights = shifted / total
        acc = self._accumulate
        return self._push(out, "logsumexp", (x,), lambda g: acc(x, g * weights))

    # -- model pieces -------------------------------------------------------

    def gaussian_reparameterize(self, mu, log_var, noise):
        """``mu + exp(0.5 * log_var) * noise`` with caller-supplied standard-normal noise."""
        noise = _as2d(noise)
        if not (mu.shape == log_var.shape == noise.shape):
            raise ShapeError(f"reparameterize shapes {mu.shape}, {log_var.shape}, {noise.shape}")
        std = np.exp(0.5 * log_var.value)
        acc = self._accumulate

        def backward(g):
            acc(mu, g)
            acc(log_var, g * 0.5 * std * noise)

        return self._push(mu.value + std * noise, "reparameterize", (mu, log_var), backward)

    def bernoulli_recon(self, logits, targets):
        """Batch mean of per-sample summed sigmoid cross-entropy."""
        targets = _as2d(targets)
        if logits.shape != targets.shape:
            raise ShapeError(f"recon shapes {logits.shape} vs {targets.shape}")
        lv = logits.value
        _check_finite(lv, "logits")
        if np.any((targets < 0) | (targets > 1)):
            raise ValueError("targets must lie in [0, 1]")
        n = lv.shape[0]
        out = np.array([[(_softplus(lv) - targets * lv).sum() / n]])
        acc = self._accumulate
        return self._push(out, "bernoulli_recon", (logits,),
                          lambda g: acc(logits, g * (_sigmoid(lv) - targets) / n))

    def gaussian_kl_to_standard(self, mu, log_var):
        """Batch mean of KL(N(mu, exp(log_var)) || N(0, I))."""
        if mu.shape != log_var.shape:
            raise ShapeError(f"kl shapes {mu.shape} vs {log_var.shape}")
        mv, lv = mu.value, log_var.value
        _check_finite(mv, "mu")
        _check_finite(lv, "log_var")
        n = mv.shape[0]
        var = np.exp(lv)
        out = np.array([[0.5 * (var + mv * mv - 1.0 - lv).sum() / n]])
        acc = self._accumulate

        def backward(g):
            acc(mu, g * mv / n)
            acc(log_var, g * 0.5 * (var - 1.0) / n)

        return self._push(out, "gaussian_kl", (mu, log_var), backward)

    # -- backward -----------------------------------------------------------

    def backward(self, loss):
        """Reverse sweep from a scalar node; returns gradients of all params."""
        if loss.shape != (1, 1):
            raise ShapeError(f"loss must be scalar (1, 1), got {loss.shape}")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones((1, 1))
        stop = self.nodes.index(loss) if self.nodes[-1] is not loss else len(self.nodes) - 1
        for node in reversed(self.nodes[:stop + 1]):
            if node.grad is not None and node.backward_fn is not None:
                node.backward_fn(node.grad)
        return {name: self.grad_of(node) for name, node in self.params.items()}

    @staticmethod
    def grad_of(node):
        return np.zeros_like(node.value) if node.grad is None else node.grad


def _check_finite(values, what):
    if not np.all(np.isfinite(values)):
        raise NumericError(f"non-finite values in {what}")


# --------------------------------------------------------------------------
# parameters and optimizer


class ParamSet:
    """Named parameters with Adam moment buffers.

    All parameters live in one flat float64 buffer (``values`` holds reshaped
    views into it) so an optimizer step is a handful of vector operations.
    Values are kept representable in float32, the storage dtype, so a
    checkpoint round-trip is exact.
    """

    def __init__(self, values, store_dtype=np.float32):
        self.store_dtype = store_dtype
        arrays = {k: _as2d(v) for k, v in values.items()}
        self.names = list(arrays)
        self.shapes = {k: a.shape for k, a in arrays.items()}
        total = sum(a.size for a in arrays.values())
        self.flat = np.zeros(total)
        self.values = {}
        self._slices = {}
        pos = 0
        for k, a in arrays.items():
            self._slices[k] = slice(pos, pos + a.size)
            view = self.flat[pos:pos + a.size].reshape(a.shape)
            view[...] = a
            self.values[k] = view
            pos += a.size
        self._round()
        self.m = np.zeros(total)
        self.v = np.zeros(total)
        self.step = 0

    def _round(self):
        if self.store_dtype is not None:
            self.flat[...] = self.flat.astype(self.store_dtype)

    def __getitem__(self, name):
        return self.values[name]

    def __iter__(self):
        return iter(self.names)

    def __len__(self):
        return len(self.names)

    def bind(self, graph, prefix=""):
        """Register every parameter on ``graph``; returns name -> Node."""
        return {k: graph.param(prefix + k, v) for k, v in self.values.items()}

    def flatten(self, grads):
        """Gradient dict -> flat vector aligned with ``self.flat`` (missing = 0)."""
        out = np.zeros(self.flat.shape)
        for name, grad in grads.items():
            if name in self._slices:
                out[self._slices[name]] = np.ravel(grad)
        return out

    def copy(self):
        other = ParamSet({k: v.copy() for k, v in self.values.items()}, self.store_dtype)
        other.m = self.m.copy()
        other.v = self.v.copy()
        other.step = self.step
        return other


@numba.njit(cache=True)
def _adam_kernel(flat, m, v, g, lr, beta1, beta2, eps, corr1, corr2, round32):
    for i in range(flat.shape[0]):
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        value = flat[i] - lr * (m[i] / corr1) / (np.sqrt(v[i] / corr2) + eps)
        if round32:
            value = np.float64(np.float32(value))
        flat[i] = value


def adam_step(params, grads, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place; returns ``params``."""
    g = params.flatten(grads)
    params.step += 1
    t = params.step
    _adam_kernel(params.flat, params.m, params.v, g, float(lr), float(beta1), float(beta2),
                 float(eps), 1.0 - beta1 ** t, 1.0 - beta2 ** t,
                 params.store_dtype is not None)
    return params
