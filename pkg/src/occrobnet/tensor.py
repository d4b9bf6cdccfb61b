"""Dense float64 tensors with a recorded op graph and reverse-mode gradients.

Every op here is a plain function returning a new :class:`Tensor`; when any
input requires gradients the result keeps a closure that maps the upstream
gradient to gradients of its inputs.  :func:`backward` walks the graph in
reverse topological order.  :func:`finite_difference_grad` re-evaluates the
forward map only and shares no code with the backward closures.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, UnsupportedOpError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    # make ``ndarray <op> Tensor`` dispatch to the reflected Tensor operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_scalar(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)


def _raise_scalar(t: Tensor):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


class Parameter(Tensor):
    """A trainable leaf tensor; ``grad`` always has the value's shape."""

    __slots__ = ()

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape})"


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,))


def absolute(x: Tensor) -> Tensor:
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def norm_rows(x: Tensor) -> Tensor:
    """Euclidean norm over the last axis; zero-length rows get zero gradient."""
    out = np.sqrt((x.data * x.data).sum(axis=-1))

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out[..., None] > 0, x.data / safe[..., None], 0.0) * g[..., None],)

    return _make(out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


# ---------------------------------------------------------------------------
# reductions and normalisation


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a matrix, stabilised by subtracting the row max."""
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got shape {x.shape}")
    return softmax(x, axis=1)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _make(out, (x,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis; optional affine ``gain``/``bias``."""
    centred = x - mean(x, axis=-1, keepdims=True)
    var = mean(square(centred), axis=-1, keepdims=True)
    out = centred / sqrt(var + eps)
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return out


# ---------------------------------------------------------------------------
# shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    return _make(x.data.T.copy(), (x,), lambda g: (g.T,))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    inverse = np.argsort(axes)
    return _make(np.ascontiguousarray(np.transpose(x.data, axes)), (x,),
                 lambda g: (np.transpose(g, inverse),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, dtype=np.float64), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        other = [s for i, s in enumerate(t.shape) if i != ax]
        first = [s for i, s in enumerate(tensors[0].shape) if i != ax]
        if t.ndim != ndim or other != first:
            raise DimensionError(
                f"concat along axis {axis}: incompatible shapes {tensors[0].shape} and {t.shape}"
            )
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors,
                 lambda g: tuple(np.split(g, splits, axis=ax)))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack two H x W x C maps along the channel axis."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[:2] != b.shape[:2]:
        raise DimensionError(f"concat_channels needs equal spatial extents: {a.shape} vs {b.shape}")
    return concat([a, b], axis=2)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour upsampling of an H x W x C map."""
    out = x.data.repeat(2, axis=0).repeat(2, axis=1)

    def backward(g):
        h, w, c = x.shape
        return (g.reshape(h, 2, w, 2, c).sum(axis=(1, 3)),)

    return _make(out, (x,), backward)


# ---------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Same-padded cross-correlation of ``x`` (H,W,Cin) with ``w`` (k,k,Cin,Cout)."""
    if w.ndim != 4 or w.shape[0] != w.shape[1]:
        raise DimensionError(f"conv2d weights must be k x k x Cin x Cout, got {w.shape}")
    k = w.shape[0]
    if k not in (1, 3):
        raise UnsupportedOpError(f"conv2d supports kernel sizes 1 and 3, got {k}")
    if x.ndim != 3 or x.shape[2] != w.shape[2]:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, weights {w.shape}")
    h, wd, cin = x.shape
    cout = w.shape[3]
    if k == 1:
        xs = x.data[::stride, ::stride]
        oh, ow = xs.shape[:2]
        cols = xs.reshape(oh * ow, cin)
        out = (cols @ w.data.reshape(cin, cout)).reshape(oh, ow, cout)

        def backward(g):
            g2 = g.reshape(oh * ow, cout)
            dx = np.zeros_like(x.data)
            dx[::stride, ::stride] = (g2 @ w.data.reshape(cin, cout).T).reshape(oh, ow, cin)
            return dx, (cols.T @ g2).reshape(w.shape)

        return _make(out, (x, w), backward)

    pad = np.pad(x.data, ((1, 1), (1, 1), (0, 0)))
    oh = (h - 1) // stride + 1
    ow = (wd - 1) // stride + 1
    # (oh, ow, 3, 3, cin) window stack
    cols = np.empty((oh, ow, 3, 3, cin))
    for dy in range(3):
        for dx_ in range(3):
            cols[:, :, dy, dx_, :] = pad[dy:dy + stride * oh:stride, dx_:dx_ + stride * ow:stride]
    cols2 = cols.reshape(oh * ow, 9 * cin)
    wmat = w.data.reshape(9 * cin, cout)
    out = (cols2 @ wmat).reshape(oh, ow, cout)

    def backward(g):
        g2 = g.reshape(oh * ow, cout)
        dw = (cols2.T @ g2).reshape(w.shape)
        dcols = (g2 @ wmat.T).reshape(oh, ow, 3, 3, cin)
        dpad = np.zeros_like(pad)
        for dy in range(3):
            for dx_ in range(3):
                dpad[dy:dy + stride * oh:stride, dx_:dx_ + stride * ow:stride] += dcols[:, :, dy, dx_, :]
        return dpad[1:-1, 1:-1], dw

    return _make(out, (x, w), backward)


# ---------------------------------------------------------------------------
# composite helpers


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else out + bias


def mlp_forward(x: Tensor, layers: Sequence[tuple[Tensor, Tensor | None]]) -> Tensor:
    """Apply linear layers with ReLU between them (none after the last)."""
    for i, (weight, bias) in enumerate(layers):
        x = linear(x, weight, bias)
        if i < len(layers) - 1:
            x = relu(x)
    return x


# ---------------------------------------------------------------------------
# gradients


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable ``Parameter.grad``."""
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad = node.grad + g
            continue
        node.grad = g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


def finite_difference_grad(f: Callable[[], float | Tensor], p: Parameter, step: float = 1e-5,
                           indices: Sequence[tuple[int, ...]] | None = None) -> np.ndarray:
    """Central-difference estimate of d f / d p.

    ``f`` takes no arguments and reads ``p`` through closure; it must be
    deterministic.  With ``indices`` only those entries are probed and a 1-D
    array in the same order is returned; otherwise the full gradient.
    """
    if step <= 0:
        raise ContractError("finite-difference step must be positive")

    def evaluate() -> float:
        with no_grad():
            value = f()
        return float(value.data.reshape(-1)[0]) if isinstance(value, Tensor) else float(value)

    probe = list(np.ndindex(p.shape)) if indices is None else [tuple(i) for i in indices]
    estimates = np.empty(len(probe))
    for n, idx in enumerate(probe):
        original = p.data[idx]
        p.data[idx] = original + step
        f_plus = evaluate()
        p.data[idx] = original - step
        f_minus = evaluate()
        p.data[idx] = original
        estimates[n] = (f_plus - f_minus) / (2.0 * step)
    return estimates.reshape(p.shape) if indices is None else estimates


def uniform_init(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=tuple(shape))
