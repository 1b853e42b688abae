"""Minimal reverse-mode automatic differentiation over numpy arrays.

Forward passes build a tape of :class:`Var` nodes; :func:`backward`
replays it once in reverse topological order and accumulates cotangents.
Only the operations the compressed layers need are provided, the central
one being a general pairwise ``tensordot`` whose adjoint handles
arbitrary contracted-axis lists.
"""

from __future__ import annotations

from math import prod

import numpy as np

__all__ = [
    "Var",
    "constant",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "tensordot",
    "reshape",
    "transpose",
    "getitem",
    "zero_pad2d",
    "relu",
    "sigmoid",
    "tanh",
    "maxpool2x2",
    "softmax_cross_entropy",
    "MultiplyCounter",
]


class Var:
    """A tape node: a value plus the recipe for its parent cotangents."""

    __slots__ = ("value", "parents", "vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim


def constant(value) -> Var:
    return Var(value)


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def backward(out: Var, seed=None) -> dict[int, np.ndarray]:
    """Accumulate d(out)/d(node) for every node reachable from ``out``.

    Returns a mapping from ``id(var)`` to its cotangent; use
    ``grads[id(v)]``. ``seed`` defaults to ones over out's shape.
    """
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {}
    if seed is None:
        seed = np.ones_like(out.value)
    grads[id(out)] = np.asarray(seed, dtype=np.float64)
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return grads


class MultiplyCounter:
    """Counts scalar multiplications performed by instrumented ops."""

    def __init__(self):
        self.multiplies = 0

    def add_contraction(self, out_size: int, contracted: int):
        self.multiplies += int(out_size) * int(contracted)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out = Var(a.value + b.value, (a, b))
    out.vjp = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    return out


def sub(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out = Var(a.value - b.value, (a, b))
    out.vjp = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
    return out


def mul(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out = Var(a.value * b.value, (a, b))
    out.vjp = lambda g: (
        _unbroadcast(g * b.value, a.shape),
        _unbroadcast(g * a.value, b.shape),
    )
    return out


def scale(a, c: float) -> Var:
    a = _as_var(a)
    out = Var(a.value * c, (a,))
    out.vjp = lambda g: (g * c,)
    return out


def _normalize_axes(axes, a_ndim: int, b_ndim: int):
    if isinstance(axes, int):
        axes_a = list(range(a_ndim - axes, a_ndim))
        axes_b = list(range(axes))
    else:
        axes_a, axes_b = axes
        axes_a = [axes_a] if isinstance(axes_a, int) else list(axes_a)
        axes_b = [axes_b] if isinstance(axes_b, int) else list(axes_b)
    axes_a = [ax % a_ndim for ax in axes_a]
    axes_b = [ax % b_ndim for ax in axes_b]
    return axes_a, axes_b


def tensordot(a, b, axes, counter: MultiplyCounter | None = None) -> Var:
    """Differentiable ``np.tensordot`` with paired contracted-axis lists."""
    a, b = _as_var(a), _as_var(b)
    axes_a, axes_b = _normalize_axes(axes, a.ndim, b.ndim)
    value = np.tensordot(a.value, b.value, axes=(axes_a, axes_b))
    if counter is not None:
        contracted = prod(a.shape[ax] for ax in axes_a)
        counter.add_contraction(value.size, contracted)

    a_free = [i for i in range(a.ndim) if i not in axes_a]
    b_free = [i for i in range(b.ndim) if i not in axes_b]

    def vjp(g):
        # d/da: contract g's b-free axes with b's free axes, then restore
        # a's original axis order (contracted axes come back via pairing).
        g_b_positions = list(range(len(a_free), len(a_free) + len(b_free)))
        da_raw = np.tensordot(g, b.value, axes=(g_b_positions, b_free))
        b_contr_sorted = sorted(axes_b)
        src_for_a_axis = {}
        for pos, ax in enumerate(a_free):
            src_for_a_axis[ax] = pos
        for pair, ax in enumerate(axes_a):
            src_for_a_axis[ax] = len(a_free) + b_contr_sorted.index(axes_b[pair])
        da = np.transpose(da_raw, [src_for_a_axis[ax] for ax in range(a.ndim)])

        g_a_positions = list(range(len(a_free)))
        db_raw = np.tensordot(a.value, g, axes=(a_free, g_a_positions))
        a_contr_sorted = sorted(axes_a)
        src_for_b_axis = {}
        for pos, ax in enumerate(b_free):
            src_for_b_axis[ax] = len(axes_a) + pos
        for pair, ax in enumerate(axes_b):
            src_for_b_axis[ax] = a_contr_sorted.index(axes_a[pair])
        db = np.transpose(db_raw, [src_for_b_axis[ax] for ax in range(b.ndim)])
        return da, db

    out = Var(value, (a, b))
    out.vjp = vjp
    return out


def reshape(a, shape) -> Var:
    a = _as_var(a)
    shape = tuple(shape)
    out = Var(a.value.reshape(shape), (a,))
    out.vjp = lambda g: (g.reshape(a.shape),)
    return out


def transpose(a, order) -> Var:
    a = _as_var(a)
    order = tuple(order)
    inverse = tuple(np.argsort(order))
    out = Var(np.transpose(a.value, order), (a,))
    out.vjp = lambda g: (np.transpose(g, inverse),)
    return out


def getitem(a, index) -> Var:
    """Basic (non-repeating) slicing/indexing."""
    a = _as_var(a)
    out = Var(a.value[index], (a,))

    def vjp(g):
        da = np.zeros(a.shape)
        da[index] += g
        return (da,)

    out.vjp = vjp
    return out


def zero_pad2d(a, pad_h: int, pad_w: int) -> Var:
    """Zero-pad the two spatial axes of a (batch, H, W, C) array."""
    a = _as_var(a)
    widths = ((0, 0), (pad_h, pad_h), (pad_w, pad_w), (0, 0))
    out = Var(np.pad(a.value, widths), (a,))
    b, h, w, c = a.shape
    sl = (
        slice(None),
        slice(pad_h, pad_h + h),
        slice(pad_w, pad_w + w),
        slice(None),
    )
    out.vjp = lambda g: (g[sl],)
    return out


def relu(a) -> Var:
    a = _as_var(a)
    mask = a.value > 0
    out = Var(np.where(mask, a.value, 0.0), (a,))
    out.vjp = lambda g: (g * mask,)
    return out


def sigmoid(a) -> Var:
    a = _as_var(a)
    x = a.value
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Var(s, (a,))
    out.vjp = lambda g: (g * s * (1.0 - s),)
    return out


def tanh(a) -> Var:
    a = _as_var(a)
    t = np.tanh(a.value)
    out = Var(t, (a,))
    out.vjp = lambda g: (g * (1.0 - t * t),)
    return out


def maxpool2x2(a) -> Var:
    """2x2 max pooling with stride 2 on (batch, H, W, C); H, W must be even."""
    a = _as_var(a)
    b, h, w, c = a.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2x2 needs even spatial dims, got {(h, w)}")
    windows = a.value.reshape(b, h // 2, 2, w // 2, 2, c)
    windows = windows.transpose(0, 1, 3, 5, 2, 4).reshape(b, h // 2, w // 2, c, 4)
    idx = windows.argmax(axis=-1)
    out_val = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        gw = np.zeros((b, h // 2, w // 2, c, 4))
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gw = gw.reshape(b, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        return (gw.reshape(b, h, w, c),)

    out = Var(out_val, (a,))
    out.vjp = vjp
    return out


def softmax_cross_entropy(logits, labels) -> Var:
    """Mean softmax cross-entropy. ``labels`` are integer class ids."""
    logits = _as_var(logits)
    labels = np.asarray(labels)
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    expz = np.exp(z)
    probs = expz / expz.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    picked = z[np.arange(n), labels]
    losses = np.log(expz.sum(axis=1)) - picked
    out = Var(losses.mean(), (logits,))

    def vjp(g):
        dlogits = probs.copy()
        dlogits[np.arange(n), labels] -= 1.0
        return (dlogits * (float(g) / n),)

    out.vjp = vjp
    return out
