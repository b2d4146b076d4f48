"""Small reverse-mode autodiff engine for the layer set used by the OTO networks.

Activations are ``(n, c, h, w)`` arrays.  Every op records a closure that
pushes the output gradient back to its inputs; :meth:`Tensor.backward` walks
the graph in reverse topological order.  Arrays keep whatever float dtype
they are created with (float32 by default, float64 for gradient checks).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an op."""


class Tensor:
    """An array plus an optional gradient buffer and the op that produced it."""

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Back-propagate from this tensor (a scalar loss unless ``grad`` is given)."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not _needs_grad(parent):
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # operator sugar for tests and scripts
    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __neg__(self) -> Tensor:
        return negate(self)


class Parameter(Tensor):
    """A learnable tensor with its SGD momentum buffer.

    ``decay`` marks whether weight decay applies (conv weights only);
    ``lr_mult`` scales the learning rate for this tensor alone.
    """

    def __init__(self, data, name: str, decay: bool = False, dtype=np.float32, lr_mult: float = 1.0):
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)
        self.decay = decay
        self.lr_mult = lr_mult
        self.momentum_buffer = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if any(_needs_grad(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def negate(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    # np.maximum propagates NaN, so a diverged input cannot be silently zeroed
    return _make(np.maximum(x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def scale_alpha(x: Tensor, alpha: Tensor) -> Tensor:
    """``alpha * x`` for a single learnable scalar ``alpha``."""
    if alpha.data.size != 1:
        raise ShapeError(f"scale_alpha expects a scalar alpha, got shape {alpha.shape}")
    a = alpha.data.reshape(())

    def backward(g):
        return g * a, np.asarray(np.sum(g * x.data), dtype=alpha.dtype).reshape(alpha.shape)

    return _make(x.data * a, (x, alpha), backward)


def concat(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis."""
    sizes = [t.shape[1] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return _make(np.concatenate([t.data for t in xs], axis=1), tuple(xs), backward)


# ---------------------------------------------------------------------------
# convolution


def _im2col(x: np.ndarray) -> np.ndarray:
    """Columns of shape (c * 9, n * h * w) for a 3x3, pad-1 window; row order (c, ki, kj)."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1))).transpose(1, 0, 2, 3)
    cols = np.empty((c, 9, n, h, w), dtype=x.dtype)
    for k in range(9):
        di, dj = divmod(k, 3)
        cols[:, k] = xp[:, :, di:di + h, dj:dj + w]
    return cols.reshape(c * 9, n * h * w)


def _conv_cols(cols: np.ndarray, w: np.ndarray, n: int, h: int, wd: int) -> np.ndarray:
    out = w.reshape(w.shape[0], -1) @ cols  # (o, n*h*w)
    return np.ascontiguousarray(out.reshape(w.shape[0], n, h, wd).transpose(1, 0, 2, 3))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, layer: str = "conv2d") -> Tensor:
    """3x3 convolution, stride 1, zero padding 1 (spatial size preserved)."""
    if x.data.ndim != 4:
        raise ShapeError(f"{layer}: expected a 4-D input, got shape {x.shape}")
    out_c, in_c, kh, kw = weight.shape
    if (kh, kw) != (3, 3):
        raise ShapeError(f"{layer}: only 3x3 kernels are supported, got {kh}x{kw}")
    if x.shape[1] != in_c:
        raise ShapeError(f"{layer}: input has {x.shape[1]} channels, weights expect {in_c}")
    if bias.shape != (out_c,):
        raise ShapeError(f"{layer}: bias shape {bias.shape} does not match {out_c} output channels")
    n, _, h, w = x.shape
    wd = weight.data
    cols = _im2col(x.data)
    out = _conv_cols(cols, wd, n, h, w)
    out += bias.data[None, :, None, None]

    def backward(g):
        gx = gw = gb = None
        g2 = g.transpose(1, 0, 2, 3).reshape(out_c, -1)
        if _needs_grad(x):
            # transposed conv == conv with spatially flipped, channel-swapped kernels
            flipped = np.ascontiguousarray(wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            gx = _conv_cols(_im2col(g), flipped, n, h, w)
        if _needs_grad(weight):
            gw = (g2 @ cols.T).reshape(wd.shape)
        if _needs_grad(bias):
            gb = g2.sum(axis=1)
        return gx, gw, gb

    return _make(out.astype(x.dtype, copy=False), (x, weight, bias), backward)


# ---------------------------------------------------------------------------
# normalization


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> RunningStats:
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: RunningStats,
    training: bool,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    """Per-channel batch normalization over (n, h, w).

    In training mode the running statistics are updated in place with
    ``running = momentum * running + (1 - momentum) * batch`` (biased variance).
    """
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: {c} channels but gamma {gamma.shape}, beta {beta.shape}")
    xd = x.data
    if training:
        count = n * h * w
        if count < 2:
            raise ShapeError("batch_norm: training mode needs at least 2 values per channel")
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        stats.mean[...] = momentum * stats.mean + (1 - momentum) * mean
        stats.var[...] = momentum * stats.var + (1 - momentum) * var
    else:
        mean, var = stats.mean, stats.var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gxhat = g * gamma.data[None, :, None, None]
        if training:
            m = n * h * w
            gx = (inv_std[None, :, None, None] / m) * (
                m * gxhat
                - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            gx = gxhat * inv_std[None, :, None, None]
        return gx, ggamma, gbeta

    return _make(out.astype(xd.dtype, copy=False), (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# resampling


def max_pool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties resolve to the first element in row-major order."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(
            f"max_pool2x2: height and width must be even, got {h}x{w}; "
            "crop the image to even dimensions first"
        )
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)  # argmax returns the first maximum
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (gb.reshape(n, c, h, w),)

    return _make(np.ascontiguousarray(out), (x,), backward)


def upsample2x_nearest(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _make(out, (x,), backward)


# ---------------------------------------------------------------------------
# loss


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    _check_same(pred, target, "mse_loss")
    diff = pred.data - target.data
    count = diff.size
    loss = np.asarray(np.mean(diff * diff), dtype=pred.dtype)

    def backward(g):
        gp = (2.0 / count) * g * diff
        return gp.astype(pred.dtype, copy=False), -gp.astype(pred.dtype, copy=False)

    return _make(loss, (pred, target), backward)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    checked: int
    worst: str

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(
    fn: Callable[[], Tensor],
    wrt: Sequence[Tensor],
    step: float = 1e-3,
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = 1e-8,
) -> GradCheckReport:
    """Compare reverse-mode gradients of the scalar ``fn()`` with central differences.

    ``fn`` is re-evaluated for every perturbation, so it must read the current
    ``.data`` of each tensor in ``wrt``.  ``max_entries`` samples that many
    entries per tensor (all entries when None).
    """
    for t in wrt:
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in wrt]
    rng = np.random.default_rng(seed)
    worst_rel, worst_abs, count, worst = 0.0, 0.0, 0, ""
    for t, ga in zip(wrt, analytic):
        flat = t.data.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            picks = np.arange(flat.size)
        else:
            picks = rng.choice(flat.size, size=max_entries, replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + step
            fp = float(fn().data)
            flat[i] = orig - step
            fm = float(fn().data)
            flat[i] = orig
            num = (fp - fm) / (2 * step)
            a = float(ga.reshape(-1)[i])
            rel = float(relative_error(np.array(a), np.array(num), floor))
            count += 1
            worst_abs = max(worst_abs, abs(a - num))
            if rel > worst_rel:
                worst_rel = rel
                worst = f"{t.name or 'tensor'}[{i}]: analytic={a:.6g} numeric={num:.6g}"
    return GradCheckReport(worst_rel, worst_abs, count, worst)
