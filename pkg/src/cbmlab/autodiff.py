"""Minimal reverse-mode automatic differentiation over numpy arrays.

Exactly the operator set the CBM pipeline needs: dense layers, 3x3
stride-1 pad-1 convolution, 2x2 max pooling, relu/sigmoid, and the three
losses. Everything is float64. Gradients flow to parameters and to inputs
(input gradients drive the attacks).

Backward accumulates into ``.grad``; callers reset between steps via
``zero_grad`` / ``Tensor.zero_grad``.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """N-d float64 array node in the computation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor data must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Populate grads of every requires_grad tensor reachable from self.

        Only defined for scalar outputs (losses). Repeated calls without
        zeroing accumulate.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order = []
        seen = set()
        stack = [(self, False)]
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
                stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _result(data, parents, backward):
    out = Tensor(data)
    tracked = tuple(p for p in parents if p.requires_grad or p._parents)
    if tracked:
        out.requires_grad = True
        out._parents = tracked
        out._backward = backward
    return out


def zero_grad(tensors):
    for t in tensors:
        t.zero_grad()


def dense(inp: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """inp[B,I] @ weight[I,O] + bias[O]."""
    if inp.data.ndim != 2 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise ValueError("dense expects 2-d input, 2-d weight, 1-d bias")
    if inp.shape[1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        raise ValueError(
            f"dense shape mismatch: input {inp.shape}, weight {weight.shape}, "
            f"bias {bias.shape}"
        )
    y = inp.data @ weight.data + bias.data
    out = _result(y, (inp, weight, bias), None)

    def backward():
        g = out.grad
        if inp.requires_grad or inp._parents:
            inp._accumulate(g @ weight.data.T)
        if weight.requires_grad:
            weight._accumulate(inp.data.T @ g)
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0))

    out._backward = backward
    return out


def _im2col(x):
    # x: [B,C,H,W] padded by 1 -> columns [B,H,W,C,3,3]
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    s0, s1, s2, s3 = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp, shape=(b, c, h, w, 3, 3), strides=(s0, s1, s2, s3, s2, s3)
    )
    return cols


def conv2d(inp: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """3x3 cross-correlation, stride 1, pad 1. inp[B,C,H,W], kernel[F,C,3,3]."""
    if inp.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError("conv2d expects 4-d input and kernel")
    if kernel.shape[2:] != (3, 3):
        raise ValueError("conv2d kernel must be 3x3")
    if inp.shape[1] != kernel.shape[1]:
        raise ValueError(
            f"conv2d channel mismatch: input {inp.shape[1]}, kernel {kernel.shape[1]}"
        )
    if bias.shape != (kernel.shape[0],):
        raise ValueError("conv2d bias must have one entry per filter")
    cols = _im2col(inp.data)  # [B,C,H,W,3,3] after transpose below
    y = np.einsum("bchwij,fcij->bfhw", cols, kernel.data, optimize=True)
    y += bias.data[None, :, None, None]
    out = _result(y, (inp, kernel, bias), None)

    def backward():
        g = out.grad  # [B,F,H,W]
        if kernel.requires_grad:
            kernel._accumulate(np.einsum("bchwij,bfhw->fcij", cols, g, optimize=True))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if inp.requires_grad or inp._parents:
            # full correlation of grad with flipped kernel
            gcols = _im2col(g)  # [B,F,H,W,3,3]
            kflip = kernel.data[:, :, ::-1, ::-1]
            inp._accumulate(
                np.einsum("bfhwij,fcij->bchw", gcols, kflip, optimize=True)
            )

    out._backward = backward
    return out


def maxpool2(inp: Tensor) -> Tensor:
    """2x2 stride-2 max pool; ties route gradient to the lowest flat index."""
    if inp.data.ndim != 4:
        raise ValueError("maxpool2 expects 4-d input")
    b, c, h, w = inp.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 requires even spatial dims, got {h}x{w}")
    # windows[..., k] enumerates the 4 cells in input flat order
    windows = inp.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(b, c, h // 2, w // 2, 4)
    arg = windows.argmax(axis=-1)  # argmax returns first max: lowest flat index
    y = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    out = _result(y, (inp,), None)

    def backward():
        g = np.zeros((b, c, h // 2, w // 2, 4))
        np.put_along_axis(g, arg[..., None], out.grad[..., None], axis=-1)
        g = g.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        inp._accumulate(g.reshape(b, c, h, w))

    out._backward = backward
    return out


def relu(inp: Tensor) -> Tensor:
    mask = inp.data > 0
    out = _result(inp.data * mask, (inp,), None)

    def backward():
        inp._accumulate(out.grad * mask)

    out._backward = backward
    return out


def sigmoid(inp: Tensor) -> Tensor:
    s = _sigmoid(inp.data)
    out = _result(s, (inp,), None)

    def backward():
        inp._accumulate(out.grad * s * (1.0 - s))

    out._backward = backward
    return out


def _sigmoid(z):
    # stable in both tails
    pos = z >= 0
    s = np.empty_like(z)
    s[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    s[~pos] = e / (1.0 + e)
    return s


def reshape(inp: Tensor, shape) -> Tensor:
    out = _result(inp.data.reshape(shape), (inp,), None)

    def backward():
        inp._accumulate(out.grad.reshape(inp.shape))

    out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = _result(a.data + b.data, (a, b), None)

    def backward():
        if a.requires_grad or a._parents:
            a._accumulate(out.grad)
        if b.requires_grad or b._parents:
            b._accumulate(out.grad)

    out._backward = backward
    return out


def scale(inp: Tensor, c: float) -> Tensor:
    out = _result(inp.data * c, (inp,), None)

    def backward():
        inp._accumulate(out.grad * c)

    out._backward = backward
    return out


def tsum(inp: Tensor) -> Tensor:
    out = _result(inp.data.sum(), (inp,), None)

    def backward():
        inp._accumulate(np.full(inp.shape, out.grad))

    out._backward = backward
    return out


def gather_sum(inp: Tensor, indices, sign=1.0) -> Tensor:
    """sign * sum of inp[..., j] over j in indices (last axis)."""
    idx = np.asarray(list(indices), dtype=np.intp)
    out = _result(sign * inp.data[..., idx].sum(), (inp,), None)

    def backward():
        g = np.zeros_like(inp.data)
        g[..., idx] = sign * out.grad
        inp._accumulate(g)

    out._backward = backward
    return out


def bce_loss(logits: Tensor, targets) -> Tensor:
    """Mean binary cross entropy fused with sigmoid on logits."""
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.shape:
        raise ValueError(f"bce target shape {t.shape} != logits {logits.shape}")
    if np.any((t != 0.0) & (t != 1.0)):
        raise ValueError("bce targets must be 0 or 1")
    z = logits.data
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = _result(loss.mean(), (logits,), None)

    def backward():
        logits._accumulate(out.grad * (_sigmoid(z) - t) / z.size)

    out._backward = backward
    return out


def mse_loss(pred: Tensor, targets) -> Tensor:
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != pred.shape:
        raise ValueError(f"mse target shape {t.shape} != pred {pred.shape}")
    d = pred.data - t
    out = _result((d * d).mean(), (pred,), None)

    def backward():
        pred._accumulate(out.grad * 2.0 * d / d.size)

    out._backward = backward
    return out


def softmax_ce_loss(logits: Tensor, labels) -> Tensor:
    """Mean cross entropy over a batch of class logits, log-sum-exp stable.

    logits: [B,K]; labels: length-B int array of class indices.
    """
    if logits.data.ndim != 2:
        raise ValueError("softmax_ce_loss expects [B,K] logits")
    y = np.asarray(labels, dtype=np.intp).reshape(-1)
    b, k = logits.shape
    if y.shape != (b,):
        raise ValueError(f"label count {y.shape} != batch {b}")
    if np.any(y < 0) or np.any(y >= k):
        raise ValueError("label index out of range")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    out = _result((lse - z[np.arange(b), y]).mean(), (logits,), None)

    def backward():
        p = np.exp(z - zmax)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(b), y] -= 1.0
        logits._accumulate(out.grad * p / b)

    out._backward = backward
    return out


class SgdMomentum:
    """param <- param - lr * v, with v <- momentum * v + grad."""

    def __init__(self, params, lr, momentum=0.9):
        if lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= momentum < 1:
            raise ValueError("momentum must be in [0,1)")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data = p.data - self.lr * v

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
