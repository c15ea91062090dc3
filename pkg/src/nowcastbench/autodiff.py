"""Minimal reverse-mode automatic differentiation over numpy arrays.

Double precision throughout, with just enough operations for the toy
forecasters: broadcast arithmetic, (batched) matmul, fused linear, layer norm
and attention kernels, relu/gelu, softmax, reshape/transpose, and a scalar
mean for losses. Gradients accumulate into ``Tensor.grad`` during
``backward``.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (the adjoint of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


_grad_enabled = True


class no_grad:
    """Context that skips graph construction for forward-only passes."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        # extended precision passes through so finite-difference oracles can
        # evaluate the same forward graph with less rounding noise
        if arr.dtype != np.longdouble:
            arr = arr.astype(np.float64, copy=False)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph construction helpers --------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @staticmethod
    def _result(data, parents, backward) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @staticmethod
    def _accum(t: "Tensor", g: np.ndarray) -> None:
        if not t.requires_grad:
            return
        if t.grad is None:
            t.grad = np.array(g, dtype=np.float64)  # own the buffer
        else:
            t.grad += g

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        a, b = self, Tensor._lift(other)

        def backward(g):
            Tensor._accum(a, _unbroadcast(g, a.data.shape))
            Tensor._accum(b, _unbroadcast(g, b.data.shape))

        return Tensor._result(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self, Tensor._lift(other)

        def backward(g):
            Tensor._accum(a, _unbroadcast(g, a.data.shape))
            Tensor._accum(b, _unbroadcast(-g, b.data.shape))

        return Tensor._result(a.data - b.data, (a, b), backward)

    def __mul__(self, other):
        a, b = self, Tensor._lift(other)

        def backward(g):
            Tensor._accum(a, _unbroadcast(g * b.data, a.data.shape))
            Tensor._accum(b, _unbroadcast(g * a.data, b.data.shape))

        return Tensor._result(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __neg__(self):
        a = self

        def backward(g):
            Tensor._accum(a, -g)

        return Tensor._result(-a.data, (a,), backward)

    def __truediv__(self, other):
        a, b = self, Tensor._lift(other)

        def backward(g):
            Tensor._accum(a, _unbroadcast(g / b.data, a.data.shape))
            Tensor._accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return Tensor._result(a.data / b.data, (a, b), backward)

    def __matmul__(self, other):
        a, b = self, Tensor._lift(other)

        def backward(g):
            Tensor._accum(a, _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape))
            Tensor._accum(b, _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape))

        return Tensor._result(a.data @ b.data, (a, b), backward)

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        def backward(g):
            Tensor._accum(a, g.reshape(a.data.shape))

        return Tensor._result(a.data.reshape(shape), (a,), backward)

    def transpose(self, axes):
        a = self
        inverse = tuple(np.argsort(axes))

        def backward(g):
            Tensor._accum(a, g.transpose(inverse))

        return Tensor._result(a.data.transpose(axes), (a,), backward)

    # -- nonlinearities and reductions --------------------------------------

    def relu(self):
        a = self
        mask = a.data > 0

        def backward(g):
            Tensor._accum(a, g * mask)

        return Tensor._result(np.where(mask, a.data, 0.0), (a,), backward)

    def gelu(self):
        """tanh-approximation GELU; smooth everywhere, so finite differences
        never straddle a kink."""
        a = self
        c = np.sqrt(2.0 / np.pi)
        x = a.data
        x2 = x * x
        t = np.tanh(c * (x + 0.044715 * (x2 * x)))

        def backward(g):
            sech2 = 1.0 - t * t
            d_inner = c * (1.0 + 3 * 0.044715 * x2)
            Tensor._accum(a, g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner))

        return Tensor._result(0.5 * x * (1.0 + t), (a,), backward)

    def mean(self):
        a = self
        n = a.data.size

        def backward(g):
            Tensor._accum(a, np.full(a.data.shape, float(g) / n))

        return Tensor._result(a.data.mean(), (a,), backward)

    def backward(self) -> None:
        """Reverse-mode accumulation from a scalar output."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Fused ``x @ weight (+ bias)``; 3-D inputs backpropagate through a
    single flattened matmul rather than a stacked one."""
    xv, w = x.data, weight.data
    out = xv @ w
    if bias is not None:
        out = out + bias.data

    def backward(g):
        if xv.ndim == 3:
            g2 = g.reshape(-1, g.shape[-1])
            Tensor._accum(x, (g2 @ w.T).reshape(xv.shape))
            Tensor._accum(weight, xv.reshape(-1, xv.shape[-1]).T @ g2)
            if bias is not None:
                Tensor._accum(bias, g2.sum(axis=0))
        else:
            Tensor._accum(x, g @ w.T)
            Tensor._accum(weight, xv.T @ g)
            if bias is not None:
                Tensor._accum(bias, g.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, backward)


def softmax(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        Tensor._accum(x, y * (g - inner))

    return Tensor._result(y, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis with learnable gain and bias."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def backward(g):
        Tensor._accum(gain, _unbroadcast(g * xhat, gain.data.shape))
        Tensor._accum(bias, _unbroadcast(g, bias.data.shape))
        gx = g * gain.data
        mean_gx = gx.mean(axis=-1, keepdims=True)
        mean_gx_xhat = (gx * xhat).mean(axis=-1, keepdims=True)
        Tensor._accum(x, inv * (gx - mean_gx - xhat * mean_gx_xhat))

    return Tensor._result(xhat * gain.data + bias.data, (x, gain, bias), backward)


def residual_layer_norm(a: Tensor, b: Tensor, gain: Tensor, bias: Tensor,
                        eps: float = 1e-5) -> Tensor:
    """layer_norm(a + b) in one node; a and b must share a shape."""
    x = a.data + b.data
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def backward(g):
        Tensor._accum(gain, _unbroadcast(g * xhat, gain.data.shape))
        Tensor._accum(bias, _unbroadcast(g, bias.data.shape))
        gx = g * gain.data
        mean_gx = gx.mean(axis=-1, keepdims=True)
        mean_gx_xhat = (gx * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (gx - mean_gx - xhat * mean_gx_xhat)
        Tensor._accum(a, dx)
        Tensor._accum(b, dx)

    return Tensor._result(xhat * gain.data + bias.data, (a, b, gain, bias), backward)


def scaled_attention(q: Tensor, k: Tensor, v: Tensor, scale: float,
                     bias_terms=()) -> Tensor:
    """Fused scaled dot-product attention with scalar-weighted additive biases.

    ``bias_terms`` is a sequence of (scalar Tensor, constant array) pairs; the
    constant must broadcast to the score tensor along the key axis. This is
    the performance path of the hook-based composition in models.attention_forward
    and is property-tested equal to it.
    """
    qd, kd, vd = q.data, k.data, v.data
    scores = (qd @ kd.swapaxes(-1, -2)) * scale
    consts = []
    for scalar, const in bias_terms:
        c = np.asarray(const)
        scores = scores + scalar.data * c  # keep the scalar's dtype (FD runs long)
        consts.append((scalar, c))
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    attn = e / e.sum(axis=-1, keepdims=True)
    out = attn @ vd

    def backward(g):
        d_attn = g @ vd.swapaxes(-1, -2)
        Tensor._accum(v, attn.swapaxes(-1, -2) @ g)
        inner = (d_attn * attn).sum(axis=-1, keepdims=True)
        d_scores = attn * (d_attn - inner)
        Tensor._accum(q, (d_scores @ kd) * scale)
        Tensor._accum(k, (d_scores.swapaxes(-1, -2) @ qd) * scale)
        for scalar, c in consts:
            if scalar.requires_grad:
                Tensor._accum(scalar, np.asarray((d_scores * c).sum()))

    parents = (q, k, v) + tuple(scalar for scalar, _ in consts)
    return Tensor._result(out, parents, backward)


class Adam:
    """Adam with bias correction; state is keyed by parameter identity."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
