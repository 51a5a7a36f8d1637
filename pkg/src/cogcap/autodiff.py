"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps an ndarray and records the op that produced it together with
vector-Jacobian closures for its inputs. Backpropagation walks the graph in
reverse topological order. The op set is closed: every differentiable op here
carries its own hand-written backward rule and is finite-difference checked in
the test suite.

Conventions:
  * everything is float64; inputs are coerced on construction
  * any non-finite value produced by a forward op raises NumericalError
  * elementwise ops broadcast only a scalar (0-d) operand or an operand whose
    shape equals the other's shape minus the leading batch dimension; any
    other mismatch raises ShapeError
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf as _erf


class ShapeError(ValueError):
    """Operand shapes incompatible for the requested op."""


class NumericalError(ArithmeticError):
    """A forward op produced NaN or Inf."""


_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _as_f64(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """Node in the autodiff graph: value, gradient slot, and backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False, _prev=(), _vjp=None, _op: str = "leaf"):
        self.data = _as_f64(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._prev: tuple[Tensor, ...] = tuple(_prev)
        self._vjp: Callable[[np.ndarray], tuple] | None = _vjp
        self._op = _op

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- graph construction -------------------------------------------------

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into .grad of every requires_grad node."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar output, got shape {self.shape}")
        grads = _backprop(self)
        for node, g in grads.items():
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g

    # -- operator sugar -----------------------------------------------------

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

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    # method forms used throughout the models
    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def _lift(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return Tensor(float(value))
    raise TypeError(f"cannot lift {type(value).__name__} to Tensor")


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite value produced by op '{op}'")


def _node(data: np.ndarray, prev: Sequence[Tensor], vjp, op: str) -> Tensor:
    _check_finite(data, op)
    req = any(p.requires_grad for p in prev)
    if not req:
        vjp = None  # constant subgraph: record nothing
        prev = ()
    return Tensor(data, requires_grad=req, _prev=prev, _vjp=vjp, _op=op)


# -- backprop engine --------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, child_idx = stack.pop()
        if child_idx == 0:
            if id(node) in visited:
                continue
            visited.add(id(node))
        if child_idx < len(node._prev):
            stack.append((node, child_idx + 1))
            child = node._prev[child_idx]
            if id(child) not in visited:
                stack.append((child, 0))
        else:
            order.append(node)
    return order


def _backprop(output: Tensor) -> dict:
    """Return {node: gradient array} for every node reachable from output.

    Keys are the Tensor objects themselves (an id-keyed side table is kept
    internally so unhashable-by-value nodes with identical data stay distinct).
    """
    order = _topo_order(output)
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    nodes: dict[int, Tensor] = {id(n): n for n in order}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._vjp is None:
            continue
        child_grads = node._vjp(g)
        for child, cg in zip(node._prev, child_grads):
            if cg is None:
                continue
            key = id(child)
            if key in grads:
                grads[key] = grads[key] + cg
            else:
                grads[key] = cg
    return {nodes[k]: v for k, v in grads.items()}


def grad(output: Tensor, params: Sequence[Tensor]) -> list[Tensor]:
    """d(output)/d(p) for each p. Params off the graph get exact zeros."""
    if output.data.size != 1:
        raise ShapeError(f"grad() needs a 1-element output, got shape {output.shape}")
    table = _backprop(output)
    out = []
    for p in params:
        g = table.get(p)
        out.append(Tensor(g.copy() if g is not None else np.zeros_like(p.data)))
    return out


# -- elementwise arithmetic -------------------------------------------------


def _broadcast_plan(a: Tensor, b: Tensor, op: str):
    """Validate the restricted broadcast rule; return reduction axes per side.

    Allowed: identical shapes; a 0-d operand; or one operand matching the
    other's shape with the leading batch axis stripped.
    """
    sa, sb = a.shape, b.shape
    if sa == sb:
        return None, None
    if sa == ():
        return tuple(range(len(sb))), None
    if sb == ():
        return None, tuple(range(len(sa)))
    if len(sa) == len(sb) + 1 and sa[1:] == sb:
        return None, (0,)
    if len(sb) == len(sa) + 1 and sb[1:] == sa:
        return (0,), None
    raise ShapeError(f"op '{op}': shapes {sa} and {sb} do not align (scalar or leading-batch broadcast only)")


def _unbroadcast(g: np.ndarray, axes, shape) -> np.ndarray:
    if axes is None:
        return g
    return g.sum(axis=axes).reshape(shape)


def _elementwise(a: Tensor, b: Tensor, fwd, dfa, dfb, op: str) -> Tensor:
    ra, rb = _broadcast_plan(a, b, op)
    out = fwd(a.data, b.data)

    def vjp(g):
        ga = _unbroadcast(dfa(g, a.data, b.data), ra, a.shape)
        gb = _unbroadcast(dfb(g, a.data, b.data), rb, b.shape)
        return ga, gb

    return _node(out, (a, b), vjp, op)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _elementwise(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _elementwise(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _elementwise(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    return _elementwise(
        a, b,
        lambda x, y: x / y,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
        "div",
    )


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g, o=out: (g * o,), "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _node(out, (a,), lambda g: (g / a.data,), "log")


def power(a: Tensor, exponent: float) -> Tensor:
    p = float(exponent)
    with np.errstate(invalid="ignore"):
        out = np.power(a.data, p)
    return _node(out, (a,), lambda g: (g * p * np.power(a.data, p - 1.0),), "power")


def clamp_max(a: Tensor, hi: float) -> Tensor:
    out = np.minimum(a.data, hi)
    mask = (a.data <= hi).astype(np.float64)
    return _node(out, (a,), lambda g: (g * mask,), "clamp_max")


# -- reductions and reshaping ----------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes)

    def vjp(g):
        ge = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(ge, a.shape).copy(),)

    return _node(out, (a,), vjp, "sum")


def tmean(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    if count == 0:
        raise ShapeError(f"mean over empty axes of shape {a.shape}")
    out = a.data.mean(axis=axes)

    def vjp(g):
        ge = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(ge, a.shape).copy() / count,)

    return _node(out, (a,), vjp, "mean")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = a.data.reshape(shape)
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(int(ax) for ax in axes)
    inv = tuple(np.argsort(axes))
    out = a.data.transpose(axes)
    return _node(out, (a,), lambda g: (g.transpose(inv),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    nd = tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != nd:
            raise ShapeError(f"concat rank mismatch: {tensors[0].shape} vs {t.shape}")
    axis = axis % nd
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tuple(tensors), vjp, "concat")


# -- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Supports (m,k)@(k,n), (B,m,k)@(B,k,n), (B,m,k)@(k,n)."""
    sa, sb = a.shape, b.shape
    ok = (
        (len(sa) == 2 and len(sb) == 2 and sa[1] == sb[0])
        or (len(sa) == 3 and len(sb) == 3 and sa[0] == sb[0] and sa[2] == sb[1])
        or (len(sa) == 3 and len(sb) == 2 and sa[2] == sb[0])
    )
    if not ok:
        raise ShapeError(f"matmul: shapes {sa} and {sb} do not align")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        if len(sa) == 2 and len(sb) == 2:
            return g @ b.data.T, a.data.T @ g
        if len(sa) == 3 and len(sb) == 3:
            return np.matmul(g, b.data.transpose(0, 2, 1)), np.matmul(a.data.transpose(0, 2, 1), g)
        # (B,m,k) @ (k,n): weight gradient sums over the batch
        ga = np.matmul(g, b.data.T)
        gb = np.einsum("bmk,bmn->kn", a.data, g)
        return ga, gb

    return _node(out, (a, b), vjp, "matmul")


def l2_normalize(a: Tensor, eps: float = 0.0) -> Tensor:
    """Normalize along the last axis. Zero rows are an error."""
    norms = np.linalg.norm(a.data, axis=-1, keepdims=True)
    if np.any(norms <= eps):
        raise NumericalError("l2_normalize: zero-norm row")
    out = a.data / norms

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return ((g - out * dot) / norms,)

    return _node(out, (a,), vjp, "l2_normalize")


# -- nonlinearities ---------------------------------------------------------


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    neg = alpha * (np.exp(np.minimum(a.data, 0.0)) - 1.0)
    out = np.where(a.data > 0.0, a.data, neg)
    dlocal = np.where(a.data > 0.0, 1.0, neg + alpha)
    return _node(out, (a,), lambda g: (g * dlocal,), "elu")


def gelu(a: Tensor) -> Tensor:
    # exact erf form; derivative = Phi(x) + x*phi(x)
    x = a.data
    cdf = 0.5 * (1.0 + _erf(x / math.sqrt(2.0)))
    out = x * cdf
    dlocal = cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return _node(out, (a,), lambda g: (g * dlocal,), "gelu")


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _node(out, (a,), vjp, "softmax")


# -- normalization layers ---------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: scale/shift {gamma.shape}/{beta.shape} vs feature dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def vjp(g):
        red = tuple(range(x.ndim - 1))
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        gl = g * gamma.data
        gx = inv * (gl - gl.mean(axis=-1, keepdims=True) - xhat * (gl * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return _node(out, (x, gamma, beta), vjp, "layer_norm")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch norm on (N,C) or (N,C,H,W).

    Train mode normalizes with batch statistics and updates the running
    arrays in place (unbiased variance, torch convention). Eval mode is a
    pure affine map from the running statistics and mutates nothing.
    """
    if x.ndim == 2:
        red = (0,)
        view = (1, -1)
    elif x.ndim == 4:
        red = (0, 2, 3)
        view = (1, -1, 1, 1)
    else:
        raise ShapeError(f"batch_norm expects 2-d or 4-d input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: scale/shift {gamma.shape}/{beta.shape} vs {c} channels")

    if train:
        m = x.data.size // c
        if m < 2:
            raise ShapeError("batch_norm train mode needs at least 2 values per channel")
        mu = x.data.mean(axis=red)
        var = x.data.var(axis=red)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * m / (m - 1)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu.reshape(view)) * inv.reshape(view)
        out = xhat * gamma.data.reshape(view) + beta.data.reshape(view)

        def vjp(g):
            ggamma = (g * xhat).sum(axis=red)
            gbeta = g.sum(axis=red)
            gl = g * gamma.data.reshape(view)
            mean_gl = gl.mean(axis=red).reshape(view)
            mean_glx = (gl * xhat).mean(axis=red).reshape(view)
            gx = inv.reshape(view) * (gl - mean_gl - xhat * mean_glx)
            return gx, ggamma, gbeta

        return _node(out, (x, gamma, beta), vjp, "batch_norm")

    inv = 1.0 / np.sqrt(running_var + eps)
    scale = gamma.data * inv
    shift = beta.data - running_mean * scale
    out = x.data * scale.reshape(view) + shift.reshape(view)

    def vjp_eval(g):
        red_ = red
        gx = g * scale.reshape(view)
        ggamma = (g * (x.data - running_mean.reshape(view)) * inv.reshape(view)).sum(axis=red_)
        gbeta = g.sum(axis=red_)
        return gx, ggamma, gbeta

    return _node(out, (x, gamma, beta), vjp_eval, "batch_norm_eval")


# -- convolution and pooling ------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(N,C,H,W) -> (N, C*kh*kw, OH*OW) patch matrix, stride 1."""
    n, c, h, w = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    sn, sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x, shape=(n, c, oh, ow, kh, kw), strides=(sn, sc, sh, sw, sh, sw), writeable=False
    )
    return windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Valid cross-correlation, stride 1. x (N,Cin,H,W), weight (Cout,Cin,KH,KW)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: input {x.shape} weight {weight.shape}")
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: input channels {cin} vs weight channels {cin_w}")
    if kh > h or kw > w:
        raise ShapeError(f"conv2d: kernel ({kh},{kw}) exceeds input ({h},{w})")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias {bias.shape} vs {cout} output channels")
    oh, ow = h - kh + 1, w - kw + 1
    cols = _im2col(x.data, kh, kw)
    wmat = weight.data.reshape(cout, -1)
    out = (wmat @ cols).reshape(n, cout, oh, ow) + bias.data.reshape(1, cout, 1, 1)

    def vjp(g):
        gmat = g.reshape(n, cout, oh * ow)
        gw = np.einsum("ncp,nkp->ck", gmat, cols).reshape(weight.shape)
        gb = g.sum(axis=(0, 2, 3))
        gcols = np.einsum("ck,ncp->nkp", wmat, gmat).reshape(n, cin, kh, kw, oh, ow)
        gx = np.zeros_like(x.data)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i : i + oh, j : j + ow] += gcols[:, :, i, j]
        return gx, gw, gb

    return _node(out, (x, weight, bias), vjp, "conv2d")


def max_pool2d(x: Tensor, kernel: tuple[int, int], stride: tuple[int, int]) -> Tensor:
    """Max pooling on (N,C,H,W); floor output size; ties go to the first cell."""
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d expects 4-d input, got {x.shape}")
    kh, kw = int(kernel[0]), int(kernel[1])
    sh_, sw_ = int(stride[0]), int(stride[1])
    if kh < 1 or kw < 1 or sh_ < 1 or sw_ < 1:
        raise ShapeError(f"max_pool2d: bad kernel {kernel} / stride {stride}")
    n, c, h, w = x.shape
    if kh > h or kw > w:
        raise ShapeError(f"max_pool2d: kernel ({kh},{kw}) exceeds input ({h},{w})")
    oh = (h - kh) // sh_ + 1
    ow = (w - kw) // sw_ + 1
    sn, sc, sh, sw = x.data.strides
    windows = np.lib.stride_tricks.as_strided(
        x.data,
        shape=(n, c, oh, ow, kh, kw),
        strides=(sn, sc, sh * sh_, sw * sw_, sh, sw),
        writeable=False,
    )
    flat = windows.reshape(n, c, oh, ow, kh * kw)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        gx = np.zeros_like(x.data)
        ki, kj = np.unravel_index(arg, (kh, kw))
        ni, ci, oi, oj = np.indices(arg.shape)
        np.add.at(gx, (ni, ci, oi * sh_ + ki, oj * sw_ + kj), g)
        return (gx,)

    return _node(out, (x,), vjp, "max_pool2d")


# -- attention --------------------------------------------------------------


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention over (B, S, E) token stacks, single head."""
    if not (q.ndim == k.ndim == v.ndim == 3):
        raise ShapeError(f"attention expects 3-d q/k/v, got {q.shape}/{k.shape}/{v.shape}")
    if q.shape[0] != k.shape[0] or q.shape[0] != v.shape[0] or q.shape[2] != k.shape[2] or k.shape[1] != v.shape[1]:
        raise ShapeError(f"attention: shapes {q.shape}/{k.shape}/{v.shape} do not align")
    scale = 1.0 / math.sqrt(q.shape[2])
    scores = mul(matmul(q, transpose(k, (0, 2, 1))), Tensor(scale))
    return matmul(softmax(scores), v)


# -- gradient checking ------------------------------------------------------


def finite_diff_check(fn: Callable[[], Tensor], params: Sequence[Tensor], epsilon: float = 1e-5) -> float:
    """Max relative error between autodiff and central finite differences.

    fn must rebuild the graph from the params' current data on every call and
    return a scalar Tensor. Relative error uses max(|analytic|, |numeric|, 1e-8)
    as the denominator.
    """
    out = fn()
    if out.data.size != 1:
        raise ShapeError(f"finite_diff_check: fn returned shape {out.shape}, need a scalar")
    analytic = [g.data for g in grad(out, params)]
    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = fn().item()
            flat[i] = orig - epsilon
            f_minus = fn().item()
            flat[i] = orig
            num = (f_plus - f_minus) / (2.0 * epsilon)
            an_i = an.reshape(-1)[i]
            if not (math.isfinite(num) and math.isfinite(an_i)):
                raise NumericalError("finite_diff_check: non-finite gradient")
            rel = abs(an_i - num) / max(abs(an_i), abs(num), 1e-8)
            if rel > worst:
                worst = rel
    return worst
