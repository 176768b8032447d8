"""Reverse-mode automatic differentiation over dense float64 tensors.

A Tensor wraps a C-contiguous numpy array (row-major flat storage plus
shape).  Operations executed while a Tape is active append their output
node to the tape; ``backward`` walks the recorded nodes once, in reverse
creation order, which is a valid topological order because inputs are
always created before outputs.

Gradients accumulate additively across uses.  Everything is float64; debug
mode (``set_debug(True)``) additionally asserts finiteness after every op.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ConfigError, DimensionError, InputError, UsageError

_EPS_BCE = 1e-7

_state = threading.local()
_debug = False


def set_debug(flag: bool) -> None:
    global _debug
    _debug = bool(flag)


class Tensor:
    """Dense float64 array with optional gradient, node in a computation tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _validate: bool = True):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if _validate and not np.all(np.isfinite(arr)):
            raise InputError("tensor data must be finite")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, _validate=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of operations; inputs always precede their outputs."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.tapes.pop()
        return False

    @staticmethod
    def active() -> "Tape | None":
        stack = getattr(_state, "tapes", None)
        return stack[-1] if stack else None


def _record(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    if _debug and not np.all(np.isfinite(data)):
        raise InputError("operation produced non-finite values")
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), _validate=False)
    tape = Tape.active()
    if out.requires_grad and tape is not None:
        out._parents = parents
        out._backward = backward_fn
        tape.nodes.append(out)
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate .grad on every requires_grad tensor reachable from ``loss``."""
    if loss.size != 1:
        raise UsageError("backward requires a scalar loss")
    reachable = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) not in reachable:
            reachable.add(id(t))
            stack.extend(t._parents)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if id(node) in reachable and node._backward is not None and node.grad is not None:
            node._backward(node.grad)


class ParameterSet:
    """Named map of trainable tensors; iteration is lexicographic by name."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, t: Tensor) -> Tensor:
        if name in self._params:
            raise UsageError(f"duplicate parameter name: {name}")
        t.requires_grad = True
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def tensors(self) -> list[Tensor]:
        return [self._params[n] for n in self.names()]

    def subset(self, *prefixes: str) -> "ParameterSet":
        out = ParameterSet()
        for name, t in self.items():
            if any(name.startswith(p) for p in prefixes):
                out._params[name] = t
        return out

    def exclude(self, *prefixes: str) -> "ParameterSet":
        out = ParameterSet()
        for name, t in self.items():
            if not any(name.startswith(p) for p in prefixes):
                out._params[name] = t
        return out

    def zero_grads(self) -> None:
        for _, t in self.items():
            t.grad = None

    def ensure_grads(self) -> None:
        """Zero-fill gradients of parameters untouched by the last backward."""
        for _, t in self.items():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)

    def checksum(self) -> bytes:
        import hashlib

        h = hashlib.sha256()
        for name, t in self.items():
            h.update(name.encode())
            h.update(t.data.tobytes())
        return h.digest()


def sgd_step(params: ParameterSet, lr: float) -> None:
    """p <- p - lr * grad for every parameter, then clear gradients.

    Updates rebind to fresh arrays rather than mutating in place: backward
    closures may hold views of the forward-time buffers.
    """
    for name, t in params.items():
        if t.grad is None:
            raise UsageError(f"parameter {name} has no gradient")
    for _, t in params.items():
        t.data = t.data - lr * t.grad
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise / structural ops


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a: Tensor, b: Tensor) -> Tensor:
    # same shape, or b a single row broadcast along axis 0
    if a.shape == b.shape:
        def bw(g):
            _accum(a, g)
            _accum(b, g)
        return _record(a.data + b.data, (a, b), bw)
    if b.data.ndim == a.data.ndim and b.shape[0] == 1 and a.shape[1:] == b.shape[1:]:
        def bw(g):
            _accum(a, g)
            _accum(b, g.sum(axis=0, keepdims=True))
        return _record(a.data + b.data, (a, b), bw)
    raise DimensionError(f"add: incompatible shapes {a.shape} vs {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub: incompatible shapes {a.shape} vs {b.shape}")

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _record(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul: incompatible shapes {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data  # forward-time values

    def bw(g):
        _accum(a, g * bd)
        _accum(b, g * ad)

    return _record(ad * bd, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        _accum(a, g * c)

    return _record(a.data * c, (a,), bw)


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data)  # subgradient 0 at 0

    def bw(g):
        _accum(a, g * sign)

    return _record(np.abs(a.data), (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient at 0 is 0

    def bw(g):
        _accum(a, g * mask)

    return _record(a.data * mask, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - out * out))

    return _record(out, (a,), bw)


def rsqrt(a: Tensor, eps: float = 0.0) -> Tensor:
    """Elementwise 1/sqrt(x + eps); inputs must satisfy x + eps > 0."""
    base = a.data + eps
    if np.any(base <= 0):
        raise InputError("rsqrt requires positive inputs")
    out = 1.0 / np.sqrt(base)

    def bw(g):
        _accum(a, g * (-0.5) * out / base)

    return _record(out, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bw(g):
        _accum(a, g * out * (1.0 - out))

    return _record(out, (a,), bw)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        _accum(a, out * (g - dot))

    return _record(out, (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def bw(g):
        _accum(a, g.reshape(a.data.shape))

    return _record(a.data.reshape(shape), (a,), bw)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def sum_all(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _record(np.asarray(a.data.sum()), (a,), bw)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def bw(g):
        _accum(a, np.broadcast_to(g / n, a.data.shape).copy())

    return _record(np.asarray(a.data.mean()), (a,), bw)


def transpose2d(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError("transpose2d expects a 2-d tensor")

    def bw(g):
        _accum(a, g.T)

    return _record(a.data.T.copy(), (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        _accum(a, g @ bd.T)
        _accum(b, ad.T @ g)

    return _record(ad @ bd, (a, b), bw)


# ---------------------------------------------------------------------------
# network ops


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map [n,p] x [q,p] + [q] -> [n,q]."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: incompatible shapes {x.shape} x {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
    xd, wd = x.data, weight.data
    out = xd @ wd.T + bias.data

    def bw(g):
        gx, gw, gb = _linear_backward(g, xd, wd)
        _accum(x, gx)
        _accum(weight, gw)
        _accum(bias, gb)

    return _record(out, (x, weight, bias), bw)


def _linear_backward(g, x, w):
    return g @ w, g.T @ x, g.sum(axis=0)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation [n,cin,h,w] * [cout,cin,k,k] -> [n,cout,h',w']."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError("conv2d expects 4-d input and weight")
    n, cin, h, w = x.shape
    cout, cin_w, k, k2 = weight.shape
    if k != k2 or cin_w != cin:
        raise DimensionError(f"conv2d: weight {weight.shape} does not match input {x.shape}")
    if bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    if k < 1 or stride < 1 or pad < 0:
        raise ConfigError("conv2d: k >= 1, stride >= 1, pad >= 0 required")
    if (h + 2 * pad - k) % stride or (w + 2 * pad - k) % stride:
        raise ConfigError(
            f"conv2d: non-integral output size for input {h}x{w}, k={k}, stride={stride}, pad={pad}"
        )
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = np.empty((n, cin, k, k, ho, wo), dtype=np.float64)
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = xp[:, :, ki : ki + ho * stride : stride, kj : kj + wo * stride : stride]
    cols2 = cols.reshape(n, cin * k * k, ho * wo)
    wm = weight.data.reshape(cout, cin * k * k)
    out = (wm[None] @ cols2).reshape(n, cout, ho, wo) + bias.data[None, :, None, None]

    def bw(g):
        gx, gw, gb = _conv2d_backward(g, cols2, wm, (n, cin, h, w), k, stride, pad, ho, wo)
        _accum(x, gx)
        _accum(weight, gw.reshape(weight.shape))
        _accum(bias, gb)

    return _record(out, (x, weight, bias), bw)


def _conv2d_backward(g, cols2, wm, x_shape, k, stride, pad, ho, wo):
    n, cin, h, w = x_shape
    cout = wm.shape[0]
    gm = np.ascontiguousarray(g.reshape(n, cout, ho * wo))
    gw = np.matmul(gm, cols2.transpose(0, 2, 1)).sum(axis=0)
    gb = g.sum(axis=(0, 2, 3))
    dcols = (wm.T[None] @ gm).reshape(n, cin, k, k, ho, wo)
    dxp = np.zeros((n, cin, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki : ki + ho * stride : stride, kj : kj + wo * stride : stride] += dcols[:, :, ki, kj]
    gx = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
    return gx, gw, gb


def mean_pool_height(x: Tensor) -> Tensor:
    """Mean along the height axis: [n,c,h,w] -> [n,c,1,w]."""
    if x.data.ndim != 4:
        raise DimensionError("mean_pool_height expects a 4-d tensor")
    h = x.shape[2]
    out = x.data.mean(axis=2, keepdims=True)

    def bw(g):
        _accum(x, np.broadcast_to(g / h, x.data.shape).copy())

    return _record(out, (x,), bw)


def bilinear_sample(feature_map: Tensor, grid) -> Tensor:
    """Bilinear interpolation of [c,h,w] at (x,y) points -> [c,len(grid)].

    Coordinates outside [0,w-1]x[0,h-1] sample zero padding.  Differentiable
    with respect to both the map and the grid coordinates.
    """
    if feature_map.data.ndim != 3:
        raise DimensionError("bilinear_sample expects a [c,h,w] map")
    grid_t = grid if isinstance(grid, Tensor) else Tensor(np.asarray(grid, dtype=np.float64))
    pts = grid_t.data.reshape(-1, 2)
    c, h, w = feature_map.shape
    xs, ys = pts[:, 0], pts[:, 1]
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0

    corners = []
    out = np.zeros((c, pts.shape[0]), dtype=np.float64)
    for dy, dx, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (0, 1, fx * (1 - fy)),
        (1, 0, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xi = x0 + dx
        yi = y0 + dy
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        xi_c = np.clip(xi, 0, w - 1)
        yi_c = np.clip(yi, 0, h - 1)
        vals = feature_map.data[:, yi_c, xi_c] * valid
        out += vals * wgt
        corners.append((xi_c, yi_c, valid, wgt, vals, dx, dy))

    def bw(g):
        if feature_map.requires_grad:
            dmap = np.zeros_like(feature_map.data)
            flat = dmap.reshape(c, h * w)
            for xi_c, yi_c, valid, wgt, _, _, _ in corners:
                contrib = g * wgt * valid
                np.add.at(flat, (slice(None), yi_c * w + xi_c), contrib)
            _accum(feature_map, dmap)
        if grid_t.requires_grad:
            gxy = np.zeros_like(pts)
            for xi_c, yi_c, valid, _, vals, dx, dy in corners:
                # d(weight)/dx and /dy for each corner of the bilinear cell
                dwx = (1.0 if dx == 1 else -1.0) * (fy if dy == 1 else (1 - fy))
                dwy = (1.0 if dy == 1 else -1.0) * (fx if dx == 1 else (1 - fx))
                s = (g * vals).sum(axis=0)
                gxy[:, 0] += s * dwx * valid
                gxy[:, 1] += s * dwy * valid
            _accum(grid_t, gxy.reshape(grid_t.data.shape))

    return _record(out, (feature_map, grid_t), bw)


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean of -log softmax(logits)[target] over rows, log-sum-exp stabilized."""
    if logits.data.ndim != 2:
        raise DimensionError("softmax_cross_entropy expects [n,k] logits")
    n, k = logits.shape
    idx = np.asarray(targets, dtype=np.int64)
    if idx.shape != (n,):
        raise DimensionError(f"expected {n} target indices, got {idx.shape}")
    if idx.min(initial=0) < 0 or idx.max(initial=0) >= k:
        raise InputError("target class index out of range")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sez = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(sez)
    loss = -logp[np.arange(n), idx].mean()

    def bw(g):
        p = ez / sez
        p[np.arange(n), idx] -= 1.0
        _accum(logits, g * p / n)

    return _record(np.asarray(loss), (logits,), bw)


def binary_cross_entropy(prob: Tensor, labels) -> Tensor:
    """Mean of -[y log p + (1-y) log(1-p)] with p clamped to [eps, 1-eps]."""
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != prob.shape:
        raise DimensionError(f"labels shape {y.shape} != prob shape {prob.shape}")
    p = np.clip(prob.data, _EPS_BCE, 1.0 - _EPS_BCE)
    inside = (prob.data > _EPS_BCE) & (prob.data < 1.0 - _EPS_BCE)
    n = p.size
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p)).mean()

    def bw(g):
        _accum(prob, g * inside * (p - y) / (p * (1.0 - p)) / n)

    return _record(np.asarray(loss), (prob,), bw)
