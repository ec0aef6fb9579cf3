"""Minimal dense-tensor reverse-mode autodiff core.

Define-by-run: every op records its parents and a backward closure on the
produced Tensor, so the tape is the implicit DAG of live Tensors. Layout is
row-major [N, C, H, W] throughout. Forward/training code runs in float32;
gradient-check oracles rebuild the same graph in float64.

``backward`` clears gradients of every reachable node at entry, so a second
call recomputes instead of silently accumulating.
"""

from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Shape/axis mismatch in a tensor op."""


class ContractError(ValueError):
    """An op precondition was violated (non-scalar loss, empty batch, ...)."""


class Tensor:
    """N-dimensional array plus optional gradient, node in the autodiff DAG."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=()):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = tuple(_parents)
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, name={self.name})"

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False, name=self.name)

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)


def _as_tensor(x, dtype=np.float32) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _needs_grad(*ts):
    return any(t.requires_grad or t._parents for t in ts)


def _make(out_data, parents, backward_fn):
    out = Tensor(out_data, _parents=[p for p in parents if isinstance(p, Tensor)])
    if _needs_grad(*out._parents):
        out._backward = backward_fn
    else:
        out._parents = ()
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (the reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / linear algebra


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a.dtype)
    try:
        out_data = a.data + b.data
    except ValueError as e:
        raise DimensionError(f"add: incompatible shapes {a.shape} and {b.shape}") from e

    def backward(out):
        g = out.grad
        if a.requires_grad or a._parents:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad or b._parents:
            b._accum(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a.dtype)
    try:
        out_data = a.data * b.data
    except ValueError as e:
        raise DimensionError(f"mul: incompatible shapes {a.shape} and {b.shape}") from e

    def backward(out):
        g = out.grad
        if a.requires_grad or a._parents:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad or b._parents:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def elementwise(a, b, op: str) -> Tensor:
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, b)
    raise ContractError(f"unknown elementwise op {op!r}")


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map: x [N, D] @ weight [D, M] + bias [M]."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise DimensionError("linear expects 2-D input and weight")
    if x.shape[1] != weight.shape[0]:
        raise DimensionError(
            f"linear: inner dimensions differ, input axis 1 is {x.shape[1]} "
            f"but weight axis 0 is {weight.shape[0]}"
        )
    if bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear: bias shape {bias.shape} != ({weight.shape[1]},)")
    out_data = x.data @ weight.data + bias.data

    def backward(out):
        g = out.grad
        if x.requires_grad or x._parents:
            x._accum(g @ weight.data.T)
        if weight.requires_grad or weight._parents:
            weight._accum(x.data.T @ g)
        if bias.requires_grad or bias._parents:
            bias._accum(g.sum(axis=0))

    return _make(out_data, (x, weight, bias), backward)


def reshape(x: Tensor, shape) -> Tensor:
    out_data = x.data.reshape(shape)

    def backward(out):
        x._accum(out.grad.reshape(x.shape))

    return _make(out_data, (x,), backward)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def backward(out):
        pieces = np.split(out.grad, np.cumsum(sizes)[:-1], axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad or t._parents:
                t._accum(piece)

    return _make(out_data, tensors, backward)


def tsum(x: Tensor) -> Tensor:
    out_data = np.asarray(x.data.sum(), dtype=x.dtype)

    def backward(out):
        x._accum(np.full(x.shape, out.grad, dtype=x.dtype))

    return _make(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# activations and loss


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        out_data = np.maximum(x.data, 0)

        def backward(out):
            x._accum(out.grad * (x.data > 0))

    elif kind == "sigmoid":
        # Stable sigmoid via exp(-|x|); outputs stay strictly inside (0, 1).
        d = x.data
        z = np.exp(-np.abs(d))
        out_data = (np.where(d >= 0, 1.0, z) / (1.0 + z)).astype(x.dtype)

        def backward(out):
            x._accum(out.grad * out_data * (1.0 - out_data))

    else:
        raise ContractError(f"unknown activation {kind!r}")
    return _make(out_data, (x,), backward)


def relu(x: Tensor) -> Tensor:
    return activation(x, "relu")


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.data.size == 0:
        raise ContractError("mse_loss: empty batch")
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: shapes {pred.shape} != {target.shape}")
    n = pred.data.size
    diff = pred.data - target.data
    out_data = np.asarray((diff * diff).sum() / n, dtype=pred.dtype)

    def backward(out):
        g = out.grad * 2.0 * diff / n
        if pred.requires_grad or pred._parents:
            pred._accum(g)
        if target.requires_grad or target._parents:
            target._accum(-g)

    return _make(out_data, (pred, target), backward)


# ---------------------------------------------------------------------------
# conv / pool / resize


def _im2col(x, kh, kw, stride, padding):
    n, c, h, w = x.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    s0, s1, s2, s3 = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )
    return cols, oh, ow


def _col2im(dcols, x_shape, kh, kw, stride, padding):
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    oh, ow = dcols.shape[4], dcols.shape[5]
    dxp = np.zeros((n, c, hp, wp), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[:, :, i, j]
    if padding:
        return dxp[:, :, padding : padding + h, padding : padding + w]
    return dxp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    x [N,C,H,W], weight [K,C,kh,kw], bias [K] -> [N,K,H',W'] with
    H' = floor((H + 2p - kh)/stride) + 1.
    """
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d: input must be 4-D [N,C,H,W], got {x.shape}")
    if weight.data.ndim != 4:
        raise DimensionError(f"conv2d: weight must be 4-D [K,C,kh,kw], got {weight.shape}")
    n, c, h, w = x.shape
    k, cw, kh, kw = weight.shape
    if cw != c:
        raise DimensionError(f"conv2d: channel axis mismatch, input C={c} vs weight C={cw}")
    if bias.shape != (k,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({k},)")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(
            f"conv2d: kernel ({kh}x{kw}) exceeds padded spatial extent "
            f"({h + 2 * padding}x{w + 2 * padding})"
        )
    cols, oh, ow = _im2col(x.data, kh, kw, stride, padding)
    mat = cols.reshape(n, c * kh * kw, oh * ow)
    wm = weight.data.reshape(k, c * kh * kw)
    out_data = np.einsum("kd,ndp->nkp", wm, mat, optimize=True).reshape(n, k, oh, ow)
    out_data += bias.data.reshape(1, k, 1, 1)

    def backward(out):
        g = out.grad.reshape(n, k, oh * ow)
        if bias.requires_grad or bias._parents:
            bias._accum(out.grad.sum(axis=(0, 2, 3)))
        if weight.requires_grad or weight._parents:
            dw = np.einsum("nkp,ndp->kd", g, mat, optimize=True)
            weight._accum(dw.reshape(weight.shape))
        if x.requires_grad or x._parents:
            dmat = np.einsum("kd,nkp->ndp", wm, g, optimize=True)
            dcols = dmat.reshape(n, c, kh, kw, oh, ow)
            x._accum(_col2im(dcols, x.shape, kh, kw, stride, padding))

    return _make(out_data, (x, weight, bias), backward)


def pool(x: Tensor, mode: str, window: int = 2, stride: int | None = None) -> Tensor:
    """Spatial pooling. Windowed max/avg, or global modes emitting [N,C,1,1]."""
    if x.data.ndim != 4:
        raise DimensionError(f"pool: input must be 4-D, got {x.shape}")
    n, c, h, w = x.shape
    if mode in ("global_avg", "global_max"):
        if mode == "global_avg":
            out_data = x.data.mean(axis=(2, 3), keepdims=True)

            def backward(out):
                x._accum(np.broadcast_to(out.grad / (h * w), x.shape).astype(x.dtype))

        else:
            out_data = x.data.max(axis=(2, 3), keepdims=True)
            flat = x.data.reshape(n, c, h * w)
            idx = flat.argmax(axis=2)

            def backward(out):
                dx = np.zeros((n, c, h * w), dtype=x.dtype)
                ii, jj = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
                dx[ii, jj, idx] = out.grad.reshape(n, c)
                x._accum(dx.reshape(x.shape))

        return _make(out_data, (x,), backward)

    if mode not in ("max", "avg"):
        raise ContractError(f"unknown pool mode {mode!r}")
    if window > h or window > w:
        raise DimensionError(f"pool: window {window} exceeds spatial extent {h}x{w}")
    stride = stride or window
    cols, oh, ow = _im2col(x.data, window, window, stride, 0)
    win = cols.reshape(n, c, window * window, oh, ow)
    if mode == "avg":
        out_data = win.mean(axis=2)

        def backward(out):
            dwin = np.broadcast_to(
                out.grad[:, :, None] / (window * window), win.shape
            ).astype(x.dtype)
            dcols = dwin.reshape(n, c, window, window, oh, ow)
            x._accum(_col2im(dcols, x.shape, window, window, stride, 0))

    else:
        out_data = win.max(axis=2)
        idx = win.argmax(axis=2)

        def backward(out):
            dwin = np.zeros(win.shape, dtype=x.dtype)
            grid = np.ogrid[:n, :c, :oh, :ow]
            dwin[grid[0], grid[1], idx, grid[2], grid[3]] = out.grad
            dcols = dwin.reshape(n, c, window, window, oh, ow)
            x._accum(_col2im(dcols, x.shape, window, window, stride, 0))

    return _make(out_data, (x,), backward)


def reduce_channel(x: Tensor, mode: str) -> Tensor:
    """Per-pixel reduction over the channel axis -> [N,1,H,W]."""
    if x.data.ndim != 4:
        raise DimensionError(f"reduce_channel: input must be 4-D, got {x.shape}")
    if mode == "avg":
        c = x.shape[1]
        out_data = x.data.mean(axis=1, keepdims=True)

        def backward(out):
            x._accum(np.broadcast_to(out.grad / c, x.shape).astype(x.dtype))

    elif mode == "max":
        out_data = x.data.max(axis=1, keepdims=True)
        idx = x.data.argmax(axis=1)

        def backward(out):
            dx = np.zeros(x.shape, dtype=x.dtype)
            n, _, h, w = x.shape
            grid = np.ogrid[:n, :h, :w]
            dx[grid[0], idx, grid[1], grid[2]] = out.grad[:, 0]
            x._accum(dx)

    else:
        raise ContractError(f"unknown reduce_channel mode {mode!r}")
    return _make(out_data, (x,), backward)


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Corner-aligned bilinear resize: output corners sample input corners."""
    if x.data.ndim != 4:
        raise DimensionError(f"upsample_bilinear: input must be 4-D, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ContractError("upsample_bilinear: target size must be >= 1")
    n, c, h, w = x.shape

    def _axis(in_n, out_n):
        if out_n == 1 or in_n == 1:
            lo = np.zeros(out_n, dtype=np.int64)
            frac = np.zeros(out_n, dtype=np.float64)
        else:
            pos = np.arange(out_n, dtype=np.float64) * (in_n - 1) / (out_n - 1)
            lo = np.floor(pos).astype(np.int64)
            lo = np.minimum(lo, in_n - 2)
            frac = pos - lo
        return lo, frac

    y0, fy = _axis(h, out_h)
    x0, fx = _axis(w, out_w)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = fy.reshape(-1, 1).astype(x.dtype)
    fx = fx.reshape(1, -1).astype(x.dtype)

    d = x.data
    tl = d[:, :, y0[:, None], x0[None, :]]
    tr = d[:, :, y0[:, None], x1[None, :]]
    bl = d[:, :, y1[:, None], x0[None, :]]
    br = d[:, :, y1[:, None], x1[None, :]]
    out_data = (
        tl * (1 - fy) * (1 - fx) + tr * (1 - fy) * fx + bl * fy * (1 - fx) + br * fy * fx
    )

    def backward(out):
        g = out.grad
        dx = np.zeros(x.shape, dtype=x.dtype)
        yy0 = np.broadcast_to(y0[:, None], (out_h, out_w))
        yy1 = np.broadcast_to(y1[:, None], (out_h, out_w))
        xx0 = np.broadcast_to(x0[None, :], (out_h, out_w))
        xx1 = np.broadcast_to(x1[None, :], (out_h, out_w))
        for wgt, yy, xx in (
            ((1 - fy) * (1 - fx), yy0, xx0),
            ((1 - fy) * fx, yy0, xx1),
            (fy * (1 - fx), yy1, xx0),
            (fy * fx, yy1, xx1),
        ):
            np.add.at(dx, (slice(None), slice(None), yy, xx), g * wgt)
        x._accum(dx)

    return _make(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every node reachable from ``loss``.

    Clears existing gradients of the reachable subgraph first, then seeds the
    scalar loss with 1 and runs backward closures in reverse topological order.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    for node in topo:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node)


# ---------------------------------------------------------------------------
# optimizers


class MissingGradError(RuntimeError):
    pass


class SGD:
    def __init__(self, params: dict[str, Tensor], lr: float):
        self.params = params
        self.lr = lr

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                raise MissingGradError(f"parameter {name!r} has no gradient")
            p.data -= self.lr * p.grad


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            if p.grad is None:
                raise MissingGradError(f"parameter {name!r} has no gradient")
            g = p.grad
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            mhat = self.m[name] / (1 - b1 ** self.t)
            vhat = self.v[name] / (1 - b2 ** self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state(self):
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state):
        self.t = int(state["t"])
        self.m = {k: np.asarray(v) for k, v in state["m"].items()}
        self.v = {k: np.asarray(v) for k, v in state["v"].items()}


def optimizer_step(params: dict[str, Tensor], optimizer: str, hyper: dict):
    """One-shot functional update; grads must already be populated."""
    if optimizer == "sgd":
        SGD(params, lr=hyper["lr"]).step()
    elif optimizer == "adam":
        opt = Adam(
            params,
            lr=hyper.get("lr", 1e-4),
            beta1=hyper.get("beta1", 0.9),
            beta2=hyper.get("beta2", 0.999),
            eps=hyper.get("eps", 1e-8),
        )
        opt.step()
    else:
        raise ContractError(f"unknown optimizer {optimizer!r}")
    return params
