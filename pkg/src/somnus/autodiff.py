"""Reverse-mode automatic differentiation on numpy arrays.

Every op builds a node holding its parents and a closure mapping the
upstream gradient to one gradient per parent. There is no broadcasting:
operands of elementwise ops must have identical shapes, and bias terms are
folded into the ops that need them (``dense``, ``conv2d``, ``deconv2d``,
``layer_norm``).
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import BoundsError, ShapeError

_DTYPE = np.float64


def set_default_dtype(dtype):
    """Switch the float type of newly created tensors (float64 or float32)."""
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"unsupported dtype {dtype}")
    _DTYPE = dtype.type


def default_dtype():
    return _DTYPE


class Tensor:
    """n-dimensional array that records how it was computed."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.dtype.kind in "iub":
            arr = arr.astype(np.int64, copy=False)
            requires_grad = False
        elif arr.dtype != _DTYPE:
            arr = arr.astype(_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_integer(self):
        return self.data.dtype.kind == "i"

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False, name=None):
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape):
    return Tensor(np.zeros(shape, dtype=_DTYPE))


def _make(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def custom_op(data, parents, backward):
    """Wrap a precomputed array as an op output with a user-supplied
    backward closure ``g -> tuple of parent grads``."""
    return _make(np.asarray(data, dtype=_DTYPE), parents, backward)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}", a.shape, b.shape)


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b):
    _same_shape("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    _same_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a, alpha):
    alpha = float(alpha)
    return _make(a.data * alpha, (a,), lambda g: (g * alpha,))


def relu(x):
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0).astype(x.data.dtype, copy=False),
                 (x,), lambda g: (g * mask,))


def _sigmoid(a):
    # exp overflow for very negative inputs yields the correct limit 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-a))


def sigmoid(x):
    y = _sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x):
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def reshape(x, shape):
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}", old, shape) from None
    return _make(y, (x,), lambda g: (g.reshape(old),))


def transpose(x, axes):
    inv = np.argsort(axes)
    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (g.transpose(inv),))


def concat(tensors, axis=-1):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: empty input list")
    ax = axis % tensors[0].ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape}", ref, t.shape)
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def take(x, start, stop, axis=-1):
    """Contiguous slice ``[start:stop]`` along ``axis``."""
    ax = axis % x.ndim
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _make(x.data[idx].copy(), (x,), backward)


def sum_all(x):
    shape = x.shape
    return _make(np.asarray(x.data.sum()), (x,),
                 lambda g: (np.full(shape, g, dtype=x.data.dtype),))


def mean(x, axis):
    """Mean over ``axis`` (int or tuple), dropping the reduced axes."""
    axes = (axis,) if np.isscalar(axis) else tuple(axis)
    axes = tuple(a % x.ndim for a in axes)
    count = int(np.prod([x.shape[a] for a in axes]))
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axes), shape) / count,)

    return _make(x.data.mean(axis=axes), (x,), backward)


def repeat_steps(x, steps):
    """(B, H) -> (B, steps, H) by explicit copying."""
    if x.ndim != 2:
        raise ShapeError(f"repeat_steps expects rank 2, got {x.shape}", x.shape)
    y = np.repeat(x.data[:, None, :], steps, axis=1)
    return _make(y, (x,), lambda g: (g.sum(axis=1),))


def avg_pool2d(x, k):
    b, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"avg_pool2d: {h}x{w} not divisible by {k}", x.shape)
    y = x.data.reshape(b, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def backward(g):
        up = np.repeat(np.repeat(g, k, axis=2), k, axis=3)
        return (up / (k * k),)

    return _make(y, (x,), backward)


# ---------------------------------------------------------------------------
# linear maps


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimension mismatch {a.shape} x {b.shape}",
                         a.shape, b.shape)
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def dense(x, w, b=None):
    """``x @ w + b`` on the last axis of ``x``; leading axes are batch axes."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense: input width {x.shape[-1]} does not match weight {w.shape}",
                         x.shape, w.shape)
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias {b.shape} for weight {w.shape}", b.shape, w.shape)
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    wd = w.data
    y = x2 @ wd
    if b is not None:
        y = y + b.data
    y = y.reshape(lead + (w.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(x.shape)
        gw = x2.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _make(y, parents, backward)


def _conv_out(size, k, stride, pad):
    span = size + 2 * pad - k
    if span < 0 or span % stride:
        return None
    return span // stride + 1


def conv2d(x, w, b=None, stride=1, padding=0):
    """Cross-correlation of NCHW input with OIKK weights."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected NCHW and OIKK, got {x.shape}, {w.shape}",
                         x.shape, w.shape)
    n, c, h, wd_ = x.shape
    o, ci, k, k2 = w.shape
    if ci != c or k != k2:
        raise ShapeError(f"conv2d: channel mismatch input {x.shape} weight {w.shape}",
                         x.shape, w.shape)
    if b is not None and b.shape != (o,):
        raise ShapeError(f"conv2d: bias {b.shape} for {o} output channels", b.shape, w.shape)
    ho, wo = _conv_out(h, k, stride, padding), _conv_out(wd_, k, stride, padding)
    if not ho or not wo:
        raise ShapeError(f"conv2d: non-integer or empty output for input {x.shape}, "
                         f"kernel {k}, stride {stride}, padding {padding}", x.shape, w.shape)
    cols = kernels.im2col(x.data, k, stride, padding, ho, wo)
    wmat = w.data.reshape(o, -1)
    y = wmat @ cols
    if b is not None:
        y += b.data[:, None]
    out = np.ascontiguousarray(y.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, -1)
        gx = kernels.col2im(wmat.T @ g2, x.shape, k, stride, padding, ho, wo)
        gw = (g2 @ cols.T).reshape(w.shape)
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, backward)


def deconv2d(x, w, b=None, stride=1, padding=0):
    """Transposed convolution of NCHW input with IOKK weights.

    Output size is ``(H - 1) * stride - 2 * padding + K``.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"deconv2d: expected NCHW and IOKK, got {x.shape}, {w.shape}",
                         x.shape, w.shape)
    n, ci, h, wd_ = x.shape
    i, o, k, k2 = w.shape
    if ci != i or k != k2:
        raise ShapeError(f"deconv2d: channel mismatch input {x.shape} weight {w.shape}",
                         x.shape, w.shape)
    if b is not None and b.shape != (o,):
        raise ShapeError(f"deconv2d: bias {b.shape} for {o} output channels", b.shape, w.shape)
    ho = (h - 1) * stride - 2 * padding + k
    wo = (wd_ - 1) * stride - 2 * padding + k
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"deconv2d: empty output for input {x.shape}, kernel {k}, "
                         f"stride {stride}, padding {padding}", x.shape, w.shape)
    rows = np.ascontiguousarray(x.data.transpose(1, 0, 2, 3)).reshape(i, -1)
    wmat = w.data.reshape(i, -1)
    out = kernels.col2im(wmat.T @ rows, (n, o, ho, wo), k, stride, padding, h, wd_)
    if b is not None:
        out += b.data.reshape(1, o, 1, 1)

    def backward(g):
        gcols = kernels.im2col(np.ascontiguousarray(g), k, stride, padding, h, wd_)
        gx = np.ascontiguousarray((wmat @ gcols).reshape(i, n, h, wd_).transpose(1, 0, 2, 3))
        gw = (rows @ gcols.T).reshape(w.shape)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, backward)


# ---------------------------------------------------------------------------
# normalisation, recurrence


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalise over the trailing axis, then apply ``gain`` and ``bias``."""
    d = x.shape[-1]
    if d == 0:
        raise ShapeError("layer_norm: zero-length feature axis", x.shape)
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} for features {d}",
                         gain.shape, bias.shape, x.shape)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    y = xh * gain.data + bias.data

    def backward(g):
        gd = gain.data
        gxh = g * gd
        gx = inv * (gxh - gxh.mean(axis=-1, keepdims=True)
                    - xh * (gxh * xh).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xh).sum(axis=lead), g.sum(axis=lead)

    return _make(y, (x, gain, bias), backward)


def lstm_cell(x_t, h_prev, c_prev, w, b):
    """One LSTM step built from primitive ops.

    ``w`` is ``(X + H, 4H)`` with gate blocks ordered input, forget,
    candidate, output; ``b`` is ``(4H,)``.
    """
    hdim = h_prev.shape[-1]
    if c_prev.shape != h_prev.shape:
        raise ShapeError(f"lstm_cell: h {h_prev.shape} vs c {c_prev.shape}",
                         h_prev.shape, c_prev.shape)
    if w.shape != (x_t.shape[-1] + hdim, 4 * hdim) or b.shape != (4 * hdim,):
        raise ShapeError(f"lstm_cell: weight {w.shape} / bias {b.shape} do not fit "
                         f"input {x_t.shape} and hidden {h_prev.shape}",
                         w.shape, x_t.shape, h_prev.shape)
    z = dense(concat([x_t, h_prev], axis=-1), w, b)
    i = sigmoid(take(z, 0, hdim))
    f = sigmoid(take(z, hdim, 2 * hdim))
    g = tanh(take(z, 2 * hdim, 3 * hdim))
    o = sigmoid(take(z, 3 * hdim, 4 * hdim))
    c_t = add(mul(f, c_prev), mul(i, g))
    h_t = mul(o, tanh(c_t))
    return h_t, c_t


def lstm_sequence(x, w, b):
    """Run an LSTM from zero state over ``x`` of shape (B, T, X).

    Fused single node with hand-written backpropagation through time; the
    result matches unrolling :func:`lstm_cell`. Returns (B, T, H).
    """
    bsz, steps, xdim = x.shape
    hdim = b.shape[0] // 4
    if w.shape != (xdim + hdim, 4 * hdim) or b.shape != (4 * hdim,):
        raise ShapeError(f"lstm_sequence: weight {w.shape} / bias {b.shape} do not fit "
                         f"input width {xdim}", w.shape, b.shape, x.shape)
    wd, bd = w.data, b.data
    dt = x.data.dtype
    h = np.zeros((bsz, hdim), dtype=dt)
    c = np.zeros((bsz, hdim), dtype=dt)
    hs = np.empty((bsz, steps, hdim), dtype=dt)
    cache = []
    for t in range(steps):
        xh = np.concatenate([x.data[:, t], h], axis=1)
        z = xh @ wd + bd
        ig = _sigmoid(z[:, :hdim])
        fg = _sigmoid(z[:, hdim:2 * hdim])
        gg = np.tanh(z[:, 2 * hdim:3 * hdim])
        og = _sigmoid(z[:, 3 * hdim:])
        c_prev = c
        c = fg * c_prev + ig * gg
        tc = np.tanh(c)
        h = og * tc
        hs[:, t] = h
        cache.append((xh, ig, fg, gg, og, c_prev, tc))

    def backward(grad):
        gx = np.empty_like(x.data)
        gw = np.zeros_like(wd)
        gb = np.zeros_like(bd)
        dh_next = np.zeros((bsz, hdim), dtype=dt)
        dc_next = np.zeros((bsz, hdim), dtype=dt)
        dz = np.empty((bsz, 4 * hdim), dtype=dt)
        for t in range(steps - 1, -1, -1):
            xh, ig, fg, gg, og, c_prev, tc = cache[t]
            dh = grad[:, t] + dh_next
            dc = dc_next + dh * og * (1.0 - tc * tc)
            dz[:, :hdim] = dc * gg * ig * (1.0 - ig)
            dz[:, hdim:2 * hdim] = dc * c_prev * fg * (1.0 - fg)
            dz[:, 2 * hdim:3 * hdim] = dc * ig * (1.0 - gg * gg)
            dz[:, 3 * hdim:] = dh * tc * og * (1.0 - og)
            dc_next = dc * fg
            gw += xh.T @ dz
            gb += dz.sum(axis=0)
            dxh = dz @ wd.T
            gx[:, t] = dxh[:, :xdim]
            dh_next = dxh[:, xdim:]
        return gx, gw, gb

    return _make(hs, (x, w, b), backward)


# ---------------------------------------------------------------------------
# classification pieces


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), backward)


def argmax(x, axis=-1):
    """Index of the maximum along ``axis``; ties go to the lowest index.

    The result is an integer tensor with no graph edges, so nothing
    upstream of it receives gradient through this path.
    """
    if x.shape[axis] == 0:
        raise ShapeError("argmax: empty axis", x.shape)
    return Tensor(np.argmax(x.data, axis=axis))


def embedding_lookup(table, ids):
    """Gather rows of ``table`` (V, D) for integer ``ids`` of any shape."""
    idx = ids.data if isinstance(ids, Tensor) else np.asarray(ids)
    idx = idx.astype(np.int64, copy=False)
    vocab = table.shape[0]
    bad = (idx < 0) | (idx >= vocab)
    if bad.any():
        pos = tuple(int(p) for p in np.argwhere(bad)[0])
        raise BoundsError(f"embedding_lookup: id {int(idx[pos])} at position {pos} "
                          f"outside vocabulary of size {vocab}", position=list(pos))
    shape = table.shape

    def backward(g):
        gt = np.zeros(shape, dtype=g.dtype)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, shape[1]))
        return (gt,)

    return _make(table.data[idx], (table,), backward)


def _labels(labels):
    lab = labels.data if isinstance(labels, Tensor) else np.asarray(labels)
    return lab.astype(np.int64, copy=False)


def cross_entropy(logits, labels):
    """Mean negative log-softmax of the true class over the batch."""
    lab = _labels(labels)
    n, k = logits.shape
    if lab.shape != (n,):
        raise ShapeError(f"cross_entropy: labels {lab.shape} for logits {logits.shape}",
                         lab.shape, logits.shape)
    bad = (lab < 0) | (lab >= k)
    if bad.any():
        pos = int(np.argmax(bad))
        raise BoundsError(f"cross_entropy: label {int(lab[pos])} at index {pos} "
                          f"outside [0, {k})", position=pos)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(n)
    loss = -logp[rows, lab].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, lab] -= 1.0
        return (grad * (g / n),)

    return _make(np.asarray(loss), (logits,), backward)


def mse(a, b):
    _same_shape("mse", a, b)
    diff = a.data - b.data
    count = diff.size

    def backward(g):
        ga = diff * (2.0 * g / count)
        return ga, -ga

    return _make(np.asarray((diff * diff).mean()), (a, b), backward)


# ---------------------------------------------------------------------------
# graph traversal


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, grad=None):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor
    that requires grad."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}", loss.shape)
    if not loss.requires_grad:
        return
    seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.data.dtype)
    grads = {id(loss): seed}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        # arrays are never mutated in place, so sharing g is safe
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# finite-difference oracle


@dataclass
class GradcheckReport:
    """Max relative error per input: ``|analytic - numeric|_inf`` over
    ``max(|analytic|_inf, |numeric|_inf)``."""

    errors: dict = field(default_factory=dict)
    rel_tol: float = 1e-4

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self):
        return all(np.isfinite(e) and e <= self.rel_tol for e in self.errors.values())


def _scalarize(out, rng_seed):
    if out.data.size == 1:
        return reshape(out, ()) if out.shape != () else out
    proj = np.random.default_rng(rng_seed).standard_normal(out.shape)
    return sum_all(mul(out, Tensor(proj)))


def gradcheck(f, inputs, rel_tol=1e-4, eps=1e-5, seed=0):
    """Compare the analytic gradient of ``f(*inputs)`` with central
    differences. Non-scalar outputs are contracted with a fixed random
    tensor first."""
    inputs = list(inputs)
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.grad = None
    loss = _scalarize(f(*inputs), seed)
    backward(loss)
    report = GradcheckReport(rel_tol=rel_tol)
    for idx, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = _scalarize(f(*inputs), seed).item()
            flat[j] = orig - eps
            down = _scalarize(f(*inputs), seed).item()
            flat[j] = orig
            nflat[j] = (up - down) / (2 * eps)
        diff = np.abs(analytic - numeric).max(initial=0.0)
        denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
        err = 0.0 if diff == 0 else diff / max(denom, 1e-300)
        report.errors[t.name or f"input{idx}"] = float(err)
    return report
