"""Minimal dense-tensor library with reverse-mode automatic differentiation.

Everything is float64 and CPU-bound: the corpora this package targets are
small, and gradient-check fidelity matters more than speed. Tensors record
their creating operation on a tape (one closure per node); ``backward``
sweeps the reachable tape in exact reverse creation order and accumulates
gradients additively across fan-out.

Contract notes:
  * gradients are zeroed by the caller between optimizer steps
    (``zero_grads``); calling ``backward`` twice on one loss raises
  * no operation mutates its inputs
  * a tape and its tensors belong to one thread; independent graphs may
    run on independent threads
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.special import expit

__all__ = [
    "ShapeError",
    "Tensor",
    "add",
    "backward",
    "combine_binary",
    "concat",
    "conv1d_dilated",
    "dense",
    "lstm_sequence",
    "lstm_step",
    "map_unary",
    "matmul",
    "max_axis",
    "mean_axis",
    "mul",
    "pool1d",
    "relu",
    "sigmoid",
    "slice_axis",
    "softmax",
    "tensor_sum",
    "tanh",
    "weighted_softmax_cross_entropy",
    "zero_grads",
]


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


_ids = itertools.count()


class Tensor:
    """Dense n-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._backward = None
        self._parents = ()
        self._id = next(_ids)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all real work happens in the module-level functions
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def sum(self):
        return tensor_sum(self)


def _node(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    """Create a tape node whose gradient rule is ``backward_fn(grad)``."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(loss: Tensor):
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    ``loss`` must be a scalar produced by taped operations. Visits nodes in
    exact reverse creation order, which is a valid reverse-topological order
    because inputs always precede outputs on the tape. Gradients accumulate
    additively across fan-out. A second sweep over the same loss is rejected:
    the tape is single-use and callers zero gradients between steps.
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if getattr(loss, "_backward", None) == "consumed":
        raise RuntimeError("backward already ran on this loss; the tape is single-use")

    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: -t._id)

    _accum(loss, np.ones_like(loss.data))
    for t in nodes:
        fn = t._backward
        if fn is not None and fn != "consumed":
            fn(t.grad if t.grad is not None else np.zeros_like(t.data))
    loss._backward = "consumed"


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# elementwise and linear operations


def add(a, b) -> Tensor:
    """Elementwise sum. Accepts same-shape tensors, a scalar on either side,
    or a (B, m) + (m,) row broadcast (gradient of the vector side sums over
    rows)."""
    a_t, b_t = isinstance(a, Tensor), isinstance(b, Tensor)
    if not a_t and not b_t:
        raise TypeError("add needs at least one Tensor operand")
    if a_t and not b_t:
        c = float(b)

        def back_scalar(g):
            _accum(a, g)

        return _node(a.data + c, (a,), back_scalar)
    if b_t and not a_t:
        return add(b, a)

    if a.shape == b.shape:

        def back_same(g):
            _accum(a, g)
            _accum(b, g)

        return _node(a.data + b.data, (a, b), back_same)

    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:

        def back_rows(g):
            _accum(a, g)
            _accum(b, g.sum(axis=0))

        return _node(a.data + b.data, (a, b), back_rows)
    if b.ndim == 2 and a.ndim == 1 and b.shape[1] == a.shape[0]:
        return add(b, a)

    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product; same shapes, or tensor * scalar.
    Each side's gradient routes through the other's value."""
    a_t, b_t = isinstance(a, Tensor), isinstance(b, Tensor)
    if a_t and not b_t:
        c = float(b)

        def back_scalar(g):
            _accum(a, g * c)

        return _node(a.data * c, (a,), back_scalar)
    if b_t and not a_t:
        return mul(b, a)
    if not a_t and not b_t:
        raise TypeError("mul needs at least one Tensor operand")

    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _node(a.data * b.data, (a, b), back)


def combine_binary(a: Tensor, b: Tensor, f: str) -> Tensor:
    """Elementwise combination of two same-shape tensors, ``f`` in {add, mul}."""
    if f == "add":
        return add(a, b)
    if f == "mul":
        return mul(a, b)
    raise ValueError(f"unknown combine_binary function {f!r}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Supports (m,k)@(k,n), (m,n)@(n,) and (m,)@(m,n).

    Backward rules: dA = G·Bᵀ, dB = Aᵀ·G, specialised to outer products for
    the vector cases.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner extents disagree: {a.shape} @ {b.shape}")

        def back_mm(g):
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)

        return _node(a.data @ b.data, (a, b), back_mm)

    if a.ndim == 2 and b.ndim == 1:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner extents disagree: {a.shape} @ {b.shape}")

        def back_mv(g):
            _accum(a, np.outer(g, b.data))
            _accum(b, a.data.T @ g)

        return _node(a.data @ b.data, (a, b), back_mv)

    if a.ndim == 1 and b.ndim == 2:
        if a.shape[0] != b.shape[0]:
            raise ShapeError(f"matmul: inner extents disagree: {a.shape} @ {b.shape}")

        def back_vm(g):
            _accum(a, b.data @ g)
            _accum(b, np.outer(a.data, g))

        return _node(a.data @ b.data, (a, b), back_vm)

    raise ShapeError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def back(g):
        _accum(x, g * (1.0 - y * y))

    return _node(y, (x,), back)


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)

    def back(g):
        _accum(x, g * y * (1.0 - y))

    return _node(y, (x,), back)


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0.0)

    def back(g):
        _accum(x, g * (x.data > 0.0))

    return _node(y, (x,), back)


_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}


def map_unary(x: Tensor, f: str) -> Tensor:
    """Elementwise activation, ``f`` one of {tanh, sigmoid, relu}."""
    try:
        return _UNARY[f](x)
    except KeyError:
        raise ValueError(f"unknown map_unary function {f!r}") from None


def concat(parts: list, axis: int = 0) -> Tensor:
    """Concatenate tensors along ``axis``; all other extents must agree.
    Backward slices the upstream gradient back to each part."""
    if not parts:
        raise ValueError("concat of an empty list")
    parts = [_as_tensor(p) for p in parts]
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != len(ref) or any(
            p.shape[i] != ref[i] for i in range(p.ndim) if i != axis
        ):
            raise ShapeError(
                f"concat: extent disagreement off axis {axis}: {ref} vs {p.shape}"
            )
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, stop)
            _accum(p, g[tuple(sl)])

    return _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), back)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis; backward scatters into the region."""
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def back(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[sl] = g
            _accum(x, full)

    return _node(x.data[sl].copy(), (x,), back)


def stack_rows(parts: list) -> Tensor:
    """Stack equal-length vectors into a (len(parts), d) matrix."""
    if not parts:
        raise ValueError("stack_rows of an empty list")
    parts = [_as_tensor(p) for p in parts]
    d = parts[0].shape
    for p in parts:
        if p.ndim != 1 or p.shape != d:
            raise ShapeError(f"stack_rows: expected vectors of shape {d}, got {p.shape}")

    def back(g):
        for t, row in zip(parts, g):
            _accum(t, row)

    return _node(np.stack([p.data for p in parts]), tuple(parts), back)


def transpose2d(x: Tensor) -> Tensor:
    """Matrix transpose; backward transposes the upstream gradient back."""
    if x.ndim != 2:
        raise ShapeError(f"transpose2d expects a matrix, got {x.shape}")

    def back(g):
        _accum(x, g.T)

    return _node(x.data.T.copy(), (x,), back)


def tensor_sum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""

    def back(g):
        _accum(x, np.full_like(x.data, float(g)))

    return _node(np.asarray(x.data.sum()), (x,), back)


def mean_axis(x: Tensor, axis: int) -> Tensor:
    """Mean along one axis (axis removed)."""
    n = x.shape[axis]

    def back(g):
        _accum(x, np.repeat(np.expand_dims(g / n, axis), n, axis=axis))

    return _node(x.data.mean(axis=axis), (x,), back)


def max_axis(x: Tensor, axis: int) -> Tensor:
    """Max along one axis; gradient routes to the first maximal index."""
    idx = np.argmax(x.data, axis=axis)  # first index on ties
    y = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def back(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(
            full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis
        )
        _accum(x, full)

    return _node(y, (x,), back)


# ---------------------------------------------------------------------------
# convolution and pooling


def _col_indices(T_out: int, K: int, dilation: int) -> np.ndarray:
    return np.arange(T_out)[:, None] + dilation * np.arange(K)[None, :]


def conv1d_dilated(
    x: Tensor, kernels: Tensor, dilation: int = 1, padding: str = "same"
) -> Tensor:
    """Dilated 1-d convolution.

    ``x`` is (C_in, T) or batched (B, C_in, T); ``kernels`` is
    (C_out, C_in, K). y[o,t] = sum_c sum_k kernels[o,c,k] * x[c, t + k*dilation]
    with zero padding for ``same``; ``valid`` output length is
    T - (K-1)*dilation and requires T to cover the receptive field.
    """
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    if kernels.ndim != 3:
        raise ShapeError(f"kernels must be (C_out, C_in, K), got {kernels.shape}")
    batched = x.ndim == 3
    if not batched and x.ndim != 2:
        raise ShapeError(f"input must be (C_in, T) or (B, C_in, T), got {x.shape}")
    C_out, C_in, K = kernels.shape
    if x.shape[-2] != C_in:
        raise ShapeError(
            f"channel mismatch: input {x.shape} vs kernels {kernels.shape}"
        )
    T = x.shape[-1]
    span = (K - 1) * dilation

    if padding == "same":
        left = span // 2
        pad = [(0, 0)] * (x.ndim - 1) + [(left, span - left)]
        xp = np.pad(x.data, pad)
        T_out = T
    elif padding == "valid":
        if T < span + 1:
            raise ShapeError(
                f"input length {T} shorter than receptive field {span + 1} "
                f"(K={K}, dilation={dilation})"
            )
        xp = x.data
        T_out = T - span
    else:
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")

    Tp = xp.shape[-1]
    tidx = _col_indices(T_out, K, dilation)  # (T_out, K)
    kmat = kernels.data.reshape(C_out, C_in * K)

    if batched:
        B = x.shape[0]
        cols = xp[:, :, tidx]  # (B, C_in, T_out, K)
        M = cols.transpose(0, 2, 1, 3).reshape(B * T_out, C_in * K)
        y = (M @ kmat.T).reshape(B, T_out, C_out).transpose(0, 2, 1)
    else:
        cols = xp[:, tidx]  # (C_in, T_out, K)
        M = cols.transpose(1, 0, 2).reshape(T_out, C_in * K)
        y = (M @ kmat.T).T  # (C_out, T_out)
    y = np.ascontiguousarray(y)

    def back(g):
        if batched:
            gm = g.transpose(0, 2, 1).reshape(B * T_out, C_out)
        else:
            gm = g.T  # (T_out, C_out)
        if kernels.requires_grad:
            _accum(kernels, (gm.T @ M).reshape(C_out, C_in, K))
        if x.requires_grad:
            dM = gm @ kmat  # (., C_in*K)
            # C-order buffer: the scatter below goes through flat reshape
            # views, which silently copy on any other memory layout
            dxp = np.zeros(xp.shape)
            flat_idx = (
                np.arange(C_in)[:, None, None] * Tp + tidx[None, :, :]
            ).reshape(-1)  # aligned with (C_in, T_out, K)
            if batched:
                dcols = dM.reshape(B, T_out, C_in, K).transpose(0, 2, 1, 3)
                np.add.at(
                    dxp.reshape(B, -1),
                    (np.arange(B)[:, None], flat_idx[None, :]),
                    dcols.reshape(B, -1),
                )
            else:
                dcols = dM.reshape(T_out, C_in, K).transpose(1, 0, 2)
                np.add.at(dxp.reshape(-1), flat_idx, dcols.reshape(-1))
            if padding == "same":
                sl = [slice(None)] * x.ndim
                sl[-1] = slice(left, left + T)
                _accum(x, dxp[tuple(sl)])
            else:
                _accum(x, dxp)

    return _node(y, (x, kernels), back)


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias (C,) across the time axis of (C, T) or (B, C, T)."""
    if b.ndim != 1:
        raise ShapeError(f"bias must be a vector, got {b.shape}")
    if x.ndim not in (2, 3) or x.shape[-2] != b.shape[0]:
        raise ShapeError(f"bias {b.shape} does not match channels of {x.shape}")
    col = b.data[:, None] if x.ndim == 2 else b.data[None, :, None]

    def back(g):
        if b.requires_grad:
            axes = (1,) if x.ndim == 2 else (0, 2)
            _accum(b, g.sum(axis=axes))
        _accum(x, g)

    return _node(x.data + col, (x, b), back)


def pool1d(x: Tensor, kind: str, window: int, stride: int) -> Tensor:
    """Windowed 1-d pooling over the last axis of a (C, T) or (B, C, T) input.

    ``max`` routes the gradient to the argmax position (first index on ties);
    ``mean`` spreads it uniformly.
    """
    if kind not in ("max", "mean"):
        raise ValueError(f"pool kind must be 'max' or 'mean', got {kind!r}")
    T = x.shape[-1]
    if window > T:
        raise ShapeError(f"pool window {window} exceeds input length {T}")
    T_out = (T - window) // stride + 1
    tidx = np.arange(T_out)[:, None] * stride + np.arange(window)[None, :]
    cols = x.data[..., tidx]  # (..., T_out, window)

    if kind == "mean":
        y = cols.mean(axis=-1)

        def back(g):
            full = np.zeros_like(x.data)
            np.add.at(full, (..., tidx), (g / window)[..., None] * np.ones(window))
            _accum(x, full)

    else:
        amax = np.argmax(cols, axis=-1)  # first max
        y = np.take_along_axis(cols, amax[..., None], axis=-1).squeeze(-1)

        def back(g):
            full = np.zeros_like(x.data)
            pos = np.take_along_axis(
                np.broadcast_to(tidx, cols.shape), amax[..., None], axis=-1
            ).squeeze(-1)
            lead = tuple(
                np.arange(n).reshape((-1,) + (1,) * (x.ndim - 1 - i))
                for i, n in enumerate(x.shape[:-1])
            )
            np.add.at(full, lead + (pos,), g)
            _accum(x, full)

    return _node(y, (x,), back)


def dense(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """Fully connected layer W·x + b for x (n,); rows through Wᵀ for x (B, n)."""
    m, n = W.shape
    if b.shape != (m,):
        raise ShapeError(f"bias shape {b.shape} does not match weight rows {m}")
    if x.ndim == 1:
        if x.shape[0] != n:
            raise ShapeError(f"dense: input {x.shape} vs weights {W.shape}")

        def back_vec(g):
            _accum(W, np.outer(g, x.data))
            _accum(b, g)
            _accum(x, W.data.T @ g)

        return _node(W.data @ x.data + b.data, (x, W, b), back_vec)

    if x.ndim == 2:
        if x.shape[1] != n:
            raise ShapeError(f"dense: input {x.shape} vs weights {W.shape}")

        def back_rows(g):
            _accum(W, g.T @ x.data)
            _accum(b, g.sum(axis=0))
            _accum(x, g @ W.data)

        return _node(x.data @ W.data.T + b.data, (x, W, b), back_rows)

    raise ShapeError(f"dense: input must be 1-d or 2-d, got {x.shape}")


# ---------------------------------------------------------------------------
# recurrent cells


def _lstm_gates(a: np.ndarray, u: int):
    i = expit(a[:u])
    f = expit(a[u : 2 * u])
    g = np.tanh(a[2 * u : 3 * u])
    o = expit(a[3 * u :])
    return i, f, g, o


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, Wx: Tensor, Wh: Tensor, b: Tensor):
    """One LSTM cell step; returns (h, c).

    Gate layout along the 4u preactivation rows is input, forget, candidate,
    output. The fused backward rule lives on the cell-state tensor, which is
    created first: by reverse creation order it runs only after every consumer
    of both outputs has contributed its gradient.
    """
    u = h_prev.shape[0]
    d = x.shape[0]
    if Wx.shape != (4 * u, d) or Wh.shape != (4 * u, u) or b.shape != (4 * u,):
        raise ShapeError(
            f"lstm_step: parameter shapes {Wx.shape}/{Wh.shape}/{b.shape} "
            f"inconsistent with d={d}, u={u}"
        )
    if c_prev.shape != (u,):
        raise ShapeError(f"lstm_step: c_prev {c_prev.shape} does not match u={u}")

    a = Wx.data @ x.data + Wh.data @ h_prev.data + b.data
    i, f, g, o = _lstm_gates(a, u)
    c_val = f * c_prev.data + i * g
    tc = np.tanh(c_val)
    h_holder = {}

    def back_cell(gc):
        gh = h_holder["h"].grad
        if gh is None:
            gh = np.zeros(u)
        do = gh * tc
        dc = gc + gh * o * (1.0 - tc * tc)
        da = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev.data * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                do * o * (1.0 - o),
            ]
        )
        _accum(Wx, np.outer(da, x.data))
        _accum(Wh, np.outer(da, h_prev.data))
        _accum(b, da)
        _accum(x, Wx.data.T @ da)
        _accum(h_prev, Wh.data.T @ da)
        _accum(c_prev, dc * f)

    c = _node(c_val, (x, h_prev, c_prev, Wx, Wh, b), back_cell)
    h = _node(o * tc, (c,), lambda gh: None)
    h_holder["h"] = h
    return h, c


def lstm_sequence(
    xs: Tensor,
    Wx: Tensor,
    Wh: Tensor,
    b: Tensor,
    return_sequence: bool = False,
) -> Tensor:
    """Fold the LSTM cell over a (T, d) input starting from zero state.

    Returns the (T, u) hidden sequence, or the last hidden state (u,).
    A single tape node: the backward is full backpropagation through time.
    """
    T, d = xs.shape
    if T < 1:
        raise ShapeError("lstm_sequence needs at least one time step")
    u = Wh.shape[1]
    if Wx.shape != (4 * u, d) or Wh.shape != (4 * u, u) or b.shape != (4 * u,):
        raise ShapeError(
            f"lstm_sequence: parameter shapes {Wx.shape}/{Wh.shape}/{b.shape} "
            f"inconsistent with d={d}, u={u}"
        )

    hs = np.zeros((T, u))
    cs = np.zeros((T, u))
    gates = np.zeros((T, 4, u))
    h = np.zeros(u)
    c = np.zeros(u)
    for t in range(T):
        a = Wx.data @ xs.data[t] + Wh.data @ h + b.data
        i, f, g, o = _lstm_gates(a, u)
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t, 0], gates[t, 1], gates[t, 2], gates[t, 3] = i, f, g, o
        cs[t] = c
        hs[t] = h

    def back(grad):
        dhs = grad if return_sequence else None
        dh_next = np.zeros(u) if return_sequence else grad.copy()
        dc_next = np.zeros(u)
        dWx = np.zeros_like(Wx.data)
        dWh = np.zeros_like(Wh.data)
        db = np.zeros_like(b.data)
        dxs = np.zeros_like(xs.data)
        for t in range(T - 1, -1, -1):
            i, f, g, o = gates[t]
            c_prev = cs[t - 1] if t > 0 else np.zeros(u)
            h_prev = hs[t - 1] if t > 0 else np.zeros(u)
            tc = np.tanh(cs[t])
            dh = dh_next + (dhs[t] if dhs is not None else 0.0)
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            da = np.concatenate(
                [
                    dc * g * i * (1.0 - i),
                    dc * c_prev * f * (1.0 - f),
                    dc * i * (1.0 - g * g),
                    do * o * (1.0 - o),
                ]
            )
            dWx += np.outer(da, xs.data[t])
            dWh += np.outer(da, h_prev)
            db += da
            dxs[t] = Wx.data.T @ da
            dh_next = Wh.data.T @ da
            dc_next = dc * f
        _accum(Wx, dWx)
        _accum(Wh, dWh)
        _accum(b, db)
        _accum(xs, dxs)

    out = hs if return_sequence else hs[-1]
    return _node(out, (xs, Wx, Wh, b), back)


# ---------------------------------------------------------------------------
# loss

def softmax(v: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis of a plain array (not taped)."""
    e = np.exp(v - np.max(v, axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def weighted_softmax_cross_entropy(
    logits: Tensor, true_class, class_weights, reduction: str = "mean"
) -> Tensor:
    """Class-weighted softmax cross-entropy, fused for a stable backward.

    For 1-d logits (K,) and an integer label: loss = -w[y]·log softmax(logits)[y],
    gradient w[y]·(softmax - onehot). For 2-d logits (B, K) with a label array,
    per-sample losses are combined per ``reduction`` ("mean" or "sum").
    """
    w = class_weights.data if isinstance(class_weights, Tensor) else np.asarray(
        class_weights, dtype=np.float64
    )
    if np.any(w <= 0):
        raise ValueError("class weights must be positive")

    if logits.ndim == 1:
        K = logits.shape[0]
        if K < 2:
            raise ShapeError(f"need at least 2 classes, got {K}")
        y = int(true_class)
        if not 0 <= y < K:
            raise IndexError(f"true_class {y} out of range [0, {K})")
        p = softmax(logits.data)
        loss = -w[y] * np.log(p[y])

        def back_one(g):
            d = p.copy()
            d[y] -= 1.0
            _accum(logits, float(g) * w[y] * d)

        return _node(np.asarray(loss), (logits,), back_one)

    if logits.ndim == 2:
        B, K = logits.shape
        ys = np.asarray(true_class, dtype=np.int64)
        if ys.shape != (B,):
            raise ShapeError(f"labels {ys.shape} do not match logits {logits.shape}")
        if np.any((ys < 0) | (ys >= K)):
            raise IndexError("a label is out of range")
        p = softmax(logits.data)
        wy = w[ys]
        losses = -wy * np.log(p[np.arange(B), ys])
        scale = 1.0 / B if reduction == "mean" else 1.0
        loss = losses.sum() * scale

        def back_batch(g):
            d = p.copy()
            d[np.arange(B), ys] -= 1.0
            _accum(logits, float(g) * scale * wy[:, None] * d)

        return _node(np.asarray(loss), (logits,), back_batch)

    raise ShapeError(f"logits must be 1-d or 2-d, got {logits.shape}")
