"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced; backward()
replays the recording in reverse topological order.  The operation set is
exactly what the classifier needs: broadcast arithmetic, matmul, the SiLU
and softplus nonlinearities, RMS normalization, a depthwise causal
convolution, a fused input-dependent scan, and softmax cross-entropy.

Sequence tensors are time-major, shape (L, B, features), so that each
scan step touches one contiguous slab.

The fused scan accepts an optional buffer tag.  Tagged calls reuse large
intermediate buffers across optimizer steps (the previous step's backward
must have completed, which a plain training loop guarantees); untagged
calls allocate fresh buffers and are always safe.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "grad_enabled",
    "matmul",
    "silu",
    "softplus",
    "neg_exp",
    "rmsnorm",
    "narrow",
    "select_step",
    "mean_steps",
    "dropout",
    "causal_conv1d",
    "selective_scan_fused",
    "softmax_cross_entropy",
    "Workspace",
]

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-mode sweep seeded with d(self)/d(self) = 1."""
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
            for parent in node._parents:
                if parent.requires_grad:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            # free recorded closures as we go; graphs are single-use
            node._backward = None
            node._parents = ()

    def __add__(self, other):
        return _add(self, _wrap(other))

    __radd__ = __add__

    def __mul__(self, other):
        return _mul(self, _wrap(other))

    __rmul__ = __mul__

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to the given shape, inverting numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), backward)


def _mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), backward)


def matmul(x: Tensor, w: Tensor) -> Tensor:
    """x (..., D) @ w (D, M)."""

    def backward(g):
        if x.requires_grad:
            x.accumulate(g @ w.data.T)
        if w.requires_grad:
            flat_x = x.data.reshape(-1, x.data.shape[-1])
            flat_g = g.reshape(-1, g.shape[-1])
            w.accumulate(flat_x.T @ flat_g)

    return _make(x.data @ w.data, (x, w), backward)


def silu(x: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-x.data))
    out = x.data * sig

    def backward(g):
        x.accumulate(g * (sig * (1.0 + x.data * (1.0 - sig))))

    return _make(out, (x,), backward)


def softplus(x: Tensor) -> Tensor:
    # stable log(1 + e^x); spelled out because np.logaddexp is an order of
    # magnitude slower than these primitive ufuncs on large arrays
    out = np.log1p(np.exp(-np.abs(x.data))) + np.maximum(x.data, 0.0)

    def backward(g):
        x.accumulate(g / (1.0 + np.exp(-x.data)))

    return _make(out, (x,), backward)


def neg_exp(x: Tensor) -> Tensor:
    """-exp(x); keeps a trained decay diagonal strictly negative."""
    out = -np.exp(x.data)

    def backward(g):
        x.accumulate(g * out)

    return _make(out, (x,), backward)


def rmsnorm(x: Tensor, gain: Tensor, eps: float = 1e-5) -> Tensor:
    """x * gain / sqrt(mean(x^2) + eps) along the last axis."""
    d = x.data.shape[-1]
    inv = 1.0 / np.sqrt((x.data * x.data).mean(axis=-1, keepdims=True) + eps)
    normed = x.data * inv

    def backward(g):
        if x.requires_grad:
            gg = g * gain.data
            inner = (gg * x.data).sum(axis=-1, keepdims=True)
            x.accumulate(gg * inv - x.data * (inv**3) * inner / d)
        if gain.requires_grad:
            gain.accumulate(_unbroadcast(g * normed, gain.data.shape))

    return _make(normed * gain.data, (x, gain), backward)


def narrow(x: Tensor, start: int, size: int) -> Tensor:
    """Slice [start, start+size) of the last axis."""

    def backward(g):
        full = np.zeros_like(x.data)
        full[..., start:start + size] = g
        x.accumulate(full)

    return _make(np.ascontiguousarray(x.data[..., start:start + size]), (x,), backward)


def select_step(x: Tensor, index: int) -> Tensor:
    """Pick one position along the leading (time) axis."""

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        x.accumulate(full)

    return _make(x.data[index].copy(), (x,), backward)


def mean_steps(x: Tensor) -> Tensor:
    """Average over the leading (time) axis."""
    length = x.data.shape[0]

    def backward(g):
        x.accumulate(np.broadcast_to(g / length, x.data.shape).copy())

    return _make(x.data.mean(axis=0), (x,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; callers skip this op entirely in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must lie in [0, 1)")
    if p == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)

    def backward(g):
        x.accumulate(g * mask)

    return _make(x.data * mask, (x,), backward)


def causal_conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Depthwise causal convolution over time-major input.

    x: (L, B, C); kernel: (C, W).  Output step t sees x[t-W+1 .. t] with
    zeros left of the sequence start; kernel column W-1 multiplies the
    current step.
    """
    length = x.data.shape[0]
    width = kernel.data.shape[1]
    out = np.zeros_like(x.data)
    for w in range(width):
        shift = width - 1 - w
        if shift >= length:
            continue
        out[shift:] += kernel.data[:, w] * x.data[: length - shift]

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for w in range(width):
                shift = width - 1 - w
                if shift >= length:
                    continue
                gx[: length - shift] += kernel.data[:, w] * g[shift:]
            x.accumulate(gx)
        if kernel.requires_grad:
            gk = np.zeros_like(kernel.data)
            for w in range(width):
                shift = width - 1 - w
                if shift >= length:
                    continue
                gk[:, w] = (x.data[: length - shift] * g[shift:]).sum(axis=(0, 1))
            kernel.accumulate(gk)

    return _make(out, (x, kernel), backward)


class Workspace:
    """Shape-keyed pool of reusable ndarray buffers."""

    def __init__(self):
        self._bufs = {}

    def get(self, key, shape, dtype=np.float64) -> np.ndarray:
        buf = self._bufs.get(key)
        if buf is None or buf.shape != tuple(shape) or buf.dtype != dtype:
            buf = np.empty(shape, dtype)
            self._bufs[key] = buf
        return buf

    def clear(self):
        self._bufs.clear()


_shared_ws = Workspace()


def _scan_forward_cached(delta, u, bmat, cmat, a, ws, tag, chunk):
    """Forward scan retaining per-step state and decay for backward."""
    length, batch, d_inner = delta.shape
    n = a.shape[0]
    dtype = delta.dtype
    du = delta * u
    if tag is None:
        hfull = np.empty((length + 1, batch, d_inner, n), dtype)
        decay = np.empty((length, batch, d_inner, n), dtype)
    else:
        hfull = ws.get((tag, "h"), (length + 1, batch, d_inner, n), dtype)
        decay = ws.get((tag, "decay"), (length, batch, d_inner, n), dtype)
    loadc = ws.get(("scratch", "load", dtype), (min(chunk, length), batch, d_inner, n), dtype)
    hfull[0] = 0.0
    for s in range(0, length, chunk):
        e = min(s + chunk, length)
        seg = decay[s:e]
        # einsum spells the same outer products as broadcast multiply but runs
        # its inner loop over the long axis, which is markedly faster here
        np.einsum("lbe,n->lben", delta[s:e], a, out=seg)
        np.exp(seg, out=seg)
        lc = loadc[: e - s]
        np.einsum("lbe,lbn->lben", du[s:e], bmat[s:e], out=lc)
        for t in range(s, e):
            np.multiply(hfull[t], decay[t], out=hfull[t + 1])
            hfull[t + 1] += lc[t - s]
    y = np.einsum("lben,lbn->lbe", hfull[1:], cmat)
    return y, hfull, decay


def _scan_forward_rolling(delta, u, bmat, cmat, a, ws, chunk):
    """Forward scan with rolling chunk buffers; nothing retained."""
    length, batch, d_inner = delta.shape
    n = a.shape[0]
    dtype = delta.dtype
    tc = min(chunk, length)
    du = np.multiply(delta, u, out=ws.get(("roll", "du", dtype), delta.shape, dtype))
    y = ws.get(("roll", "y", dtype), (length, batch, d_inner), dtype)
    h = ws.get(("roll", "h", dtype), (batch, d_inner, n), dtype)
    h[:] = 0.0
    dc = ws.get(("roll", "dc", dtype), (tc, batch, d_inner, n), dtype)
    lc = ws.get(("roll", "lc", dtype), (tc, batch, d_inner, n), dtype)
    hc = ws.get(("roll", "hc", dtype), (tc, batch, d_inner, n), dtype)
    for s in range(0, length, chunk):
        e = min(s + chunk, length)
        nseg = e - s
        np.einsum("lbe,n->lben", delta[s:e], a, out=dc[:nseg])
        np.exp(dc[:nseg], out=dc[:nseg])
        np.einsum("lbe,lbn->lben", du[s:e], bmat[s:e], out=lc[:nseg])
        for t in range(nseg):
            np.multiply(h, dc[t], out=hc[t])
            hc[t] += lc[t]
            h = hc[t]
        np.einsum("lben,lbn->lbe", hc[:nseg], cmat[s:e], out=y[s:e])
    return y


def _scan_backward(g, delta, u, bmat, cmat, a, hfull, decay, ws):
    length, batch, d_inner = delta.shape
    n = a.shape[0]
    du = delta * u
    # gh is pure scratch, fully consumed before this function returns, so a
    # single shared buffer serves every scan node in the graph
    gh = ws.get(("scratch", "gh", delta.dtype), (length, batch, d_inner, n), delta.dtype)
    s_adj = np.zeros((batch, d_inner, n), delta.dtype)
    gy_c = np.empty((batch, d_inner, n), delta.dtype)
    # adjoint recurrence s_t = g_t C_t + decay_{t+1} s_{t+1}, swept backward
    for t in range(length - 1, -1, -1):
        np.multiply(g[t, :, :, None], cmat[t, :, None, :], out=gy_c)
        s_adj += gy_c
        gh[t] = s_adj
        s_adj *= decay[t]
    g_c = np.einsum("lben,lbe->lbn", hfull[1:], g)
    g_b = np.einsum("lben,lbe->lbn", gh, du)
    sb = np.einsum("lben,lbn->lbe", gh, bmat)
    gh *= hfull[:-1]  # now gh holds s_t * h_{t-1} * decay_t term by term
    gh *= decay
    g_delta = np.einsum("lben,n->lbe", gh, a) + sb * u
    g_u = sb * delta
    g_a = np.einsum("lben,lbe->n", gh, delta)
    return g_delta, g_u, g_b, g_c, g_a


def selective_scan_fused(
    delta: Tensor,
    u: Tensor,
    bmat: Tensor,
    cmat: Tensor,
    a_diag: Tensor,
    *,
    tag: str | None = None,
    chunk: int = 64,
    workspace: Workspace | None = None,
) -> Tensor:
    """Input-dependent scan over a batch, time-major.

    delta, u: (L, B, D_inner); bmat, cmat: (L, B, N); a_diag: (N,).
    Per step: h = exp(delta * a_diag) * h + (delta * u) * B_t, then
    y = <C_t, h> per channel.  delta is the already-softplused step size.

    One fused graph node replaces the O(L) elementwise graph a naive op
    composition would record; the backward pass is the same recurrence run
    in reverse.  `tag` opts into cross-step buffer reuse (see module note).
    """
    ws = workspace if workspace is not None else _shared_ws
    needs_grad = _grad_enabled and any(
        t.requires_grad for t in (delta, u, bmat, cmat, a_diag)
    )
    if not needs_grad:
        y = _scan_forward_rolling(
            delta.data, u.data, bmat.data, cmat.data, a_diag.data, ws, chunk
        )
        return _make(y.copy(), (), None)

    y, hfull, decay = _scan_forward_cached(
        delta.data, u.data, bmat.data, cmat.data, a_diag.data, ws, tag, chunk
    )

    def backward(g):
        g_delta, g_u, g_b, g_c, g_a = _scan_backward(
            g, delta.data, u.data, bmat.data, cmat.data, a_diag.data,
            hfull, decay, ws,
        )
        if delta.requires_grad:
            delta.accumulate(g_delta)
        if u.requires_grad:
            u.accumulate(g_u)
        if bmat.requires_grad:
            bmat.accumulate(g_b)
        if cmat.requires_grad:
            cmat.accumulate(g_c)
        if a_diag.requires_grad:
            a_diag.accumulate(g_a)

    return _make(y, (delta, u, bmat, cmat, a_diag), backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels, log-sum-exp form."""
    labels = np.asarray(labels)
    z = logits.data
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ValueError("logits must be (B, n_classes) with one label per row")
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    lse = m[:, 0] + np.log(np.exp(shifted).sum(axis=1))
    picked = z[np.arange(z.shape[0]), labels]
    losses = lse - picked
    batch = z.shape[0]

    def backward(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(batch), labels] -= 1.0
        logits.accumulate(p * (g / batch))

    return _make(np.array(losses.mean()), (logits,), backward)
