"""Diagonal state-space primitives.

A continuous-time system h'(t) = A h(t) + B x(t), y(t) = <C, h(t)> with
diagonal A is discretized by zero-order hold into a per-step recurrence

    h_k = a_bar * h_{k-1} + b_bar * x_k,    y_k = <c, h_k>

which this module evaluates three interchangeable ways: step by step, as a
work-efficient parallel prefix scan, and as a causal convolution kernel.
The selective variant recomputes the step size and the input/output
projections from the input at every step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ContinuousSsm",
    "DiscreteSsm",
    "ScanElement",
    "SelectiveParams",
    "discretize_zoh",
    "scan_sequential",
    "compose",
    "associative_scan",
    "scan_parallel",
    "ssm_kernel",
    "selective_scan",
    "softplus",
]


def _as_vector(name: str, value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"{name} must be a 1-D vector with at least one entry")
    return arr


@dataclass(frozen=True)
class ContinuousSsm:
    """Continuous-time diagonal system (A diagonal, strictly negative)."""

    a_diag: np.ndarray
    b_vec: np.ndarray
    c_vec: np.ndarray

    def __post_init__(self):
        a = _as_vector("a_diag", self.a_diag)
        b = _as_vector("b_vec", self.b_vec)
        c = _as_vector("c_vec", self.c_vec)
        if not (a.shape == b.shape == c.shape):
            raise ValueError("a_diag, b_vec and c_vec must share one length")
        if not np.all(a < 0.0):
            raise ValueError("every a_diag entry must be strictly negative")
        object.__setattr__(self, "a_diag", a)
        object.__setattr__(self, "b_vec", b)
        object.__setattr__(self, "c_vec", c)

    @property
    def n_state(self) -> int:
        return self.a_diag.size


@dataclass(frozen=True)
class DiscreteSsm:
    """One-step form of ContinuousSsm at a fixed step size delta."""

    a_bar: np.ndarray
    b_bar: np.ndarray
    c_vec: np.ndarray
    delta: float

    def __post_init__(self):
        a = _as_vector("a_bar", self.a_bar)
        b = _as_vector("b_bar", self.b_bar)
        c = _as_vector("c_vec", self.c_vec)
        if not (a.shape == b.shape == c.shape):
            raise ValueError("a_bar, b_bar and c_vec must share one length")
        if not self.delta > 0.0:
            raise ValueError("delta must be positive")
        object.__setattr__(self, "a_bar", a)
        object.__setattr__(self, "b_bar", b)
        object.__setattr__(self, "c_vec", c)
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def n_state(self) -> int:
        return self.a_bar.size


@dataclass(frozen=True)
class ScanElement:
    """One step of the recurrence h -> decay * h + load.

    Elements form a semigroup under compose(); the identity is (1, 0).
    decay and load may be scalars or same-shape arrays.
    """

    decay: np.ndarray
    load: np.ndarray


@dataclass(frozen=True)
class SelectiveParams:
    """Input-dependent dynamics over D_inner channels and N shared states.

    Per step t with feature vector u_t:
        delta_t = softplus(u_t @ w_delta + b_delta)   per-channel step size
        B_t     = u_t @ w_b                           shared input N-vector
        C_t     = u_t @ w_c                           shared output N-vector
    State decay is exact, exp(delta * a_diag); the input injection uses the
    first-order rule delta * B_t.
    """

    w_delta: np.ndarray
    b_delta: np.ndarray
    w_b: np.ndarray
    w_c: np.ndarray
    a_diag: np.ndarray

    def __post_init__(self):
        w_delta = np.asarray(self.w_delta, dtype=np.float64)
        b_delta = np.atleast_1d(np.asarray(self.b_delta, dtype=np.float64))
        w_b = np.asarray(self.w_b, dtype=np.float64)
        w_c = np.asarray(self.w_c, dtype=np.float64)
        a = _as_vector("a_diag", self.a_diag)
        if w_delta.ndim != 2:
            raise ValueError("w_delta must be a (D_inner, D_inner) matrix")
        d_inner = w_delta.shape[0]
        if w_delta.shape[1] != d_inner or b_delta.shape != (d_inner,):
            raise ValueError("w_delta and b_delta disagree on D_inner")
        n = a.size
        if w_b.shape != (d_inner, n) or w_c.shape != (d_inner, n):
            raise ValueError("w_b and w_c must have shape (D_inner, N)")
        if not np.all(a < 0.0):
            raise ValueError("every a_diag entry must be strictly negative")
        for name, val in (
            ("w_delta", w_delta),
            ("b_delta", b_delta),
            ("w_b", w_b),
            ("w_c", w_c),
        ):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "a_diag", a)


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + e^x), overflow-safe for large positive x."""
    return np.logaddexp(0.0, x)


def discretize_zoh(ssm: ContinuousSsm, delta: float) -> DiscreteSsm:
    """Zero-order-hold discretization at step size delta.

    a_bar = exp(delta a), b_bar = (delta a)^{-1} (exp(delta a) - 1) delta b,
    elementwise on the diagonal.  Zero diagonal entries are rejected rather
    than patched with the analytic limit; the stock initialization never
    produces them.
    """
    if not delta > 0.0:
        raise ValueError("delta must be positive")
    if np.any(ssm.a_diag == 0.0):
        raise ValueError("a_diag entries must be nonzero for ZOH")
    da = delta * ssm.a_diag
    a_bar = np.exp(da)
    b_bar = (a_bar - 1.0) / da * delta * ssm.b_vec
    return DiscreteSsm(a_bar=a_bar, b_bar=b_bar, c_vec=ssm.c_vec, delta=delta)


def scan_sequential(d: DiscreteSsm, x: np.ndarray) -> np.ndarray:
    """Evaluate the recurrence step by step from a zero initial state."""
    x = _as_vector("x", x)
    h = np.zeros(d.n_state)
    y = np.empty(x.size)
    for k in range(x.size):
        h = d.a_bar * h + d.b_bar * x[k]
        y[k] = h @ d.c_vec
    return y


def compose(e1: ScanElement, e2: ScanElement) -> ScanElement:
    """Combine two recurrence steps, e1 applied first."""
    return ScanElement(
        decay=e2.decay * e1.decay,
        load=e2.decay * e1.load + e2.load,
    )


def associative_scan(decay: np.ndarray, load: np.ndarray, axis: int = 0) -> np.ndarray:
    """Inclusive prefix combine of recurrence steps along axis.

    Returns h with h_k = decay_k * h_{k-1} + load_k, h_{-1} = 0, computed by
    a work-efficient two-sweep (Blelloch) scan.  Lengths that are not powers
    of two are padded with the identity element (decay 1, load 0).  The
    combine tree is fixed by the length alone, so results are bit-identical
    for identical inputs.
    """
    decay = np.asarray(decay, dtype=np.float64)
    load = np.asarray(load, dtype=np.float64)
    if decay.shape != load.shape:
        raise ValueError("decay and load must have identical shapes")
    length = decay.shape[axis]
    if length == 1:
        return load.copy()
    padded = 1 << (length - 1).bit_length()
    shape = list(decay.shape)
    shape[axis] = padded
    a = np.ones(shape)
    b = np.zeros(shape)

    def along(start, stop, step):
        index = [slice(None)] * decay.ndim
        index[axis] = slice(start, stop, step)
        return tuple(index)

    head = along(0, length, 1)
    a[head] = decay
    b[head] = load

    # Up-sweep: fold pairs at stride 2, 4, ... into partial composites.
    stride = 1
    while stride < padded:
        left = along(stride - 1, padded, 2 * stride)
        right = along(2 * stride - 1, padded, 2 * stride)
        b[right] += a[right] * b[left]
        a[right] *= a[left]
        stride *= 2

    # Down-sweep: clear the root, push exclusive prefixes back down.
    root = along(padded - 1, padded, 1)
    a[root] = 1.0
    b[root] = 0.0
    stride = padded // 2
    while stride >= 1:
        left = along(stride - 1, padded, 2 * stride)
        right = along(2 * stride - 1, padded, 2 * stride)
        ta = a[left].copy()
        tb = b[left].copy()
        a[left] = a[right]
        b[left] = b[right]
        b[right] = ta * b[right] + tb
        a[right] = a[right] * ta
        stride //= 2

    # (a, b) now hold the exclusive prefix; one more step makes it inclusive.
    return decay * b[head] + load


def scan_parallel(d: DiscreteSsm, x: np.ndarray) -> np.ndarray:
    """scan_sequential computed via the parallel prefix combine."""
    x = _as_vector("x", x)
    decay = np.broadcast_to(d.a_bar, (x.size, d.n_state))
    load = x[:, None] * d.b_bar
    h = associative_scan(decay, load, axis=0)
    return h @ d.c_vec


def ssm_kernel(d: DiscreteSsm, length: int) -> np.ndarray:
    """Causal convolution kernel K_j = <c, a_bar^j * b_bar>, j = 0..L-1."""
    if length < 1:
        raise ValueError("kernel length must be at least 1")
    powers = np.ones((length, d.n_state))
    if length > 1:
        np.cumprod(np.broadcast_to(d.a_bar, (length - 1, d.n_state)), axis=0, out=powers[1:])
    return powers @ (d.b_bar * d.c_vec)


def selective_scan(p: SelectiveParams, u: np.ndarray) -> np.ndarray:
    """Input-dependent scan over a (L, D_inner) feature sequence.

    Reference implementation, one explicit step per loop iteration.  The
    trainable network routes through a fused equivalent; the two agree to
    floating-point roundoff and this form is the readable one.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2:
        raise ValueError("u must have shape (L, D_inner)")
    if u.shape[1] != p.w_delta.shape[0]:
        raise ValueError("u feature width disagrees with w_delta")
    length, d_inner = u.shape
    n = p.a_diag.size
    h = np.zeros((d_inner, n))
    y = np.empty((length, d_inner))
    for t in range(length):
        u_t = u[t]
        delta_t = softplus(u_t @ p.w_delta + p.b_delta)
        b_t = u_t @ p.w_b
        c_t = u_t @ p.w_c
        decay = np.exp(delta_t[:, None] * p.a_diag)
        h = decay * h + (delta_t * u_t)[:, None] * b_t
        y[t] = h @ c_t
    return y
