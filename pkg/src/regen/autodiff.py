"""Reverse-mode automatic differentiation over dense numpy arrays.

Define-by-run: every differentiable op records its parents and a backward
closure on the output tensor; ``Tensor.backward()`` replays the recorded
tape in reverse topological order, visiting each node exactly once and
accumulating (summing) gradients at shared subexpressions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import dsp
from .errors import ArgumentError, NumericError, ShapeError

_grad_enabled = True


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """Dense n-d array with optional participation in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype) if dtype else np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.requires_grad = requires_grad and _grad_enabled
        self.grad = None
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None):
        """Reverse pass from this tensor; seeds with ones for scalars."""
        if grad is None:
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"

    # Operator sugar; scalars become constant tensors.
    def __add__(self, other):
        return add(self, _wrap(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other, self))

    def __rtruediv__(self, other):
        return div(_wrap(other, self), self)

    def __neg__(self):
        return mul(self, Tensor(np.asarray(-1.0, dtype=self.dtype)))

    def __pow__(self, p):
        return pow_const(self, p)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _wrap(v, like: Tensor) -> Tensor:
    if isinstance(v, Tensor):
        return v
    return Tensor(np.asarray(v, dtype=like.dtype))


def _topo_order(root: Tensor) -> list:
    order, seen, stack = [], set(), [(root, False)]
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
    return order


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the original operand shape after broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} vs {b.shape}") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "div")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), backward)


def pow_const(a: Tensor, p: float) -> Tensor:
    def backward(g):
        a._accumulate(g * p * a.data ** (p - 1))

    return _make(a.data ** p, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)

    def backward(g):
        a._accumulate(g * 0.5 / np.maximum(y, np.finfo(y.dtype).tiny))

    return _make(y, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), backward)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def backward(g):
        a._accumulate(g * y)

    return _make(y, (a,), backward)


def tabs(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), backward)


def maximum_const(a: Tensor, c: float) -> Tensor:
    """Elementwise floor at a constant; subgradient 0 on the clamped side."""

    def backward(g):
        a._accumulate(g * (a.data > c))

    return _make(np.maximum(a.data, c), (a,), backward)


def relu(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g * (a.data > 0))

    return _make(np.maximum(a.data, 0), (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    def backward(g):
        a._accumulate(g * np.where(a.data > 0, 1.0, slope).astype(a.dtype))

    return _make(np.where(a.data > 0, a.data, slope * a.data), (a,), backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - y * y))

    return _make(y, (a,), backward)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape

    def backward(g):
        a._accumulate(g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} vs {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x @ w.T + b for x [..., in], w [out, in]."""
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} vs {w.shape}")
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data)
        if w.requires_grad:
            w._accumulate(g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1]))
        if b is not None and b.requires_grad:
            b._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _make(y, (x, w) if b is None else (x, w, b), backward)


def channel_linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Pointwise linear over channel-first series: x [B,I,T], w [O,I] -> [B,O,T]."""
    if x.data.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"channel_linear: incompatible shapes {x.shape} vs {w.shape}")
    y = np.matmul(w.data, x.data)
    if b is not None:
        y = y + b.data[None, :, None]

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.matmul(w.data.T, g))
        if w.requires_grad:
            w._accumulate(np.tensordot(g, x.data, axes=([0, 2], [0, 2])))
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2)))

    return _make(y, (x, w) if b is None else (x, w, b), backward)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, *,
           stride: int = 1, dilation: int = 1, pad: tuple[int, int] = (0, 0)) -> Tensor:
    """1-D convolution (cross-correlation): x [B,C,T], w [O,C,K] -> [B,O,T_out]."""
    if x.data.ndim != 3:
        raise ShapeError(f"conv1d: input must be rank 3 [batch, channels, time], got {x.shape}")
    if w.data.ndim != 3 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} vs {w.shape}")
    B, C, T = x.shape
    O, _, K = w.shape
    span = (K - 1) * dilation + 1
    left, right = pad
    Tp = T + left + right
    if Tp < span:
        raise ArgumentError(
            f"conv1d: padded length {Tp} is shorter than the kernel span {span} "
            f"(minimum input length {span - left - right})")
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    windows = sliding_window_view(xp, span, axis=2)[:, :, ::stride, ::dilation]
    T_out = windows.shape[2]
    if windows.size <= 100_000:
        # small chunks: tensordot's GEMM beats einsum's per-call planning
        y = np.ascontiguousarray(
            np.tensordot(windows, w.data, axes=([1, 3], [1, 2])).transpose(0, 2, 1))
    else:
        y = np.einsum("bcik,ock->boi", windows, w.data, optimize=True)
    if b is not None:
        y = y + b.data[None, :, None]

    def backward(g):
        if w.requires_grad:
            w._accumulate(np.einsum("boi,bcik->ock", g, windows, optimize=True))
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for k in range(K):
                tap = np.einsum("boi,oc->bci", g, w.data[:, :, k], optimize=True)
                start = k * dilation
                gxp[:, :, start:start + stride * T_out:stride] += tap
            x._accumulate(gxp[:, :, left:Tp - right if right else None])

    return _make(y, (x, w) if b is None else (x, w, b), backward)


def nearest_upsample1d(x: Tensor, factor: int) -> Tensor:
    """Repeat each time step `factor` times: [B,C,T] -> [B,C,T*factor]."""
    if x.data.ndim != 3:
        raise ShapeError(f"nearest_upsample1d: input must be rank 3, got {x.shape}")
    if factor < 1:
        raise ArgumentError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return reshape(x, x.shape)
    B, C, T = x.shape

    def backward(g):
        x._accumulate(g.reshape(B, C, T, factor).sum(axis=3))

    return _make(np.repeat(x.data, factor, axis=2), (x,), backward)


def stft_magnitude(x: Tensor, fft_size: int, hop: int) -> Tensor:
    """Differentiable Hann-windowed magnitude STFT of a 1-D signal.

    Matches ``dsp.stft_magnitude_array`` exactly on the forward path; the
    magnitude takes subgradient 0 at exact spectral zeros.
    """
    if x.data.ndim != 1:
        raise ShapeError(f"stft_magnitude: input must be 1-D, got {x.shape}")
    if fft_size < 2 or fft_size & (fft_size - 1):
        raise ArgumentError(f"fft_size must be a power of two, got {fft_size}")
    idx = dsp._frame_index_map(len(x.data), fft_size, hop)
    window = dsp.hann_window(fft_size)
    frames = x.data[idx] * window
    spectrum = np.fft.rfft(frames, axis=1)
    mag = np.abs(spectrum)

    def backward(g):
        safe = np.maximum(mag, np.finfo(np.float64).tiny)
        phase_grad = g * (spectrum / safe)
        full = np.zeros((idx.shape[0], fft_size), dtype=np.complex128)
        full[:, :fft_size // 2 + 1] = phase_grad
        grad_frames = (fft_size * np.fft.ifft(full, axis=1).real) * window
        gx = np.zeros(len(x.data))
        np.add.at(gx, idx, grad_frames)
        x._accumulate(gx.astype(x.dtype))

    return _make(mag.astype(x.dtype), (x,), backward)


def frobenius_norm(a: Tensor) -> Tensor:
    return sqrt(tsum(mul(a, a)))


def l1_norm(a: Tensor) -> Tensor:
    return tsum(tabs(a))


def check_finite(t: Tensor, label: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values in {label}")
    return t


@dataclass
class SpectralNormState:
    """Persistent power-iteration vectors for one weight matrix."""

    u: np.ndarray
    v: np.ndarray

    @classmethod
    def init(cls, out_dim: int, rest_dim: int, rng: np.random.Generator) -> "SpectralNormState":
        u = rng.standard_normal(out_dim)
        v = rng.standard_normal(rest_dim)
        return cls(u / np.linalg.norm(u), v / np.linalg.norm(v))


def _l2n(x: np.ndarray) -> np.ndarray:
    return x / max(np.linalg.norm(x), 1e-12)


def power_iterate(w2d: np.ndarray, state: SpectralNormState) -> float:
    """One power-iteration step; updates state in place, returns sigma estimate."""
    state.v = _l2n(w2d.T @ state.u)
    state.u = _l2n(w2d @ state.v)
    return float(state.u @ w2d @ state.v)


def estimated_sigma(w2d: np.ndarray, state: SpectralNormState) -> float:
    return float(state.u @ w2d @ state.v)


def spectral_normalize(weight: Tensor, state: SpectralNormState, update: bool = True) -> Tensor:
    """weight / sigma_hat with sigma_hat from the persistent power iteration.

    Gradients flow through both the weight and the sigma estimate (u, v are
    treated as constants, the standard practice).
    """
    if weight.data.ndim < 2:
        raise ShapeError(f"spectral_normalize: weight rank must be >= 2, got {weight.shape}")
    w2d = weight.data.reshape(weight.shape[0], -1)
    if update:
        power_iterate(w2d, state)
    uv = np.outer(state.u, state.v).reshape(weight.shape).astype(weight.dtype)
    sigma = tsum(mul(weight, Tensor(uv)))
    return div(weight, maximum_const(sigma, 1e-12))


def grad_check(f, x: Tensor, eps: float = 1e-5, max_coords: int = 40,
               rng: np.random.Generator | None = None,
               refine_eps: float | None = 1e-6,
               skip_below: float | None = None) -> float:
    """Max relative error between reverse-mode and central finite differences.

    ``f`` must map a Tensor to a scalar Tensor; a fresh graph is built per
    evaluation so the numeric path stays independent of the analytic one.

    A coordinate whose first-pass error is suspicious is re-measured at
    smaller steps and the best estimate kept: truncation error (a kink grazed
    by the wide stencil) shrinks with the step while round-off grows, so an
    honest gradient is confirmed by some stencil in the ladder whereas a
    genuinely wrong one keeps an O(1) discrepancy at every step.

    ``skip_below`` excludes coordinates whose analytic gradient is below that
    fraction of the largest one: a gradient that is microscopic through
    cancellation of large terms cannot be resolved to any relative accuracy
    by float64 differences of the full function value.
    """
    if not (1e-8 <= eps <= 1e-2):
        raise ArgumentError(f"eps {eps} outside sane range")
    x64 = Tensor(x.data.astype(np.float64), requires_grad=True)
    y = f(x64)
    if y.data.size != 1:
        raise ArgumentError("grad_check requires a scalar-valued function")
    if not np.isfinite(y.data):
        raise NumericError("non-finite function value at the check point")
    y.backward()
    analytic = x64.grad.reshape(-1)

    n = x64.data.size
    eligible = np.arange(n)
    if skip_below is not None:
        floor = skip_below * np.abs(analytic).max()
        keep = np.abs(analytic) >= floor
        if keep.any():
            eligible = np.nonzero(keep)[0]
    if len(eligible) <= max_coords:
        coords = eligible
    else:
        gen = rng if rng is not None else np.random.default_rng(0)
        coords = gen.choice(eligible, size=max_coords, replace=False)

    flat = x64.data.reshape(-1)

    def central(i: int, step: float) -> float:
        orig = flat[i]
        flat[i] = orig + step
        with no_grad():
            hi = float(f(Tensor(x64.data)).data)
        flat[i] = orig - step
        with no_grad():
            lo = float(f(Tensor(x64.data)).data)
        flat[i] = orig
        return (hi - lo) / (2 * step)

    def rel_err(a: float, b: float) -> float:
        return abs(a - b) / max(abs(a), abs(b), 1e-8)

    worst = 0.0
    for i in coords:
        err = rel_err(analytic[i], central(i, eps))
        if refine_eps is not None and err > 1e-5:
            # Smaller steps beat truncation near kinks; larger steps beat
            # round-off on near-zero-gradient coordinates.
            for step in (refine_eps, refine_eps / 10.0, refine_eps / 100.0,
                         eps * 10.0, eps * 100.0):
                err = min(err, rel_err(analytic[i], central(i, step)))
                if err <= 1e-5:
                    break
        worst = max(worst, err)
    return worst
