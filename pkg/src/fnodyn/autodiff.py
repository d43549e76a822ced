"""Reverse-mode automatic differentiation over dense float64 arrays.

Define-by-run: every operation eagerly computes its forward value and, when
gradients are enabled and an input requires them, records its parents and an
adjoint closure.  ``backward`` on a scalar loss walks the reachable nodes in
reverse creation order (a valid topological order by construction), so
gradients are bit-identical across reruns of the same graph and accumulate
additively across fan-out.

Complex values are packed as (..., 2) real/imag pairs inside real tensors;
the FFT nodes and the per-frequency contraction define their adjoints on that
packing, treating real and imaginary parts as independent real coordinates.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

from .rng import KeyedRng

_ids = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
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

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    # operator sugar; scalars and arrays are wrapped as constants
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss tensor")
        nodes = _reachable(self)
        grads: dict[int, np.ndarray] = {self._id: np.ones_like(self.data)}
        for node in nodes:  # already in reverse creation order
            g = grads.pop(node._id, None)
            if g is None:
                continue
            if node._backward is not None:
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None:
                        continue
                    acc = grads.get(parent._id)
                    grads[parent._id] = pg if acc is None else acc + pg
            elif node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g


def _reachable(root: Tensor) -> list[Tensor]:
    """All graph nodes reachable from root, sorted by descending creation id."""
    seen = {root._id: root}
    stack = [root]
    while stack:
        node = stack.pop()
        for p in node._parents:
            if p._id not in seen:
                seen[p._id] = p
                stack.append(p)
    return sorted(seen.values(), key=lambda n: n._id, reverse=True)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def constant(data) -> Tensor:
    return Tensor(data)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _make(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._backward is not None for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad over axes that were broadcast up from `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                          _unbroadcast(g * a.data, b.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g / b.data, a.shape),
                                          _unbroadcast(-g * data / b.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y**2),))


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0)
    return _make(y, (a,), lambda g: (g * (a.data > 0.0),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-form GELU: 0.5*x*(1 + tanh(c*(x + 0.044715*x^3)))."""
    x = a.data
    x2 = x * x
    th = np.tanh(_GELU_C * (x + 0.044715 * (x2 * x)))

    def backward(g):
        d = 0.5 * (1.0 + th) + (0.5 * _GELU_C) * x * (1.0 - th * th) * (1.0 + 0.134145 * x2)
        return (g * d,)

    return _make(0.5 * x * (1.0 + th), (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return _make(y, (a,), lambda g: (g / (2.0 * y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def sin(a: Tensor) -> Tensor:
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a: Tensor) -> Tensor:
    return _make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def atan2(y: Tensor, x: Tensor) -> Tensor:
    data = np.arctan2(y.data, x.data)

    def backward(g):
        # tiny floor keeps masked-out zero-magnitude bins from producing NaN
        denom = np.maximum(x.data**2 + y.data**2, 1e-300)
        return (_unbroadcast(g * x.data / denom, y.shape),
                _unbroadcast(-g * y.data / denom, x.shape))

    return _make(data, (y, x), backward)


def dropout(a: Tensor, p: float, train: bool, key: tuple) -> Tensor:
    """Inverted dropout; mask is a pure function of `key`.  Identity in eval."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return _make(a.data, (a,), lambda g: (g,))
    keep = KeyedRng(*key).uniform(size=a.shape) >= p
    scale = keep / (1.0 - p)
    return _make(a.data * scale, (a,), lambda g: (g * scale,))


# ------------------------------------------------------------ shape plumbing

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul requires tensors with ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(data, (a, b), backward)


def transpose(a: Tensor, axes: tuple) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a: Tensor, shape: tuple) -> Tensor:
    orig = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def backward(g):
        out = np.zeros_like(a.data)
        out[idx] = g
        return (out,)

    return _make(a.data[idx], (a,), backward)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    bounds = list(np.cumsum(sizes)[:-1])

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(data, tuple(tensors), backward)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(data, (a,), backward)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        count = a.shape[axis]
    s = tensor_sum(a, axis=axis, keepdims=keepdims)
    return mul(s, Tensor(1.0 / count))


# ------------------------------------------------------- spectral primitives

def rfft_node(a: Tensor) -> Tensor:
    """Real FFT along the last axis; output packs bins as (..., n//2+1, 2)."""
    n = a.shape[-1]
    spec = np.fft.rfft(a.data, axis=-1)
    data = np.stack([spec.real, spec.imag], axis=-1)

    def backward(g):
        gc = g[..., 0] + 1j * g[..., 1]
        full = np.zeros(g.shape[:-2] + (n,), dtype=np.complex128)
        full[..., : gc.shape[-1]] = gc
        return (n * np.real(np.fft.ifft(full, axis=-1)),)

    return _make(data, (a,), backward)


def irfft_node(z: Tensor, n: int) -> Tensor:
    """Inverse of rfft_node onto n real samples (1/n scaling).

    Imaginary parts of the DC and Nyquist bins do not influence the output
    (they are structurally zero for spectra of real signals), so their
    adjoints are zero.
    """
    if z.shape[-1] != 2:
        raise ValueError("irfft_node expects packed (..., bins, 2) input")
    k = z.shape[-2]
    if k > n // 2 + 1:
        raise ValueError(f"{k} bins is too many for irfft length {n}")
    zc = z.data[..., 0] + 1j * z.data[..., 1]
    full = np.zeros(z.shape[:-2] + (n // 2 + 1,), dtype=np.complex128)
    full[..., :k] = zc
    data = np.fft.irfft(full, n=n, axis=-1)

    def backward(g):
        spec = np.fft.rfft(g, axis=-1)[..., :k] / n
        weights = np.full(k, 2.0)
        weights[0] = 1.0
        re = spec.real * weights
        im = spec.imag * weights
        im[..., 0] = 0.0
        if n % 2 == 0 and k == n // 2 + 1:
            re[..., -1] *= 0.5
            im[..., -1] = 0.0
        return (np.stack([re, im], axis=-1),)

    return _make(data, (z,), backward)


def complex_pointwise_matmul(v: Tensor, w: Tensor) -> Tensor:
    """Per-frequency complex channel contraction.

    v: (batch, c_in, k, 2), w: (k, c_out, c_in, 2) -> (batch, c_out, k, 2)
    with out[b, o, k] = sum_i w[k, o, i] * v[b, i, k] in complex arithmetic.
    """
    if v.ndim != 4 or w.ndim != 4 or v.shape[-1] != 2 or w.shape[-1] != 2:
        raise ValueError("complex_pointwise_matmul expects packed 4-D inputs")
    if v.shape[2] != w.shape[0] or v.shape[1] != w.shape[2]:
        raise ValueError(f"shape mismatch: v {v.shape} vs w {w.shape}")
    vr, vi = v.data[..., 0], v.data[..., 1]
    wr, wi = w.data[..., 0], w.data[..., 1]
    out_re = np.einsum("bik,koi->bok", vr, wr, optimize=True) - np.einsum("bik,koi->bok", vi, wi, optimize=True)
    out_im = np.einsum("bik,koi->bok", vr, wi, optimize=True) + np.einsum("bik,koi->bok", vi, wr, optimize=True)

    def backward(g):
        gr, gi = g[..., 0], g[..., 1]
        dvr = np.einsum("bok,koi->bik", gr, wr, optimize=True) + np.einsum("bok,koi->bik", gi, wi, optimize=True)
        dvi = np.einsum("bok,koi->bik", gi, wr, optimize=True) - np.einsum("bok,koi->bik", gr, wi, optimize=True)
        dwr = np.einsum("bok,bik->koi", gr, vr, optimize=True) + np.einsum("bok,bik->koi", gi, vi, optimize=True)
        dwi = np.einsum("bok,bik->koi", gi, vr, optimize=True) - np.einsum("bok,bik->koi", gr, vi, optimize=True)
        return (np.stack([dvr, dvi], axis=-1), np.stack([dwr, dwi], axis=-1))

    return _make(np.stack([out_re, out_im], axis=-1), (v, w), backward)


_dft_basis_cache: dict[tuple[int, int], tuple[np.ndarray, ...]] = {}


def _dft_bases(n: int, m: int) -> tuple[np.ndarray, ...]:
    """Analysis/synthesis matrices for the lowest m bins of an n-point real DFT."""
    key = (n, m)
    cached = _dft_basis_cache.get(key)
    if cached is not None:
        return cached
    grid = 2.0 * np.pi * np.outer(np.arange(n), np.arange(m)) / n
    analysis_re = np.cos(grid)
    analysis_im = -np.sin(grid)
    weights = np.full(m, 2.0)
    weights[0] = 1.0
    if n % 2 == 0 and m == n // 2 + 1:
        weights[-1] = 1.0
    synth_re = analysis_re * weights / n
    synth_im = analysis_im * weights / n
    result = (analysis_re, analysis_im, synth_re.T.copy(), synth_im.T.copy())
    _dft_basis_cache[key] = result
    return result


def _flat_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(..., k) @ (k, n) as one contiguous 2-D dgemm."""
    lead = a.shape[:-1]
    flat = np.ascontiguousarray(a).reshape(-1, a.shape[-1])
    return (flat @ b).reshape(lead + (b.shape[1],))


def dft_modes(a: Tensor, m: int) -> Tensor:
    """Lowest m bins of the real DFT along the last axis, packed (..., m, 2).

    Same values as slicing rfft_node output; implemented as two real matmuls
    so the adjoint is an exact transpose.
    """
    n = a.shape[-1]
    if m > n // 2 + 1:
        raise ValueError(f"cannot keep {m} modes of a length-{n} signal")
    ar, ai, _, _ = _dft_bases(n, m)
    re = _flat_matmul(a.data, ar)
    im = _flat_matmul(a.data, ai)

    def backward(g):
        return (_flat_matmul(np.ascontiguousarray(g[..., 0]), ar.T)
                + _flat_matmul(np.ascontiguousarray(g[..., 1]), ai.T),)

    return _make(np.stack([re, im], axis=-1), (a,), backward)


def idft_modes(z: Tensor, n: int) -> Tensor:
    """Inverse of dft_modes onto n samples: zeros in the discarded bins."""
    if z.shape[-1] != 2:
        raise ValueError("idft_modes expects packed (..., m, 2) input")
    m = z.shape[-2]
    if m > n // 2 + 1:
        raise ValueError(f"{m} bins is too many for length {n}")
    _, _, sr, si = _dft_bases(n, m)
    re = np.ascontiguousarray(z.data[..., 0])
    im = np.ascontiguousarray(z.data[..., 1])
    data = _flat_matmul(re, sr) + _flat_matmul(im, si)

    def backward(g):
        return (np.stack([_flat_matmul(g, sr.T), _flat_matmul(g, si.T)], axis=-1),)

    return _make(data, (z,), backward)
