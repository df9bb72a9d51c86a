"""Dense float tensors with reverse-mode automatic differentiation.

The whole network is composed from the ops in this module: elementwise
arithmetic, 2-d convolution, pixel (un)shuffle, nearest resampling,
reductions, and a finite-difference gradient checker. Data is float32 by
default; build tensors (and models) from float64 arrays to get the
high-precision mode used by grad_check.

Layout is batch x channel x height x width for image-like data, row-major
with width fastest. Tensors produced by ops are treated as immutable; only
gradient accumulation mutates state.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import MissingGradError, ShapeError
from .rng import SplitMix64

_grad_enabled = True


class no_grad:
    """Context manager that suspends graph construction."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-d float array plus an optional gradient and autograd hooks.

    ``data`` is always a contiguous float32 or float64 ndarray. ``grad``
    stays None until a backward pass deposits something; repeated backward
    passes accumulate.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def check_finite(self, what: str = "tensor") -> "Tensor":
        if not np.isfinite(self.data).all():
            raise FloatingPointError(f"{what} contains non-finite values")
        return self

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are folded into the op, tensors build graph nodes
    def __add__(self, other):
        return shift(self, other) if isinstance(other, (int, float)) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return shift(self, -other) if isinstance(other, (int, float)) else sub(self, other)

    def __mul__(self, other):
        return scale(self, other) if isinstance(other, (int, float)) else mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        raise TypeError("tensor/tensor division is not an engine op; multiply by a reciprocal")

    def __neg__(self):
        return scale(self, -1.0)


class Parameter:
    """Named trainable tensor; the name is its identity in checkpoints."""

    __slots__ = ("name", "tensor")

    def __init__(self, name: str, data, requires_grad: bool = True):
        self.name = name
        self.tensor = Tensor(data, requires_grad=requires_grad)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self):
        return self.tensor.shape

    @property
    def requires_grad(self) -> bool:
        return self.tensor.requires_grad

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape`` (adjoint of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar; accumulates into ``.grad`` fields."""
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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

    flow: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = flow.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            flow[key] = flow[key] + pg if key in flow else pg


# ---------------------------------------------------------------------------
# elementwise and scalar ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * np.asarray(c, dtype=a.dtype), (a,), lambda g: (g * c,))


def shift(a: Tensor, c: float) -> Tensor:
    return _make(a.data + np.asarray(float(c), dtype=a.dtype), (a,), lambda g: (g,))


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (g * (2.0 * a.data),))


def absolute(a: Tensor) -> Tensor:
    # subgradient 0 at the kink
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a: Tensor) -> Tensor:
    """Smooth gated activation x * sigmoid(x)."""
    s = _sigmoid(a.data)
    return _make(a.data * s, (a,), lambda g: (g * s * (1.0 + a.data * (1.0 - s)),))


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    orig = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def slice_channels(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 4:
        raise ShapeError(f"slice_channels expects a 4-d tensor, got shape {a.shape}")

    def vjp(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _make(a.data[:, start:stop].copy(), (a,), vjp)


def concat_channels(parts: Iterable[Tensor]) -> Tensor:
    parts = list(parts)
    data = np.concatenate([p.data for p in parts], axis=1)
    sizes = [p.shape[1] for p in parts]

    def vjp(g):
        out = []
        at = 0
        for s in sizes:
            out.append(g[:, at:at + s])
            at += s
        return tuple(out)

    return _make(data, parts, vjp)


def pixel_shuffle(a: Tensor, r: int) -> Tensor:
    """Channel-to-space rearrangement.

    Source channel c lands on output channel c // r^2, sub-pixel row
    (c % r^2) // r, sub-pixel column c % r.
    """
    if r < 1 or int(r) != r:
        raise ShapeError(f"pixel_shuffle: r must be a positive integer, got {r}")
    r = int(r)
    b, c, h, w = a.shape
    if c % (r * r):
        raise ShapeError(f"pixel_shuffle: channels ({c}) not divisible by r^2 ({r * r})")
    co = c // (r * r)
    data = (
        a.data.reshape(b, co, r, r, h, w)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(b, co, h * r, w * r)
    )

    def vjp(g):
        gi = (
            g.reshape(b, co, h, r, w, r)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(b, c, h, w)
        )
        return (np.ascontiguousarray(gi),)

    return _make(data, (a,), vjp)


def pixel_unshuffle(a: Tensor, r: int) -> Tensor:
    """Exact inverse of pixel_shuffle under the declared ordering."""
    if r < 1 or int(r) != r:
        raise ShapeError(f"pixel_unshuffle: r must be a positive integer, got {r}")
    r = int(r)
    b, c, h, w = a.shape
    if h % r or w % r:
        raise ShapeError(f"pixel_unshuffle: spatial dims ({h}x{w}) not divisible by r ({r})")
    ho, wo = h // r, w // r
    data = (
        a.data.reshape(b, c, ho, r, wo, r)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(b, c * r * r, ho, wo)
    )

    def vjp(g):
        gi = (
            g.reshape(b, c, r, r, ho, wo)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(b, c, h, w)
        )
        return (np.ascontiguousarray(gi),)

    return _make(data, (a,), vjp)


def resample(a: Tensor, scale) -> Tensor:
    """Nearest-neighbor resampling by 2 (repeat) or 1/2 (top-left pick)."""
    s = float(scale)
    b, c, h, w = a.shape
    if s == 2.0:
        data = np.repeat(np.repeat(a.data, 2, axis=2), 2, axis=3)

        def vjp(g):
            return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

        return _make(data, (a,), vjp)
    if s == 0.5:
        if h % 2 or w % 2:
            raise ShapeError(f"resample 1/2: spatial dims ({h}x{w}) must be even")
        data = a.data[:, :, ::2, ::2].copy()

        def vjp(g):
            gi = np.zeros_like(a.data)
            gi[:, :, ::2, ::2] = g
            return (gi,)

        return _make(data, (a,), vjp)
    raise ShapeError(f"resample: unsupported scale {scale!r} (expected 2 or 1/2)")


# ---------------------------------------------------------------------------
# convolution and linear maps
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation over BCHW with square kernels."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be 4-d BCHW, got shape {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d: weight must be 4-d OIKK, got shape {w.shape}")
    bs, cin, h, wd = x.shape
    cout, cin_w, k, k2 = w.shape
    if k != k2:
        raise ShapeError(f"conv2d: kernel must be square, got {k}x{k2}")
    if cin != cin_w:
        raise ShapeError(
            f"conv2d: input channels (axis 1 = {cin}) do not match weight input channels (axis 1 = {cin_w})"
        )
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {b.shape} does not match output channels ({cout},)")
    if h + 2 * padding < k or wd + 2 * padding < k:
        raise ShapeError(
            f"conv2d: padded spatial dims (axes 2,3 = {h + 2 * padding}x{wd + 2 * padding}) smaller than kernel {k}"
        )
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    wdat = w.data
    out = np.zeros((bs, cout, ho, wo), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            sl = xp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride]
            out += np.einsum("oc,bchw->bohw", wdat[:, :, ki, kj], sl, optimize=True)
    if b is not None:
        out += b.data.reshape(1, cout, 1, 1)

    def vjp(g):
        gx = gw = gb = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
        if w.requires_grad:
            gw = np.zeros_like(wdat)
        for ki in range(k):
            for kj in range(k):
                hsl = slice(ki, ki + stride * ho, stride)
                wsl = slice(kj, kj + stride * wo, stride)
                if w.requires_grad:
                    gw[:, :, ki, kj] = np.einsum(
                        "bohw,bchw->oc", g, xp[:, :, hsl, wsl], optimize=True
                    )
                if x.requires_grad:
                    gxp[:, :, hsl, wsl] += np.einsum(
                        "oc,bohw->bchw", wdat[:, :, ki, kj], g, optimize=True
                    )
        if x.requires_grad:
            gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, vjp)


def linear(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    """Affine map: (B, Fin) @ (Fin, Fout) + (Fout,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} @ {w.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def vjp(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g if w.requires_grad else None
        if b is None:
            return (gx, gw)
        gb = g.sum(axis=0) if b.requires_grad else None
        return (gx, gw, gb)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, vjp)


# ---------------------------------------------------------------------------
# reductions and differences
# ---------------------------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    return _make(
        np.asarray(a.data.sum(), dtype=a.dtype), (a,),
        lambda g: (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),),
    )


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    return _make(
        np.asarray(a.data.mean(), dtype=a.dtype), (a,),
        lambda g: ((np.broadcast_to(g, a.shape) / n).astype(a.dtype, copy=True),),
    )


def mean_hw(a: Tensor) -> Tensor:
    """Global average pool: BCHW -> BC."""
    if a.ndim != 4:
        raise ShapeError(f"mean_hw expects a 4-d tensor, got shape {a.shape}")
    b, c, h, w = a.shape
    n = h * w

    def vjp(g):
        return (np.broadcast_to(g[:, :, None, None] / n, a.shape).astype(a.dtype, copy=True),)

    return _make(a.data.mean(axis=(2, 3)), (a,), vjp)


def forward_diff(a: Tensor, axis: int) -> Tensor:
    """Forward difference along a spatial axis, zero in the last slot."""
    if a.ndim != 4 or axis not in (2, 3):
        raise ShapeError(f"forward_diff: need a 4-d tensor and axis in (2, 3), got shape {a.shape}, axis {axis}")
    if a.shape[axis] < 2:
        raise ShapeError(f"forward_diff: axis {axis} has extent {a.shape[axis]} < 2")
    d = np.zeros_like(a.data)
    if axis == 3:
        d[..., :-1] = a.data[..., 1:] - a.data[..., :-1]
    else:
        d[..., :-1, :] = a.data[..., 1:, :] - a.data[..., :-1, :]

    def vjp(g):
        gi = np.zeros_like(a.data)
        if axis == 3:
            gi[..., 1:] += g[..., :-1]
            gi[..., :-1] -= g[..., :-1]
        else:
            gi[..., 1:, :] += g[..., :-1, :]
            gi[..., :-1, :] -= g[..., :-1, :]
        return (gi,)

    return _make(d, (a,), vjp)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-3,
    samples_per_param: int = 2,
    seed: int = 0,
) -> float:
    """Max relative error between backprop and central finite differences.

    ``f`` must be a deterministic scalar-valued function of ``params``.
    Coordinates are sampled per parameter; evaluate in float64 for honest
    tolerances.
    """
    for p in params:
        p.zero_grad()
    loss = f()
    if loss.data.size != 1:
        raise ShapeError(f"grad_check: f() must be scalar, got shape {loss.shape}")
    loss.check_finite("grad_check loss")
    backward(loss)
    analytic = {
        p.name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for p in params
    }

    rng = SplitMix64(seed)
    worst = 0.0
    with no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            for _ in range(min(samples_per_param, flat.size)):
                idx = rng.integer(flat.size)
                orig = flat[idx]
                flat[idx] = orig + eps
                lo_hi = float(f().data)
                flat[idx] = orig - eps
                lo_lo = float(f().data)
                flat[idx] = orig
                if not (np.isfinite(lo_hi) and np.isfinite(lo_lo)):
                    raise FloatingPointError("grad_check: non-finite loss during finite differencing")
                numeric = (lo_hi - lo_lo) / (2.0 * eps)
                ana = float(analytic[p.name].reshape(-1)[idx])
                rel = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-8)
                worst = max(worst, rel)
    return worst


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def require_grads(params: Iterable[Parameter]) -> None:
    """Raise if any parameter is missing its gradient."""
    for p in params:
        if p.grad is None:
            raise MissingGradError(f"parameter {p.name!r} has no gradient")
