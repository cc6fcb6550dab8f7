"""Differentiable primitives.

Every function takes and returns :class:`Tensor` objects. Backward closures
only compute gradients for parents that actually require them.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy import special

from lightunetr.tensor.core import Tensor, as_tensor, record


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _pair(a, b):
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    return a, b


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return record(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    out = a.data ** exponent

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return record(out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return record(np.log(a.data), (a,), lambda g: (g / a.data,))


def sigmoid(a: Tensor) -> Tensor:
    out = special.expit(a.data)
    return record(out, (a,), lambda g: (g * out * (1.0 - out),))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x * _INV_SQRT2))

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return record(x * cdf, (a,), backward)


def activation(a: Tensor, kind: str) -> Tensor:
    if kind == "gelu":
        return gelu(a)
    if kind == "sigmoid":
        return sigmoid(a)
    raise ValueError(f"unknown activation {kind!r}")


# -- reductions and shape ops ---------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return record(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, a.shape),)

    return record(np.asarray(out), (a,), backward)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    out = a.data.reshape(shape)
    return record(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Optional[tuple] = None) -> Tensor:
    if not axes:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return record(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g) if _is_advanced(index) else full.__setitem__(index, g)
        return (full,)

    return record(np.array(out, copy=True), (a,), backward)


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray, Tensor)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def backward(g):
        grads = []
        for i, t in enumerate(tensors):
            if not t.requires_grad:
                grads.append(None)
                continue
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            grads.append(g[tuple(sl)])
        return grads

    return record(out, tensors, backward)


def split(a: Tensor, sections: int, axis: int = 1) -> list:
    size = a.shape[axis]
    if size % sections:
        raise ValueError(f"axis {axis} of extent {size} does not split into {sections} parts")
    step = size // sections
    out = []
    for i in range(sections):
        sl = [slice(None)] * a.ndim
        sl[axis] = slice(i * step, (i + 1) * step)
        out.append(getitem(a, tuple(sl)))
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return record(np.matmul(a.data, b.data), (a, b), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtracted)."""
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record(out, (a,), backward)


# -- normalization ----------------------------------------------------------------

def _normalize_backward(g, xhat, inv_std, axes):
    gm = g.mean(axis=axes, keepdims=True)
    gxm = (g * xhat).mean(axis=axes, keepdims=True)
    return inv_std * (g - gm - xhat * gxm)


def _channel_view(p: np.ndarray, ndim: int) -> np.ndarray:
    return p.reshape((1, -1) + (1,) * (ndim - 2))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the channel axis (axis 1) independently at every voxel."""
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"affine shapes {gamma.shape}/{beta.shape} do not match channels {c}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    gv = _channel_view(gamma.data, x.ndim)
    out = xhat * gv + _channel_view(beta.data, x.ndim)
    red = (0,) + tuple(range(2, x.ndim))

    def backward(g):
        gx = _normalize_backward(g * gv, xhat, inv_std, (1,)) if x.requires_grad else None
        gg = (g * xhat).sum(axis=red) if gamma.requires_grad else None
        gb = g.sum(axis=red) if beta.requires_grad else None
        return gx, gg, gb

    return record(out, (x, gamma, beta), backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    update_running: bool = True,
) -> Tensor:
    """Per-channel normalization over batch and spatial axes.

    In training mode batch statistics are used and, if ``update_running``,
    the running buffers are updated in place with an exponential average.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"affine shapes {gamma.shape}/{beta.shape} do not match channels {c}")
    axes = (0,) + tuple(range(2, x.ndim))
    gv = _channel_view(gamma.data, x.ndim)
    bv = _channel_view(beta.data, x.ndim)
    if training:
        n = x.data.size // c
        mu = x.data.mean(axis=axes, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        if update_running:
            unbiased = var.reshape(-1) * (n / max(n - 1, 1))
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.reshape(-1)
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv_std

        def backward(g):
            gx = _normalize_backward(g * gv, xhat, inv_std, axes) if x.requires_grad else None
            gg = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
            gb = g.sum(axis=axes) if beta.requires_grad else None
            return gx, gg, gb

    else:
        inv_std = _channel_view(1.0 / np.sqrt(running_var + eps), x.ndim).astype(x.dtype)
        xhat = (x.data - _channel_view(running_mean, x.ndim).astype(x.dtype)) * inv_std

        def backward(g):
            gx = g * gv * inv_std if x.requires_grad else None
            gg = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
            gb = g.sum(axis=axes) if beta.requires_grad else None
            return gx, gg, gb

    return record(xhat * gv + bv, (x, gamma, beta), backward)


# -- convolution ------------------------------------------------------------------

def triple(v) -> tuple:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * 3
    v = tuple(int(i) for i in v)
    if len(v) != 3:
        raise ValueError(f"expected an int or a 3-vector, got {v}")
    return v


_AXES = ("z", "y", "x")


def _conv_geometry(spatial, kernel, stride, padding):
    out = []
    for ax, n, k, s, p in zip(_AXES, spatial, kernel, stride, padding):
        if s < 1:
            raise ValueError(f"stride along {ax} must be >= 1, got {s}")
        if n + 2 * p < k:
            raise ValueError(f"padded extent {n + 2 * p} along {ax} is smaller than kernel {k}")
        out.append((n + 2 * p - k) // s + 1)
    return tuple(out)


def _pad(x: np.ndarray, padding) -> np.ndarray:
    if not any(padding):
        return x
    pz, py, px = padding
    b, c, z, y, w = x.shape
    out = np.zeros((b, c, z + 2 * pz, y + 2 * py, w + 2 * px), dtype=x.dtype)
    out[:, :, pz:pz + z, py:py + y, px:px + w] = x
    return out


def _im2col(xp: np.ndarray, kernel, stride, out) -> np.ndarray:
    """(B, C, Zp, Yp, Xp) -> (B, C, kz*ky*kx, V) patch matrix."""
    b, c = xp.shape[:2]
    sb, sc, sz, sy, sx = xp.strides
    view = as_strided(
        xp,
        shape=(b, c) + tuple(kernel) + tuple(out),
        strides=(sb, sc, sz, sy, sx, sz * stride[0], sy * stride[1], sx * stride[2]),
        writeable=False,
    )
    return view.reshape(b, c, kernel[0] * kernel[1] * kernel[2], out[0] * out[1] * out[2])


def _col2im(cols: np.ndarray, padded_spatial, kernel, stride, out) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back onto the padded grid."""
    b, c = cols.shape[:2]
    kz, ky, kx = kernel
    oz, oy, ox = out
    cols = cols.reshape(b, c, kz, ky, kx, oz, oy, ox)
    if tuple(kernel) == tuple(stride) and tuple(padded_spatial) == (oz * kz, oy * ky, ox * kx):
        # non-overlapping tiles: pure permutation
        return cols.transpose(0, 1, 5, 2, 6, 3, 7, 4).reshape((b, c) + tuple(padded_spatial))
    res = np.zeros((b, c) + tuple(padded_spatial), dtype=cols.dtype)
    sz, sy, sx = stride
    for i in range(kz):
        for j in range(ky):
            for k in range(kx):
                res[:, :, i:i + sz * (oz - 1) + 1:sz, j:j + sy * (oy - 1) + 1:sy,
                    k:k + sx * (ox - 1) + 1:sx] += cols[:, :, i, j, k]
    return res


def _check_groups(cin, cout, groups):
    if groups < 1 or cin % groups or cout % groups:
        raise ValueError(f"channels in={cin} out={cout} are not divisible by groups={groups}")


def conv3d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride=1, padding=0, groups: int = 1) -> Tensor:
    """Grouped, strided 3-D cross-correlation.

    ``x`` is (B, Cin, Z, Y, X); ``w`` is (Cout, Cin/groups, kz, ky, kx).
    """
    stride, padding = triple(stride), triple(padding)
    if x.ndim != 5 or w.ndim != 5:
        raise ValueError(f"conv3d expects 5-D input and weight, got {x.shape} and {w.shape}")
    bsz, cin = x.shape[:2]
    cout, cg = w.shape[:2]
    kernel = w.shape[2:]
    _check_groups(cin, cout, groups)
    if cg != cin // groups:
        raise ValueError(f"weight expects {cg * groups} input channels, input has {cin}")
    if b is not None and b.shape != (cout,):
        raise ValueError(f"bias shape {b.shape} does not match {cout} output channels")
    out_sp = _conv_geometry(x.shape[2:], kernel, stride, padding)
    nv = out_sp[0] * out_sp[1] * out_sp[2]
    og = cout // groups
    wg = w.data.reshape(groups, og, -1)

    pointwise = kernel == (1, 1, 1) and stride == (1, 1, 1) and not any(padding)
    kvol = kernel[0] * kernel[1] * kernel[2]
    if not pointwise and stride == (1, 1, 1) and x.requires_grad:
        # (G, og, cg, k) -> (G, cg, og, k) with the kernel reversed
        w_flip = (w.data.reshape(groups, og, cg, kvol)[..., ::-1]
                  .transpose(0, 2, 1, 3).reshape(groups, cg, og * kvol))
    if pointwise and groups == 1:
        cols = x.data.reshape(bsz, 1, cin, nv)
    else:
        xp = _pad(x.data, padding)
        cols = _im2col(xp, kernel, stride, out_sp).reshape(bsz, groups, -1, nv)
    out = np.matmul(wg, cols).reshape((bsz, cout) + out_sp)
    if b is not None:
        out += b.data.reshape(1, -1, 1, 1, 1)

    def backward(g):
        g4 = g.reshape(bsz, groups, og, nv)
        gx = gw = gb = None
        if x.requires_grad:
            if pointwise and groups == 1:
                gx = np.matmul(np.swapaxes(wg, -1, -2), g4).reshape(x.shape)
            elif stride == (1, 1, 1) and all(p < k for p, k in zip(padding, kernel)):
                # unit stride: the input gradient is a correlation of the padded
                # output gradient with the flipped, channel-transposed kernel
                gp = _pad(g, tuple(k - 1 - p for k, p in zip(kernel, padding)))
                gcols = _im2col(gp, kernel, stride, x.shape[2:]).reshape(bsz, groups, og * kvol, -1)
                gx = np.matmul(w_flip, gcols).reshape(x.shape)
            else:
                dcols = np.matmul(np.swapaxes(wg, -1, -2), g4)
                padded = tuple(n + 2 * p for n, p in zip(x.shape[2:], padding))
                gp = _col2im(dcols.reshape(bsz, cin, -1, nv), padded, kernel, stride, out_sp)
                pz, py, px = padding
                gx = gp[:, :, pz:pz + x.shape[2], py:py + x.shape[3], px:px + x.shape[4]]
        if w.requires_grad:
            gw = np.matmul(g4, np.swapaxes(cols, -1, -2)).sum(axis=0).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3, 4))
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return record(out, parents, backward)


def conv3d_transposed(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride=1, padding=0,
                      groups: int = 1) -> Tensor:
    """Adjoint of :func:`conv3d` with matching geometry.

    ``w`` is (Cin, Cout/groups, kz, ky, kx); output extent per axis is
    ``(n - 1) * s + k - 2 * p``.
    """
    stride, padding = triple(stride), triple(padding)
    if x.ndim != 5 or w.ndim != 5:
        raise ValueError(f"conv3d_transposed expects 5-D input and weight, got {x.shape} and {w.shape}")
    bsz, cin = x.shape[:2]
    if w.shape[0] != cin:
        raise ValueError(f"weight expects {w.shape[0]} input channels, input has {cin}")
    og = w.shape[1]
    cout = og * groups
    _check_groups(cin, cout, groups)
    kernel = w.shape[2:]
    if b is not None and b.shape != (cout,):
        raise ValueError(f"bias shape {b.shape} does not match {cout} output channels")
    in_sp = x.shape[2:]
    full = []
    for ax, n, k, s, p in zip(_AXES, in_sp, kernel, stride, padding):
        ext = (n - 1) * s + k
        if ext - 2 * p < 1:
            raise ValueError(f"transposed output extent along {ax} would be {ext - 2 * p}")
        full.append(ext)
    full = tuple(full)
    out_sp = tuple(f - 2 * p for f, p in zip(full, padding))
    nv = in_sp[0] * in_sp[1] * in_sp[2]
    ig = cin // groups
    wg = w.data.reshape(groups, ig, -1)
    x4 = x.data.reshape(bsz, groups, ig, nv)
    cols = np.matmul(np.swapaxes(wg, -1, -2), x4).reshape(bsz, cout, -1, nv)
    res = _col2im(cols, full, kernel, stride, in_sp)
    pz, py, px = padding
    out = res[:, :, pz:pz + out_sp[0], py:py + out_sp[1], px:px + out_sp[2]]
    if any(padding):
        out = np.ascontiguousarray(out)
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1, 1)

    def backward(g):
        gx = gw = gb = None
        gp = _pad(g, padding)
        gcols = _im2col(gp, kernel, stride, in_sp).reshape(bsz, groups, -1, nv)
        if x.requires_grad:
            gx = np.matmul(wg, gcols).reshape(x.shape)
        if w.requires_grad:
            gw = np.matmul(x4, np.swapaxes(gcols, -1, -2)).sum(axis=0).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3, 4))
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return record(out, parents, backward)


# -- resampling -------------------------------------------------------------------

def avg_pool3d(x: Tensor, r: int) -> Tensor:
    """Non-overlapping mean pooling with window and stride ``r``."""
    if r == 1:
        return x
    bsz, c, z, y, w = x.shape
    for ax, n in zip(_AXES, (z, y, w)):
        if n % r:
            raise ValueError(f"extent {n} along {ax} is not divisible by pooling ratio {r}")
    oz, oy, ox = z // r, y // r, w // r
    out = x.data.reshape(bsz, c, oz, r, oy, r, ox, r).mean(axis=(3, 5, 7))
    scale = 1.0 / r ** 3

    def backward(g):
        g8 = np.broadcast_to(g.reshape(bsz, c, oz, 1, oy, 1, ox, 1) * scale, (bsz, c, oz, r, oy, r, ox, r))
        return (g8.reshape(x.shape),)

    return record(out, (x,), backward)


def linear_interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """(n_out, n_in) 1-D linear interpolation weights, half-pixel centers, edge-clamped."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        m[i, i0] += 1.0 - lam
        m[i, i1] += lam
    return m.astype(dtype)


def _apply_axis(a: np.ndarray, m: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(m, a, axes=(1, axis)), 0, axis)


def trilinear_resize(x: Tensor, size) -> Tensor:
    """Resize the last three axes with separable linear interpolation."""
    size = triple(size)
    if any(s < 1 for s in size):
        raise ValueError(f"target extents must be >= 1, got {size}")
    if tuple(x.shape[-3:]) == size:
        return x
    nd = x.ndim
    mats = [linear_interp_matrix(n, s, x.dtype) for n, s in zip(x.shape[-3:], size)]
    out = x.data
    for i, m in enumerate(mats):
        if m.shape[0] != m.shape[1]:
            out = _apply_axis(out, m, nd - 3 + i)
    out = np.ascontiguousarray(out)

    def backward(g):
        for i, m in enumerate(mats):
            if m.shape[0] != m.shape[1]:
                g = _apply_axis(g, m.T, nd - 3 + i)
        return (np.ascontiguousarray(g),)

    return record(out, (x,), backward)
