"""Layers built on :mod:`gazerefine.numerics.autodiff`.

Image tensors are channels-last: ``(N, H, W, C)``.  Convolution kernels are
stored as ``(kh, kw, C_in, C_out)``.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from gazerefine.errors import ShapeError
from gazerefine.numerics.autodiff import Var, as_var, concat, parameter, relu, sigmoid, tanh

# upper bound on im2col buffer size per chunk, in elements
_IM2COL_BUDGET = 1 << 22


def _im2col(xp, kh, kw, stride, ho, wo):
    n, _, _, c = xp.shape
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
    return cols.reshape(n * ho * wo, kh * kw * c)


def conv_output_size(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def conv2d(x, w, b=None, stride=1, padding=0):
    """2-D cross-correlation, channels-last.

    ``x``: (N, H, W, C_in); ``w``: (kh, kw, C_in, C_out); ``b``: (C_out,).
    The im2col buffer is rebuilt during backward instead of being kept alive.
    """
    x, w = as_var(x), as_var(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d expects 4-d input and kernel", x.shape, w.shape)
    n, h, wid, c = x.shape
    kh, kw, cin, cout = w.shape
    if cin != c:
        raise ShapeError("conv2d: input channels do not match kernel", x.shape, w.shape)
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wid, kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError("conv2d: kernel larger than padded input", x.shape, w.shape)
    xp = np.pad(x.value, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.value
    if stride == 1:
        return _conv2d_shifted(x, w, b, xp, ho, wo)
    wmat = w.value.reshape(kh * kw * cin, cout)
    per_item = ho * wo * kh * kw * cin
    chunk = max(1, _IM2COL_BUDGET // max(per_item, 1))

    out = np.empty((n, ho, wo, cout), dtype=np.result_type(x.dtype, w.dtype))
    for s in range(0, n, chunk):
        cols = _im2col(xp[s:s + chunk], kh, kw, stride, ho, wo)
        out[s:s + chunk] = (cols @ wmat).reshape(-1, ho, wo, cout)
    if b is not None:
        b = as_var(b)
        out += b.value

    def backward(g):
        gw = np.zeros_like(wmat) if w.requires_grad else None
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for s in range(0, n, chunk):
            gs = g[s:s + chunk].reshape(-1, cout)
            if gw is not None:
                cols = _im2col(xp[s:s + chunk], kh, kw, stride, ho, wo)
                gw += cols.T @ gs
            if gxp is not None:
                gcols = (gs @ wmat.T).reshape(-1, ho, wo, kh, kw, cin)
                target = gxp[s:s + chunk]
                for i in range(kh):
                    for j in range(kw):
                        target[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += gcols[:, :, :, i, j, :]
        gx = None
        if gxp is not None:
            gx = gxp[:, padding:padding + h, padding:padding + wid, :] if padding else gxp
        grads = [gx, None if gw is None else gw.reshape(w.shape)]
        if b is not None:
            grads.append(g.sum(axis=(0, 1, 2)) if b.requires_grad else None)
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return Var(out, parents, backward)


def _conv2d_shifted(x, w, b, xp, ho, wo):
    """Stride-1 convolution as one matmul per kernel tap.

    On the flattened padded input (N*Hp*Wp, C) a tap (i, j) is a constant row
    offset ``i*Wp + j``, so every product reads a contiguous block and no
    im2col buffer is needed.  Rows that straddle image borders are computed
    and discarded.
    """
    n, hp, wp, cin = xp.shape
    kh, kw, _, cout = w.shape
    xf = np.ascontiguousarray(xp).reshape(n * hp * wp, cin)
    m = n * hp * wp - ((kh - 1) * wp + kw - 1)
    taps = [(i, j, i * wp + j) for i in range(kh) for j in range(kw)]
    dtype = np.result_type(x.dtype, w.dtype)
    full = np.zeros((n * hp * wp, cout), dtype=dtype)
    for i, j, off in taps:
        full[:m] += xf[off:off + m] @ w.value[i, j]
    out = full.reshape(n, hp, wp, cout)[:, :ho, :wo]
    if b is not None:
        b = as_var(b)
        out = out + b.value
    else:
        out = np.ascontiguousarray(out)
    h, wid = x.shape[1:3]
    pad_h, pad_w = (hp - h) // 2, (wp - wid) // 2

    def backward(g):
        gfull = np.zeros((n, hp, wp, cout), dtype=g.dtype)
        gfull[:, :ho, :wo] = g
        gfull = gfull.reshape(n * hp * wp, cout)[:m]
        gw = np.zeros_like(w.value) if w.requires_grad else None
        gxf = np.zeros_like(xf) if x.requires_grad else None
        for i, j, off in taps:
            if gw is not None:
                gw[i, j] = xf[off:off + m].T @ gfull
            if gxf is not None:
                gxf[off:off + m] += gfull @ w.value[i, j].T
        gx = None
        if gxf is not None:
            gx = gxf.reshape(n, hp, wp, cin)[:, pad_h:pad_h + h, pad_w:pad_w + wid]
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 1, 2)) if b.requires_grad else None)
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return Var(out, parents, backward)


def upsample_nearest(x, factor=2):
    x = as_var(x)
    n, h, w, c = x.shape
    out = np.repeat(np.repeat(x.value, factor, axis=1), factor, axis=2)

    def backward(g):
        return (g.reshape(n, h, factor, w, factor, c).sum(axis=(2, 4)),)

    return Var(out, (x,), backward)


def dense(x, w, b=None):
    out = as_var(x) @ w
    return out if b is None else out + b


ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid, None: lambda v: v}


class Module:
    """Container with named parameters and named child modules."""

    def __init__(self):
        self._params = OrderedDict()
        self._children = OrderedDict()

    def add_param(self, name, value):
        var = parameter(value, name=name)
        self._params[name] = var
        return var

    def add_module(self, name, module):
        self._children[name] = module
        return module

    def named_parameters(self, prefix=""):
        out = OrderedDict()
        for name, var in self._params.items():
            out[prefix + name] = var
        for cname, child in self._children.items():
            if child is not None:
                out.update(child.named_parameters(prefix + cname + "."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def num_parameters(self):
        return int(sum(v.value.size for v in self.parameters()))

    def state_dict(self):
        return OrderedDict((k, v.value.copy()) for k, v in self.named_parameters().items())

    def load_state_dict(self, state):
        params = self.named_parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, var in params.items():
            value = np.asarray(state[name])
            if value.shape != var.shape:
                raise ShapeError(f"parameter {name!r}", var.shape, value.shape)
            var.value = value.astype(var.dtype, copy=True)

    def astype(self, dtype):
        for var in self.parameters():
            var.value = var.value.astype(dtype)
        return self

    def zero_grad(self):
        for var in self.parameters():
            var.grad = None


def init_uniform(rng, shape, fan_in, gain="relu", dtype=np.float32):
    """Uniform fan-in init: bound sqrt(6/fan_in) for relu, sqrt(3/fan_in) otherwise."""
    bound = np.sqrt((6.0 if gain == "relu" else 3.0) / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Dense(Module):
    def __init__(self, rng, n_in, n_out, gain="relu", dtype=np.float32):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.w = self.add_param("w", init_uniform(rng, (n_in, n_out), n_in, gain, dtype))
        self.b = self.add_param("b", np.zeros(n_out, dtype=dtype))

    def __call__(self, x):
        if x.shape[-1] != self.n_in:
            raise ShapeError("Dense: feature size mismatch", x.shape, self.w.shape)
        return dense(x, self.w, self.b)


class Conv2d(Module):
    def __init__(self, rng, c_in, c_out, k=3, stride=1, padding=None, gain="relu", bias=True,
                 dtype=np.float32):
        super().__init__()
        self.c_in, self.c_out, self.k, self.stride = c_in, c_out, k, stride
        self.padding = k // 2 if padding is None else padding
        fan_in = k * k * c_in
        self.w = self.add_param("w", init_uniform(rng, (k, k, c_in, c_out), fan_in, gain, dtype))
        self.b = self.add_param("b", np.zeros(c_out, dtype=dtype)) if bias else None

    def __call__(self, x):
        return conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


def channel_concat(*items):
    return concat(items, axis=-1)
