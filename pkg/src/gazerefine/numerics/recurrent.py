"""Recurrent cells with vector state and their convolutional counterparts.

Equations (``*`` is matmul for vector cells and 3x3 convolution for spatial
ones, ``.`` is elementwise):

* RNN:  h' = tanh(Wx*x + Wh*h + b)
* LSTM: i, f, o = sigmoid(.), g = tanh(.);  c' = f.c + i.g;  h' = o.tanh(c')
* GRU:  z, r = sigmoid(.);  n = tanh(Wx*x + Wh*(r.h) + b);  h' = (1-z).h + z.n

Input-side projections do not depend on the state, so :meth:`unroll` computes
them for all time steps in one batched call and loops only over the
state-side ones.
"""

from __future__ import annotations

import numpy as np

from gazerefine.errors import ShapeError
from gazerefine.numerics.autodiff import as_var, sigmoid, stack, tanh, take_time
from gazerefine.numerics.layers import Conv2d, Dense, Module

CELL_KINDS = ("rnn", "lstm", "gru")


class _Cell(Module):
    n_gates = 1
    n_state_gates = 1
    has_cell_state = False

    def __init__(self, rng, n_in, n_hidden, spatial, dtype=np.float32):
        super().__init__()
        self.n_in, self.n_hidden, self.spatial = n_in, n_hidden, spatial
        g = self.n_gates * n_hidden
        gh = self.n_state_gates * n_hidden
        if spatial:
            self.x_proj = self.add_module("x_proj", Conv2d(rng, n_in, g, 3, gain="tanh", dtype=dtype))
            self.h_proj = self.add_module("h_proj", Conv2d(rng, n_hidden, gh, 3, gain="tanh", bias=False,
                                                           dtype=dtype))
        else:
            self.x_proj = self.add_module("x_proj", Dense(rng, n_in, g, gain="tanh", dtype=dtype))
            self.h_proj = self.add_module("h_proj", _NoBiasDense(rng, n_hidden, gh, dtype=dtype))

    def initial_state(self, x):
        """Zero state matching a single-step input ``x``."""
        shape = x.shape[:-1] + (self.n_hidden,)
        if self.spatial:
            shape = _spatial_state_shape(x.shape, self.n_hidden, self.x_proj)
        h = as_var(np.zeros(shape, dtype=x.dtype))
        if self.has_cell_state:
            return (h, as_var(np.zeros(shape, dtype=x.dtype)))
        return h

    def _check_state(self, x, state):
        h = state[0] if self.has_cell_state else state
        expected = x.shape[:-1] + (self.n_hidden,)
        if self.spatial:
            expected = _spatial_state_shape(x.shape, self.n_hidden, self.x_proj)
        if h.shape != expected:
            raise ShapeError(f"{type(self).__name__}: state shape mismatch", h.shape, expected)

    def step(self, x, state=None):
        """One time step; returns ``(output, new_state)``."""
        if state is None:
            state = self.initial_state(x)
        self._check_state(x, state)
        return self._step(self.x_proj(x), state)

    def unroll(self, xs, state=None):
        """Run over a batch-major sequence ``xs`` of shape (N, T, ...)."""
        n, t = xs.shape[:2]
        flat = xs.reshape((n * t,) + xs.shape[2:])
        proj = self.x_proj(flat)
        proj = proj.reshape((n, t) + proj.shape[1:])
        if state is None:
            h = as_var(np.zeros((n,) + proj.shape[2:-1] + (self.n_hidden,), dtype=proj.dtype))
            state = (h, as_var(np.zeros_like(h.value))) if self.has_cell_state else h
        outputs = []
        for k in range(t):
            out, state = self._step(take_time(proj, k), state)
            outputs.append(out)
        return stack(outputs, axis=1), state

    def _split(self, v):
        hdim = self.n_hidden
        return [v[..., i * hdim:(i + 1) * hdim] for i in range(self.n_gates)]


class _NoBiasDense(Dense):
    def __init__(self, rng, n_in, n_out, dtype=np.float32):
        Module.__init__(self)
        self.n_in, self.n_out = n_in, n_out
        bound = np.sqrt(3.0 / n_in)
        self.w = self.add_param("w", rng.uniform(-bound, bound, size=(n_in, n_out)).astype(dtype))
        self.b = None

    def __call__(self, x):
        return x @ self.w


def _spatial_state_shape(x_shape, n_hidden, conv):
    n, h, w, _ = x_shape
    ho = (h + 2 * conv.padding - conv.k) // conv.stride + 1
    wo = (w + 2 * conv.padding - conv.k) // conv.stride + 1
    return (n, ho, wo, n_hidden)


class RNNCell(_Cell):
    def _step(self, xp, h):
        h = tanh(xp + self.h_proj(h))
        return h, h


class LSTMCell(_Cell):
    n_gates = 4
    n_state_gates = 4
    has_cell_state = True

    def __init__(self, rng, n_in, n_hidden, spatial, dtype=np.float32):
        super().__init__(rng, n_in, n_hidden, spatial, dtype)
        # forget-gate bias starts at 1 so early gradients flow through time
        self.x_proj.b.value[n_hidden:2 * n_hidden] = 1.0

    def _step(self, xp, state):
        h, c = state
        i, f, o, g = self._split(xp + self.h_proj(h))
        c = sigmoid(f) * c + sigmoid(i) * tanh(g)
        h = sigmoid(o) * tanh(c)
        return h, (h, c)


class GRUCell(_Cell):
    n_gates = 3
    n_state_gates = 2

    def __init__(self, rng, n_in, n_hidden, spatial, dtype=np.float32):
        super().__init__(rng, n_in, n_hidden, spatial, dtype)
        if spatial:
            self.hn_proj = self.add_module("hn_proj", Conv2d(rng, n_hidden, n_hidden, 3, gain="tanh",
                                                             bias=False, dtype=dtype))
        else:
            self.hn_proj = self.add_module("hn_proj", _NoBiasDense(rng, n_hidden, n_hidden, dtype=dtype))

    def _step(self, xp, h):
        xz, xr, xn = self._split(xp)
        hz_hr = self.h_proj(h)
        hdim = self.n_hidden
        z = sigmoid(xz + hz_hr[..., :hdim])
        r = sigmoid(xr + hz_hr[..., hdim:])
        n = tanh(xn + self.hn_proj(r * h))
        h = (1.0 - z) * h + z * n
        return h, h


_CELLS = {"rnn": RNNCell, "lstm": LSTMCell, "gru": GRUCell}


def make_cell(kind, rng, n_in, n_hidden, spatial=False, dtype=np.float32):
    try:
        cls = _CELLS[kind]
    except KeyError:
        raise ValueError(f"unknown recurrent cell {kind!r}; expected one of {CELL_KINDS}") from None
    return cls(rng, n_in, n_hidden, spatial, dtype)
