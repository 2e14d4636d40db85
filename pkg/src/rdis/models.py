"""Trainable imputers.

All imputers map ``(values, mask)`` of shape ``(B, T, D)`` to an estimate of
every cell.  The GRU variants never let the estimate at step ``t`` see
``x_t``: the unidirectional model predicts from ``h_{t-1}``, the
bidirectional model from ``[h^f_{t-1}; h^b_{t+1}]``.  Wherever an input is
missing the recurrent cell is fed its own directional estimate instead.

Two GRU paths exist.  :func:`gru_scan` runs the whole sequence through the
fused kernel (compiled or numpy, see :mod:`rdis.kernels`) as a single node on
the tape.  :func:`gru_scan_reference` composes :func:`gru_cell` from tape
primitives one step at a time; it is slow and exists to cross-check the
kernel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .autodiff import (
    Tensor,
    add,
    add_bias,
    concat,
    flip,
    matmul,
    mul,
    reshape,
    sigmoid,
    slice_last,
    stack,
    sub,
    tanh,
)
from .errors import ContractError, DimensionError

CHECKPOINT_MAGIC = b"RDIS-PARAMS v1\n"


def _uniform(rng, shape, bound):
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


@dataclass
class GruParams:
    """One GRU direction plus its linear estimate head.

    Gate weights are packed along the last axis in ``z, r, h`` order.
    """

    W: Tensor  # (D_in, 3H) input -> gates
    U: Tensor  # (H, 3H) hidden -> gates
    b: Tensor  # (3H,)
    W_out: Tensor  # (H, D)
    b_out: Tensor  # (D,)

    @classmethod
    def init(cls, d_in, hidden, rng, d_out=None):
        d_out = d_in if d_out is None else d_out
        bound = 1.0 / math.sqrt(hidden)
        return cls(
            W=_uniform(rng, (d_in, 3 * hidden), bound),
            U=_uniform(rng, (hidden, 3 * hidden), bound),
            b=_zeros(3 * hidden),
            W_out=_uniform(rng, (hidden, d_out), bound),
            b_out=_zeros(d_out),
        )

    @classmethod
    def zeros(cls, d_in, hidden, d_out=None):
        d_out = d_in if d_out is None else d_out
        return cls(
            W=_zeros((d_in, 3 * hidden)),
            U=_zeros((hidden, 3 * hidden)),
            b=_zeros(3 * hidden),
            W_out=_zeros((hidden, d_out)),
            b_out=_zeros(d_out),
        )

    @property
    def hidden(self):
        return self.U.shape[0]

    def gate(self, name):
        """``(W, U, b)`` arrays for gate ``"z"``, ``"r"`` or ``"h"``."""
        k = "zrh".index(name)
        H = self.hidden
        sl = slice(k * H, (k + 1) * H)
        return self.W.data[:, sl], self.U.data[:, sl], self.b.data[sl]

    def named(self, prefix=""):
        return {
            f"{prefix}W": self.W,
            f"{prefix}U": self.U,
            f"{prefix}b": self.b,
            f"{prefix}W_out": self.W_out,
            f"{prefix}b_out": self.b_out,
        }


@dataclass
class HeadParams:
    W: Tensor  # (2H, D)
    b: Tensor  # (D,)

    def named(self, prefix="head."):
        return {f"{prefix}W": self.W, f"{prefix}b": self.b}


@dataclass
class LinearParams:
    W: Tensor  # (D, D)
    b: Tensor  # (D,)

    def named(self, prefix=""):
        return {f"{prefix}W": self.W, f"{prefix}b": self.b}


def _check_series(x, m):
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if x.shape != m.shape:
        raise DimensionError(f"values {x.shape} and mask {m.shape} differ")
    if x.ndim != 3:
        raise DimensionError(f"expected (B, T, D) input, got {x.shape}")
    if x.shape[1] == 0:
        raise DimensionError("series has no time steps")
    return x, m


def gru_cell(x_t, h_prev, p):
    """One GRU step on the tape.

    ``x_t`` is ``(B, D_in)`` (or a ``D_in`` vector) and ``h_prev`` ``(B, H)``
    (or an ``H`` vector).
    """
    vector = x_t.ndim == 1 if isinstance(x_t, Tensor) else np.ndim(x_t) == 1
    if vector:
        x_t = reshape(x_t, (1, -1))
        h_prev = reshape(h_prev, (1, -1))
    if x_t.shape[-1] != p.W.shape[0] or h_prev.shape[-1] != p.hidden:
        raise DimensionError(
            f"gru_cell: input {x_t.shape} / hidden {h_prev.shape} do not fit W {p.W.shape}"
        )
    H = p.hidden
    a = add_bias(matmul(x_t, p.W), p.b)
    Uz, Ur, Uh = (slice_last(p.U, k * H, (k + 1) * H) for k in range(3))
    z = sigmoid(add(slice_last(a, 0, H), matmul(h_prev, Uz)))
    r = sigmoid(add(slice_last(a, H, 2 * H), matmul(h_prev, Ur)))
    c = tanh(add(slice_last(a, 2 * H, 3 * H), matmul(mul(r, h_prev), Uh)))
    h = add(h_prev, mul(z, sub(c, h_prev)))
    return reshape(h, (-1,)) if vector else h


def gru_scan_reference(x, m, p, fill=True):
    """Tape-composed scan; returns ``(hprev, yhat)`` like :func:`gru_scan`."""
    x, m = _check_series(x, m)
    B, T, _ = x.shape
    h = Tensor(np.zeros((B, p.hidden)))
    hs, ys = [], []
    for t in range(T):
        y = add_bias(matmul(h, p.W_out), p.b_out)
        hs.append(h)
        ys.append(y)
        mt = m[:, t]
        u = mt * x[:, t]
        if fill:
            u = add(mul(y, 1.0 - mt), u)
        h = gru_cell(Tensor(u) if not isinstance(u, Tensor) else u, h, p)
    return stack(hs, axis=1), stack(ys, axis=1)


def gru_scan(x, m, p, fill=True):
    """Fused scan as one tape node; returns ``(hprev, yhat)``.

    ``hprev[:, t]`` is the hidden state before step ``t`` and ``yhat[:, t]``
    the directional estimate computed from it.
    """
    x, m = _check_series(x, m)
    D_out = p.W_out.shape[1]
    H = p.hidden
    hprev, yhat, cache = kernels.scan_forward(
        x, m, p.W.data, p.U.data, p.b.data, p.W_out.data, p.b_out.data, fill
    )

    def bw(g):
        return kernels.scan_backward(cache, g[..., :H], g[..., H:])

    packed = Tensor.from_op(
        np.concatenate([hprev, yhat], axis=-1), (p.W, p.U, p.b, p.W_out, p.b_out), bw, "gru_scan"
    )
    return slice_last(packed, 0, H), slice_last(packed, H, H + D_out)


def forward_uni(x, m, p, fill=True, reference=False):
    scan = gru_scan_reference if reference else gru_scan
    _, yhat = scan(x, m, p, fill)
    return yhat


def forward_bi(x, m, pf, pb, head, fill=True, reference=False):
    scan = gru_scan_reference if reference else gru_scan
    x, m = _check_series(x, m)
    hf, _ = scan(x, m, pf, fill)
    hb_rev, _ = scan(x[:, ::-1], m[:, ::-1], pb, fill)
    hb = flip(hb_rev, axis=1)
    return add_bias(matmul(concat([hf, hb], axis=-1), head.W), head.b)


def forward_linear(x, m, p):
    """Per-step affine map of the zero-filled input."""
    x, m = _check_series(x, m)
    if p.W.shape[0] != x.shape[-1]:
        raise DimensionError(f"linear weights {p.W.shape} do not fit D={x.shape[-1]}")
    return add_bias(matmul(Tensor(x * m), p.W), p.b)


class Imputer:
    """Common interface: named parameters, a differentiable forward, checkpoints."""

    kind = "base"

    def parameters(self):
        raise NotImplementedError

    def forward(self, x, m):
        raise NotImplementedError

    def config(self):
        raise NotImplementedError

    def __call__(self, x, m):
        return self.forward(x, m)

    def predict(self, x, m):
        """Estimates as a plain array; accepts ``(T, D)`` or ``(B, T, D)``."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 2
        if single:
            x, m = x[None], np.asarray(m, dtype=np.float64)[None]
        out = self.forward(x, m).data
        return out[0] if single else out

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def load_state_dict(self, state):
        params = self.parameters()
        if set(state) != set(params):
            raise ContractError(f"parameter names differ: {sorted(set(state) ^ set(params))}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(f"{k}: shape {arr.shape}, expected {p.shape}")
            p.data[...] = arr

    def clone(self):
        twin = build_imputer(**self.config())
        twin.load_state_dict(self.state_dict())
        return twin


class GRUImputer(Imputer):
    kind = "gru"

    def __init__(self, d, hidden=100, rng=None, fill=True, zero=False):
        self.d, self.hidden, self.fill = d, hidden, fill
        if zero:
            self.cell = GruParams.zeros(d, hidden)
        else:
            self.cell = GruParams.init(d, hidden, np.random.default_rng(rng))

    def parameters(self):
        return self.cell.named()

    def forward(self, x, m, reference=False):
        return forward_uni(x, m, self.cell, self.fill, reference)

    def config(self):
        return {"kind": self.kind, "d": self.d, "hidden": self.hidden, "fill": self.fill}


class BiGRUImputer(Imputer):
    kind = "bigru"

    def __init__(self, d, hidden=100, rng=None, fill=True, zero=False):
        self.d, self.hidden, self.fill = d, hidden, fill
        if zero:
            self.fwd = GruParams.zeros(d, hidden)
            self.bwd = GruParams.zeros(d, hidden)
            self.head = HeadParams(_zeros((2 * hidden, d)), _zeros(d))
        else:
            rng = np.random.default_rng(rng)
            self.fwd = GruParams.init(d, hidden, rng)
            self.bwd = GruParams.init(d, hidden, rng)
            bound = 1.0 / math.sqrt(2 * hidden)
            self.head = HeadParams(_uniform(rng, (2 * hidden, d), bound), _zeros(d))

    def parameters(self):
        return {**self.fwd.named("f."), **self.bwd.named("b."), **self.head.named("head.")}

    def forward(self, x, m, reference=False):
        return forward_bi(x, m, self.fwd, self.bwd, self.head, self.fill, reference)

    def config(self):
        return {"kind": self.kind, "d": self.d, "hidden": self.hidden, "fill": self.fill}


class LinearImputer(Imputer):
    kind = "linear"

    def __init__(self, d, hidden=None, rng=None, fill=True, zero=False):
        self.d = d
        if zero:
            self.lin = LinearParams(_zeros((d, d)), _zeros(d))
        else:
            rng = np.random.default_rng(rng)
            self.lin = LinearParams(_uniform(rng, (d, d), 1.0 / math.sqrt(d)), _zeros(d))

    def parameters(self):
        return self.lin.named()

    def forward(self, x, m):
        return forward_linear(x, m, self.lin)

    def config(self):
        return {"kind": self.kind, "d": self.d}


IMPUTERS = {"gru": GRUImputer, "bigru": BiGRUImputer, "linear": LinearImputer}


def build_imputer(kind, d, hidden=100, rng=None, fill=True, zero=False):
    try:
        cls = IMPUTERS[kind]
    except KeyError:
        raise ContractError(f"unknown model {kind!r}; choose from {sorted(IMPUTERS)}") from None
    return cls(d, hidden=hidden, rng=rng, fill=fill, zero=zero)


def save_params(path, model):
    """Write a checkpoint.

    Layout: the magic line ``RDIS-PARAMS v1``, one line of JSON with the model
    config and an ordered list of ``{"name", "shape"}`` records, then every
    array as little-endian float64 in C order, concatenated in list order.
    """
    state = model.state_dict()
    header = {
        "model": model.config(),
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in state.items()],
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for v in state.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_params(path):
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != CHECKPOINT_MAGIC:
            raise ContractError(f"{path}: not an rdis checkpoint (magic {magic[:20]!r})")
        header = json.loads(fh.readline())
        state = {}
        for rec in header["arrays"]:
            shape = tuple(rec["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise ContractError(f"{path}: truncated at array {rec['name']!r}")
            state[rec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
    model = build_imputer(**header["model"], zero=True)
    model.load_state_dict(state)
    return model
