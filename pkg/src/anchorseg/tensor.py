"""Dense tensors with reverse-mode differentiation on an explicit tape.

Single-threaded per tape. Training runs in float32; gradient checking
constructs float64 graphs (finite differences are unreliable in float32).
No implicit broadcasting: binary elementwise ops require equal shapes so
that shape bugs in the conditioning pipeline fail loudly. The only
broadcast-like ops are explicit: ``scale_add`` (scalar affine) and
``add_row_bias`` (bias vector over matrix rows).
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError

DEFAULT_DTYPE = np.float32

_TAPE_STACK: list["Tape"] = []


class _Node:
    __slots__ = ("parents", "backward_fn", "tensor")

    def __init__(self, parents, backward_fn, tensor):
        self.parents = parents          # node ids of inputs, already on tape
        self.backward_fn = backward_fn  # grad_out -> tuple of grads (or None) per parent
        self.tensor = tensor


class Tape:
    """Records operations in topological order (parents precede children)."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def _append(self, node: _Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1


def active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """Row-major dense array, optionally tracked on the active tape."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self._tape: Optional[Tape] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; full op set lives in module functions below
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale_add(self, float(other), 0.0)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale_add(self, -1.0, 0.0)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _track(x: Tensor, tape: Tape) -> int:
    """Return x's node id on tape, registering it as a leaf if needed."""
    if x.node_id is not None and x._tape is tape:
        return x.node_id
    x.node_id = tape._append(_Node((), None, x))
    x._tape = tape
    return x.node_id


def record(out_data: np.ndarray, parents: Sequence[Tensor],
           backward_fn: Callable) -> Tensor:
    """Create the op output, recording a tape node when gradients are needed.

    ``backward_fn(grad_out)`` must return one array (or None) per parent, in
    order. Parents that do not require grad receive-but-ignore their slot.
    """
    tape = active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        ids = tuple(_track(p, tape) for p in parents)
        out.node_id = tape._append(_Node(ids, backward_fn, out))
        out._tape = tape
    return out


def backward(loss: Tensor) -> None:
    """Reverse-topological gradient accumulation from a scalar loss.

    Adds into ``.grad`` of every leaf tensor reached (accumulation is
    addition, so two backward passes sum). Tensors not reached keep their
    existing gradient (zeros for fresh parameters).
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node_id is None or loss._tape is None:
        raise ContractError("loss is not on a tape (no recorded operations)")
    tape = loss._tape
    grads: dict[int, np.ndarray] = {
        loss.node_id: np.ones_like(loss.data)
    }
    for nid in range(loss.node_id, -1, -1):
        g = grads.pop(nid, None)
        if g is None:
            continue
        node = tape.nodes[nid]
        if node.backward_fn is None:
            # leaf
            t = node.tensor
            if t.requires_grad:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += g
            continue
        parent_grads = node.backward_fn(g)
        for pid, pg in zip(node.parents, parent_grads):
            if pg is None:
                continue
            if pid in grads:
                # out-of-place: backward rules may hand out aliased arrays
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg


# ---------------------------------------------------------------------------
# elementwise and scalar ops
# ---------------------------------------------------------------------------

def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "div")
    ad, bd = a.data, b.data
    return record(ad / bd, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)))


def scale_add(a: Tensor, mult: float, shift: float = 0.0) -> Tensor:
    """y = mult * a + shift with python scalars (the one allowed broadcast)."""
    out = a.data * a.dtype.type(mult) + a.dtype.type(shift)
    return record(out, (a,), lambda g: (g * a.dtype.type(mult),))


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    return record(s, (a,), lambda g: (g * s * (1.0 - s),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return record(np.where(mask, a.data, a.dtype.type(0)), (a,),
                  lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return record(t, (a,), lambda g: (g * (1.0 - t * t),))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return record(np.log(ad), (a,), lambda g: (g / ad,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    return record(out, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions / structural ops
# ---------------------------------------------------------------------------

def tsum(a: Tensor) -> Tensor:
    return record(np.asarray(a.data.sum(), dtype=a.dtype), (a,),
                  lambda g: (np.full_like(a.data, g),))


def tmean(a: Tensor) -> Tensor:
    n = a.size
    return record(np.asarray(a.data.mean(), dtype=a.dtype), (a,),
                  lambda g: (np.full_like(a.data, g / n),))


def mean_rows(a: Tensor) -> Tensor:
    """Mean over axis 0 of a [N, d] matrix -> [d] vector."""
    n = a.shape[0]
    return record(a.data.mean(axis=0), (a,),
                  lambda g: (np.tile(g / n, (n, 1)),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose2d(a: Tensor) -> Tensor:
    return record(np.ascontiguousarray(a.data.T), (a,),
                  lambda g: (np.ascontiguousarray(g.T),))


def concat_vec(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise DimensionError(f"concat_vec wants 1-D operands, got {a.shape}, {b.shape}")
    na = a.size
    return record(np.concatenate([a.data, b.data]), (a, b),
                  lambda g: (g[:na], g[na:]))


def stack_rows(vs: Sequence[Tensor]) -> Tensor:
    if not vs:
        raise ContractError("stack_rows of an empty sequence")
    out = np.stack([v.data for v in vs], axis=0)
    return record(out, tuple(vs), lambda g: tuple(g[i] for i in range(len(vs))))


def take_row(a: Tensor, idx: int) -> Tensor:
    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)
    return record(a.data[idx].copy(), (a,), bwd)


def gather_rows(table: Tensor, indices: Sequence[int]) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return record(table.data[idx].copy(), (table,), bwd)


def softmax_rows(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - dot),)

    return record(s, (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shape {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add_row_bias(m: Tensor, bias: Tensor) -> Tensor:
    """Add a [d] bias to every row of an [N, d] matrix (explicit broadcast)."""
    if m.data.ndim != 2 or bias.data.ndim != 1 or m.shape[1] != bias.shape[0]:
        raise DimensionError(f"add_row_bias: shape {m.shape} vs {bias.shape}")
    return record(m.data + bias.data, (m, bias), lambda g: (g, g.sum(axis=0)))


@lru_cache(maxsize=256)
def _conv_indices(cin, h, w, kh, kw, stride):
    """Flat gather indices into the zero-padded input for im2col."""
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    hp, wp = h + 2 * ph, w + 2 * pw
    out_h = (h - 1) // stride + 1
    out_w = (w - 1) // stride + 1
    oy = np.arange(out_h) * stride
    ox = np.arange(out_w) * stride
    ky, kx = np.meshgrid(np.arange(kh), np.arange(kw), indexing="ij")
    c = np.arange(cin)
    # [out_h, out_w, cin, kh, kw] flat positions in the padded volume
    rows = oy[:, None, None, None, None] + ky[None, None, None, :, :]
    cols = ox[None, :, None, None, None] + kx[None, None, None, :, :]
    chan = c[None, None, :, None, None]
    flat = (chan * hp + rows) * wp + cols
    flat = np.broadcast_to(flat, (out_h, out_w, cin, kh, kw))
    return flat.reshape(out_h * out_w, cin * kh * kw).copy(), (hp, wp, out_h, out_w, ph, pw)


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """Cross-correlation with zero 'same' padding: [Cin,H,W] -> [Cout,H',W'].

    Odd kernels only; H' = ceil(H/stride). Stride 1 preserves extents.
    """
    if x.data.ndim != 3 or kernels.data.ndim != 4:
        raise DimensionError(f"conv2d: input {x.shape}, kernels {kernels.shape}")
    cin, h, w = x.shape
    cout, kcin, kh, kw = kernels.shape
    if kcin != cin:
        raise DimensionError(f"conv2d: input channels {cin} vs kernel channels {kcin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d needs odd kernel extents, got {kh}x{kw}")
    if bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias {bias.shape} vs out channels {cout}")

    idx, (hp, wp, out_h, out_w, ph, pw) = _conv_indices(cin, h, w, kh, kw, stride)
    xpad = np.zeros((cin, hp, wp), dtype=x.dtype)
    xpad[:, ph:ph + h, pw:pw + w] = x.data
    cols = xpad.reshape(-1)[idx]                      # [L, cin*kh*kw]
    wmat = kernels.data.reshape(cout, -1)             # [cout, cin*kh*kw]
    out = (cols @ wmat.T).T.reshape(cout, out_h, out_w) + bias.data[:, None, None]

    def bwd(g):
        gf = g.reshape(cout, -1)                      # [cout, L]
        d_w = (gf @ cols).reshape(kernels.shape)
        d_b = gf.sum(axis=1)
        d_cols = gf.T @ wmat                          # [L, cin*kh*kw]
        d_xpad = np.bincount(idx.reshape(-1), weights=d_cols.reshape(-1),
                             minlength=cin * hp * wp)
        d_xpad = d_xpad.reshape(cin, hp, wp).astype(x.dtype)
        return (d_xpad[:, ph:ph + h, pw:pw + w], d_w, d_b)

    return record(out, (x, kernels, bias), bwd)


def conv2d_same(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Stride-1 'same' convolution: output spatial extents equal the input's."""
    return conv2d(x, kernels, bias, stride=1)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def minmax_normalize(s: Tensor, eps: float = 1e-8) -> Tensor:
    """(s - min) / (max - min + eps), computed over all elements.

    Differentiable away from argmin/argmax ties; constant input maps to
    zeros (the eps guard).
    """
    flat = s.data.reshape(-1)
    a = int(flat.argmin())
    b = int(flat.argmax())
    lo, hi = flat[a], flat[b]
    denom = hi - lo + s.dtype.type(eps)
    y = (s.data - lo) / denom

    def bwd(g):
        gy = g / denom
        gsum = g.sum() / denom
        ysum = (g * y).sum() / denom
        d = gy.copy()
        df = d.reshape(-1)
        df[a] += -gsum + ysum
        df[b] += -ysum
        return (d,)

    return record(y, (s,), bwd)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(fn: Callable[[], Tensor], tensors: Sequence[tuple[str, Tensor]],
               eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` re-evaluates the scalar loss from the current tensor values and
    must be deterministic; run it on float64 tensors. Relative error per
    entry is |analytic - cd| / max(|analytic|, |cd|, 1e-8).
    """
    for _, t in tensors:
        t.grad = None
    with Tape():
        loss = fn()
        backward(loss)
    analytic = []
    for name, t in tensors:
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            bad = np.argwhere(~np.isfinite(g))[0]
            raise ContractError(f"non-finite analytic gradient in {name} at {tuple(bad)}")
        analytic.append(g.reshape(-1).copy())

    worst = 0.0
    for (name, t), ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = fn().item()
            flat[i] = orig - eps
            fm = fn().item()
            flat[i] = orig
            cd = (fp - fm) / (2.0 * eps)
            rel = abs(ga[i] - cd) / max(abs(ga[i]), abs(cd), 1e-8)
            if rel > worst:
                worst = rel
    return worst


def seeded_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def sinusoidal_codes(n_positions: int, dim: int, dtype=np.float64) -> np.ndarray:
    """Classic sin/cos position table [n_positions, dim] (dim even)."""
    if dim % 2 != 0:
        raise ConfigError(f"sinusoidal code dim must be even, got {dim}")
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / max(half, 1))
    ang = pos * freqs[None, :]
    out = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    return out.astype(dtype)


def sinusoidal_codes_2d(h: int, w: int, dim: int, dtype=np.float64) -> np.ndarray:
    """2-D position code [h*w, dim]: half the channels for rows, half for cols."""
    if dim % 4 != 0:
        raise ConfigError(f"2-D sinusoidal code dim must be divisible by 4, got {dim}")
    half = dim // 2
    row = sinusoidal_codes(h, half, dtype)
    col = sinusoidal_codes(w, half, dtype)
    out = np.zeros((h * w, dim), dtype=dtype)
    out[:, :half] = np.repeat(row, w, axis=0)
    out[:, half:] = np.tile(col, (h, 1))
    return out
