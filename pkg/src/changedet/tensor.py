"""Dense float64 tensors with reverse-mode automatic differentiation.

Every numeric primitive the network needs lives here. Tensors record their
producing operation as a backward closure over the parent tensors; calling
``backward()`` on a scalar (or any tensor, with an explicit seed gradient)
sweeps the graph once in reverse topological order and accumulates gradients
additively, so fan-out works without any special casing.

Elementwise arithmetic requires exactly matching shapes; the only broadcast
allowed is tensor-with-python-scalar. This keeps every gradient rule short
enough to audit by eye.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ConfigError",
    "ShapeError",
    "Tensor",
    "add_row_bias",
    "bilinear_resize",
    "concat_rows",
    "conv2d",
    "dropout",
    "finite_difference_check",
    "group_norm",
    "l2_normalize_rows",
    "layer_norm_rows",
    "log_softmax_lastdim",
    "matmul",
    "relu",
    "reshape",
    "softmax_lastdim",
    "topo_order",
    "transpose",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(ValueError):
    """A structural precondition (divisibility, supported kernel, ...) fails."""


_node_ids = itertools.count()


class Tensor:
    """A float64 array plus its place in the differentiation graph.

    Attributes:
        data: row-major numpy array (always float64).
        requires_grad: whether backward should reach this tensor.
        grad: accumulated gradient, same shape as ``data``, or None.
        node_id: creation-ordered identity, stable within a process.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # keeps 0-d scalars 0-d
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape), requires_grad=requires_grad)

    @staticmethod
    def _result(data: np.ndarray, parents: Sequence["Tensor"],
                backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data if data.dtype == np.float64 else data.astype(np.float64)
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out.node_id = next(_node_ids)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- basic queries ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- autodiff --------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate gradients of this tensor w.r.t. every reachable input.

        ``grad`` defaults to ones, which is only meaningful for scalars.
        """
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise ShapeError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")
        _accumulate(self, grad)
        for node in reversed(topo_order(self)):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node is not self:
                    node.grad = None  # free intermediate gradients

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape("add", self, other)
            return Tensor._result(
                self.data + other.data, (self, other),
                lambda g, a=self, b=other: (_accumulate(a, g), _accumulate(b, g)))
        return Tensor._result(self.data + float(other), (self,),
                              lambda g, a=self: _accumulate(a, g))

    __radd__ = __add__

    def __neg__(self):
        return Tensor._result(-self.data, (self,),
                              lambda g, a=self: _accumulate(a, -g))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape("sub", self, other)
            return Tensor._result(
                self.data - other.data, (self, other),
                lambda g, a=self, b=other: (_accumulate(a, g), _accumulate(b, -g)))
        return self + (-float(other))

    def __rsub__(self, other):
        return (-self) + float(other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape("mul", self, other)

            def bw(g, a=self, b=other):
                _accumulate(a, g * b.data)
                _accumulate(b, g * a.data)

            return Tensor._result(self.data * other.data, (self, other), bw)
        c = float(other)
        return Tensor._result(self.data * c, (self,),
                              lambda g, a=self, c=c: _accumulate(a, g * c))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * other.reciprocal()
        return self * (1.0 / float(other))

    def reciprocal(self) -> "Tensor":
        y = 1.0 / self.data

        def bw(g, a=self, y=y):
            _accumulate(a, -g * y * y)

        return Tensor._result(y, (self,), bw)

    def sum(self) -> "Tensor":
        def bw(g, a=self):
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

        return Tensor._result(np.asarray(self.data.sum()), (self,), bw)

    def mean(self) -> "Tensor":
        return self.sum() * (1.0 / self.data.size)


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} differ")


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def topo_order(root: Tensor) -> list[Tensor]:
    """Parents-first ordering of the graph below ``root`` (each node once)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


# -- linear algebra -------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} vs {b.shape}")

    def bw(g, a=a, b=b):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return Tensor._result(a.data @ b.data, (a, b), bw)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose needs a rank-2 tensor, got {x.shape}")

    def bw(g, x=x):
        _accumulate(x, np.ascontiguousarray(g.T))

    return Tensor._result(np.ascontiguousarray(x.data.T), (x,), bw)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}")

    def bw(g, x=x):
        _accumulate(x, g.reshape(x.data.shape))

    return Tensor._result(x.data.reshape(shape), (x,), bw)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along axis 0. Used for channel stacking of feature maps."""
    if not parts:
        raise ShapeError("concat_rows needs at least one tensor")
    tails = {p.data.shape[1:] for p in parts}
    if len(tails) != 1:
        raise ShapeError(f"concat_rows: trailing shapes differ: {sorted(tails)}")
    sizes = [p.data.shape[0] for p in parts]

    def bw(g, parts=tuple(parts), sizes=tuple(sizes)):
        start = 0
        for p, n in zip(parts, sizes):
            _accumulate(p, g[start:start + n])
            start += n

    return Tensor._result(np.concatenate([p.data for p in parts], axis=0), parts, bw)


# -- nonlinearities and normalizers ---------------------------------------------


def relu(x: Tensor) -> Tensor:
    def bw(g, x=x):
        _accumulate(x, g * (x.data > 0))

    return Tensor._result(np.maximum(x.data, 0.0), (x,), bw)


def softmax_lastdim(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g, x=x, y=y):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accumulate(x, y * (g - dot))

    return Tensor._result(y, (x,), bw)


def log_softmax_lastdim(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def bw(g, x=x, y=y):
        _accumulate(x, g - np.exp(y) * g.sum(axis=-1, keepdims=True))

    return Tensor._result(y, (x,), bw)


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Divide each row by max(row L2 norm, eps); zero rows stay zero."""
    if x.ndim != 2:
        raise ShapeError(f"l2_normalize_rows needs a rank-2 tensor, got {x.shape}")
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    denom = np.maximum(norms, eps)
    y = x.data / denom

    def bw(g, x=x, y=y, norms=norms, denom=denom, eps=eps):
        proj = (g * y).sum(axis=1, keepdims=True)
        live = norms >= eps  # below eps the denominator is the constant eps
        dx = np.where(live, (g - y * proj) / denom, g / eps)
        _accumulate(x, dx)

    return Tensor._result(y, (x,), bw)


def layer_norm_rows(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit variance, then affine."""
    if x.ndim != 2:
        raise ShapeError(f"layer_norm_rows needs a rank-2 tensor, got {x.shape}")
    n = x.shape[1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(f"affine params must have shape ({n},)")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = gamma.data * xhat + beta.data

    def bw(g, x=x, gamma=gamma, beta=beta, xhat=xhat, inv=inv, n=n):
        _accumulate(beta, g.sum(axis=0))
        _accumulate(gamma, (g * xhat).sum(axis=0))
        dxhat = g * gamma.data
        term = n * dxhat - dxhat.sum(axis=1, keepdims=True) \
            - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
        _accumulate(x, inv / n * term)

    return Tensor._result(y, (x, gamma, beta), bw)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Channel-group normalization over a (C, H, W) map with per-channel affine."""
    if x.ndim != 3:
        raise ShapeError(f"group_norm needs a (C, H, W) tensor, got {x.shape}")
    c, h, w = x.shape
    if c % groups != 0:
        raise ConfigError(f"channels {c} not divisible by groups {groups}")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"affine params must have shape ({c},)")
    m = (c // groups) * h * w
    xg = x.data.reshape(groups, m)
    mu = xg.mean(axis=1, keepdims=True)
    var = xg.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(c, h, w)
    y = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    def bw(g, x=x, gamma=gamma, beta=beta, xhat=xhat, inv=inv,
           groups=groups, m=m, c=c, h=h, w=w):
        _accumulate(beta, g.sum(axis=(1, 2)))
        _accumulate(gamma, (g * xhat).sum(axis=(1, 2)))
        dxhat = (g * gamma.data[:, None, None]).reshape(groups, m)
        xh = xhat.reshape(groups, m)
        term = m * dxhat - dxhat.sum(axis=1, keepdims=True) \
            - xh * (dxhat * xh).sum(axis=1, keepdims=True)
        _accumulate(x, (inv / m * term).reshape(c, h, w))

    return Tensor._result(y, (x, gamma, beta), bw)


# -- convolution -----------------------------------------------------------------

_COL_INDEX_CACHE: dict[tuple[int, int, int, int, int], np.ndarray] = {}


def _gather_indices(cin: int, h: int, w: int, k: int, stride: int) -> np.ndarray:
    """Flat indices into the zero-padded input for im2col, shape (cin*k*k, L)."""
    key = (cin, h, w, k, stride)
    cached = _COL_INDEX_CACHE.get(key)
    if cached is not None:
        return cached
    pad = k // 2
    hp, wp = h + 2 * pad, w + 2 * pad
    ho, wo = -(-h // stride), -(-w // stride)
    oy = np.arange(ho) * stride
    ox = np.arange(wo) * stride
    ky = np.arange(k)
    kx = np.arange(k)
    rows = ky[:, None, None, None] + oy[None, None, :, None]
    cols = kx[None, :, None, None] + ox[None, None, None, :]
    spatial = (rows * wp + cols).reshape(k * k, ho * wo)
    full = (np.arange(cin)[:, None, None] * (hp * wp) + spatial[None]).reshape(
        cin * k * k, ho * wo)
    _COL_INDEX_CACHE[key] = full
    return full


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """2-D cross correlation with zero "same" padding.

    ``x`` is (C_in, H, W), ``weight`` is (C_out, C_in, k, k) with k in {1, 3},
    stride in {1, 2}; the output is (C_out, ceil(H/stride), ceil(W/stride)).
    """
    if x.ndim != 3 or weight.ndim != 4:
        raise ShapeError(f"conv2d needs (C,H,W) input and (O,C,k,k) weight, got "
                         f"{x.shape} and {weight.shape}")
    cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels but weight expects {wcin} "
                         f"(input {x.shape}, weight {weight.shape})")
    if k != k2 or k not in (1, 3):
        raise ConfigError(f"conv2d kernel must be 1 or 3, got {k}x{k2}")
    if stride not in (1, 2):
        raise ConfigError(f"conv2d stride must be 1 or 2, got {stride}")
    if h < 1 or w < 1:
        raise ShapeError(f"conv2d: empty spatial size {h}x{w}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d bias must have shape ({cout},), got {bias.shape}")

    pad = k // 2
    ho, wo = -(-h // stride), -(-w // stride)
    if pad:
        xp = np.zeros((cin, h + 2 * pad, w + 2 * pad))
        xp[:, pad:pad + h, pad:pad + w] = x.data
    else:
        xp = x.data
    idx = _gather_indices(cin, h, w, k, stride)
    cols = xp.reshape(-1)[idx]  # (cin*k*k, L)
    wmat = weight.data.reshape(cout, cin * k * k)
    y = (wmat @ cols + bias.data[:, None]).reshape(cout, ho, wo)

    def bw(g, x=x, weight=weight, bias=bias, cols=cols, wmat=wmat,
           cin=cin, h=h, w=w, k=k, pad=pad, cout=cout, ho=ho, wo=wo, stride=stride):
        gmat = g.reshape(cout, -1)
        _accumulate(bias, gmat.sum(axis=1))
        _accumulate(weight, (gmat @ cols.T).reshape(weight.data.shape))
        if x.requires_grad:
            # col2im: one strided slice-add per kernel tap into a buffer that is
            # always large enough, then cut out the unpadded region
            dcols = (wmat.T @ gmat).reshape(cin, k, k, ho, wo)
            buf = np.zeros((cin, (k - 1) + stride * ho, (k - 1) + stride * wo))
            for ky in range(k):
                for kx in range(k):
                    buf[:, ky:ky + stride * ho:stride,
                        kx:kx + stride * wo:stride] += dcols[:, ky, kx]
            _accumulate(x, buf[:, pad:pad + h, pad:pad + w])

    return Tensor._result(y, (x, weight, bias), bw)


# -- resampling ------------------------------------------------------------------

_INTERP_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _interp_matrix(n_in: int, factor: int) -> np.ndarray:
    """Dense 1-D bilinear upsampling operator (half-pixel centers)."""
    key = (n_in, factor)
    cached = _INTERP_CACHE.get(key)
    if cached is not None:
        return cached
    n_out = n_in * factor
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    i0 = np.floor(src).astype(int)
    t = src - i0
    lo = np.clip(i0, 0, n_in - 1)
    hi = np.clip(i0 + 1, 0, n_in - 1)
    a = np.zeros((n_out, n_in))
    a[np.arange(n_out), lo] += 1.0 - t
    a[np.arange(n_out), hi] += t
    _INTERP_CACHE[key] = a
    return a


def _resize_apply(data: np.ndarray, ah: np.ndarray, aw: np.ndarray) -> np.ndarray:
    """Per-channel ah @ data @ aw.T via two flat matrix products."""
    c, h, w = data.shape
    rows = (ah @ data.transpose(1, 0, 2).reshape(h, c * w)).reshape(
        ah.shape[0], c, w).transpose(1, 0, 2)
    return (rows.reshape(c * ah.shape[0], w) @ aw.T).reshape(c, ah.shape[0], aw.shape[0])


def bilinear_resize(x: Tensor, factor: int) -> Tensor:
    """Upsample a (C, H, W) map by a power-of-two factor (2 or 4)."""
    if x.ndim != 3:
        raise ShapeError(f"bilinear_resize needs a (C, H, W) tensor, got {x.shape}")
    if factor not in (2, 4):
        raise ConfigError(f"resize factor must be 2 or 4, got {factor}")
    _, h, w = x.shape
    ah = _interp_matrix(h, factor)
    aw = _interp_matrix(w, factor)
    y = _resize_apply(x.data, ah, aw)

    def bw(g, x=x, ah=ah, aw=aw):
        _accumulate(x, _resize_apply(g, ah.T, aw.T))

    return Tensor._result(y, (x,), bw)


# -- regularization ----------------------------------------------------------------


def dropout(x: Tensor, p: float, rng: np.random.Generator | None,
            training: bool) -> Tensor:
    """Inverted dropout: scale survivors by 1/(1-p) at train time, identity at eval."""
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a random generator")
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)

    def bw(g, x=x, mask=mask):
        _accumulate(x, g * mask)

    return Tensor._result(x.data * mask, (x,), bw)


# -- bias helpers -------------------------------------------------------------------


def add_row_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a length-n bias vector to every row of an (m, n) tensor."""
    if x.ndim != 2 or bias.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ShapeError(f"add_row_bias: incompatible shapes {x.shape} and {bias.shape}")

    def bw(g, x=x, bias=bias):
        _accumulate(x, g)
        _accumulate(bias, g.sum(axis=0))

    return Tensor._result(x.data + bias.data, (x, bias), bw)


# -- gradient verification ----------------------------------------------------------


def finite_difference_check(op: Callable[..., Tensor], inputs: Sequence[Tensor],
                            h: float = 1e-5,
                            max_coords_per_input: int | None = None) -> float:
    """Compare analytic gradients of ``op`` against central differences.

    The check optimizes a fixed pseudo-random weighting of the op output so
    asymmetric gradient errors cannot cancel. Returns the maximum over all
    probed coordinates of ``|analytic - numeric| / max(1, |numeric|)``.
    ``max_coords_per_input`` subsamples coordinates for large inputs.
    """
    out = op(*inputs)
    weights = np.random.default_rng(1234).standard_normal(out.data.shape)

    def objective() -> float:
        return float((op(*inputs).data * weights).sum())

    for t in inputs:
        t.grad = None
    loss = (out * Tensor(weights)).sum()
    loss.backward()
    name = getattr(op, "__name__", repr(op))

    worst = 0.0
    probe_rng = np.random.default_rng(99)
    for t in inputs:
        if not t.requires_grad:
            continue
        if t.grad is None:
            raise AssertionError(f"{name}: no gradient reached an input of shape {t.shape}")
        if not np.all(np.isfinite(t.grad)):
            raise AssertionError(f"{name}: non-finite gradient")
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords_per_input is not None and flat.size > max_coords_per_input:
            coords = probe_rng.choice(flat.size, size=max_coords_per_input, replace=False)
        gflat = t.grad.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = objective()
            flat[i] = orig - h
            down = objective()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            err = abs(gflat[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    if not math.isfinite(worst):
        raise AssertionError(f"{name}: non-finite finite-difference error")
    return worst
