"""Dense float64 tensors with reverse-mode automatic differentiation.

Values are numpy arrays in row-major order; image data uses the N,C,H,W
axis convention everywhere. Differentiation is tape-based: while a
``Tape`` is active, every operation involving a gradient-tracked tensor
appends a record (output, inputs, backward rule) in execution order,
which is a topological order by construction. ``Tape.backward`` replays
the records once, in reverse, accumulating gradients additively into
``Tensor.grad``.

Tensors are immutable-after-construction values; a tape is single
threaded and must be reset (discarded) after one backward pass.
Double backward is unsupported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericsError, ShapeError, TapeError

_ACTIVE_TAPE = None


class Tensor:
    """A dense float64 array plus optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericsError("tensor holds non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # ---- arithmetic ----------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return from_op(-self.data, (self,), lambda g: (-g,))

    def __getitem__(self, index):
        out = np.array(self.data[index], dtype=np.float64)

        def backward(g):
            buf = np.zeros_like(self.data)
            np.add.at(buf, index, g)
            return (buf,)

        return from_op(out, (self,), backward)

    # ---- reductions and views ------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        axes = _norm_axes(axis, self.data.ndim)
        out = self.data.sum(axis=axes, keepdims=keepdims)

        def backward(g):
            return (_spread(g, self.data.shape, axes, keepdims),)

        return from_op(out, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        axes = _norm_axes(axis, self.data.ndim)
        count = self.data.size if axes is None else int(
            np.prod([self.data.shape[a] for a in axes])
        )
        out = self.data.mean(axis=axes, keepdims=keepdims)

        def backward(g):
            return (_spread(g, self.data.shape, axes, keepdims) / count,)

        return from_op(out, (self,), backward)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = self.data.reshape(shape)
        src_shape = self.data.shape
        return from_op(out, (self,), lambda g: (g.reshape(src_shape),))


class Tape:
    """Execution-ordered record of operations for one backward pass."""

    def __init__(self):
        self._records = []
        self._consumed = False

    def __len__(self) -> int:
        return len(self._records)

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise TapeError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` for every tracked tensor that fed ``loss``.

        Each record is visited exactly once; a tensor consumed k times
        accumulates k gradient contributions. A tape can back-propagate
        only once, then must be discarded.
        """
        if self._consumed:
            raise TapeError("backward was already called on this tape; reset first")
        if loss.data.size != 1:
            raise TapeError(f"loss must be a scalar, got shape {loss.data.shape}")
        self._consumed = True
        if loss.grad is None:
            loss.grad = np.ones_like(loss.data)
        for out, parents, backward_fn in reversed(self._records):
            if out.grad is None:
                continue
            grads = backward_fn(out.grad)
            for parent, grad in zip(parents, grads):
                if grad is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += grad


def from_op(data, parents, backward_fn) -> Tensor:
    """Wrap an op result, recording it on the active tape when tracked.

    ``backward_fn(output_grad)`` must return one gradient array (or None)
    per parent, each already shaped like that parent. This is the
    extension point for ops defined outside this module.
    """
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if _ACTIVE_TAPE is not None and out.requires_grad:
        _ACTIVE_TAPE._records.append((out, tuple(parents), backward_fn))
    return out


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _norm_axes(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _spread(g, shape, axes, keepdims):
    """Broadcast a reduction gradient back to the pre-reduction shape."""
    if axes is None:
        return np.full(shape, g if np.ndim(g) == 0 else g.reshape(()))
    if not keepdims:
        kept = list(g.shape)
        for a in axes:
            kept.insert(a, 1)
        g = g.reshape(kept)
    return np.broadcast_to(g, shape).copy()


def _unbroadcast(g, shape):
    """Sum gradient over axes that numpy broadcasting expanded."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---- elementwise ops ----------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    return from_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return from_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data * b.data
    return from_op(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return from_op(out, (a, b), backward)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return from_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return from_op(out, (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return from_op(out, (a,), lambda g: (g * 0.5 / out,))


def relu(a: Tensor) -> Tensor:
    """Elementwise max(0, x). The subgradient at 0 is defined as 0."""
    mask = a.data > 0
    return from_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


# ---- linear algebra and image ops ----------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map: x[N,D] @ weight[D,K] + bias[K]."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError(
            f"linear expects 2-d input and weight, got {x.data.shape} and {weight.data.shape}"
        )
    if x.data.shape[1] != weight.data.shape[0]:
        raise ShapeError(
            f"linear inner dimensions disagree: input {x.data.shape} vs weight {weight.data.shape}"
        )
    if bias.data.shape != (weight.data.shape[1],):
        raise ShapeError(
            f"linear bias shape {bias.data.shape} does not match output width {weight.data.shape[1]}"
        )
    with np.errstate(over="ignore", invalid="ignore"):
        out = x.data @ weight.data + bias.data

    def backward(g):
        gx = g @ weight.data.T if x.requires_grad else None
        gw = x.data.T @ g if weight.requires_grad else None
        gb = g.sum(axis=0) if bias.requires_grad else None
        return (gx, gw, gb)

    return from_op(out, (x, weight, bias), backward)


def _im2col(x, kh, kw, stride, padding):
    """Lay out conv patches as columns: [N,C,H,W] -> [N, C*kh*kw, OH*OW]."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    n, c, oh, ow = win.shape[:4]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)
    return np.ascontiguousarray(cols), oh, ow


def _col2im(cols, x_shape, kh, kw, stride, padding):
    """Scatter-add column gradients back onto the (padded) input."""
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    patches = cols.reshape(n, c, kh, kw, oh, ow)
    buf = np.zeros((n, c, hp, wp))
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                patches[:, :, i, j]
            )
    if padding:
        buf = buf[:, :, padding : hp - padding, padding : wp - padding]
    return buf


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation of x[N,C,H,W] with weight[F,C,kH,kW] plus bias[F].

    Output spatial extent is floor((H + 2*padding - kH)/stride) + 1, and
    analogously for W.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(
            f"conv2d expects 4-d input and weight, got {x.data.shape} and {weight.data.shape}"
        )
    n, c, h, w = x.data.shape
    f, cw, kh, kw = weight.data.shape
    if cw != c:
        raise ShapeError(f"conv2d channels disagree: input has {c}, weight expects {cw}")
    if bias.data.shape != (f,):
        raise ShapeError(f"conv2d bias shape {bias.data.shape} does not match {f} filters")
    if stride < 1:
        raise ValueError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d padding must be >= 0, got {padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"conv2d kernel {kh}x{kw} exceeds padded input {h + 2 * padding}x{w + 2 * padding}"
        )

    cols, oh, ow = _im2col(x.data, kh, kw, stride, padding)
    wmat = weight.data.reshape(f, c * kh * kw)
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.matmul(wmat, cols).reshape(n, f, oh, ow) + bias.data[None, :, None, None]

    def backward(g):
        gmat = g.reshape(n, f, oh * ow)
        gb = g.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        gw = None
        if weight.requires_grad:
            gw = np.tensordot(gmat, cols, axes=([0, 2], [0, 2])).reshape(f, c, kh, kw)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(wmat.T, gmat)
            gx = _col2im(gcols, x.data.shape, kh, kw, stride, padding)
        return (gx, gw, gb)

    return from_op(out, (x, weight, bias), backward)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Replicate each pixel of x[N,C,H,W] into a factor x factor block."""
    if x.data.ndim != 4:
        raise ShapeError(f"upsample_nearest expects 4-d input, got {x.data.shape}")
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    n, c, h, w = x.data.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return from_op(out, (x,), backward)


# ---- gradient checking ----------------------------------------------------


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients to central differences."""

    max_rel_error: float
    tol: float
    passed: bool
    n_checked: int


def grad_check(f, x: Tensor, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare the tape gradient of scalar-valued ``f(x)`` at ``x`` against
    central finite differences with step ``h``.

    The relative deviation is |analytic - numeric| / max(|analytic|,
    |numeric|, 1e-3); the floor turns the comparison absolute where both
    gradients are tiny, which keeps finite-difference noise from
    registering as error. ``f`` must be deterministic; it is evaluated
    twice up front and any discrepancy is an error.
    """
    if not isinstance(x, Tensor) or not x.requires_grad:
        raise ValueError("grad_check needs a Tensor with requires_grad=True")
    y0 = f(x)
    y1 = f(x)
    if y0.data.size != 1:
        raise TapeError(f"grad_check target must be scalar, got shape {y0.data.shape}")
    if not np.array_equal(y0.data, y1.data):
        raise NumericsError("function under grad_check is not deterministic")

    x.zero_grad()
    with Tape() as tape:
        y = f(x)
    tape.backward(y)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.zero_grad()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f(x).item()
        flat[i] = orig - h
        f_minus = f(x).item()
        flat[i] = orig
        num_flat[i] = (f_plus - f_minus) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    max_rel = float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
    return GradCheckReport(
        max_rel_error=max_rel, tol=tol, passed=max_rel <= tol, n_checked=flat.size
    )
