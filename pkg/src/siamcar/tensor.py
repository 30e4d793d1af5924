"""Dense float64 tensors with tape-recorded reverse-mode gradients.

Inference never touches a tape: ops only record when a :class:`Tape` is
active on the current thread *and* one of their inputs requires a gradient.

    >>> w = Tensor([[1.0, 2.0]], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_all(mul(w, w))
    ...     tape.backward(loss)
    >>> w.grad.tolist()
    [[2.0, 4.0]]
"""
import os
import struct
import threading

import numpy as np

from . import kernels

_local = threading.local()
_debug = os.environ.get("SIAMCAR_DEBUG", "") not in ("", "0")

TNSR_MAGIC = b"TNSR"


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


def set_debug(flag):
    """Toggle the non-finite check run on every op output."""
    global _debug
    _debug = bool(flag)


def debug_enabled():
    return _debug


class Tensor:
    """Immutable channels-first array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr, requires_grad=False):
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64, order="C")  # keeps 0-d scalars 0-d
        arr.setflags(write=False)
        t.data = arr
        t.grad = None
        t.requires_grad = requires_grad
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self):
        self.grad = None

    def assign(self, arr):
        """Swap in new values (optimizer steps). The old array is left untouched."""
        arr = np.array(arr, dtype=np.float64)
        if arr.shape != self.data.shape:
            raise ShapeError(f"assign {arr.shape} into {self.data.shape}")
        arr.setflags(write=False)
        self.data = arr

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, -other if isinstance(other, Tensor) else Tensor(-np.asarray(other)))


class Tape:
    """Records differentiable ops for one training step. Single-threaded."""

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.tapes.pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss):
        if loss.size != 1:
            raise ShapeError("backward needs a scalar loss")
        loss.grad = np.ones_like(loss.data)
        for out, parents, fn in reversed(self._nodes):
            if out.grad is None:
                continue
            grads = fn(out.grad)
            for p, g in zip(parents, grads):
                if g is None or not p.requires_grad:
                    continue
                if p.grad is None:
                    p.grad = np.array(g, dtype=np.float64)
                else:
                    p.grad = p.grad + g
        self._nodes.clear()


def active_tape():
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


def _check_finite(arr, opname):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {opname}")


def record_op(data, parents, backward, opname="op"):
    """Wrap ``data`` as an op output and register ``backward`` on the active tape.

    ``backward(grad_out)`` must return one gradient (or None) per parent.
    """
    if _debug:
        _check_finite(data, opname)
    out = Tensor._wrap(data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape._nodes.append((out, tuple(parents), backward))
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ----------------------------------------------------------------------------
# convolution / correlation

def conv2d(x, w, b=None, stride=1, padding=0):
    """Cross-correlate a C x H x W input with K x C x kh x kw kernels."""
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d expects C×H×W input and K×C×kh×kw kernels, got {x.shape}, {w.shape}")
    C, H, W = x.shape
    K, Cw, kh, kw = w.shape
    if Cw != C:
        raise ShapeError(f"conv2d channel mismatch: input {C}, kernel {Cw}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    if kh > H + 2 * padding or kw > W + 2 * padding:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {H}x{W}+{padding}")
    if b is not None and b.shape != (K,):
        raise ShapeError(f"bias shape {b.shape} != ({K},)")
    out = kernels.conv2d_forward(x.data, w.data, stride, padding)
    if b is not None:
        out += b.data[:, None, None]

    def backward(g):
        g = np.ascontiguousarray(g)
        gx = kernels.conv2d_backward_input(g, w.data, H, W, stride, padding) if x.requires_grad else None
        gw = kernels.conv2d_backward_weight(g, x.data, kh, kw, stride, padding) if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2))

    parents = (x, w) if b is None else (x, w, b)
    return record_op(out, parents, backward, "conv2d")


def depthwise_xcorr(search, template):
    """Per-channel valid correlation of ``search`` with ``template`` as kernel."""
    if search.ndim != 3 or template.ndim != 3:
        raise ShapeError("depthwise_xcorr expects two C×H×W tensors")
    C, Hx, Wx = search.shape
    Cz, Hz, Wz = template.shape
    if C != Cz:
        raise ShapeError(f"depthwise_xcorr channel mismatch: search {C}, template {Cz}")
    if Hz > Hx or Wz > Wx:
        raise ShapeError(f"template {Hz}x{Wz} larger than search {Hx}x{Wx}")
    out = kernels.xcorr_forward(search.data, template.data)

    def backward(g):
        gx, gz = kernels.xcorr_backward(np.ascontiguousarray(g), search.data, template.data)
        return gx, gz

    return record_op(out, (search, template), backward, "depthwise_xcorr")


def concat_channels(parts):
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_channels needs at least one part")
    hw = parts[0].shape[1:]
    for p in parts:
        if p.ndim != 3 or p.shape[1:] != hw:
            raise ShapeError(f"concat_channels spatial mismatch: {p.shape} vs (*, {hw[0]}, {hw[1]})")
    out = np.concatenate([p.data for p in parts], axis=0)
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward(g):
        return [g[bounds[i]:bounds[i + 1]] for i in range(len(parts))]

    return record_op(out, parents=parts, backward=backward, opname="concat_channels")


# ----------------------------------------------------------------------------
# elementwise

def relu(x):
    mask = x.data > 0
    return record_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def exp(x):
    # overflow is left to the caller (debug mode or divergence checks) to report
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return record_op(out, (x,), lambda g: (g * out,), "exp")


def sigmoid(x):
    out = _sigmoid(x.data)
    return record_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _sigmoid(z):
    # split by sign so large |z| never overflows exp
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax2(logits):
    """Two-way softmax over the channel axis of a 2×H×W map."""
    if logits.ndim != 3 or logits.shape[0] != 2:
        raise ShapeError(f"softmax2 expects 2×H×W, got {logits.shape}")
    if _debug:
        _check_finite(logits.data, "softmax2 input")
    z = logits.data - logits.data.max(axis=0, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=0, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=0, keepdims=True)),)

    return record_op(p, (logits,), backward, "softmax2")


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch {a.shape} vs {b.shape}")
    return record_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch {a.shape} vs {b.shape}")
    return record_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(x, c):
    return record_op(x.data * c, (x,), lambda g: (g * c,), "scale")


def sum_all(x):
    return record_op(np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, g.item()),), "sum")


def mean_all(x):
    n = x.size
    return record_op(np.array(x.data.mean()), (x,), lambda g: (np.full(x.shape, g.item() / n),), "mean")


# ----------------------------------------------------------------------------
# gradient oracle

def finite_diff_grad(f, x, eps=1e-4):
    """Central-difference gradient of scalar ``f`` at ``x``, one element at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = np.array(x.data, dtype=np.float64)
    flat = base.reshape(-1)
    grad = np.zeros_like(flat)

    def value(arr):
        out = f(Tensor(arr))
        return out.item() if isinstance(out, Tensor) else float(out)

    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + eps
        hi = value(base)
        flat[idx] = orig - eps
        lo = value(base)
        flat[idx] = orig
        grad[idx] = (hi - lo) / (2.0 * eps)
    return Tensor(grad.reshape(base.shape))


def max_rel_error(a, b, floor=1e-12):
    """max |a-b| over max(|a|,|b|), the scale used for all gradient checks."""
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / denom)


# ----------------------------------------------------------------------------
# serialization

def save_tensor(path, t):
    arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(TNSR_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_tensor(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != TNSR_MAGIC:
        raise ValueError(f"{path}: not a TNSR file")
    (rank,) = struct.unpack_from("<I", blob, 4)
    shape = struct.unpack_from(f"<{rank}I", blob, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(shape)) if rank else 1
    if len(blob) - offset != 8 * count:
        raise ValueError(f"{path}: payload is {len(blob) - offset} bytes, expected {8 * count}")
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
    return Tensor(data.reshape(shape))
