"""Reverse-mode automatic differentiation over dense float64 tensors.

Ops executed inside a `Tape` context append their backward closures to the
tape (a Wengert list, so the record order is already topological).
`backward(tape, loss)` walks the list once in reverse, accumulating
gradients with `+=` semantics into every tensor that requires them.
Gradients persist on parameters until `ParamSet.zero_grad()` is called.

Everything is float64 and CPU-only; the library is sized for desk-scale
GRU encoder-decoders, not for throughput.
"""

from __future__ import annotations

import hashlib
import struct
import threading

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for a primitive."""


class NumericsError(RuntimeError):
    """Raised when an op produces a non-finite value."""


# Flip off to skip the per-op finite check (it is cheap at desk scale).
CHECK_FINITE = True

_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense float64 array plus an optional gradient slot.

    `requires_grad` marks leaves (parameters) created by the caller and is
    propagated to every op output recorded on an active tape. `grad` holds
    the accumulated gradient after `backward`; it may alias read-only
    broadcast views, so consumers must never mutate it in place.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data):
    """Wrap data as a non-differentiable tensor."""
    return Tensor(data, requires_grad=False)


class Tape:
    """Ordered record of primitive ops for one forward pass."""

    def __init__(self):
        self._records = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self, "tape contexts must nest"
        return False

    def __len__(self):
        return len(self._records)


def backward(tape, loss):
    """Propagate d(loss)/d(node) through the tape, then clear it.

    `loss` must be a scalar recorded on `tape`. Parameter gradients
    accumulate; intermediate gradients die with the tape records.
    """
    if loss.ndim != 0:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is not connected to any differentiable input")
    loss.grad = np.ones((), dtype=np.float64)
    for out, fn in reversed(tape._records):
        if out.grad is not None:
            fn(out.grad)
    tape._records.clear()


def _accum(t, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _emit(name, data, parents, fn):
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericsError(f"{name} produced a non-finite value")
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        tape._records.append((out, fn(out)))
        return out
    return Tensor(data)


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to `shape`."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def fn(out):
        def run(g):
            _accum(a, _unbroadcast(g, a.shape))
            _accum(b, _unbroadcast(g, b.shape))
        return run

    return _emit("add", data, (a, b), fn)


def sub(a, b):
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")

    def fn(out):
        def run(g):
            _accum(a, _unbroadcast(g, a.shape))
            _accum(b, _unbroadcast(-g, b.shape))
        return run

    return _emit("sub", data, (a, b), fn)


def mul(a, b):
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    ad, bd = a.data, b.data

    def fn(out):
        def run(g):
            _accum(a, _unbroadcast(g * bd, a.shape))
            _accum(b, _unbroadcast(g * ad, b.shape))
        return run

    return _emit("mul", data, (a, b), fn)


def scale(x, c):
    """Multiply by a plain python constant."""
    c = float(c)
    data = x.data * c

    def fn(out):
        def run(g):
            _accum(x, g * c)
        return run

    return _emit("scale", data, (x,), fn)


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    data = a.data @ b.data
    ad, bd = a.data, b.data

    def fn(out):
        def run(g):
            _accum(a, g @ bd.T)
            _accum(b, ad.T @ g)
        return run

    return _emit("matmul", data, (a, b), fn)


def sigmoid(x):
    xd = x.data
    data = np.empty_like(xd)
    pos = xd >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    data[~pos] = ex / (1.0 + ex)

    def fn(out):
        od = out.data

        def run(g):
            _accum(x, g * od * (1.0 - od))
        return run

    return _emit("sigmoid", data, (x,), fn)


def tanh(x):
    data = np.tanh(x.data)

    def fn(out):
        od = out.data

        def run(g):
            _accum(x, g * (1.0 - od * od))
        return run

    return _emit("tanh", data, (x,), fn)


def exp(x):
    data = np.exp(x.data)

    def fn(out):
        od = out.data

        def run(g):
            _accum(x, g * od)
        return run

    return _emit("exp", data, (x,), fn)


def log(x):
    data = np.log(x.data)
    xd = x.data

    def fn(out):
        def run(g):
            _accum(x, g / xd)
        return run

    return _emit("log", data, (x,), fn)


def softmax(x):
    """Row-wise softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def fn(out):
        od = out.data

        def run(g):
            inner = (g * od).sum(axis=-1, keepdims=True)
            _accum(x, od * (g - inner))
        return run

    return _emit("softmax", data, (x,), fn)


def concat(parts, axis):
    parts = list(parts)
    if not parts:
        raise ShapeError("concat: no tensors given")
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        shapes = [p.shape for p in parts]
        raise ShapeError(f"concat: shapes {shapes} do not align on axis {axis}")
    sizes = [p.shape[axis] for p in parts]

    def fn(out):
        def run(g):
            offset = 0
            for p, size in zip(parts, sizes):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + size)
                _accum(p, g[tuple(idx)])
                offset += size
        return run

    return _emit("concat", data, tuple(parts), fn)


def slice_axis(x, axis, start, stop):
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    data = x.data[idx].copy()

    def fn(out):
        def run(g):
            full = np.zeros(x.shape, dtype=np.float64)
            full[idx] = g
            _accum(x, full)
        return run

    return _emit("slice", data, (x,), fn)


def embed_lookup(table, ids):
    """Gather rows of a 2-D table; gradient scatter-adds back."""
    if table.ndim != 2:
        raise ShapeError(f"embed_lookup: table must be 2-D, got {table.shape}")
    ids = np.asarray(ids, dtype=np.intp)
    data = table.data[ids]

    def fn(out):
        def run(g):
            full = np.zeros(table.shape, dtype=np.float64)
            np.add.at(full, ids, g)
            _accum(table, full)
        return run

    return _emit("embed_lookup", data, (table,), fn)


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def fn(out):
        def run(g):
            if axis is None:
                _accum(x, np.broadcast_to(g, x.shape))
                return
            gk = g if keepdims else np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(gk, x.shape))
        return run

    return _emit("sum", data, (x,), fn)


def mean(x, axis=None, keepdims=False):
    data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else x.shape[axis]

    def fn(out):
        def run(g):
            if axis is None:
                _accum(x, np.broadcast_to(g / count, x.shape))
                return
            gk = g if keepdims else np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(gk / count, x.shape))
        return run

    return _emit("mean", data, (x,), fn)


# ---------------------------------------------------------------------------
# parameters, optimizer, checkpoints


class ParamSet:
    """Named parameter tensors plus Adam moment state.

    Names are unique; iteration follows insertion order, which makes
    optimizer updates and checkpoints deterministic.
    """

    def __init__(self):
        self._params = {}
        self._m = {}
        self._v = {}
        self.step_count = 0

    def add(self, name, data):
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def merge(self, other, prefix):
        """Adopt every parameter of `other` under `prefix.name`."""
        for name, t in other.items():
            key = f"{prefix}.{name}"
            if key in self._params:
                raise ValueError(f"duplicate parameter name: {key}")
            self._params[key] = t


def clip_global_norm(params, max_norm):
    """Scale all gradients so their global L2 norm is at most `max_norm`.

    Returns the pre-clip norm. Tensors with no gradient are skipped.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    tensors = params.tensors() if isinstance(params, ParamSet) else list(params)
    total = 0.0
    for t in tensors:
        if t.grad is not None:
            total += float((t.grad * t.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm:
        factor = max_norm / norm
        for t in tensors:
            if t.grad is not None:
                t.grad = t.grad * factor
    return norm


def adam_step(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with bias correction over all parameters.

    Missing gradients are treated as zero so moment decay stays in sync
    across parameters.
    """
    if not (0.0 < lr):
        raise ValueError("lr must be positive")
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ValueError("beta1/beta2 must lie in [0, 1)")
    if eps <= 0:
        raise ValueError("eps must be positive")
    params.step_count += 1
    t = params.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad if p.grad is not None else 0.0
        m = params._m.get(name)
        v = params._v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        params._m[name] = m
        params._v[name] = v
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


_MAGIC = b"PGPS"
_VERSION = 1


def save_paramset(params, path):
    """Write parameters to the versioned binary container.

    Layout: magic `PGPS`, u32 version, u32 count, then per parameter
    (insertion order): u32 name length + UTF-8 name, u32 ndim,
    u32 dims..., float64 little-endian values (row-major).
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(params)))
        for name, t in params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def read_paramset(path):
    """Read a checkpoint container into an ordered name -> array dict."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"{path}: not a parameter container")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    out = {}
    offset = 12
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset:offset + nlen].decode("utf-8")
        offset += nlen
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(blob, dtype="<f8", count=size, offset=offset)
        offset += 8 * size
        out[name] = values.reshape(shape).astype(np.float64)
    return out


def load_paramset_into(params, path):
    """Restore a checkpoint into an existing ParamSet, validating shapes."""
    stored = read_paramset(path)
    missing = [n for n in params.names() if n not in stored]
    extra = [n for n in stored if n not in params]
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
    for name, t in params.items():
        arr = stored[name]
        if arr.shape != t.shape:
            raise ValueError(
                f"checkpoint shape mismatch for {name}: stored {arr.shape}, expected {t.shape}"
            )
        t.data = arr


def paramset_digest(params):
    """SHA-256 over the container byte layout, without touching disk."""
    h = hashlib.sha256()
    h.update(_MAGIC)
    h.update(struct.pack("<II", _VERSION, len(params)))
    for name, t in params.items():
        raw = name.encode("utf-8")
        h.update(struct.pack("<I", len(raw)))
        h.update(raw)
        h.update(struct.pack("<I", t.ndim))
        h.update(struct.pack(f"<{t.ndim}I", *t.shape))
        h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return h.hexdigest()
