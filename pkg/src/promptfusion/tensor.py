"""Dense float tensors with define-by-run reverse-mode autodiff.

The engine is deliberately small: it supports exactly the operations the
dual-encoder model and its losses need, on contiguous row-major arrays.
Tensors default to float32. Ops follow numpy dtype promotion, which lets
audit code (finite differences, the loss head) run selected regions in
float64 without a second code path.

Recording is explicit: ops append to the innermost `record()` graph, and
only when at least one operand is attached (trainable, or produced by a
recorded op). Forward values are never mutated by `backward`; gradients
for intermediates live in a scratch map and only trainable leaves receive
a `.grad` buffer. Reductions use numpy's fixed-order kernels, so identical
inputs give bitwise-identical forward and backward results.

Tensors are immutable once created, with two sanctioned exceptions: the
optimizer may swap `.data` between graphs, and `backward` writes `.grad`.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .errors import DimensionError, NumericError, UsageError

_GRAPH_STACK: list["Graph"] = []

# When enabled (tests, selftest) every op output is checked for NaN/Inf.
finite_checks = False


class Tensor:
    """A dense float array, optionally trainable, optionally graph-attached."""

    __slots__ = ("data", "trainable", "grad", "node", "name")

    def __init__(self, data, trainable=False, dtype=np.float32, name=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.trainable = bool(trainable)
        self.grad = None
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = " trainable" if self.trainable else ""
        name = f" {self.name!r}" if self.name else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{tag}{name})"


def _attached(t: Tensor) -> bool:
    return t.trainable or t.node is not None


class Node:
    """One recorded op: inputs, output, its VJP, and a replayable forward."""

    __slots__ = ("op", "inputs", "output", "vjp", "fwd")

    def __init__(self, op, inputs, output, vjp, fwd):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.vjp = vjp
        self.fwd = fwd


class Graph:
    """Execution-ordered record of ops; execution order is topological."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def replay_check(self) -> bool:
        """Recompute every node from its recorded inputs; True iff all
        outputs match bitwise."""
        for node in self.nodes:
            redo = node.fwd(*[t.data for t in node.inputs])
            if not np.array_equal(redo, node.output.data):
                return False
        return True

    def backward(self, loss: Tensor):
        return backward(self, loss)


@contextmanager
def record():
    """Context manager under which ops on attached tensors are recorded."""
    g = Graph()
    _GRAPH_STACK.append(g)
    try:
        yield g
    finally:
        _GRAPH_STACK.pop()


def _active_graph():
    return _GRAPH_STACK[-1] if _GRAPH_STACK else None


def _emit(op, inputs, out_data, vjp, fwd) -> Tensor:
    if finite_checks and not np.all(np.isfinite(out_data)):
        raise NumericError(f"non-finite values produced by op {op!r}")
    out = Tensor(out_data, dtype=out_data.dtype)
    g = _active_graph()
    if g is not None and any(_attached(t) for t in inputs):
        node = Node(op, tuple(inputs), out, vjp, fwd)
        out.node = node
        g.nodes.append(node)
    return out


def _as_scalar_operand(s):
    """Return (value, tensor-or-None) for a float-or-scalar-Tensor operand."""
    if isinstance(s, Tensor):
        if s.data.size != 1:
            raise DimensionError(f"scalar operand must have one element, got shape {tuple(s.shape)}")
        return s.data.reshape(()), s
    return float(s), None


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul shapes incompatible: {tuple(a.shape)} x {tuple(b.shape)}"
        )
    out = a.data @ b.data

    def vjp(g, needs):
        ga = g @ b.data.T if needs[0] else None
        gb = a.data.T @ g if needs[1] else None
        return ga, gb

    return _emit("matmul", (a, b), out, vjp, lambda x, y: x @ y)


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op} shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    vjp = lambda g, needs: (g if needs[0] else None, g if needs[1] else None)
    return _emit("add", (a, b), a.data + b.data, vjp, lambda x, y: x + y)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    vjp = lambda g, needs: (g if needs[0] else None, -g if needs[1] else None)
    return _emit("sub", (a, b), a.data - b.data, vjp, lambda x, y: x - y)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)

    def vjp(g, needs):
        ga = g * b.data if needs[0] else None
        gb = g * a.data if needs[1] else None
        return ga, gb

    return _emit("mul", (a, b), a.data * b.data, vjp, lambda x, y: x * y)


def scale(x: Tensor, s) -> Tensor:
    """Multiply by a scalar (python float or one-element Tensor)."""
    sv, st = _as_scalar_operand(s)
    inputs = (x,) if st is None else (x, st)
    out = x.data * sv

    def vjp(g, needs):
        gx = g * sv if needs[0] else None
        if st is None:
            return (gx,)
        gs = np.asarray(np.sum(g * x.data)).reshape(st.shape) if needs[1] else None
        return gx, gs

    if st is None:
        return _emit("scale", inputs, out, vjp, lambda xd: xd * sv)
    return _emit("scale", inputs, out, vjp, lambda xd, sd: xd * sd.reshape(()))


def shift(x: Tensor, s) -> Tensor:
    """Add a scalar (python float or one-element Tensor) to every element."""
    sv, st = _as_scalar_operand(s)
    inputs = (x,) if st is None else (x, st)
    out = x.data + sv

    def vjp(g, needs):
        gx = g if needs[0] else None
        if st is None:
            return (gx,)
        gs = np.asarray(np.sum(g)).reshape(st.shape) if needs[1] else None
        return gx, gs

    if st is None:
        return _emit("shift", inputs, out, vjp, lambda xd: xd + sv)
    return _emit("shift", inputs, out, vjp, lambda xd, sd: xd + sd.reshape(()))


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """GELU via the fixed tanh form:

        gelu(x) = 0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))
    """
    xd = x.data
    u = _GELU_C * (xd + _GELU_A * xd**3)
    t = np.tanh(u)
    out = 0.5 * xd * (1.0 + t)

    def vjp(g, needs):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * xd**2)
        dx = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t**2) * du
        return (g * dx,)

    def fwd(xd):
        return 0.5 * xd * (1.0 + np.tanh(_GELU_C * (xd + _GELU_A * xd**3)))

    return _emit("gelu", (x,), out, vjp, fwd)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _emit("exp", (x,), out, lambda g, needs: (g * out,), np.exp)


def log(x: Tensor) -> Tensor:
    out = np.log(x.data)
    return _emit("log", (x,), out, lambda g, needs: (g / x.data,), np.log)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization to zero mean / unit (population) variance,
    followed by the elementwise affine `gain * xhat + bias`."""
    if eps <= 0:
        raise UsageError("layernorm eps must be positive")
    if x.data.ndim != 2:
        raise DimensionError(f"layernorm expects a 2-d input, got shape {tuple(x.shape)}")
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layernorm gain/bias must have shape ({d},), got {tuple(gain.shape)} / {tuple(bias.shape)}"
        )
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = xhat * gain.data + bias.data

    def vjp(g, needs):
        gx = None
        if needs[0]:
            gh = g * gain.data
            gx = inv * (
                gh
                - gh.mean(axis=1, keepdims=True)
                - xhat * (gh * xhat).mean(axis=1, keepdims=True)
            )
        ggain = (g * xhat).sum(axis=0) if needs[1] else None
        gbias = g.sum(axis=0) if needs[2] else None
        return gx, ggain, gbias

    def fwd(xd, gd, bd):
        m = xd.mean(axis=1, keepdims=True)
        v = ((xd - m) ** 2).mean(axis=1, keepdims=True)
        return (xd - m) / np.sqrt(v + eps) * gd + bd

    return _emit("layernorm", (x, gain, bias), out, vjp, fwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along `axis` (max-subtracted)."""
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax input contains non-finite values")

    def fwd(xd):
        z = xd - xd.max(axis=axis, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=axis, keepdims=True)

    out = fwd(x.data)

    def vjp(g, needs):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _emit("softmax", (x,), out, vjp, fwd)


def concat(parts, axis: int = 0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise UsageError("concat needs at least one part")
    ref = parts[0].data.ndim
    for p in parts:
        if p.data.ndim != ref:
            raise DimensionError(
                f"concat rank mismatch: {tuple(parts[0].shape)} vs {tuple(p.shape)}"
            )
    ax = axis % ref if ref else 0
    base = list(parts[0].shape)
    for p in parts[1:]:
        for i, (m, n) in enumerate(zip(base, p.shape)):
            if i != ax and m != n:
                raise DimensionError(
                    f"concat off-axis extents differ: {tuple(parts[0].shape)} vs {tuple(p.shape)}"
                )
    out = np.concatenate([p.data for p in parts], axis=ax)
    extents = [p.shape[ax] for p in parts]

    def vjp(g, needs):
        grads = []
        start = 0
        for p, n, need in zip(parts, extents, needs):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(start, start + n)
            grads.append(np.ascontiguousarray(g[tuple(sl)]) if need else None)
            start += n
        return tuple(grads)

    return _emit("concat", tuple(parts), out, vjp,
                 lambda *ds: np.concatenate(ds, axis=ax))


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"transpose expects a 2-d input, got shape {tuple(x.shape)}")
    return _emit("transpose", (x,), np.ascontiguousarray(x.data.T),
                 lambda g, needs: (np.ascontiguousarray(g.T),),
                 lambda xd: np.ascontiguousarray(xd.T))


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise DimensionError(f"cannot reshape {tuple(x.shape)} to {shape}")
    orig = x.data.shape
    return _emit("reshape", (x,), x.data.reshape(shape),
                 lambda g, needs: (g.reshape(orig),),
                 lambda xd: xd.reshape(shape))


def take_rows(x: Tensor, idx) -> Tensor:
    """Gather rows (axis 0) by integer index; duplicate indices accumulate
    gradient."""
    ids = np.asarray(idx, dtype=np.int64)
    if ids.ndim != 1:
        raise DimensionError("take_rows expects a flat index list")
    if ids.size and (ids.min() < 0 or ids.max() >= x.shape[0]):
        raise DimensionError(
            f"take_rows index out of range for axis of extent {x.shape[0]}"
        )
    out = np.ascontiguousarray(x.data[ids])

    def vjp(g, needs):
        z = np.zeros_like(x.data, dtype=g.dtype)
        np.add.at(z, ids, g)
        return (z,)

    return _emit("take_rows", (x,), out, vjp, lambda xd: np.ascontiguousarray(xd[ids]))


def take_cols(x: Tensor, j0: int, j1: int) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"take_cols expects a 2-d input, got shape {tuple(x.shape)}")
    if not (0 <= j0 <= j1 <= x.shape[1]):
        raise DimensionError(f"take_cols slice [{j0}:{j1}] out of range for width {x.shape[1]}")
    out = np.ascontiguousarray(x.data[:, j0:j1])

    def vjp(g, needs):
        z = np.zeros_like(x.data, dtype=g.dtype)
        z[:, j0:j1] = g
        return (z,)

    return _emit("take_cols", (x,), out, vjp,
                 lambda xd: np.ascontiguousarray(xd[:, j0:j1]))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast add: (n, d) + (d,)."""
    if x.data.ndim != 2 or b.shape != (x.shape[1],):
        raise DimensionError(
            f"add_bias shapes incompatible: {tuple(x.shape)} + {tuple(b.shape)}"
        )

    def vjp(g, needs):
        gx = g if needs[0] else None
        gb = g.sum(axis=0) if needs[1] else None
        return gx, gb

    return _emit("add_bias", (x, b), x.data + b.data, vjp, lambda xd, bd: xd + bd)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(np.sum(x.data))

    def vjp(g, needs):
        return (np.full_like(x.data, 1.0, dtype=g.dtype) * g,)

    return _emit("sum_all", (x,), out, vjp, lambda xd: np.asarray(np.sum(xd)))


def cast(x: Tensor, dtype) -> Tensor:
    """Dtype cast; gradient casts back to the input dtype."""
    dt = np.dtype(dtype)
    return _emit("cast", (x,), x.data.astype(dt),
                 lambda g, needs: (g.astype(x.data.dtype),),
                 lambda xd: xd.astype(dt))


# ---------------------------------------------------------------------------
# backward + gradient audit
# ---------------------------------------------------------------------------

def backward(graph: Graph, loss: Tensor) -> dict:
    """Reverse-sweep `graph` from scalar `loss`.

    Writes `.grad` on every trainable tensor that participated in the graph
    (zeros when the loss does not depend on it) and returns {tensor: grad}.
    Non-trainable tensors never receive a `.grad` buffer.
    """
    if loss.data.size != 1:
        raise UsageError(f"loss must be scalar, got shape {tuple(loss.shape)}")
    if loss.node is None:
        raise UsageError("loss is not attached to a recorded graph")
    if not graph.nodes or (loss.node is not graph.nodes[-1] and loss.node not in graph.nodes):
        raise UsageError("loss was not recorded on the given graph")

    scratch: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    trainable_seen: dict[int, Tensor] = {}
    if loss.trainable:
        trainable_seen[id(loss)] = loss

    for node in reversed(graph.nodes):
        for t in node.inputs:
            if t.trainable:
                trainable_seen[id(t)] = t
        g = scratch.pop(id(node.output), None)
        if g is None:
            continue
        needs = tuple(_attached(t) for t in node.inputs)
        grads = node.vjp(g, needs)
        for t, gt in zip(node.inputs, grads):
            if gt is None:
                continue
            prev = scratch.get(id(t))
            scratch[id(t)] = gt if prev is None else prev + gt

    result = {}
    for tid, t in trainable_seen.items():
        acc = scratch.get(tid)
        if acc is None:
            acc = np.zeros_like(t.data)
        t.grad = np.ascontiguousarray(acc, dtype=t.data.dtype)
        result[t] = t.grad
    return result


def grad_check(f, params, eps: float = 1e-3, floor: float = 1e-4) -> float:
    """Compare backward gradients of `f(params)` against central differences.

    `f` must be a deterministic function of the tensors it is passed and
    return a scalar Tensor. The finite-difference oracle re-evaluates `f`
    on float64 copies of the parameters, so it measures the true derivative
    independently of the float32 backward path it audits.

    `eps` is a relative step: each coordinate moves by eps * max(|x|, eps).
    An absolute step would be a huge perturbation on small-scale parameters
    (truncation error grows with the square of the step), failing even an
    exact gradient; scaling by the coordinate keeps the oracle trustworthy
    at any parameter magnitude.

    Returns the worst per-coordinate relative error, where the relative
    scale is floored at `floor` so that noise on near-zero coordinate pairs
    is not amplified; an exactly-zero pair scores 0.
    """
    if eps <= 0:
        raise UsageError("grad_check eps must be positive")
    params = list(params)
    if not params or not all(p.trainable for p in params):
        raise UsageError("grad_check params must be a non-empty list of trainable tensors")
    with record() as g:
        loss = f(params)
        backward(g, loss)
    analytic = [
        p.grad.astype(np.float64) if p.grad is not None else np.zeros(p.shape)
        for p in params
    ]

    shadows = [Tensor(p.data, trainable=p.trainable, dtype=np.float64) for p in params]
    worst = 0.0
    for k, p in enumerate(shadows):
        flat = p.data.reshape(-1)
        a_flat = analytic[k].reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            step = eps * max(abs(keep), eps)
            flat[i] = keep + step
            up = f(shadows).item()
            flat[i] = keep - step
            dn = f(shadows).item()
            flat[i] = keep
            numeric = (up - dn) / (2.0 * step)
            a = a_flat[i]
            scale_ = max(abs(a), abs(numeric))
            if scale_ == 0.0:
                continue
            err = abs(a - numeric) / max(scale_, floor)
            if err > worst:
                worst = err
    return worst
