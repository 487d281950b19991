"""Dense-matrix reverse-mode automatic differentiation.

Values are float64 numpy arrays of shape (rows, cols); scalars are 1x1.
Every op that touches a tracked tensor records its parents and a local
gradient rule on the result; creation order is topological, so backward
visits each node exactly once in reverse. Broadcasting is limited to
scalars, row vectors (1, n) and column vectors (n, 1).

Graphs are plain object webs hanging off their output node, so
independent tapes share no mutable state and may be evaluated
concurrently.
"""

import numpy as np

from .errors import ContractError, DomainError, NumericalError, ShapeError


def as_matrix(x):
    """Coerce to a 2-D float64 array (scalars -> 1x1, 1-D -> row vector)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {a.shape}")
    return a


class Tensor:
    """A node in the computation graph: a matrix value plus its gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = as_matrix(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def detach(self):
        return Tensor(self.data)

    def _accumulate(self, g):
        # g may be a view or a buffer shared with another node: copy on adopt
        if self.grad is None:
            self.grad = np.array(g)
        else:
            self.grad += g

    def _accumulate_owned(self, g):
        # caller hands over a freshly allocated array
        if self.grad is None:
            self.grad = g
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A trainable tensor with a stable name; gradients accumulate across uses."""

    __slots__ = ("name",)

    def __init__(self, data, name):
        super().__init__(data, requires_grad=True)
        self.name = name

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.data.shape})"


def _result(data, parents, backward_fn):
    """Build an op result, recording parents only if some input is tracked."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


class Tape:
    """Topologically ordered record of the ops reachable from one output.

    Operands always precede their consumers; backward() seeds the output
    gradient with 1 and sweeps the list once in reverse, accumulating
    into every tracked tensor (so a tensor used twice receives the sum
    of both paths).
    """

    def __init__(self, output):
        if output.data.shape != (1, 1):
            raise ContractError(
                f"backward requires a scalar (1x1) output, got shape {output.data.shape}"
            )
        self.output = output
        self.nodes = self._topo_order(output)

    @staticmethod
    def _topo_order(output):
        order = []
        visited = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))
        return order

    def backward(self):
        self.output._accumulate(np.ones((1, 1)))
        for node in reversed(self.nodes):
            if node._backward is not None:
                node._backward(node.grad)


def backward(loss):
    """Run the reverse sweep from a scalar loss node."""
    Tape(loss).backward()


# ---------------------------------------------------------------------------
# broadcasting helpers (row/column vectors and scalars only)

def _broadcast_ok(sa, sb):
    if sa == sb:
        return True
    for da, db in zip(sa, sb):
        if da != db and da != 1 and db != 1:
            return False
    return True


def _reduce_to(g, shape):
    # undo numpy broadcasting: sum g down to the operand's shape
    if g.shape == shape:
        return g
    out = g
    if shape[0] == 1 and g.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def _check_elementwise(a, b, op):
    if not _broadcast_ok(a.data.shape, b.data.shape):
        raise ShapeError(f"{op}: incompatible shapes {a.data.shape} and {b.data.shape}")


def _acc_reduced(t, g):
    """Accumulate g into t, reducing over broadcast axes first."""
    r = _reduce_to(g, t.data.shape)
    if r is g:
        t._accumulate(g)
    else:
        t._accumulate_owned(r)


# ---------------------------------------------------------------------------
# primitives

def matmul(a, b):
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.data.shape} x {b.data.shape}")
    a_data, b_data = a.data, b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate_owned(g @ b_data.T)
        if b.requires_grad:
            b._accumulate_owned(a_data.T @ g)

    return _result(a_data @ b_data, (a, b), bwd)


def add(a, b):
    _check_elementwise(a, b, "add")

    def bwd(g):
        if a.requires_grad:
            _acc_reduced(a, g)
        if b.requires_grad:
            _acc_reduced(b, g)

    return _result(a.data + b.data, (a, b), bwd)


def sub(a, b):
    _check_elementwise(a, b, "sub")

    def bwd(g):
        if a.requires_grad:
            _acc_reduced(a, g)
        if b.requires_grad:
            b._accumulate_owned(_reduce_to(-g, b.data.shape))

    return _result(a.data - b.data, (a, b), bwd)


def mul(a, b):
    _check_elementwise(a, b, "mul")
    a_data, b_data = a.data, b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate_owned(_reduce_to(g * b_data, a.data.shape))
        if b.requires_grad:
            b._accumulate_owned(_reduce_to(g * a_data, b.data.shape))

    return _result(a_data * b_data, (a, b), bwd)


def div(a, b):
    _check_elementwise(a, b, "div")
    a_data, b_data = a.data, b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate_owned(_reduce_to(g / b_data, a.data.shape))
        if b.requires_grad:
            b._accumulate_owned(_reduce_to(-g * a_data / (b_data * b_data), b.data.shape))

    return _result(a_data / b_data, (a, b), bwd)


def scale(a, s):
    s = float(s)

    def bwd(g):
        a._accumulate_owned(s * g)

    return _result(a.data * s, (a,), bwd)


def exp(a):
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)
    if not np.all(np.isfinite(out_data)):
        raise NumericalError("exp overflowed")

    def bwd(g):
        a._accumulate_owned(g * out_data)

    return _result(out_data, (a,), bwd)


def log(a):
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive entries")
    a_data = a.data

    def bwd(g):
        a._accumulate_owned(g / a_data)

    return _result(np.log(a_data), (a,), bwd)


def sqrt(a):
    if np.any(a.data < 0.0):
        raise DomainError("sqrt requires non-negative entries")
    out_data = np.sqrt(a.data)

    def bwd(g):
        a._accumulate_owned(g * 0.5 / np.maximum(out_data, 1e-300))

    return _result(out_data, (a,), bwd)


def relu(a):
    mask = a.data > 0.0

    def bwd(g):
        a._accumulate_owned(g * mask)

    return _result(a.data * mask, (a,), bwd)


def clip_min(a, floor):
    """max(a, floor) elementwise; gradient passes only where a > floor."""
    floor = float(floor)
    mask = a.data > floor

    def bwd(g):
        a._accumulate_owned(g * mask)

    return _result(np.maximum(a.data, floor), (a,), bwd)


def rowsum(a):
    """Sum over columns -> (n, 1)."""
    n = a.data.shape[0]
    m = a.data.shape[1]

    def bwd(g):
        if m > 1:
            a._accumulate_owned(np.broadcast_to(g, (n, m)) * 1.0)
        else:
            a._accumulate(g)

    return _result(a.data.sum(axis=1, keepdims=True), (a,), bwd)


def sum_all(a):
    shape = a.data.shape

    def bwd(g):
        a._accumulate_owned(np.full(shape, g[0, 0]))

    return _result(a.data.sum().reshape(1, 1), (a,), bwd)


def mean_all(a):
    n = a.data.size
    shape = a.data.shape

    def bwd(g):
        a._accumulate_owned(np.full(shape, g[0, 0] / n))

    return _result(a.data.mean().reshape(1, 1), (a,), bwd)


def concat_cols(*tensors):
    widths = [t.data.shape[1] for t in tensors]
    rows = {t.data.shape[0] for t in tensors}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: mismatched row counts {sorted(rows)}")
    offsets = np.cumsum([0] + widths)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._accumulate(g[:, lo:hi])

    return _result(np.concatenate([t.data for t in tensors], axis=1), tensors, bwd)


def gather_rows(a, idx):
    """out[i] = a[idx[i]]; gradient scatter-adds back into a's rows."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows: index must be 1-D")
    a_rows = a.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= a_rows):
        raise ShapeError("gather_rows: index out of range")

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        a._accumulate_owned(ga)

    return _result(a.data[idx], (a,), bwd)


def scatter_rows(a, idx, n_rows):
    """Place a's rows at positions idx of an (n_rows, cols) zero matrix."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != (a.data.shape[0],):
        raise ShapeError("scatter_rows: need one target row per input row")
    if len(np.unique(idx)) != idx.size:
        raise ShapeError("scatter_rows: duplicate target rows")
    out_data = np.zeros((n_rows, a.data.shape[1]))
    out_data[idx] = a.data

    def bwd(g):
        a._accumulate_owned(g[idx])

    return _result(out_data, (a,), bwd)


def mean_time(a, t_steps, n_rows):
    """Mean over the time axis of row blocks laid out as (b, t, node).

    a has b*t_steps*n_rows rows; the result has b*n_rows rows where
    out[(b, i)] = mean_t a[(b, t, i)].
    """
    total, cols = a.data.shape
    if total % (t_steps * n_rows) != 0:
        raise ShapeError(f"mean_time: {total} rows not divisible by {t_steps}*{n_rows}")
    b = total // (t_steps * n_rows)
    out_data = a.data.reshape(b, t_steps, n_rows, cols).mean(axis=1).reshape(b * n_rows, cols)

    def bwd(g):
        gb = np.repeat(g.reshape(b, 1, n_rows * cols) / t_steps, t_steps, axis=1)
        a._accumulate_owned(gb.reshape(total, cols))

    return _result(out_data, (a,), bwd)


def tile_rows(a, m):
    """Stack m copies of a vertically; the gradient sums the copies."""
    n, cols = a.data.shape

    def bwd(g):
        a._accumulate_owned(g.reshape(m, n, cols).sum(axis=0))

    return _result(np.tile(a.data, (m, 1)), (a,), bwd)


def row_mix(a, mix, n_blocks=1):
    """Row-sparse weighted aggregation: out[i] = sum_j w_ij * a[j].

    mix provides the N x N top-k matrix (and its transpose) of the
    diffusion module; with n_blocks > 1 the same pattern is applied
    independently to each consecutive N-row block (stacked time steps /
    windows). Sparsity is semantic (top-k rows); at the sizes involved
    the kernel itself runs as a batched dense matmul. The gradient rule
    is aggregation by the transpose.
    """
    n = mix.n
    total, cols = a.data.shape
    if total != n_blocks * n:
        raise ShapeError(f"row_mix: expected {n_blocks * n} rows, got {total}")

    def apply(x, dense):
        return np.matmul(dense, x.reshape(n_blocks, n, cols)).reshape(total, cols)

    def bwd(g):
        a._accumulate_owned(apply(g, mix.dense_t))

    return _result(apply(a.data, mix.dense), (a,), bwd)


# ---------------------------------------------------------------------------
# gradient verification

def check_gradients(f, params, eps=1e-5):
    """Compare analytic gradients of f() against central finite differences.

    f rebuilds the graph from the current parameter values and returns the
    scalar loss tensor. Returns the worst relative error over every entry
    of every parameter, with |a - n| / max(|a|, |n|, 1e-6).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for p in params:
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.data[0, 0]):
        raise NumericalError("loss is not finite")
    Tape(loss).backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.ravel()
        gflat = ga.ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            lp = f().data[0, 0]
            flat[k] = orig - eps
            lm = f().data[0, 0]
            flat[k] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericalError("loss is not finite during probing")
            numeric = (lp - lm) / (2.0 * eps)
            err = abs(numeric - gflat[k]) / max(abs(numeric), abs(gflat[k]), 1e-6)
            worst = max(worst, err)
    return worst
