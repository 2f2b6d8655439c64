"""Minimal reverse-mode differentiable primitives on numpy arrays.

Every learned map in the pipeline (feature embeddings, graph convolution,
graph attention, output head) is built from the primitives here. Forward
functions take an explicit ComputationTape; calling `tape.backward(loss)`
replays the recorded primitives once, in reverse, accumulating gradients
into every Tensor that participated.

All math runs in float64. Parameter values are kept on the float32 grid
(see Param.snap) so checkpoints with float32 payloads round-trip bit
exactly.
"""

import numpy as np

from .errors import DimensionError, NumericError, StructuralError

LEAKY_SLOPE = 0.2


class Tensor:
    """A value in the computation plus its accumulated gradient.

    Leaf tensors built from raw data are constants: backward passes skip
    them entirely. Op outputs and Params always receive gradients.
    """

    __slots__ = ("value", "grad", "const")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.const = True

    @property
    def shape(self):
        return self.value.shape

    def ensure_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        return self.grad


def _result(value):
    out = Tensor(value)
    out.const = False
    return out


def _accum(t, g):
    if t.grad is None:
        if t.const:
            return
        t.grad = np.zeros_like(t.value)
    t.grad += g


class Param(Tensor):
    """Named trainable leaf. Values always sit on the float32 grid."""

    __slots__ = ("name",)

    def __init__(self, name, value):
        super().__init__(value)
        self.name = name
        self.const = False
        self.snap()
        self.grad = np.zeros_like(self.value)

    def snap(self):
        """Round the value to the nearest float32, kept in float64 storage."""
        self.value = self.value.astype(np.float32).astype(np.float64)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


class ComputationTape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self):
        self._records = []

    def record(self, backward_fn):
        self._records.append(backward_fn)

    def __len__(self):
        return len(self._records)

    def backward(self, loss):
        if loss.value.shape != ():
            raise DimensionError("backward() expects a scalar loss, got shape %r"
                                 % (loss.value.shape,))
        loss.ensure_grad()[...] = 1.0
        for fn in reversed(self._records):
            fn()


# Keep the short alias used throughout the package.
Tape = ComputationTape


def constant(value):
    return Tensor(np.asarray(value, dtype=np.float64))


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise and affine primitives


def add(tape, a, b):
    """a + b; b may be a 1-D row vector broadcast over a 2-D a."""
    av, bv = a.value, b.value
    if av.shape != bv.shape and not (av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]):
        raise DimensionError("add: shapes %r and %r do not conform" % (av.shape, bv.shape))
    out = Tensor(av + bv)

    def backward():
        g = out.grad
        a.ensure_grad()
        a.grad += g
        b.ensure_grad()
        if bv.shape == g.shape:
            b.grad += g
        else:
            b.grad += g.sum(axis=0)

    tape.record(backward)
    return out


def matmul(tape, a, b):
    av, bv = a.value, b.value
    if av.shape[-1] != bv.shape[0]:
        raise DimensionError("matmul: inner dims %r x %r" % (av.shape, bv.shape))
    out = Tensor(av @ bv)

    def backward():
        g = out.grad
        a.ensure_grad()
        a.grad += g @ bv.T
        b.ensure_grad()
        b.grad += av.T @ g

    tape.record(backward)
    return out


def linear_forward(tape, x, w, b):
    """x @ w + b with the bias broadcast across rows."""
    return add(tape, matmul(tape, x, w), b)


def mul_const(tape, x, c):
    """x * c for a constant array or scalar c (no gradient into c)."""
    c = np.asarray(c, dtype=np.float64)
    out = Tensor(x.value * c)

    def backward():
        x.ensure_grad()
        x.grad += out.grad * c

    tape.record(backward)
    return out


def affine_const(tape, x, scale, shift):
    """scale * x + shift for scalar constants."""
    out = Tensor(scale * x.value + shift)

    def backward():
        x.ensure_grad()
        x.grad += scale * out.grad

    tape.record(backward)
    return out


def relu(tape, x):
    out = Tensor(np.maximum(0.0, x.value))
    mask = x.value > 0.0

    def backward():
        x.ensure_grad()
        x.grad += out.grad * mask

    tape.record(backward)
    return out


def leaky_relu(tape, x, slope=LEAKY_SLOPE):
    v = x.value
    out = Tensor(np.where(v > 0.0, v, slope * v))
    factor = np.where(v > 0.0, 1.0, slope)

    def backward():
        x.ensure_grad()
        x.grad += out.grad * factor

    tape.record(backward)
    return out


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(tape, x):
    sv = _sigmoid(np.atleast_1d(x.value)).reshape(x.value.shape)
    out = Tensor(sv)

    def backward():
        x.ensure_grad()
        x.grad += out.grad * sv * (1.0 - sv)

    tape.record(backward)
    return out


def softplus(tape, x):
    """log(1 + exp(x)), the stable form of -log(sigmoid(-x))."""
    out = Tensor(np.logaddexp(0.0, x.value))
    sv = _sigmoid(np.atleast_1d(x.value)).reshape(x.value.shape)

    def backward():
        x.ensure_grad()
        x.grad += out.grad * sv

    tape.record(backward)
    return out


def log(tape, x):
    out = Tensor(np.log(x.value))

    def backward():
        x.ensure_grad()
        x.grad += out.grad / x.value

    tape.record(backward)
    return out


def sum_all(tape, x):
    out = Tensor(np.asarray(x.value.sum()))

    def backward():
        x.ensure_grad()
        x.grad += out.grad

    tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# shape plumbing


def concat(tape, parts):
    """Concatenate along the last axis."""
    out = Tensor(np.concatenate([p.value for p in parts], axis=-1))
    widths = [p.value.shape[-1] for p in parts]

    def backward():
        g = out.grad
        off = 0
        for p, w in zip(parts, widths):
            p.ensure_grad()
            p.grad += g[..., off:off + w]
            off += w

    tape.record(backward)
    return out


def stack_rows(tape, rows):
    """Stack 1-D tensors into a matrix, one per row."""
    out = Tensor(np.stack([r.value for r in rows], axis=0))

    def backward():
        g = out.grad
        for i, r in enumerate(rows):
            r.ensure_grad()
            r.grad += g[i]

    tape.record(backward)
    return out


def gather_rows(tape, x, idx):
    idx = np.asarray(idx, dtype=np.intp)
    out = Tensor(x.value[idx])

    def backward():
        x.ensure_grad()
        np.add.at(x.grad, idx, out.grad)

    tape.record(backward)
    return out


def row(tape, x, i):
    out = Tensor(x.value[i])

    def backward():
        x.ensure_grad()
        x.grad[i] += out.grad

    tape.record(backward)
    return out


def zero_rows(tape, x, keep):
    """Zero every row whose keep flag is False."""
    keep = np.asarray(keep, dtype=bool)
    col = keep.astype(np.float64)[:, None]
    out = Tensor(x.value * col)

    def backward():
        x.ensure_grad()
        x.grad += out.grad * col

    tape.record(backward)
    return out


def masked_mean_rows(tape, x, mask):
    """Mean over the rows selected by mask; at least one row required."""
    mask = np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise StructuralError("masked_mean_rows: empty mask")
    out = Tensor(x.value[idx].mean(axis=0))
    inv = 1.0 / idx.size

    def backward():
        x.ensure_grad()
        x.grad[idx] += out.grad * inv

    tape.record(backward)
    return out


def matvec(tape, x, v):
    out = Tensor(x.value @ v.value)

    def backward():
        g = out.grad
        x.ensure_grad()
        x.grad += np.outer(g, v.value)
        v.ensure_grad()
        v.grad += x.value.T @ g

    tape.record(backward)
    return out


def vecmat(tape, v, x):
    out = Tensor(v.value @ x.value)

    def backward():
        g = out.grad
        v.ensure_grad()
        v.grad += x.value @ g
        x.ensure_grad()
        x.grad += np.outer(v.value, g)

    tape.record(backward)
    return out


def softmax_vec(tape, e):
    ev = e.value
    shifted = np.exp(ev - ev.max())
    alpha = shifted / shifted.sum()
    out = Tensor(alpha)

    def backward():
        g = out.grad
        e.ensure_grad()
        e.grad += alpha * (g - g @ alpha)

    tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# graph primitives


def row_normalize_plus_eye(tape, a):
    """(A + I) with every row rescaled to sum 1; rows always sum >= 1."""
    av = a.value
    b = av + np.eye(av.shape[0])
    s = b.sum(axis=1, keepdims=True)
    out = Tensor(b / s)

    def backward():
        g = out.grad
        a.ensure_grad()
        a.grad += g / s - ((g * out.value).sum(axis=1, keepdims=True)) / s

    tape.record(backward)
    return out


def graph_conv(tape, nodes, adj, w, valid):
    """ReLU(rownorm(A + I) @ N @ W) with invalid rows forced to zero.

    `adj` may be a constant ndarray or a Tensor when the adjacency itself
    is a function of trainable parameters.
    """
    valid = np.asarray(valid, dtype=bool)
    if isinstance(adj, Tensor):
        if not np.isfinite(adj.value).all():
            raise NumericError("graph_conv: non-finite adjacency")
        a_hat = row_normalize_plus_eye(tape, adj)
        mixed = matmul(tape, a_hat, nodes)
    else:
        adj = np.asarray(adj, dtype=np.float64)
        if not np.isfinite(adj).all():
            raise NumericError("graph_conv: non-finite adjacency")
        if adj.shape[0] != nodes.value.shape[0]:
            raise DimensionError("graph_conv: adjacency %r vs nodes %r"
                                 % (adj.shape, nodes.value.shape))
        b = adj + np.eye(adj.shape[0])
        a_hat = b / b.sum(axis=1, keepdims=True)
        mixed = matmul(tape, Tensor(a_hat), nodes)
    return zero_rows(tape, relu(tape, matmul(tape, mixed, w)), valid)


def compose_rows(tape, base, rows, idx):
    """Copy of a constant matrix with some rows overwritten by a Tensor."""
    idx = np.asarray(idx, dtype=np.intp)
    v = np.array(base, dtype=np.float64)
    v[idx] = rows.value
    out = Tensor(v)

    def backward():
        rows.ensure_grad()
        rows.grad += out.grad[idx]

    tape.record(backward)
    return out


def pair_kernel(tape, centers, pairs, scale):
    """exp(-||c_a - c_b|| / scale) for each (a, b) pair of rows of centers.

    Self pairs have distance identically zero, so their kernel is the
    constant 1 and contributes no gradient.
    """
    pairs = np.asarray(pairs, dtype=np.intp)
    ia, ib = pairs[:, 0], pairs[:, 1]
    cv = centers.value
    diff = cv[ia] - cv[ib]
    dist = np.sqrt((diff * diff).sum(axis=1))
    k = np.exp(-dist / scale)
    selfpair = ia == ib
    k[selfpair] = 1.0
    out = Tensor(k)

    def backward():
        g = out.grad
        live = (~selfpair) & (dist > 1e-12)
        if not live.any():
            return
        # dk/dc_a = -k/scale * (c_a - c_b)/dist
        coef = (-g[live] * k[live] / (scale * dist[live]))[:, None] * diff[live]
        centers.ensure_grad()
        np.add.at(centers.grad, ia[live], coef)
        np.add.at(centers.grad, ib[live], -coef)

    tape.record(backward)
    return out


def normalize_sum(tape, k):
    """k / sum(k); the whole vector rescales to total 1."""
    s = k.value.sum()
    out = Tensor(k.value / s)

    def backward():
        g = out.grad
        k.ensure_grad()
        k.grad += g / s - (g @ out.value) / s

    tape.record(backward)
    return out


def scatter_square(tape, vec, pairs, n):
    """Place vec entries into an n x n zero matrix at the given pairs."""
    pairs = np.asarray(pairs, dtype=np.intp)
    m = np.zeros((n, n))
    m[pairs[:, 0], pairs[:, 1]] = vec.value
    out = Tensor(m)

    def backward():
        vec.ensure_grad()
        vec.grad += out.grad[pairs[:, 0], pairs[:, 1]]

    tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# graph attention


class AttentionHead:
    """Parameter bundle for one attention head: source/target projections
    plus the scoring vector."""

    def __init__(self, w_src, w_tgt, att):
        self.w_src = w_src
        self.w_tgt = w_tgt
        self.att = att

    def params(self):
        return [self.w_src, self.w_tgt, self.att]


def graph_attention(tape, h, allowed, heads):
    """Attention-weighted aggregation over permitted edges.

    For target i and permitted source j the raw score is
    att . leaky_relu(W_src h_j + W_tgt h_i); a softmax over row i's
    permitted sources weights the transformed sources W_src h_j.
    Each row of `allowed` must permit at least one source (callers add
    self-loops). Sources outside the mask never enter the arithmetic, so
    masked frames cannot perturb earlier outputs even at the bit level.
    """
    allowed = np.asarray(allowed, dtype=bool)
    n = h.value.shape[0]
    if allowed.shape != (n, n):
        raise DimensionError("graph_attention: mask %r for %d nodes" % (allowed.shape, n))
    head_outs = []
    for head in heads:
        src = matmul(tape, h, head.w_src)
        tgt = matmul(tape, h, head.w_tgt)
        rows = []
        for i in range(n):
            idx = np.flatnonzero(allowed[i])
            if idx.size == 0:
                raise StructuralError("graph_attention: node %d has no permitted source "
                                      "(self-loop missing)" % i)
            s_sel = gather_rows(tape, src, idx)
            scored = leaky_relu(tape, add(tape, s_sel, row(tape, tgt, i)))
            alpha = softmax_vec(tape, matvec(tape, scored, head.att))
            rows.append(vecmat(tape, alpha, s_sel))
        head_outs.append(stack_rows(tape, rows))
    return head_outs[0] if len(head_outs) == 1 else concat(tape, head_outs)


def attention_weights(h, allowed, head):
    """Forward-only attention matrix (rows sum to 1 over permitted edges)."""
    allowed = np.asarray(allowed, dtype=bool)
    n = h.shape[0]
    src = h @ head.w_src.value
    tgt = h @ head.w_tgt.value
    out = np.zeros((n, n))
    for i in range(n):
        idx = np.flatnonzero(allowed[i])
        if idx.size == 0:
            raise StructuralError("attention_weights: node %d has no permitted source" % i)
        pre = src[idx] + tgt[i]
        scored = np.where(pre > 0.0, pre, LEAKY_SLOPE * pre) @ head.att.value
        e = np.exp(scored - scored.max())
        out[i, idx] = e / e.sum()
    return out


# ---------------------------------------------------------------------------
# initialisation and gradient checking


def glorot(rng, shape, fan_in=None, fan_out=None):
    """Uniform(+-sqrt(6/(fan_in+fan_out))) init on the float32 grid."""
    if fan_in is None:
        fan_in = shape[0] if len(shape) > 1 else shape[0]
    if fan_out is None:
        fan_out = shape[1] if len(shape) > 1 else 1
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def grad_check(loss_fn, params, h=1e-5):
    """Max relative error between tape gradients and central differences.

    loss_fn(tape) must rebuild the forward pass from scratch and return a
    scalar Tensor; params are perturbed in place. Error per component is
    |analytic - numeric| / max(1, |numeric|).
    """
    for p in params:
        p.zero_grad()
    tape = ComputationTape()
    loss = loss_fn(tape)
    tape.backward(loss)

    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        numeric = np.zeros_like(p.value)
        flat_v = p.value.reshape(-1)
        flat_n = numeric.reshape(-1)
        for i in range(flat_v.size):
            orig = flat_v[i]
            flat_v[i] = orig + h
            f_plus = float(loss_fn(ComputationTape()).value)
            flat_v[i] = orig - h
            f_minus = float(loss_fn(ComputationTape()).value)
            flat_v[i] = orig
            flat_n[i] = (f_plus - f_minus) / (2.0 * h)
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
        worst = max(worst, float(err.max()))
    return worst
