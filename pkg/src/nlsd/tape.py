"""Reverse-mode automatic differentiation over numpy arrays.

A small micrograd-style engine: every operation builds a ``Tensor`` node
holding its value, its parents, and a closure that accumulates gradients
into the parents. ``backward`` replays the (implicit) tape in reverse
topological order. Everything is float64 and single-threaded per tape;
independent tapes never share state.
"""

import numpy as np

from .errors import InvalidNorm, NonSmoothPoint, NotScalar, ShapeError

# Events recorded by gating ops when a probe lands within ``margin`` of a
# psi' discontinuity; inspected by grad_check to re-sample the probe point.
_nonsmooth_events = []


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, _parents=(), _backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    @staticmethod
    def param(value):
        """Trainable leaf; rejects non-finite entries so NaN never enters the tape."""
        arr = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ShapeError("non-finite value entering the tape")
        return Tensor(arr.copy(), requires_grad=True)

    @staticmethod
    def constant(value):
        arr = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ShapeError("non-finite value entering the tape")
        return Tensor(arr)

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += grad

    def backward(self):
        if self.value.shape != ():
            raise NotScalar(f"backward needs a scalar, got shape {self.value.shape}")
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor.constant(other)
        out = Tensor(self.value + other.value, _parents=(self, other))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.value.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.value.shape))
        out._backward = bwd
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor.constant(other)
        out = Tensor(self.value * other.value, _parents=(self, other))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.value, self.value.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.value, other.value.shape))
        out._backward = bwd
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __matmul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor.constant(other)
        try:
            val = self.value @ other.value
        except ValueError as exc:
            raise ShapeError(str(exc)) from None
        out = Tensor(val, _parents=(self, other))

        def bwd(g):
            if self.requires_grad:
                ga = g @ np.swapaxes(other.value, -1, -2)
                self._accumulate(_unbroadcast_matmul(ga, self.value.shape))
            if other.requires_grad:
                gb = np.swapaxes(self.value, -1, -2) @ g
                other._accumulate(_unbroadcast_matmul(gb, other.value.shape))
        out._backward = bwd
        return out

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape):
        out = Tensor(self.value.reshape(*shape), _parents=(self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g.reshape(self.value.shape))
        out._backward = bwd
        return out

    def swap_last(self):
        """Transpose of the last two axes."""
        out = Tensor(np.swapaxes(self.value, -1, -2), _parents=(self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(np.swapaxes(g, -1, -2))
        out._backward = bwd
        return out

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.value.sum(axis=axis, keepdims=keepdims), _parents=(self,))

        def bwd(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.value.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(gg, self.value.shape).copy())
        out._backward = bwd
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def _unbroadcast_matmul(grad, shape):
    """Sum matmul gradients over broadcast batch dimensions."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis in range(grad.ndim - 2):
        if shape[axis] == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# -- elementwise nonlinearities ----------------------------------------------

def _elementwise(x, fval, fgrad):
    out = Tensor(fval, _parents=(x,))

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g * fgrad)
    out._backward = bwd
    return out


def relu(x):
    v = np.maximum(x.value, 0.0)
    return _elementwise(x, v, (x.value > 0.0).astype(np.float64))


def elu(x):
    e = np.exp(np.minimum(x.value, 0.0))
    v = np.where(x.value > 0.0, x.value, e - 1.0)
    return _elementwise(x, v, np.where(x.value > 0.0, 1.0, e))


def tanh(x):
    v = np.tanh(x.value)
    return _elementwise(x, v, 1.0 - v * v)


def sigmoid(x):
    v = 1.0 / (1.0 + np.exp(-x.value))
    return _elementwise(x, v, v * (1.0 - v))


def softplus(x):
    # log(1 + e^x), stable for large |x|
    v = np.logaddexp(0.0, x.value)
    return _elementwise(x, v, 1.0 / (1.0 + np.exp(-x.value)))


def sin(x):
    return _elementwise(x, np.sin(x.value), np.cos(x.value))


def absolute(x):
    return _elementwise(x, np.abs(x.value), np.sign(x.value))


def maximum_const(x, c):
    """max(x, c) with subgradient 0 on the floor."""
    v = np.maximum(x.value, c)
    return _elementwise(x, v, (x.value > c).astype(np.float64))


def concat(tensors, axis=-1):
    vals = [t.value for t in tensors]
    out = Tensor(np.concatenate(vals, axis=axis), _parents=tuple(tensors))
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(piece)
    out._backward = bwd
    return out


def gather(x, index):
    """Select rows along axis 0; backward scatter-adds."""
    idx = np.asarray(index, dtype=np.int64)
    out = Tensor(x.value[idx], _parents=(x,))

    def bwd(g):
        if x.requires_grad:
            acc = np.zeros_like(x.value)
            np.add.at(acc, idx, g)
            x._accumulate(acc)
    out._backward = bwd
    return out


def scatter_add(x, index, n):
    """out[i] = sum over rows j with index[j] == i; backward gathers."""
    idx = np.asarray(index, dtype=np.int64)
    val = np.zeros((n,) + x.value.shape[1:], dtype=np.float64)
    np.add.at(val, idx, x.value)
    out = Tensor(val, _parents=(x,))

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g[idx])
    out._backward = bwd
    return out


def row_sqnorm(x, axis=-1):
    """Squared Euclidean norm along one axis, kept as a size-1 axis."""
    return (x * x).sum(axis=axis, keepdims=True)


def diag_embed(v):
    """(..., d) -> (..., d, d) with v on the diagonal."""
    d = v.value.shape[-1]
    val = np.zeros(v.value.shape + (d,), dtype=np.float64)
    ii = np.arange(d)
    val[..., ii, ii] = v.value
    out = Tensor(val, _parents=(v,))

    def bwd(g):
        if v.requires_grad:
            v._accumulate(g[..., ii, ii])
    out._backward = bwd
    return out


def skew_embed(p, d):
    """(..., d(d-1)/2) free parameters -> (..., d, d) skew-symmetric matrix."""
    rows, cols = np.triu_indices(d, k=1)
    val = np.zeros(p.value.shape[:-1] + (d, d), dtype=np.float64)
    val[..., rows, cols] = p.value
    val[..., cols, rows] = -p.value
    out = Tensor(val, _parents=(p,))

    def bwd(g):
        if p.requires_grad:
            p._accumulate(g[..., rows, cols] - g[..., cols, rows])
    out._backward = bwd
    return out


def cayley(a):
    """Batched Cayley transform (I - A)(I + A)^{-1} of skew-symmetric A.

    Always orthogonal for skew A; the zero matrix maps to the identity.
    """
    d = a.value.shape[-1]
    eye = np.eye(d)
    m = np.linalg.inv(eye + a.value)
    f = (eye - a.value) @ m
    out = Tensor(f, _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            mt = np.swapaxes(m, -1, -2)
            ga = -(g + np.swapaxes(f, -1, -2) @ g) @ mt
            a._accumulate(ga)
    out._backward = bwd
    return out


def sym_inv_sqrt(s, floor=1e-8):
    """Batched inverse square root of symmetric PSD matrices.

    Eigenvalues are floored at ``floor`` before the inverse square root, so
    singular blocks stay finite. Backward uses the Daleckii-Krein divided
    differences of g(lam) = max(lam, floor)^{-1/2}.
    """
    w, v = np.linalg.eigh(s.value)
    wc = np.maximum(w, floor)
    gw = wc ** -0.5
    val = (v * gw[..., None, :]) @ np.swapaxes(v, -1, -2)
    out = Tensor(val, _parents=(s,))

    def bwd(g):
        if not s.requires_grad:
            return
        # divided differences of g(lam); derivative where eigenvalues coincide
        dg = np.where(w > floor, -0.5 * wc ** -1.5, 0.0)
        wi = w[..., :, None]
        wj = w[..., None, :]
        diff = wi - wj
        close = np.abs(diff) < 1e-9
        num = gw[..., :, None] - gw[..., None, :]
        k = np.where(close, 0.5 * (dg[..., :, None] + dg[..., None, :]),
                     num / np.where(close, 1.0, diff))
        vt = np.swapaxes(v, -1, -2)
        inner = vt @ g @ v
        gs = v @ (k * inner) @ vt
        # symmetrize: input is symmetric by construction
        s._accumulate(0.5 * (gs + np.swapaxes(gs, -1, -2)))
    out._backward = bwd
    return out


def bc_gate(sqnorm, threshold, psi="psi2", margin=0.0):
    """Bounded-confidence factor psi'(||y||^2) as a function of the squared
    norm and the (positive) threshold.

    psi2: step 1 below the threshold, 0 at or above it (zero gradient).
    psi3: sin(pi x / D) below the threshold, 0 at or above it.

    When ``margin`` > 0, landing within margin of the psi2 jump records a
    non-smooth event for grad_check to act on.
    """
    if np.any(sqnorm.value < -1e-12):
        raise InvalidNorm("squared norm must be nonnegative")
    x = np.maximum(sqnorm.value, 0.0)
    dmat = np.broadcast_to(threshold.value, x.shape) if threshold.value.shape != x.shape else threshold.value
    below = x < dmat
    if margin > 0.0 and np.any(np.abs(x - dmat) < margin):
        _nonsmooth_events.append(psi)
    if psi == "psi2":
        val = below.astype(np.float64)
        dx = np.zeros_like(x)
        dd = np.zeros_like(x)
    elif psi == "psi3":
        ratio = np.pi * x / dmat
        val = np.where(below, np.sin(ratio), 0.0)
        cos = np.cos(ratio)
        dx = np.where(below, np.pi / dmat * cos, 0.0)
        dd = np.where(below, -np.pi * x / dmat ** 2 * cos, 0.0)
    else:
        raise ValueError(f"unknown psi shape: {psi}")
    out = Tensor(val, _parents=(sqnorm, threshold))

    def bwd(g):
        if sqnorm.requires_grad:
            sqnorm._accumulate(_unbroadcast(g * dx, sqnorm.value.shape))
        if threshold.requires_grad:
            threshold._accumulate(_unbroadcast(g * dd, threshold.value.shape))
    out._backward = bwd
    return out


def softmax_cross_entropy(logits, labels, mask):
    """Mean softmax cross-entropy over the masked rows."""
    from .errors import EmptyMask
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    rows = np.nonzero(mask)[0]
    if len(rows) == 0:
        raise EmptyMask("loss mask selects no nodes")
    z = logits.value[rows]
    zmax = z.max(axis=1, keepdims=True)
    logsumexp = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    picked = z[np.arange(len(rows)), labels[rows]]
    val = float(np.mean(logsumexp - picked))
    out = Tensor(val, _parents=(logits,))

    def bwd(g):
        if logits.requires_grad:
            soft = np.exp(z - zmax)
            soft /= soft.sum(axis=1, keepdims=True)
            soft[np.arange(len(rows)), labels[rows]] -= 1.0
            full = np.zeros_like(logits.value)
            full[rows] = soft / len(rows)
            logits._accumulate(g * full)
    out._backward = bwd
    return out


def apply_block_sparse(op, x):
    """Apply a constant BlockSparse operator to a dense tensor (tape-recorded)."""
    out = Tensor(op.apply(x.value), _parents=(x,))

    def bwd(g):
        if x.requires_grad:
            x._accumulate(op.transpose().apply(g))
    out._backward = bwd
    return out


# -- gradient checking --------------------------------------------------------

def zero_grads(params):
    for p in params:
        p.grad = None


def grad_check(f, params, h=1e-5, resample=None, max_resamples=5):
    """Max relative error between analytic and central-difference gradients.

    ``f(params) -> scalar Tensor`` must rebuild its tape on every call. If the
    forward pass reports a gating discontinuity within ``h`` of the probe and
    ``resample`` is given, the probe is re-drawn (``resample() -> params``);
    without a resampler, NonSmoothPoint is raised.
    """
    for _ in range(max_resamples + 1):
        _nonsmooth_events.clear()
        zero_grads(params)
        loss = f(params)
        if _nonsmooth_events:
            if resample is None:
                raise NonSmoothPoint("probe is within h of a psi' discontinuity")
            params = resample()
            continue
        loss.backward()
        worst = 0.0
        for p in params:
            analytic = p.grad if p.grad is not None else np.zeros_like(p.value)
            flat = p.value.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = float(f(params).value)
                flat[i] = orig - h
                down = float(f(params).value)
                flat[i] = orig
                fd = (up - down) / (2.0 * h)
                err = abs(analytic.ravel()[i] - fd) / max(1.0, abs(fd))
                worst = max(worst, err)
        return worst
    raise NonSmoothPoint("could not find a smooth probe point")
