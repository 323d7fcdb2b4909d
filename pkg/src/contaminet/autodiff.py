"""Dense tensors with reverse-mode automatic differentiation.

Just enough operator coverage for a small CNN trained on a summed per-label
binary cross-entropy: convolution, max-pooling, dense layers, relu, sigmoid,
reshape and the usual arithmetic.  Values are float64 throughout; gradients
are accumulated (`+=`) at fan-in nodes.

Calling ``backward()`` twice without ``zero_grad()`` deliberately accumulates
into ``.grad`` (the documented policy); optimizers here zero grads each step.
"""

import numpy as np

from . import kernels
from .errors import GraphError, OracleError, ShapeError, ValidationError


def _stable_sigmoid(z):
    # exp(-|z|) is in (0, 1], so neither branch can overflow
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


class Tensor:
    """A node in the autodiff graph: a float64 array plus gradient plumbing."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self.op = op
        self._parents = tuple(parents)
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse-mode sweep from a scalar node; each node visited exactly once.

        Leaf gradients accumulate across calls (the documented repeat policy);
        interior node gradients are pass-local and reset on every call.
        """
        if self.data.size != 1:
            raise GraphError(f"backward requires a scalar node, got shape {self.data.shape}")
        order = _topo_order(self)
        for node in order:
            if node._parents:
                node.grad = None
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward_fn is not None and node.requires_grad:
                node._backward_fn()

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        if self.data.shape != other.data.shape:
            raise ShapeError(f"add: shapes {self.data.shape} vs {other.data.shape}")
        out = Tensor(self.data + other.data, parents=(self, other), op="add")

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad)
            if other.requires_grad:
                other._accumulate(out.grad)

        out._backward_fn = backward
        return out

    def __mul__(self, other):
        other = as_tensor(other)
        if self.data.shape != other.data.shape and other.data.ndim != 0 and self.data.ndim != 0:
            raise ShapeError(f"mul: shapes {self.data.shape} vs {other.data.shape}")
        out = Tensor(self.data * other.data, parents=(self, other), op="mul")

        def backward():
            if self.requires_grad:
                self._accumulate(_reduce_to(other.data * out.grad, self.data.shape))
            if other.requires_grad:
                other._accumulate(_reduce_to(self.data * out.grad, other.data.shape))

        out._backward_fn = backward
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def sum(self):
        out = Tensor(self.data.sum(), parents=(self,), op="sum")

        def backward():
            if self.requires_grad:
                self._accumulate(np.full_like(self.data, float(out.grad)))

        out._backward_fn = backward
        return out

    def mean(self):
        return self.sum() * (1.0 / self.data.size)

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), parents=(self,), op="reshape")

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad.reshape(self.data.shape))

        out._backward_fn = backward
        return out


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _reduce_to(g, shape):
    # shapes only diverge when one operand was a scalar
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    return g.reshape(shape)


def _topo_order(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


# -- neural-net ops ----------------------------------------------------------


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0), parents=(x,), op="relu")

    def backward():
        if x.requires_grad:
            x._accumulate((x.data > 0) * out.grad)

    out._backward_fn = backward
    return out


def sigmoid(x) -> Tensor:
    """Elementwise logistic function, stable across the float64 range."""
    x = as_tensor(x)
    out = Tensor(_stable_sigmoid(x.data), parents=(x,), op="sigmoid")

    def backward():
        if x.requires_grad:
            x._accumulate(out.data * (1.0 - out.data) * out.grad)

    out._backward_fn = backward
    return out


def dense(x, weight, bias) -> Tensor:
    """Affine map: weight @ x + bias for a vector, x @ weight.T + bias row-wise."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    m, n = weight.data.shape
    if bias.data.shape != (m,):
        raise ShapeError(f"dense: bias shape {bias.data.shape}, expected ({m},)")
    if x.data.ndim == 1:
        if x.data.shape[0] != n:
            raise ShapeError(f"dense: input length {x.data.shape[0]}, weight expects {n}")
        value = weight.data @ x.data + bias.data
    elif x.data.ndim == 2:
        if x.data.shape[1] != n:
            raise ShapeError(f"dense: input width {x.data.shape[1]}, weight expects {n}")
        value = x.data @ weight.data.T + bias.data
    else:
        raise ShapeError(f"dense: input must be 1-D or 2-D, got {x.data.ndim}-D")
    out = Tensor(value, parents=(x, weight, bias), op="dense")

    def backward():
        gy = out.grad
        if x.data.ndim == 1:
            if x.requires_grad:
                x._accumulate(gy @ weight.data)
            if weight.requires_grad:
                weight._accumulate(np.outer(gy, x.data))
            if bias.requires_grad:
                bias._accumulate(gy)
        else:
            if x.requires_grad:
                x._accumulate(gy @ weight.data)
            if weight.requires_grad:
                weight._accumulate(gy.T @ x.data)
            if bias.requires_grad:
                bias._accumulate(gy.sum(axis=0))

    out._backward_fn = backward
    return out


def conv2d(x, weight, bias, stride=1, padding=0) -> Tensor:
    """2-D cross-correlation over (C,H,W) or batched (N,C,H,W) input."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: stride {stride} must be >= 1 and padding {padding} >= 0")
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d: kernels must be (F,C,kh,kw), got {weight.data.shape}")
    batched = x.data.ndim == 4
    if not batched and x.data.ndim != 3:
        raise ShapeError(f"conv2d: input must be (C,H,W) or (N,C,H,W), got {x.data.shape}")
    xb = x.data if batched else x.data[None]
    n, c, h, w = xb.shape
    f, ck, kh, kw = weight.data.shape
    if ck != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernels expect {ck}")
    if bias.data.shape != (f,):
        raise ShapeError(f"conv2d: bias shape {bias.data.shape}, expected ({f},)")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    xp = np.ascontiguousarray(xp)
    value = kernels.conv2d_forward(xp, weight.data, bias.data, stride)
    out = Tensor(value if batched else value[0], parents=(x, weight, bias), op="conv2d")

    def backward():
        gy = np.ascontiguousarray(out.grad if batched else out.grad[None])
        if x.requires_grad:
            gxp = kernels.conv2d_input_grad(gy, weight.data, stride, xp.shape[2], xp.shape[3])
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
            x._accumulate(gx if batched else gx[0])
        if weight.requires_grad:
            weight._accumulate(kernels.conv2d_weight_grad(xp, gy, stride, kh, kw))
        if bias.requires_grad:
            bias._accumulate(gy.sum(axis=(0, 2, 3)))

    out._backward_fn = backward
    return out


def max_pool2d(x, window, stride=None) -> Tensor:
    """Windowed max over (C,H,W) or (N,C,H,W); ties route gradient to the
    first maximal cell in row-major window order."""
    x = as_tensor(x)
    stride = window if stride is None else stride
    if window < 1 or stride < 1:
        raise ShapeError(f"max_pool2d: window {window} and stride {stride} must be >= 1")
    batched = x.data.ndim == 4
    if not batched and x.data.ndim != 3:
        raise ShapeError(f"max_pool2d: input must be (C,H,W) or (N,C,H,W), got {x.data.shape}")
    xb = np.ascontiguousarray(x.data if batched else x.data[None])
    h, w = xb.shape[2], xb.shape[3]
    if window > h or window > w:
        raise ShapeError(f"max_pool2d: window {window} exceeds spatial dims {h}x{w}")
    value, idx = kernels.maxpool_forward(xb, window, stride)
    out = Tensor(value if batched else value[0], parents=(x,), op="max_pool2d")

    def backward():
        if x.requires_grad:
            gy = np.ascontiguousarray(out.grad if batched else out.grad[None])
            gx = kernels.maxpool_input_grad(gy, idx, h, w)
            x._accumulate(gx if batched else gx[0])

    out._backward_fn = backward
    return out


def bce_sum_loss(logits, targets) -> Tensor:
    """Summed per-label binary cross-entropy, computed from logits.

    For a (K,) logit vector the result is the plain sum over labels; for an
    (N,K) batch it is the mean over rows of each row's K-label sum.  The
    elementwise term is evaluated as ``max(z,0) - z*y + log1p(exp(-|z|))``,
    which never takes a log of a saturated sigmoid.
    """
    logits = as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.data.shape:
        raise ShapeError(f"bce_sum_loss: logits {logits.data.shape} vs targets {y.shape}")
    if logits.data.ndim not in (1, 2):
        raise ShapeError(f"bce_sum_loss: expected 1-D or 2-D logits, got {logits.data.ndim}-D")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValidationError("bce_sum_loss: targets must be exactly 0 or 1")
    z = logits.data
    elem = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    scale = 1.0 if z.ndim == 1 else 1.0 / z.shape[0]
    out = Tensor(elem.sum() * scale, parents=(logits,), op="bce_sum_loss")

    def backward():
        if logits.requires_grad:
            logits._accumulate((_stable_sigmoid(z) - y) * (scale * float(out.grad)))

    out._backward_fn = backward
    return out


def finite_diff_gradcheck(loss_fn, params, h=1e-5, samples_per_param=4, rng=None):
    """Compare analytic gradients against central finite differences.

    ``loss_fn`` rebuilds the scalar loss from the params' current data; the
    check perturbs a random sample of coordinates per parameter and returns
    the worst relative error ``|a - n| / max(|a|, |n|, 1e-8)``.

    The difference quotient is only a derivative estimate where the loss is
    smooth across [x-h, x+h]; a relu kink or pooling argmax switch inside
    that interval corrupts it.  A coordinate that disagrees at step ``h`` is
    therefore re-probed at shrinking steps: discretization artifacts vanish
    once the probe no longer straddles the kink, while a wrong analytic
    gradient keeps failing at every step size.
    """
    if h <= 0:
        raise OracleError(f"finite_diff_gradcheck: h must be positive, got {h}")
    rng = np.random.default_rng(0) if rng is None else rng
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise OracleError("finite_diff_gradcheck: loss is not finite")
    for p in params:
        p.zero_grad()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    def central_diff(flat, i, step):
        saved = flat[i]
        flat[i] = saved + step
        hi = float(loss_fn().data)
        flat[i] = saved - step
        lo = float(loss_fn().data)
        flat[i] = saved
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise OracleError("finite_diff_gradcheck: perturbed loss is not finite")
        return (hi - lo) / (2.0 * step)

    worst = 0.0
    for p, ga in zip(params, analytic):
        size = p.data.size
        k = min(samples_per_param, size)
        coords = rng.choice(size, size=k, replace=False)
        flat = p.data.reshape(-1)
        for i in coords:
            a = ga.reshape(-1)[i]
            step = h
            best = np.inf
            # the best agreement across steps: truncation error shrinks and
            # roundoff grows as the step drops, so a correct gradient agrees
            # closely at some step while a wrong one fails at all of them
            for _ in range(4):
                numeric = central_diff(flat, i, step)
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                best = min(best, err)
                if best <= 1e-6:
                    break
                step /= 4.0
            worst = max(worst, best)
    return worst
