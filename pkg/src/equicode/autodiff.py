"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array and records, per operation, the parent
tensors together with vector-Jacobian closures on a dynamically built
tape. Calling :func:`backward` on a scalar tensor walks the tape in
reverse topological order and accumulates gradients into every tensor
created with ``requires_grad=True``.

Everything is float64: the finite-difference gradient checks used
throughout the test suite are unreliable in single precision.
"""

import binascii
import json

import numpy as np

from .errors import CheckpointError, DimensionError, NumericalError


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A numpy array plus an optional gradient and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()  # tuple of (parent Tensor, vjp callable)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents):
    """Build a tape node; parents is a list of (tensor, vjp) pairs."""
    live = tuple((p, vjp) for p, vjp in parents
                 if p.requires_grad or p._parents)
    out = Tensor(data)
    if live:
        out.requires_grad = True
        out._parents = live
    return out


# -- elementwise and reduction ops -------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data,
                 [(a, lambda g: _unbroadcast(g, a.data.shape)),
                  (b, lambda g: _unbroadcast(g, b.data.shape))])


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data,
                 [(a, lambda g: _unbroadcast(g, a.data.shape)),
                  (b, lambda g: _unbroadcast(-g, b.data.shape))])


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data,
                 [(a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
                  (b, lambda g: _unbroadcast(g * a.data, b.data.shape))])


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out,
                 [(a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
                  (b, lambda g: _unbroadcast(-g * out / b.data, b.data.shape))])


def power(a, exponent):
    a = as_tensor(a)
    e = float(exponent)
    return _make(a.data ** e,
                 [(a, lambda g: g * e * a.data ** (e - 1.0))])


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, [(a, lambda g: g * 0.5 / out)])


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), [(a, lambda g: g / a.data)])


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, [(a, lambda g: g * out)])


def clip_min(a, floor):
    """max(a, floor) elementwise; gradient is zero on the clamped set."""
    a = as_tensor(a)
    mask = a.data > floor
    return _make(np.where(mask, a.data, floor),
                 [(a, lambda g: g * mask)])


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0.0
    return _make(np.where(mask, a.data, 0.0),
                 [(a, lambda g: g * mask)])


def elu(a, alpha=1.0):
    a = as_tensor(a)
    neg = alpha * np.expm1(np.minimum(a.data, 0.0))
    out = np.where(a.data > 0.0, a.data, neg)
    return _make(out,
                 [(a, lambda g: g * np.where(a.data > 0.0, 1.0, neg + alpha))])


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.data.shape).copy()

    return _make(out, [(a, vjp)])


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- shape and indexing ops --------------------------------------------


def reshape(a, *shape):
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.data.shape
    return _make(a.data.reshape(shape),
                 [(a, lambda g: g.reshape(old))])


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, ax1, ax2),
                 [(a, lambda g: np.swapaxes(g, ax1, ax2))])


def getitem(a, idx):
    a = as_tensor(a)

    def vjp(g):
        gp = np.zeros_like(a.data)
        np.add.at(gp, idx, g)
        return gp

    return _make(a.data[idx], [(a, vjp)])


def take(a, indices, axis=0):
    """Gather 1-D `indices` along `axis`; duplicates accumulate on backward."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise DimensionError("take expects 1-D indices")
    sel = [slice(None)] * a.data.ndim
    sel[axis] = idx
    sel = tuple(sel)

    def vjp(g):
        gp = np.zeros_like(a.data)
        np.add.at(gp, sel, g)
        return gp

    return _make(a.data[sel], [(a, vjp)])


def concatenate(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    parents = []
    for i, t in enumerate(tensors):
        def vjp(g, i=i):
            return np.split(g, splits, axis=axis)[i]
        parents.append((t, vjp))
    return _make(np.concatenate([t.data for t in tensors], axis=axis), parents)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    parents = []
    for i, t in enumerate(tensors):
        def vjp(g, i=i):
            return np.take(g, i, axis=axis)
        parents.append((t, vjp))
    return _make(np.stack([t.data for t in tensors], axis=axis), parents)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul requires tensors of rank >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")

    def vjp_a(g):
        return _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)

    def vjp_b(g):
        return _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)

    return _make(a.data @ b.data, [(a, vjp_a), (b, vjp_b)])


# -- backward pass ------------------------------------------------------


def backward(loss):
    """Populate .grad on every requires_grad tensor reachable from `loss`.

    `loss` must be a scalar node of a live graph.
    """
    loss = as_tensor(loss)
    if loss.data.size != 1:
        raise DimensionError("backward expects a scalar loss")

    topo = []
    seen = set()
    stack_ = [loss]
    while stack_:
        node = stack_[-1]
        if id(node) in seen:
            stack_.pop()
            continue
        pending = [p for p, _ in node._parents if id(p) not in seen]
        if pending:
            stack_.extend(pending)
        else:
            seen.add(id(node))
            topo.append(node)
            stack_.pop()

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and not node._parents:
            node.grad = g if node.grad is None else node.grad + g
        for parent, vjp in node._parents:
            pg = vjp(g)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


# -- encoder model ------------------------------------------------------

_ACTIVATIONS = {"relu": relu, "elu": elu}


class EncoderModel:
    """Multilayer perceptron f: R^D -> R^n with ReLU or ELU hidden units.

    He-uniform weights, zero biases, seeded initialization.
    """

    def __init__(self, widths, activation="relu", seed=0):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise DimensionError(f"invalid layer widths {widths}")
        if activation not in _ACTIVATIONS:
            raise DimensionError(f"unknown activation {activation!r}")
        self.widths = widths
        self.activation = activation
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))

    @property
    def input_dim(self):
        return self.widths[0]

    @property
    def output_dim(self):
        return self.widths[-1]

    def parameters(self):
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def forward(self, batch):
        """Embed a [B, D] batch; returns [B, n] with graph retained."""
        x = as_tensor(batch)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(
                f"expected [B, {self.input_dim}] input, got {x.shape}")
        act = _ACTIVATIONS[self.activation]
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = add(matmul(x, w), b)
            if i < n_layers - 1:
                x = act(x)
        return x

    def __call__(self, batch):
        return self.forward(batch)

    def embed(self, batch):
        """Plain numpy forward pass; no graph, for frozen-encoder use."""
        x = np.asarray(batch, dtype=np.float64)
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w.data + b.data
            if i < n_layers - 1:
                if self.activation == "relu":
                    x = np.maximum(x, 0.0)
                else:
                    x = np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))
        return x

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_arrays(self):
        arrays = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"w{i}"] = w.data
            arrays[f"b{i}"] = b.data
        return arrays

    def load_state_arrays(self, arrays):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            w.data = np.asarray(arrays[f"w{i}"], dtype=np.float64)
            b.data = np.asarray(arrays[f"b{i}"], dtype=np.float64)

    def save(self, path):
        header = {"widths": self.widths, "activation": self.activation,
                  "seed": self.seed}
        save_arrays(path, header, self.state_arrays())

    @classmethod
    def load(cls, path):
        header, arrays = load_arrays(path)
        model = cls(header["widths"], header["activation"], header["seed"])
        model.load_state_arrays(arrays)
        return model


# -- Adam ---------------------------------------------------------------


class Adam:
    """Bias-corrected Adam with decoupled weight decay."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p in self.params:
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericalError("non-finite gradient in Adam step")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            if self.weight_decay:
                p.data = p.data - self.lr * self.weight_decay * p.data
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_arrays(self):
        arrays = {}
        for i in range(len(self.params)):
            arrays[f"adam_m{i}"] = self.m[i]
            arrays[f"adam_v{i}"] = self.v[i]
        return arrays

    def load_state_arrays(self, arrays, step_count):
        for i in range(len(self.params)):
            self.m[i] = np.asarray(arrays[f"adam_m{i}"], dtype=np.float64)
            self.v[i] = np.asarray(arrays[f"adam_v{i}"], dtype=np.float64)
        self.step_count = int(step_count)


# -- gradient checking --------------------------------------------------


def finite_difference_check(loss_fn, params, h=1e-5, rel_floor=1e-6):
    """Max relative error of analytic vs central-difference gradients.

    `loss_fn()` rebuilds the loss from the current parameter values and
    returns a scalar Tensor. Entries where both gradients sit below the
    cancellation noise floor of the central difference (eps * |L| / h)
    are unverifiable by finite differences and are skipped.
    """
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]
    noise = 10.0 * np.finfo(np.float64).eps * max(1.0, abs(loss.item())) / h

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            hi = loss_fn().item()
            flat[j] = orig - h
            lo = loss_fn().item()
            flat[j] = orig
            num = (hi - lo) / (2.0 * h)
            if max(abs(num), abs(gflat[j])) < noise:
                continue
            denom = max(abs(num), abs(gflat[j]), rel_floor)
            worst = max(worst, abs(num - gflat[j]) / denom)
    return worst


# -- checkpoint file format --------------------------------------------
#
# A checkpoint is a UTF-8 JSON header line followed by the concatenation
# of all arrays as flat little-endian float64. The header records the
# format version, per-array names/shapes, and a CRC32 of the payload.

FORMAT_VERSION = 1


def save_arrays(path, header, arrays):
    header = dict(header)
    header["format_version"] = FORMAT_VERSION
    names = sorted(arrays)
    header["arrays"] = [{"name": k, "shape": list(np.shape(arrays[k]))}
                        for k in names]
    payload = b"".join(
        np.ascontiguousarray(arrays[k], dtype="<f8").tobytes() for k in names)
    header["crc32"] = binascii.crc32(payload)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)


def load_arrays(path):
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header in {path}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {header.get('format_version')}")
    if binascii.crc32(payload) != header["crc32"]:
        raise CheckpointError(f"checksum mismatch in {path}")
    arrays = {}
    offset = 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        chunk = payload[offset:offset + 8 * count]
        arrays[entry["name"]] = np.frombuffer(
            chunk, dtype="<f8").astype(np.float64).reshape(shape)
        offset += 8 * count
    return header, arrays
