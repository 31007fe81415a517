"""Minimal deterministic tensor engine with reverse-mode automatic differentiation.

The engine covers exactly the operators the deraining networks need:
2D/3D cross-correlation convolutions, the usual pointwise functions,
concatenation/reshape, nearest-neighbour 2x upsampling and a full-mean
reduction.  Arrays are plain numpy buffers; float32 is the training mode
and float64 the gradient-checking mode.

Differentiation is tape-based: every op executed under a ``Tape`` appends
one node (op id, input node ids, backward closure).  Creation order is a
topological order of the graph, so ``Tape.backward`` is a single reverse
sweep.  Ops whose inputs carry no tape simply compute, which is how
inference runs without autodiff overhead.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError, NumericalError, ShapeError

# Raise NumericalError the moment an op produces NaN/Inf instead of letting it
# propagate. Cheap relative to the convolutions; leave on.
FINITE_CHECKS = True

_POINTWISE_KINDS = ("sigmoid", "tanh", "relu", "add", "hadamard", "scale")


def _check_finite(data, op):
    if FINITE_CHECKS and not np.isfinite(data).all():
        raise NumericalError(f"non-finite values produced by op '{op}'")


class Tensor:
    """Dense n-dimensional float array, the engine's sole value type."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape=None, node_id=None):
        self.data = data
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def grad(self):
        """Gradient of the last backward pass w.r.t. this leaf tensor."""
        if self.tape is None or self.node_id is None:
            return None
        return self.tape.leaf_grad(self.node_id)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return hadamard(self, other)
        return scale(self, other)

    __rmul__ = __mul__


def tensor(data, dtype=None):
    """Wrap array-like data as a constant (non-differentiable) Tensor."""
    arr = np.asarray(data, dtype=dtype if dtype is not None else np.float32)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return Tensor(np.ascontiguousarray(arr))


class _Node:
    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op, inputs, backward):
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Record of one forward pass; acyclic and topologically ordered by creation."""

    def __init__(self):
        self._nodes = []
        self._params = []  # (node_id, store, name)
        self._leaf_grads = {}
        self._closed = False

    def __len__(self):
        return len(self._nodes)

    def _add(self, op, input_ids, backward):
        if self._closed:
            raise ContractError("tape already consumed by backward()")
        self._nodes.append(_Node(op, input_ids, backward))
        return len(self._nodes) - 1

    def leaf(self, data):
        """Register an input tensor whose gradient should be retrievable."""
        arr = np.asarray(data)
        nid = self._add("leaf", (), None)
        return Tensor(arr, self, nid)

    def param(self, store, name):
        """Stage a ParamStore entry on this tape; backward() accumulates into the store."""
        t = self.leaf(store.value(name))
        self._params.append((t.node_id, store, name))
        return t

    def leaf_grad(self, node_id):
        return self._leaf_grads.get(node_id)

    def backward(self, loss):
        """Reverse sweep from a scalar loss; populates parameter grads, clears the tape.

        Gradients for every staged parameter are accumulated (+=) into its
        store, so callers zero grads before building the graph.  Leaf
        gradients stay retrievable through ``Tensor.grad`` after the sweep.
        """
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise ContractError("backward() needs a loss produced on this tape")
        if loss.data.size != 1:
            raise ContractError(
                f"backward() needs a scalar loss, got shape {tuple(loss.shape)}"
            )
        grads = [None] * len(self._nodes)
        grads[loss.node_id] = np.ones_like(loss.data)
        for nid in range(loss.node_id, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = self._nodes[nid]
            if node.backward is None:
                continue
            for in_id, gin in zip(node.inputs, node.backward(g)):
                if gin is None or in_id is None:
                    continue
                if grads[in_id] is None:
                    # copy when the backward fn hands back the upstream array
                    # itself or a view of it: accumulation mutates in place
                    if gin is g or gin.base is not None:
                        gin = gin.copy()
                    grads[in_id] = gin
                else:
                    grads[in_id] += gin
        for nid, node in enumerate(self._nodes):
            if node.backward is None and grads[nid] is not None:
                self._leaf_grads[nid] = grads[nid]
        for nid, store, name in self._params:
            g = grads[nid]
            if g is not None:
                store.grad(name)[...] += g
        self._nodes = []
        self._params = []
        self._closed = True


def stage_param(tape, store, name):
    """Parameter as a Tensor: taped leaf when differentiating, constant otherwise."""
    if tape is not None:
        return tape.param(store, name)
    return Tensor(store.value(name))


def _tape_of(*tensors):
    tape = None
    for t in tensors:
        if isinstance(t, Tensor) and t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise ContractError("inputs come from different tapes")
    return tape


def _node_id(t, tape):
    if isinstance(t, Tensor) and t.tape is tape and tape is not None:
        return t.node_id
    return None


def _result(op, out, inputs, backward_builder):
    _check_finite(out, op)
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(out)
    ids = tuple(_node_id(t, tape) for t in inputs)
    nid = tape._add(op, ids, backward_builder())
    return Tensor(out, tape, nid)


# ---------------------------------------------------------------------------
# parameter storage


class ParamStore:
    """Ordered map from hierarchical names to trainable values plus grad buffers."""

    def __init__(self, rng_seed=0, dtype=np.float32):
        self.rng_seed = rng_seed
        self.dtype = np.dtype(dtype)
        self._entries = {}  # name -> [value, grad]; dict preserves insertion order

    def add(self, name, value):
        if name in self._entries:
            raise ContractError(f"duplicate parameter name '{name}'")
        arr = np.ascontiguousarray(np.asarray(value, dtype=self.dtype))
        self._entries[name] = [arr, np.zeros_like(arr)]
        return arr

    def names(self):
        return list(self._entries.keys())

    def __contains__(self, name):
        return name in self._entries

    def __len__(self):
        return len(self._entries)

    def value(self, name):
        return self._entries[name][0]

    def grad(self, name):
        return self._entries[name][1]

    def set_value(self, name, value):
        cur = self._entries[name][0]
        arr = np.asarray(value, dtype=self.dtype)
        if arr.shape != cur.shape:
            raise ShapeError(
                f"parameter '{name}': cannot assign shape {arr.shape} over {cur.shape}"
            )
        self._entries[name][0] = np.ascontiguousarray(arr)

    def zero_grads(self):
        for _, pair in self._entries.items():
            pair[1][...] = 0

    def num_params(self):
        return sum(int(v.size) for v, _ in self._entries.values())

    def astype(self, dtype):
        """Copy of the store in another float width (float64 for gradient checks)."""
        out = ParamStore(rng_seed=self.rng_seed, dtype=dtype)
        for name, (v, _) in self._entries.items():
            out.add(name, v.astype(dtype))
        return out

    def copy(self):
        return self.astype(self.dtype)

    def items(self):
        for name, (v, _) in self._entries.items():
            yield name, v


def init_normal(store, name, shape, rng, std=0.01):
    """Gaussian init, zero mean; the convention for every conv/gate weight."""
    return store.add(name, rng.normal(0.0, std, size=shape))


def init_zeros(store, name, shape):
    return store.add(name, np.zeros(shape))


# ---------------------------------------------------------------------------
# pointwise ops


def _binary_shape_check(op, a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"{op}: operand shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}"
        )


def sigmoid(x):
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)

    def build():
        def backward(g):
            return (g * out * (1.0 - out),)

        return backward

    return _result("sigmoid", out, (x,), build)


def tanh(x):
    out = np.tanh(x.data)

    def build():
        def backward(g):
            return (g * (1.0 - out * out),)

        return backward

    return _result("tanh", out, (x,), build)


_relu_mask_recorder = None  # gradcheck hook: list collecting sign masks


def relu(x):
    out = np.maximum(x.data, 0)
    if _relu_mask_recorder is not None:
        _relu_mask_recorder.append(x.data > 0)

    def build():
        mask = x.data > 0

        def backward(g):
            return (g * mask,)

        return backward

    return _result("relu", out, (x,), build)


def add(a, b):
    _binary_shape_check("add", a, b)
    out = a.data + b.data

    def build():
        def backward(g):
            return (g, g)

        return backward

    return _result("add", out, (a, b), build)


def sub(a, b):
    _binary_shape_check("sub", a, b)
    out = a.data - b.data

    def build():
        def backward(g):
            return (g, -g)

        return backward

    return _result("sub", out, (a, b), build)


def hadamard(a, b):
    _binary_shape_check("hadamard", a, b)
    out = a.data * b.data

    def build():
        ad, bd = a.data, b.data

        def backward(g):
            return (g * bd, g * ad)

        return backward

    return _result("hadamard", out, (a, b), build)


def scale(x, c):
    c = float(c)
    out = x.data * c

    def build():
        def backward(g):
            return (g * c,)

        return backward

    return _result("scale", out, (x,), build)


def pointwise(op_kind, *args):
    """Dispatch by name over the pointwise op set."""
    if op_kind not in _POINTWISE_KINDS:
        raise ConfigError(f"unknown pointwise op '{op_kind}'")
    return {
        "sigmoid": sigmoid,
        "tanh": tanh,
        "relu": relu,
        "add": add,
        "hadamard": hadamard,
        "scale": scale,
    }[op_kind](*args)


# ---------------------------------------------------------------------------
# structural ops


def concat(tensors, axis):
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat of zero tensors")
    ref = tensors[0].data.shape
    if not -len(ref) <= axis < len(ref):
        raise ShapeError(f"concat: axis {axis} out of range for rank {len(ref)}")
    axis = axis % len(ref)
    for t in tensors[1:]:
        s = t.data.shape
        if len(s) != len(ref) or any(
            s[d] != ref[d] for d in range(len(ref)) if d != axis
        ):
            raise ShapeError(
                f"concat axis {axis}: incompatible shapes {ref} vs {s}"
            )
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def build():
        sizes = [t.data.shape[axis] for t in tensors]

        def backward(g):
            pieces = []
            start = 0
            for s in sizes:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, start + s)
                pieces.append(g[tuple(idx)])
                start += s
            return tuple(pieces)

        return backward

    return _result("concat", out, tuple(tensors), build)


def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    out = x.data.reshape(shape)

    def build():
        old = x.data.shape

        def backward(g):
            return (g.reshape(old),)

        return backward

    return _result("reshape", out, (x,), build)


def upsample_nearest2x(x):
    """Replicate each pixel 2x2; backward sums each 2x2 block."""
    if x.data.ndim != 4:
        raise ShapeError(f"upsample_nearest2x expects NCHW, got {tuple(x.shape)}")
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def build():
        n, c, h, w = x.data.shape

        def backward(g):
            return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

        return backward

    return _result("upsample_nearest2x", out, (x,), build)


def mean_all(x):
    """Mean over every element; the scalar-producing reduction for losses."""
    out = np.asarray(x.data.mean(dtype=x.data.dtype))

    def build():
        n = x.data.size
        shp = x.data.shape

        def backward(g):
            return (np.broadcast_to(g / n, shp),)

        return backward

    return _result("mean_all", out, (x,), build)


# ---------------------------------------------------------------------------
# convolutions (cross-correlation convention, zero padding)


def _conv_extent(name, size, k, stride, pad):
    span = size + 2 * pad - k
    if k < 1 or span < 0:
        raise ShapeError(
            f"conv: kernel {name}={k} exceeds padded input extent {size + 2 * pad}"
        )
    if span % stride != 0:
        raise ShapeError(
            f"conv: non-integral output extent along {name}: "
            f"(({size}+2*{pad})-{k})/{stride}+1"
        )
    return span // stride + 1


def _im2col2d(x, kh, kw, sh, sw, ph, pw, ho, wo):
    n, c, _, _ = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im2d(gcols, xshape, kh, kw, sh, sw, ph, pw, ho, wo):
    n, c, h, w = xshape
    gp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=gcols.dtype)
    gc = gcols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            gp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += gc[:, :, i, j]
    if ph or pw:
        return gp[:, :, ph : ph + h, pw : pw + w]
    return gp


def conv2d(x, kernel, bias, stride=1, padding=0):
    """Batched 2D cross-correlation: x[N,C,H,W] * kernel[O,C,kh,kw] + bias[O].

    im2col + matmul fast path; gradients flow to input, kernel and bias.
    Columns are rebuilt in the backward pass instead of being saved, which
    keeps per-node memory at one activation map.
    """
    xd, kd, bd = x.data, kernel.data, bias.data
    if xd.ndim != 4 or kd.ndim != 4:
        raise ShapeError(
            f"conv2d expects NCHW input and OCKK kernel, got {xd.shape} / {kd.shape}"
        )
    n, c, h, w = xd.shape
    o, ck, kh, kw = kd.shape
    if ck != c:
        raise ShapeError(f"conv2d: input has {c} channels but kernel expects {ck}")
    if bd.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bd.shape} != ({o},)")
    sh = sw = int(stride)
    ph = pw = int(padding)
    ho = _conv_extent("H", h, kh, sh, ph)
    wo = _conv_extent("W", w, kw, sw, pw)

    k2 = kd.reshape(o, c * kh * kw)
    if kh == 1 and kw == 1 and sh == 1 and sw == 1 and ph == 0 and pw == 0:
        cols = xd.reshape(n, c, h * w)
    else:
        cols = _im2col2d(xd, kh, kw, sh, sw, ph, pw, ho, wo)
    out = np.matmul(k2, cols)
    out += bd[:, None]
    out = out.reshape(n, o, ho, wo)

    def build():
        def backward(g):
            g2 = g.reshape(n, o, ho * wo)
            grad_b = g2.sum(axis=(0, 2))
            if kh == 1 and kw == 1 and sh == 1 and sw == 1 and ph == 0 and pw == 0:
                cols_b = xd.reshape(n, c, h * w)
                grad_k = np.tensordot(g2, cols_b, axes=([0, 2], [0, 2]))
                grad_x = np.matmul(k2.T, g2).reshape(n, c, h, w)
            else:
                cols_b = _im2col2d(xd, kh, kw, sh, sw, ph, pw, ho, wo)
                grad_k = np.tensordot(g2, cols_b, axes=([0, 2], [0, 2]))
                gcols = np.matmul(k2.T, g2)
                grad_x = _col2im2d(gcols, xd.shape, kh, kw, sh, sw, ph, pw, ho, wo)
            return grad_x, grad_k.reshape(o, c, kh, kw), grad_b

        return backward

    return _result("conv2d", out, (x, kernel, bias), build)


def _im2col3d(x, kt, kh, kw, st, sh, sw, pt, ph, pw, to, ho, wo):
    n, c, _, _, _ = x.shape
    pad = ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw))
    xp = np.pad(x, pad) if (pt or ph or pw) else x
    cols = np.empty((n, c, kt, kh, kw, to, ho, wo), dtype=x.dtype)
    for a in range(kt):
        for i in range(kh):
            for j in range(kw):
                cols[:, :, a, i, j] = xp[
                    :,
                    :,
                    a : a + st * to : st,
                    i : i + sh * ho : sh,
                    j : j + sw * wo : sw,
                ]
    return cols.reshape(n, c * kt * kh * kw, to * ho * wo)


def _col2im3d(gcols, xshape, kt, kh, kw, st, sh, sw, pt, ph, pw, to, ho, wo):
    n, c, t, h, w = xshape
    gp = np.zeros((n, c, t + 2 * pt, h + 2 * ph, w + 2 * pw), dtype=gcols.dtype)
    gc = gcols.reshape(n, c, kt, kh, kw, to, ho, wo)
    for a in range(kt):
        for i in range(kh):
            for j in range(kw):
                gp[
                    :,
                    :,
                    a : a + st * to : st,
                    i : i + sh * ho : sh,
                    j : j + sw * wo : sw,
                ] += gc[:, :, a, i, j]
    if pt or ph or pw:
        return gp[:, :, pt : pt + t, ph : ph + h, pw : pw + w]
    return gp


def conv3d(x, kernel, bias, stride=(1, 1, 1), padding=(0, 0, 0)):
    """Batched 3D cross-correlation: x[N,C,T,H,W] * kernel[O,C,kt,kh,kw] + bias[O]."""
    xd, kd, bd = x.data, kernel.data, bias.data
    if xd.ndim != 5 or kd.ndim != 5:
        raise ShapeError(
            f"conv3d expects NCTHW input and OCKKK kernel, got {xd.shape} / {kd.shape}"
        )
    n, c, t, h, w = xd.shape
    o, ck, kt, kh, kw = kd.shape
    if ck != c:
        raise ShapeError(f"conv3d: input has {c} channels but kernel expects {ck}")
    if bd.shape != (o,):
        raise ShapeError(f"conv3d: bias shape {bd.shape} != ({o},)")
    st, sh, sw = (int(s) for s in stride)
    pt, ph, pw = (int(p) for p in padding)
    to = _conv_extent("T", t, kt, st, pt)
    ho = _conv_extent("H", h, kh, sh, ph)
    wo = _conv_extent("W", w, kw, sw, pw)

    k2 = kd.reshape(o, c * kt * kh * kw)
    cols = _im2col3d(xd, kt, kh, kw, st, sh, sw, pt, ph, pw, to, ho, wo)
    out = np.matmul(k2, cols)
    out += bd[:, None]
    out = out.reshape(n, o, to, ho, wo)

    def build():
        def backward(g):
            g2 = g.reshape(n, o, to * ho * wo)
            grad_b = g2.sum(axis=(0, 2))
            cols_b = _im2col3d(xd, kt, kh, kw, st, sh, sw, pt, ph, pw, to, ho, wo)
            grad_k = np.tensordot(g2, cols_b, axes=([0, 2], [0, 2]))
            gcols = np.matmul(k2.T, g2)
            grad_x = _col2im3d(
                gcols, xd.shape, kt, kh, kw, st, sh, sw, pt, ph, pw, to, ho, wo
            )
            return grad_x, grad_k.reshape(o, c, kt, kh, kw), grad_b

        return backward

    return _result("conv3d", out, (x, kernel, bias), build)


# ---------------------------------------------------------------------------
# reference convolutions: direct loops, the ground truth the fast path is
# verified against (small shapes only; quadratic-time python loops)


def conv2d_reference(x, kernel, bias, stride=1, padding=0):
    n, c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    sh = sw = int(stride)
    ph = pw = int(padding)
    ho = _conv_extent("H", h, kh, sh, ph)
    wo = _conv_extent("W", w, kw, sw, pw)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((n, o, ho, wo), dtype=x.dtype)
    for b in range(n):
        for oc in range(o):
            for y in range(ho):
                for z in range(wo):
                    acc = bias[oc]
                    for ic in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                acc = acc + xp[b, ic, y * sh + i, z * sw + j] * kernel[
                                    oc, ic, i, j
                                ]
                    out[b, oc, y, z] = acc
    return out


def conv3d_reference(x, kernel, bias, stride=(1, 1, 1), padding=(0, 0, 0)):
    n, c, t, h, w = x.shape
    o, _, kt, kh, kw = kernel.shape
    st, sh, sw = (int(s) for s in stride)
    pt, ph, pw = (int(p) for p in padding)
    to = _conv_extent("T", t, kt, st, pt)
    ho = _conv_extent("H", h, kh, sh, ph)
    wo = _conv_extent("W", w, kw, sw, pw)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    out = np.zeros((n, o, to, ho, wo), dtype=x.dtype)
    for b in range(n):
        for oc in range(o):
            for u in range(to):
                for y in range(ho):
                    for z in range(wo):
                        acc = bias[oc]
                        for ic in range(c):
                            for a in range(kt):
                                for i in range(kh):
                                    for j in range(kw):
                                        acc = acc + (
                                            xp[
                                                b,
                                                ic,
                                                u * st + a,
                                                y * sh + i,
                                                z * sw + j,
                                            ]
                                            * kernel[oc, ic, a, i, j]
                                        )
                        out[b, oc, u, y, z] = acc
    return out


# ---------------------------------------------------------------------------
# optimizers


class PlainSgd:
    """p <- p - lr * grad, then grads are zeroed."""

    def __init__(self, lr):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.lr = lr

    def step(self, store):
        for name in store.names():
            store.value(name)[...] -= store.dtype.type(self.lr) * store.grad(name)
        store.zero_grads()


class Adam:
    """Adam with bias correction; moments keyed by parameter name."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {}
        self._v = {}

    def step(self, store):
        self.t += 1
        dt = store.dtype.type
        b1, b2 = dt(self.beta1), dt(self.beta2)
        bc1 = dt(1.0 - self.beta1**self.t)
        bc2 = dt(1.0 - self.beta2**self.t)
        lr, eps = dt(self.lr), dt(self.eps)
        for name in store.names():
            g = store.grad(name)
            if name not in self._m:
                self._m[name] = np.zeros_like(g)
                self._v[name] = np.zeros_like(g)
            m, v = self._m[name], self._v[name]
            m *= b1
            m += (dt(1) - b1) * g
            v *= b2
            v += (dt(1) - b2) * g * g
            store.value(name)[...] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        store.zero_grads()


def make_optimizer(kind, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    if kind == "adam":
        return Adam(lr, beta1, beta2, eps)
    if kind == "sgd":
        return PlainSgd(lr)
    raise ConfigError(f"unknown optimizer '{kind}'")


def sgd_or_adam_step(params, lr, optimizer_config=None):
    """One deterministic update of every parameter from its populated grads.

    ``optimizer_config`` may be None (plain gradient step), an optimizer
    instance, or a dict with an ``optimizer`` key understood by
    ``make_optimizer``.  Returns the updated store; grads are zeroed.
    """
    if optimizer_config is None:
        opt = PlainSgd(lr)
    elif isinstance(optimizer_config, (PlainSgd, Adam)):
        opt = optimizer_config
        opt.lr = lr
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
    elif isinstance(optimizer_config, dict):
        cfg = dict(optimizer_config)
        opt = make_optimizer(cfg.pop("optimizer", "adam"), lr, **cfg)
    else:
        raise ConfigError(f"unsupported optimizer config: {optimizer_config!r}")
    opt.step(params)
    return params


# ---------------------------------------------------------------------------
# gradient checking


def _masks_equal(ma, mb):
    return len(ma) == len(mb) and all(np.array_equal(a, b) for a, b in zip(ma, mb))


def gradcheck(build_loss, store, step=1e-4, max_probes=8, seed=0):
    """Compare tape gradients against central finite differences.

    ``build_loss(tape_or_None)`` must rebuild the same scalar loss from the
    store each call (staging params via ``tape.param`` when a tape is given,
    reading raw values otherwise).  The store must be float64: finite
    differences are unreliable in float32.

    For parameters larger than ``max_probes`` elements, a seeded sample of
    elements is probed instead of all of them.  A probe whose +/-step
    evaluations land on different ReLU sign patterns straddles a kink, where
    a finite difference measures the kink rather than the derivative; such
    probes retry with a smaller step and are dropped if the crossing
    persists.  Returns ``[(name, max_rel_error)]`` sorted by error
    descending.
    """
    global _relu_mask_recorder
    if store.dtype != np.float64:
        raise ContractError("gradcheck requires a float64 ParamStore")
    rng = np.random.default_rng(np.random.SeedSequence([0x6AD, seed]))

    store.zero_grads()
    tape = Tape()
    loss = build_loss(tape)
    tape.backward(loss)
    analytic = {name: store.grad(name).copy() for name in store.names()}
    store.zero_grads()

    def eval_loss():
        global _relu_mask_recorder
        masks = []
        _relu_mask_recorder = masks
        try:
            val = float(build_loss(None).data)
        finally:
            _relu_mask_recorder = None
        return val, masks

    def probe(flat, i, keep):
        h = step
        for _ in range(3):
            flat[i] = keep + h
            lp, mp = eval_loss()
            flat[i] = keep - h
            lm, mm = eval_loss()
            flat[i] = keep
            if _masks_equal(mp, mm):
                return (lp - lm) / (2.0 * h)
            h /= 4.0
        return None

    report = []
    for name in store.names():
        value = store.value(name)
        flat = value.reshape(-1)
        n = flat.size
        if n <= 2 * max_probes:
            idx = np.arange(n)
        else:
            idx = rng.choice(n, size=2 * max_probes, replace=False)
            idx.sort()
        worst = 0.0
        checked = 0
        ga = analytic[name].reshape(-1)
        for i in idx:
            if checked >= max_probes:
                break
            numeric = probe(flat, i, flat[i])
            if numeric is None:
                continue  # kink-straddling probe: not a valid measurement
            checked += 1
            a = float(ga[i])
            if not (np.isfinite(a) and np.isfinite(numeric)):
                raise NumericalError(f"non-finite gradient for parameter '{name}'")
            denom = max(abs(a), abs(numeric), 1e-3)
            worst = max(worst, abs(a - numeric) / denom)
        if checked == 0 and n > 0:
            raise NumericalError(
                f"no kink-free finite-difference probe found for parameter '{name}'"
            )
        report.append((name, worst))
    report.sort(key=lambda kv: (-kv[1], kv[0]))
    return report
