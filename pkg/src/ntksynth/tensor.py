"""Dense float64 tensors with a small reverse-mode differentiation tape.

Every array in the pipeline lives in one of these. A Tensor either holds a
constant / trainable leaf or the output of an op; ops record a vector-Jacobian
closure so that ``loss.backward()`` accumulates gradients into the trainable
leaves. Graphs are ephemeral: build, backward, drop.

All computation is float64. Randomness goes through :class:`Rng` (PCG64),
so identical seeds give bit-identical streams.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError", "Rng", "Tensor", "constant", "parameter",
    "matmul", "add", "sub", "mul", "div", "relu", "tanh", "square", "sqrt",
    "frobenius_sq", "transpose", "hstack", "rowwise_kron", "scale_rows",
    "add_bias", "cols", "gaussian_sample", "uniform_label", "uniform_labels",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class Rng:
    """Seeded random stream backed by numpy's PCG64 bit generator.

    The stream is fully determined by ``seed``: constructing two Rngs with
    the same seed yields bit-identical draws. ``derive(k)`` gives an
    independent child stream (SeedSequence spawn key), also deterministic.
    """

    algorithm = "pcg64"

    def __init__(self, seed: int, _spawn_key: tuple = ()):
        self.seed = int(seed)
        self._spawn_key = _spawn_key
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=_spawn_key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def derive(self, k: int) -> "Rng":
        """Independent child stream number ``k`` of this seed."""
        return Rng(self.seed, _spawn_key=self._spawn_key + (int(k),))

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def choice_weighted(self, n_options: int, size: int, p: np.ndarray) -> np.ndarray:
        return self._gen.choice(n_options, size=size, p=p)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, algorithm={self.algorithm!r})"


class Tensor:
    """A float64 array plus optional participation in the differentiation tape.

    ``requires_grad`` on a leaf marks it trainable; after ``backward()`` on a
    scalar loss the leaf's ``grad`` holds (accumulates, across calls) the
    gradient. Interior nodes carry a vjp closure instead of a grad buffer.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @classmethod
    def _op(cls, data, parents, vjp) -> "Tensor":
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        return out

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-mode pass from a scalar loss into every trainable leaf."""
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in pending:
                    pending[id(p)] = pending[id(p)] + pg
                else:
                    pending[id(p)] = pg

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _binary_shapes(a: Tensor, b: Tensor, op: str):
    """Allow same-shape or scalar-with-tensor operands, nothing else."""
    if a.data.shape == b.data.shape or a.data.size == 1 or b.data.size == 1:
        return
    raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} do not broadcast "
                     "(only scalar-with-tensor or same-shape supported)")


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to a scalar operand's shape."""
    if g.shape == tuple(shape):
        return g
    return np.sum(g).reshape(shape) if int(np.prod(shape)) == 1 else g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors (m,k)@(k,n)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.data.shape} @ {b.data.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return Tensor._op(ad @ bd, (a, b), vjp)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "add")

    def vjp(g):
        return _reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape)

    return Tensor._op(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "sub")

    def vjp(g):
        return _reduce_to(g, a.data.shape), _reduce_to(-g, b.data.shape)

    return Tensor._op(a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def vjp(g):
        return _reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)

    return Tensor._op(ad * bd, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "div")
    ad, bd = a.data, b.data

    def vjp(g):
        return _reduce_to(g / bd, ad.shape), _reduce_to(-g * ad / (bd * bd), bd.shape)

    return Tensor._op(ad / bd, (a, b), vjp)


def relu(a: Tensor) -> Tensor:
    """Elementwise max(x, 0); subgradient 0 at exactly 0."""
    a = _as_tensor(a)
    mask = a.data > 0

    def vjp(g):
        return (g * mask,)

    return Tensor._op(np.where(mask, a.data, 0.0), (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    t = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - t * t),)

    return Tensor._op(t, (a,), vjp)


def square(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    ad = a.data

    def vjp(g):
        return (g * 2.0 * ad,)

    return Tensor._op(ad * ad, (a,), vjp)


def sqrt(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    s = np.sqrt(a.data)

    def vjp(g):
        return (g * 0.5 / s,)

    return Tensor._op(s, (a,), vjp)


def frobenius_sq(a: Tensor) -> Tensor:
    """Sum of squared entries as a 0-d tensor; gradient is 2a."""
    a = _as_tensor(a)
    ad = a.data

    def vjp(g):
        return (2.0 * float(g) * ad,)

    return Tensor._op(np.float64(np.sum(ad * ad)), (a,), vjp)


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects 2-D, got {a.data.shape}")

    def vjp(g):
        return (g.T,)

    return Tensor._op(a.data.T, (a,), vjp)


def hstack(tensors) -> Tensor:
    """Concatenate 2-D tensors along columns."""
    ts = [_as_tensor(t) for t in tensors]
    rows = {t.data.shape[0] for t in ts}
    if any(t.data.ndim != 2 for t in ts) or len(rows) != 1:
        raise ShapeError("hstack expects 2-D tensors with equal row counts")
    widths = [t.data.shape[1] for t in ts]
    offsets = np.concatenate([[0], np.cumsum(widths)])

    def vjp(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(ts)))

    return Tensor._op(np.concatenate([t.data for t in ts], axis=1), ts, vjp)


def cols(a: Tensor, j0: int, j1: int) -> Tensor:
    """Column slice a[:, j0:j1] of a 2-D tensor."""
    a = _as_tensor(a)
    if a.data.ndim != 2 or not (0 <= j0 <= j1 <= a.data.shape[1]):
        raise ShapeError(f"cols: bad slice [{j0}:{j1}] of {a.data.shape}")
    n, k = a.data.shape

    def vjp(g):
        full = np.zeros((n, k))
        full[:, j0:j1] = g
        return (full,)

    return Tensor._op(a.data[:, j0:j1].copy(), (a,), vjp)


def rowwise_kron(a: Tensor, b: Tensor) -> Tensor:
    """Per-row outer product, flattened: out[i] = vec(a[i] b[i]^T), row-major.

    Shapes (n,u) x (n,v) -> (n, u*v). This is the workhorse for assembling
    per-sample parameter-gradient blocks in batch.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"rowwise_kron: {a.data.shape} x {b.data.shape}")
    n, u = a.data.shape
    v = b.data.shape[1]
    ad, bd = a.data, b.data
    out = (ad[:, :, None] * bd[:, None, :]).reshape(n, u * v)

    def vjp(g):
        g3 = g.reshape(n, u, v)
        return (g3 * bd[:, None, :]).sum(axis=2), (g3 * ad[:, :, None]).sum(axis=1)

    return Tensor._op(out, (a, b), vjp)


def scale_rows(a: Tensor, s: Tensor) -> Tensor:
    """Multiply each row of (n,k) tensor a by the matching entry of (n,1) s."""
    a, s = _as_tensor(a), _as_tensor(s)
    if a.data.ndim != 2 or s.data.shape != (a.data.shape[0], 1):
        raise ShapeError(f"scale_rows: {a.data.shape} by {s.data.shape}")
    ad, sd = a.data, s.data

    def vjp(g):
        return g * sd, (g * ad).sum(axis=1, keepdims=True)

    return Tensor._op(ad * sd, (a, s), vjp)


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """Add a length-k bias vector to every row of an (n,k) tensor."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.shape != (a.data.shape[1],):
        raise ShapeError(f"add_bias: {a.data.shape} + {b.data.shape}")

    def vjp(g):
        return g, g.sum(axis=0)

    return Tensor._op(a.data + b.data, (a, b), vjp)


def gaussian_sample(rng: Rng, shape) -> Tensor:
    """Constant tensor of i.i.d. standard normal draws."""
    return Tensor(rng.normal(shape))


def uniform_label(rng: Rng, c: int) -> Tensor:
    """One-hot vector for a class drawn uniformly from {0..c-1}."""
    if c < 1:
        raise ValueError(f"class count must be >= 1, got {c}")
    out = np.zeros(c)
    out[int(rng.integers(0, c))] = 1.0
    return Tensor(out)


def uniform_labels(rng: Rng, n: int, c: int) -> Tensor:
    """(n,c) one-hot matrix with labels drawn uniformly."""
    if c < 1:
        raise ValueError(f"class count must be >= 1, got {c}")
    idx = rng.integers(0, c, size=n)
    out = np.zeros((n, c))
    out[np.arange(n), idx] = 1.0
    return Tensor(out)
