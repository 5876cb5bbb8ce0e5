"""Normalized parameter-gradient features of small frozen MLPs.

For a network f with parameters theta, the feature map is
phi(x) = grad_theta f(x) / ||grad_theta f(x)||, where f is the sum of the
network's output logits. The gradient is written out in closed form, block
by block, so that phi itself is an ordinary first-order expression over x:
it can be evaluated in bulk for data embedding, and built on the
differentiation tape when generator outputs must receive gradients.
Networks are frozen at initialization and never trained.

Feature blocks are flattened layer by layer, weights then biases; this
order is fixed, matches the serialized file, and must never change.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass

import numpy as np

from ntksynth import tensor as T
from ntksynth.tensor import Rng, Tensor

__all__ = ["NtkArchitecture", "NtkFeatureMap", "DegenerateFeatureError", "DEGENERATE_NORM"]

log = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-12

_KINDS = ("fc_1l", "fc_2l")
_ACTIVATIONS = ("relu", "tanh")

_MAGIC = b"NTKF"
_VERSION = 1
_HEADER = struct.Struct("<4sIBBIIIIqQ")  # magic, ver, kind, act, p, w1, w2, c_out, seed, d


class DegenerateFeatureError(ValueError):
    """Raw feature norm vanished for some input row.

    ``rows`` holds the offending row indices within the batch that raised.
    """

    def __init__(self, message: str, rows: list[int] | None = None):
        super().__init__(message)
        self.rows = rows or []


@dataclass(frozen=True)
class NtkArchitecture:
    """Shape of the frozen feature network.

    kind "fc_1l" takes widths=(w,), kind "fc_2l" takes widths=(w1, w2).
    ``output_dim`` is the logit count; the feature map sums over logits, so
    it only affects the parameter count (and hence the feature dimension).
    """

    kind: str
    input_dim: int
    widths: tuple[int, ...]
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        want = 1 if self.kind == "fc_1l" else 2
        if len(self.widths) != want:
            raise ValueError(f"{self.kind} takes {want} width(s), got {self.widths}")
        if self.input_dim < 1 or self.output_dim < 1 or min(self.widths) < 1:
            raise ValueError("all dimensions must be >= 1")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_out, fan_in) per layer, input to output."""
        dims = []
        prev = self.input_dim
        for w in self.widths:
            dims.append((w, prev))
            prev = w
        dims.append((self.output_dim, prev))
        return dims

    @property
    def feature_dim(self) -> int:
        """Total parameter count = length of the flattened gradient."""
        return sum(out * (inp + 1) for out, inp in self.layer_dims)


def _act_pair(name: str, z: Tensor) -> tuple[Tensor, Tensor]:
    """Activation value and its derivative as tape nodes.

    tanh's derivative 1 - tanh^2 stays on the tape; relu's 0/1 mask is a
    constant (locally-constant treatment of the kink).
    """
    if name == "tanh":
        h = T.tanh(z)
        return h, T.sub(1.0, T.square(h))
    h = T.relu(z)
    return h, T.constant((z.data > 0).astype(np.float64))


class NtkFeatureMap:
    """Frozen random network plus its normalized gradient feature map."""

    def __init__(self, architecture: NtkArchitecture, seed: int,
                 _layers: list[tuple[np.ndarray, np.ndarray]] | None = None):
        self.architecture = architecture
        self.seed = int(seed)
        if _layers is None:
            rng = Rng(self.seed)
            _layers = []
            for out, inp in architecture.layer_dims:
                scale = 1.0 / np.sqrt(inp)  # N(0, 1/fan_in), He-style
                _layers.append((rng.normal((out, inp)) * scale,
                                rng.normal(out) * scale))
        for w, b in _layers:
            w.flags.writeable = False
            b.flags.writeable = False
        self.layers = _layers
        self._fingerprint: str | None = None

    @property
    def feature_dim(self) -> int:
        return self.architecture.feature_dim

    @property
    def theta_flat(self) -> np.ndarray:
        """Parameters in feature-flatten order: per layer, weights then bias."""
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.layers])

    @classmethod
    def from_flat(cls, architecture: NtkArchitecture, theta: np.ndarray,
                  seed: int = -1) -> "NtkFeatureMap":
        """Rebuild a map from a flat parameter vector (testing/deserialization)."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (architecture.feature_dim,):
            raise ValueError(f"theta has length {theta.size}, "
                             f"architecture needs {architecture.feature_dim}")
        layers = []
        pos = 0
        for out, inp in architecture.layer_dims:
            w = theta[pos:pos + out * inp].reshape(out, inp).copy()
            pos += out * inp
            b = theta[pos:pos + out].copy()
            pos += out
            layers.append((w, b))
        return cls(architecture, seed, _layers=layers)

    # ---- forward ----------------------------------------------------------

    def _check_input(self, X: np.ndarray | Tensor) -> Tensor:
        t = X if isinstance(X, Tensor) else T.constant(X)
        if t.data.ndim != 2 or t.data.shape[1] != self.architecture.input_dim:
            raise T.ShapeError(
                f"expected (n, {self.architecture.input_dim}) inputs, got {t.data.shape}")
        return t

    def sum_logits(self, x: np.ndarray) -> float | np.ndarray:
        """Sum of the network's outputs; scalar for a single point."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.shape[1] != self.architecture.input_dim:
            raise T.ShapeError(f"input dim {X.shape[1]} != {self.architecture.input_dim}")
        act = np.tanh if self.architecture.activation == "tanh" else lambda z: np.maximum(z, 0.0)
        h = X
        for w, b in self.layers[:-1]:
            h = act(h @ w.T + b)
        w_out, b_out = self.layers[-1]
        f = h @ w_out.sum(axis=0) + b_out.sum()
        return float(f[0]) if single else f

    def raw_batch(self, X: np.ndarray | Tensor) -> Tensor:
        """Unnormalized feature rows grad_theta f(x_i), shape (n, d).

        Pure-value when X is a plain array; a tape node when X is a live
        Tensor (gradients then flow back into X).
        """
        Xt = self._check_input(X)
        n = Xt.data.shape[0]
        act = self.architecture.activation
        ones_c = T.constant(np.ones((n, self.architecture.output_dim)))

        if self.architecture.kind == "fc_1l":
            (w1, b1), (w2, b2) = self.layers
            v = w2.sum(axis=0)  # gradient of f through the summed output layer
            z = T.add_bias(T.matmul(Xt, T.constant(w1.T)), T.constant(b1))
            h, dh = _act_pair(act, z)
            a = T.mul(dh, T.constant(np.broadcast_to(v, (n, v.size))))
            blocks = [T.rowwise_kron(a, Xt), a, T.rowwise_kron(ones_c, h), ones_c]
        else:
            (w1, b1), (w2, b2), (w3, b3) = self.layers
            u = w3.sum(axis=0)
            z1 = T.add_bias(T.matmul(Xt, T.constant(w1.T)), T.constant(b1))
            h1, dh1 = _act_pair(act, z1)
            z2 = T.add_bias(T.matmul(h1, T.constant(w2.T)), T.constant(b2))
            h2, dh2 = _act_pair(act, z2)
            g2 = T.mul(dh2, T.constant(np.broadcast_to(u, (n, u.size))))
            g1 = T.mul(dh1, T.matmul(g2, T.constant(w2)))
            blocks = [T.rowwise_kron(g1, Xt), g1, T.rowwise_kron(g2, h1), g2,
                      T.rowwise_kron(ones_c, h2), ones_c]
        return T.hstack(blocks)

    def phi_batch(self, X: np.ndarray | Tensor, training: bool = False) -> Tensor:
        """Unit-normalized feature rows, shape (n, d).

        Rows whose raw norm falls below DEGENERATE_NORM raise
        DegenerateFeatureError, unless ``training`` is set, in which case
        they are replaced by zero rows with a logged warning (a dead relu
        pattern early in generator training must not kill the run).
        """
        raw = self.raw_batch(X)
        return _normalize_rows(raw, training=training)

    def raw_grad_features(self, x: np.ndarray) -> np.ndarray:
        """Flattened parameter gradient of sum_logits at a single point."""
        x = np.asarray(x, dtype=np.float64)
        return self.raw_batch(x[None, :]).data[0]

    def phi(self, x: np.ndarray) -> np.ndarray:
        """Normalized features of a single point; unit L2 norm."""
        x = np.asarray(x, dtype=np.float64)
        return self.phi_batch(x[None, :]).data[0]

    # ---- persistence ------------------------------------------------------

    def serialize(self) -> bytes:
        arch = self.architecture
        w1 = arch.widths[0]
        w2 = arch.widths[1] if len(arch.widths) > 1 else 0
        header = _HEADER.pack(
            _MAGIC, _VERSION, _KINDS.index(arch.kind), _ACTIVATIONS.index(arch.activation),
            arch.input_dim, w1, w2, arch.output_dim, self.seed, arch.feature_dim)
        return header + self.theta_flat.astype("<f8").tobytes()

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.serialize())

    @classmethod
    def deserialize(cls, blob: bytes) -> "NtkFeatureMap":
        if len(blob) < _HEADER.size or blob[:4] != _MAGIC:
            raise ValueError("not a feature-map blob")
        magic, version, kind, act, p, w1, w2, c_out, seed, d = _HEADER.unpack_from(blob)
        if version != _VERSION:
            raise ValueError(f"unsupported feature-map version {version}")
        widths = (w1,) if w2 == 0 else (w1, w2)
        arch = NtkArchitecture(_KINDS[kind], p, widths, c_out, _ACTIVATIONS[act])
        if arch.feature_dim != d:
            raise ValueError("feature-map header is inconsistent")
        want = _HEADER.size + 8 * d
        if len(blob) != want:
            raise ValueError(f"feature-map blob truncated at byte {len(blob)}, expected {want}")
        theta = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
        return cls.from_flat(arch, theta, seed=seed)

    @classmethod
    def load(cls, path) -> "NtkFeatureMap":
        with open(path, "rb") as fh:
            return cls.deserialize(fh.read())

    def fingerprint(self) -> str:
        """sha256 of the serialized map; embeddings carry this."""
        if self._fingerprint is None:
            self._fingerprint = hashlib.sha256(self.serialize()).hexdigest()
        return self._fingerprint


def _normalize_rows(raw: Tensor, training: bool) -> Tensor:
    """Divide each row by its L2 norm, with degenerate-row policy."""
    d_cols = T.constant(np.ones((raw.data.shape[1], 1)))
    norm_sq = T.matmul(T.square(raw), d_cols)
    norms = T.sqrt(norm_sq)
    degenerate = norms.data[:, 0] < DEGENERATE_NORM
    if degenerate.any():
        rows = np.flatnonzero(degenerate)
        if not training:
            raise DegenerateFeatureError(
                f"raw feature norm below {DEGENERATE_NORM} for row(s) {rows.tolist()}",
                rows=rows.tolist())
        log.warning("zeroing %d degenerate feature row(s) during training: %s",
                    rows.size, rows.tolist())
        keep = T.constant((~degenerate).astype(np.float64)[:, None])
        safe = T.add(norms, T.constant(degenerate.astype(np.float64)[:, None]))
        return T.scale_rows(raw, T.mul(keep, T.div(1.0, safe)))
    return T.scale_rows(raw, T.div(1.0, norms))
