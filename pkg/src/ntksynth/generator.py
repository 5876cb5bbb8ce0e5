"""Conditional MLP generators trained to match a released mean embedding.

A generator maps (gaussian code, one-hot label) to a point in the encoded
data space. Training minimizes the squared Frobenius distance between the
released data embedding (a frozen matrix) and the embedding of a fresh
generated batch, rebuilt on the tape every step; gradients reach only the
generator's own parameters.

Image generators end in a sigmoid so outputs live in [0,1]; heterogeneous
tabular generators apply the sigmoid to categorical blocks only, leaving
numeric outputs linear in standardized space.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, asdict

import numpy as np

from ntksynth import tensor as T
from ntksynth.data import (CategoricalColumn, DatasetSchema, LabeledDataset,
                           schema_from_dict, schema_to_dict)
from ntksynth.embedding import (FingerprintMismatchError, MeanEmbedding,
                                ClassWeights, generated_embedding)
from ntksynth.ntk import NtkFeatureMap
from ntksynth.optim import Adam
from ntksynth.tensor import Rng, Tensor

__all__ = [
    "GeneratorModel", "TrainConfig", "TrainingDivergedError",
    "generate_batch", "mmd_loss", "train", "sample_dataset",
    "save_checkpoint", "load_checkpoint",
]

log = logging.getLogger(__name__)

_NORM_EPS = 1e-5
_NORM_MOMENTUM = 0.1

_CKPT_MAGIC = b"NTKG"
_CKPT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Loss or parameters went non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of one training run; the optimizer is Adam(0.9, 0.999, 1e-8)."""

    n_iter: int
    batch_size: int
    lr: float
    seed: int
    eval_every: int = 0

    def __post_init__(self):
        if self.n_iter < 0:
            raise ValueError("n_iter must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")


def _sigmoid(x: Tensor) -> Tensor:
    # 0.5 * (tanh(x/2) + 1), composed from primitive ops
    return T.mul(T.add(T.tanh(T.mul(x, 0.5)), 1.0), 0.5)


class GeneratorModel:
    """Conditional MLP: concat(code, one-hot label) -> encoded data row."""

    def __init__(self, schema: DatasetSchema, d_code: int, hidden: tuple[int, ...] | None,
                 seed: int, activation: str = "relu", use_norm: bool = True,
                 kind: str | None = None):
        if kind is None:
            kind = "mlp_image" if schema.image_shape is not None else "mlp_tabular"
        if kind not in ("mlp_image", "mlp_tabular"):
            raise ValueError(f"unknown generator kind {kind!r}")
        if activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {activation!r}")
        if d_code < 1:
            raise ValueError("d_code must be >= 1")
        if hidden is None:
            hidden = _default_hidden(schema)
        self.kind = kind
        self.schema = schema
        self.d_code = int(d_code)
        self.hidden = tuple(int(h) for h in hidden)
        self.seed = int(seed)
        self.activation = activation
        self.use_norm = bool(use_norm)

        rng = Rng(seed)
        dims = [self.d_code + schema.n_classes, *self.hidden, schema.feature_dim]
        self.params: dict[str, Tensor] = {}
        for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
            last = i == len(dims) - 2
            scale = (1.0 / math.sqrt(fan_in) if (last or activation == "tanh")
                     else math.sqrt(2.0 / fan_in))
            self.params[f"w{i}"] = T.parameter(rng.normal((fan_in, fan_out)) * scale)
            self.params[f"b{i}"] = T.parameter(np.zeros(fan_out))
            if self.use_norm and not last:
                self.params[f"gamma{i}"] = T.parameter(np.ones((1, fan_out)))
                self.params[f"beta{i}"] = T.parameter(np.zeros(fan_out))
        self.running_stats = [(np.zeros(h), np.ones(h)) for h in self.hidden] \
            if self.use_norm else []

    @property
    def n_classes(self) -> int:
        return self.schema.n_classes

    @property
    def feature_dim(self) -> int:
        return self.schema.feature_dim

    def param_list(self) -> list[Tensor]:
        return list(self.params.values())

    def parameters_finite(self) -> bool:
        return all(np.isfinite(p.data).all() for p in self.param_list())

    def _norm(self, h: Tensor, i: int, train: bool) -> Tensor:
        """Running-stat normalization with per-feature affine (train/eval mode)."""
        n, k = h.data.shape
        gamma, beta = self.params[f"gamma{i}"], self.params[f"beta{i}"]
        mean_run, var_run = self.running_stats[i]
        if train:
            ones_1n = T.constant(np.ones((1, n)))
            ones_n1 = T.constant(np.ones((n, 1)))
            mu = T.mul(T.matmul(ones_1n, h), 1.0 / n)
            centered = T.sub(h, T.matmul(ones_n1, mu))
            var = T.mul(T.matmul(ones_1n, T.square(centered)), 1.0 / n)
            denom = T.matmul(ones_n1, T.sqrt(T.add(var, _NORM_EPS)))
            normed = T.div(centered, denom)
            mean_run += _NORM_MOMENTUM * (mu.data[0] - mean_run)
            var_run += _NORM_MOMENTUM * (var.data[0] - var_run)
        else:
            centered = T.add_bias(h, T.constant(-mean_run))
            denom = np.sqrt(var_run + _NORM_EPS)
            normed = T.mul(centered, T.constant(np.broadcast_to(1.0 / denom, (n, k))))
        scaled = T.mul(normed, T.matmul(T.constant(np.ones((n, 1))), gamma))
        return T.add_bias(scaled, beta)

    def forward(self, codes_and_labels: np.ndarray, train: bool = False) -> Tensor:
        """Run the network on an (n, d_code + c) input block."""
        h = T.constant(codes_and_labels)
        n_hidden = len(self.hidden)
        act = T.relu if self.activation == "relu" else T.tanh
        for i in range(n_hidden):
            h = T.add_bias(T.matmul(h, self.params[f"w{i}"]), self.params[f"b{i}"])
            if self.use_norm:
                h = self._norm(h, i, train)
            h = act(h)
        out = T.add_bias(T.matmul(h, self.params[f"w{n_hidden}"]),
                         self.params[f"b{n_hidden}"])

        if self.kind == "mlp_image":
            return _sigmoid(out)
        cat_spans = [(a, b) for col, (a, b) in
                     zip(self.schema.columns, self.schema.block_spans())
                     if isinstance(col, CategoricalColumn)]
        if not cat_spans:
            return out
        pieces, pos = [], 0
        for a, b in cat_spans:
            if pos < a:
                pieces.append(T.cols(out, pos, a))
            pieces.append(_sigmoid(T.cols(out, a, b)))
            pos = b
        if pos < self.feature_dim:
            pieces.append(T.cols(out, pos, self.feature_dim))
        return T.hstack(pieces)


def _default_hidden(schema: DatasetSchema) -> tuple[int, ...]:
    # heterogeneous tables get the deeper variant
    if any(isinstance(c, CategoricalColumn) for c in schema.columns) \
            and schema.image_shape is None:
        return (200, 200, 200)
    return (200, 200)


def _draw_labels(rng: Rng, n: int, c: int,
                 class_weights: ClassWeights | None) -> np.ndarray:
    if class_weights is None:
        idx = rng.integers(0, c, size=n)
    else:
        idx = rng.choice_weighted(c, n, class_weights.proportions)
    onehot = np.zeros((n, c))
    onehot[np.arange(n), idx] = 1.0
    return onehot


def generate_batch(G: GeneratorModel, rng: Rng, n: int, train: bool = False,
                   class_weights: ClassWeights | None = None,
                   ) -> tuple[Tensor, np.ndarray]:
    """Sample labels (uniform unless weighted) and codes, run the generator.

    Returns the generated batch as a tape node plus the one-hot labels.
    """
    if n < 1:
        raise ValueError("batch size must be >= 1")
    labels = _draw_labels(rng, n, G.n_classes, class_weights)
    codes = rng.normal((n, G.d_code))
    x = G.forward(np.concatenate([codes, labels], axis=1), train=train)
    return x, labels


def mmd_loss(mu_data: MeanEmbedding, mu_gen: MeanEmbedding) -> Tensor:
    """Squared Frobenius distance between the two embeddings.

    The data side enters as a constant; the generated side contributes its
    tape node so the loss is differentiable towards the generator.
    """
    mu_data.check_compatible(mu_gen)
    a = T.constant(mu_data.matrix)
    b = mu_gen.node if mu_gen.node is not None else T.constant(mu_gen.matrix)
    return T.frobenius_sq(T.sub(a, b))


def train(G: GeneratorModel, fmap: NtkFeatureMap, mu_data: MeanEmbedding,
          cfg: TrainConfig) -> list[float]:
    """Run the embedding-matching loop; returns the per-iteration loss trace.

    ``mu_data`` must be a released embedding (privatized, or explicitly
    marked non-private); raw data never enters here. The feature map must
    be the one that built the embedding (fingerprint-checked).
    """
    if not mu_data.released:
        raise ValueError("training requires a released embedding; privatize it "
                         "or mark it non-private explicitly")
    if fmap.fingerprint() != mu_data.feature_map_fingerprint:
        raise FingerprintMismatchError(
            "feature map does not match the embedding's fingerprint")
    if G.feature_dim != fmap.architecture.input_dim:
        raise T.ShapeError(f"generator emits {G.feature_dim}-dim rows but the "
                           f"feature map expects {fmap.architecture.input_dim}")

    rng = Rng(cfg.seed)
    opt = Adam(G.param_list(), cfg.lr)
    trace: list[float] = []
    for it in range(cfg.n_iter):
        x, labels = generate_batch(G, rng, cfg.batch_size, train=True)
        mu_gen = generated_embedding(fmap, x, labels,
                                     normalization=mu_data.normalization)
        loss = mmd_loss(mu_data, mu_gen)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDivergedError(
                f"loss became {value} at iteration {it}; lower the learning "
                f"rate or disable the norm layers")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if not G.parameters_finite():
            raise TrainingDivergedError(f"non-finite parameters after iteration {it}")
        trace.append(value)
        if cfg.eval_every and (it + 1) % cfg.eval_every == 0:
            log.info("iter %d/%d loss %.6g", it + 1, cfg.n_iter, value)
    return trace


def sample_dataset(G: GeneratorModel, rng: Rng, n: int,
                   class_weights: ClassWeights | None = None) -> LabeledDataset:
    """Draw n labelled synthetic points in the encoded data schema.

    Categorical blocks are argmax-decoded to valid one-hot; numerics pass
    through. n=0 yields an empty dataset with the schema intact.
    """
    schema = G.schema
    if n == 0:
        return LabeledDataset(np.zeros((0, schema.feature_dim)),
                              np.zeros((0, schema.n_classes)), schema, "synthetic")
    x, labels = generate_batch(G, rng, n, train=False, class_weights=class_weights)
    feats = x.data.copy()
    for col, (a, b) in zip(schema.columns, schema.block_spans()):
        if isinstance(col, CategoricalColumn):
            hot = np.zeros((n, b - a))
            hot[np.arange(n), feats[:, a:b].argmax(axis=1)] = 1.0
            feats[:, a:b] = hot
    return LabeledDataset(feats, labels, schema, "synthetic")


# ---- checkpointing ----------------------------------------------------------

def save_checkpoint(G: GeneratorModel, path, embedding_fingerprint: str,
                    train_config: TrainConfig | None = None):
    """Deterministic binary checkpoint: JSON header + float64 arrays."""
    meta = {
        "kind": G.kind,
        "d_code": G.d_code,
        "hidden": list(G.hidden),
        "seed": G.seed,
        "activation": G.activation,
        "use_norm": G.use_norm,
        "schema": schema_to_dict(G.schema),
        "embedding_fingerprint": embedding_fingerprint,
        "train_config": asdict(train_config) if train_config else None,
        "param_names": sorted(G.params),
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    arrays = [G.params[name].data for name in meta["param_names"]]
    for mean, var in G.running_stats:
        arrays.extend([mean, var])
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC + struct.pack("<II", _CKPT_VERSION, len(blob)) + blob)
        for arr in arrays:
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr).astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[GeneratorModel, dict]:
    """Rebuild a generator (params and running stats) plus its metadata."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _CKPT_MAGIC:
        raise ValueError("not a generator checkpoint")
    version, json_len = struct.unpack_from("<II", blob, 4)
    if version != _CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    meta = json.loads(blob[off:off + json_len].decode())
    off += json_len

    def read_array():
        nonlocal off
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", blob, off)
        off += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        return arr.copy()

    schema = schema_from_dict(meta["schema"])
    G = GeneratorModel(schema, meta["d_code"], tuple(meta["hidden"]), meta["seed"],
                       activation=meta["activation"], use_norm=meta["use_norm"],
                       kind=meta["kind"])
    for name in meta["param_names"]:
        G.params[name].data[...] = read_array()
    for i in range(len(G.running_stats)):
        mean = read_array()
        var = read_array()
        G.running_stats[i] = (mean, var)
    if off != len(blob):
        raise ValueError("checkpoint has trailing bytes")
    return G, meta
