"""Class-conditional feature mean embeddings and their private release.

The embedding of a labelled dataset is the d x c matrix
(1/m) sum_i phi(x_i) y_i^T: column k averages the unit-norm features of
class-k points, scaled by the class share. Replacing one record moves the
matrix by at most 2/m in Frobenius norm, so a single Gaussian-mechanism
release with per-entry noise std 2*sigma/m makes it private; everything
downstream touches only the released matrix.

The generated-data counterpart is the same computation built on the
differentiation tape, so the squared-distance loss can push gradients
back into a generator.

The imbalanced variant additionally releases (noised) class counts and
rescales each column to a per-class mean; see `imbalanced_embedding` for
the budget accounting.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from ntksynth import tensor as T
from ntksynth.ntk import DegenerateFeatureError, NtkFeatureMap
from ntksynth.privacy import PrivacyParams, ReleaseLog, gaussian_mechanism, calibrate
from ntksynth.tensor import Rng, Tensor

__all__ = [
    "MeanEmbedding", "ClassWeights", "FingerprintMismatchError",
    "data_embedding", "sensitivity", "privatize", "release_nonprivate",
    "generated_embedding", "imbalanced_embedding",
    "save_embedding", "load_embedding",
]

log = logging.getLogger(__name__)

_CHUNK = 512

_EMB_MAGIC = b"NTKE"
_EMB_VERSION = 1
# magic, version, d, c, m, privatized, calibration, normalization, has_weights
_EMB_HEADER = struct.Struct("<4sIQIQBBBB")
_CALIBRATIONS = ("classical", "analytic", "none")
_NORMALIZATIONS = ("global", "per_class")


class FingerprintMismatchError(ValueError):
    """Two artifacts were built from different feature maps."""


@dataclass(frozen=True)
class ClassWeights:
    """Released class counts (possibly noised and clamped at zero)."""

    counts: np.ndarray
    mode: str = "per_class"
    noise_std: float = 0.0

    @property
    def proportions(self) -> np.ndarray:
        total = self.counts.sum()
        if total <= 0:
            raise ValueError("all released class counts are zero")
        return self.counts / total

    def active_classes(self) -> np.ndarray:
        return np.flatnonzero(self.counts > 0)


@dataclass
class MeanEmbedding:
    """d x c class-conditional embedding, optionally privatized.

    ``node`` is set only for generated-data embeddings living on the tape.
    A privatized embedding is immutable (matrix is write-protected) and
    carries the PrivacyParams of its release.
    """

    matrix: np.ndarray
    m: int
    feature_map_fingerprint: str
    privatized: bool = False
    privacy: PrivacyParams | None = None
    normalization: str = "global"
    class_weights: ClassWeights | None = None
    node: Tensor | None = None

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def c(self) -> int:
        return self.matrix.shape[1]

    @property
    def released(self) -> bool:
        """True once this embedding may legally feed generator training."""
        return self.privatized or (self.privacy is not None
                                   and self.privacy.calibration == "none")

    def check_compatible(self, other: "MeanEmbedding"):
        if self.matrix.shape != other.matrix.shape:
            raise ValueError(f"embedding shapes differ: {self.matrix.shape} "
                             f"vs {other.matrix.shape}")
        if self.feature_map_fingerprint != other.feature_map_fingerprint:
            raise FingerprintMismatchError(
                "embeddings were built from different feature maps")


def sensitivity(m: int) -> float:
    """Global Frobenius sensitivity of the mean embedding: 2/m."""
    if m < 1:
        raise ValueError(f"need at least one contributing point, got m={m}")
    return 2.0 / m


def data_embedding(fmap: NtkFeatureMap, dataset, chunk: int = _CHUNK) -> MeanEmbedding:
    """(1/m) sum_i phi(x_i) y_i^T over the dataset, in fixed row order.

    Accumulated chunk-wise with compensated (Kahan) summation so the result
    is bit-stable and permutation-invariant to ~1e-12.
    """
    X, Y = dataset.features, dataset.labels
    m = X.shape[0]
    if m < 1:
        raise ValueError("dataset must contain at least one row")
    d = fmap.feature_dim
    acc = np.zeros((d, Y.shape[1]))
    comp = np.zeros_like(acc)
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        try:
            phi = fmap.phi_batch(X[start:stop]).data
        except DegenerateFeatureError as err:
            rows = [start + r for r in err.rows]
            raise DegenerateFeatureError(
                f"degenerate features for dataset row(s) {rows}", rows=rows) from None
        contrib = phi.T @ Y[start:stop]
        y = contrib - comp
        t = acc + y
        comp = (t - acc) - y
        acc = t
    return MeanEmbedding(matrix=acc / m, m=m,
                         feature_map_fingerprint=fmap.fingerprint())


def privatize(emb: MeanEmbedding, privacy: PrivacyParams, rng: Rng,
              release_log: ReleaseLog | None = None) -> MeanEmbedding:
    """Release the embedding under the Gaussian mechanism.

    Per-entry noise std sigma * 2/m. The input must be un-released and the
    privacy params must carry exactly this embedding's sensitivity.
    """
    if emb.privatized:
        raise ValueError("embedding is already privatized; releasing again would "
                         "spend additional budget")
    if emb.normalization != "global":
        raise ValueError("per-class embeddings are released through "
                         "imbalanced_embedding, which owns their accounting")
    want = sensitivity(emb.m)
    if not math.isclose(privacy.sensitivity, want, rel_tol=1e-12):
        raise ValueError(f"privacy params carry sensitivity {privacy.sensitivity}, "
                         f"embedding requires 2/m = {want}")
    if release_log is not None:
        release_log.record(f"embedding:{emb.feature_map_fingerprint}", privacy)
    noisy = gaussian_mechanism(emb.matrix, privacy.sensitivity, privacy.sigma, rng)
    noisy.flags.writeable = False
    return replace(emb, matrix=noisy, privatized=True, privacy=privacy, node=None)


def release_nonprivate(emb: MeanEmbedding) -> MeanEmbedding:
    """Mark an embedding as deliberately released without noise (eps = inf)."""
    if emb.privatized:
        raise ValueError("embedding is already privatized")
    params = PrivacyParams(math.inf, 0.0, 0.0, sensitivity(emb.m), "none")
    matrix = emb.matrix.copy()
    matrix.flags.writeable = False
    return replace(emb, matrix=matrix, privacy=params, node=None)


def generated_embedding(fmap: NtkFeatureMap, x_batch: Tensor, y_batch: np.ndarray,
                        normalization: str = "global") -> MeanEmbedding:
    """Embedding of a generated batch, built on the differentiation tape.

    Same computation as `data_embedding` (per-class column sums scaled by
    1/n, or by 1/n_k in per_class mode), but gradients flow back through
    ``x_batch`` into whatever produced it. Degenerate rows are zeroed with
    a warning rather than raising.
    """
    if normalization not in _NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}")
    Y = y_batch.data if isinstance(y_batch, Tensor) else np.asarray(y_batch, dtype=np.float64)
    n = Y.shape[0]
    if n < 1:
        raise ValueError("generated batch must contain at least one row")
    phi = fmap.phi_batch(x_batch, training=True)
    if normalization == "global":
        weights = np.full(Y.shape[1], 1.0 / n)
    else:
        counts = Y.sum(axis=0)
        weights = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
    node = T.matmul(T.transpose(phi), T.constant(Y * weights))
    return MeanEmbedding(matrix=node.data, m=n,
                         feature_map_fingerprint=fmap.fingerprint(),
                         normalization=normalization, node=node)


def imbalanced_embedding(fmap: NtkFeatureMap, dataset, epsilon: float | None,
                         delta: float, rng: Rng, privacy_split: float = 0.1,
                         calibration: str = "analytic",
                         release_log: ReleaseLog | None = None,
                         ) -> tuple[MeanEmbedding, ClassWeights]:
    """Per-class-mean embedding plus released class counts.

    The released statistic is the pair (class counts, global embedding),
    treated as one Gaussian release of the concatenated vector with each
    part rescaled by its sensitivity and budget share: counts (sensitivity
    sqrt(2) under replace-one) get ``privacy_split`` of the squared budget
    and receive noise std sigma*sqrt(2)/sqrt(split); the embedding
    (sensitivity 2/m) gets the rest, noise std sigma*(2/m)/sqrt(1-split).
    The concatenated rescaled statistic has unit sensitivity, so the
    calibrated sigma for (epsilon, delta) covers the pair.

    Per-class means are post-processing: each column of the noisy global
    embedding is scaled by m over its noisy count. Classes whose released
    count clamps to zero are excluded (zero column) with a warning.

    ``epsilon=None`` (or inf) runs the noise-free variant for testing and
    eps = inf pipelines.
    """
    if not 0 < privacy_split < 1:
        raise ValueError(f"privacy_split must lie in (0, 1), got {privacy_split}")
    emb = data_embedding(fmap, dataset)
    counts = dataset.class_counts().astype(np.float64)
    m = emb.m

    private = epsilon is not None and math.isfinite(epsilon)
    if private:
        params = calibrate(epsilon, delta, 1.0, method=calibration)
        counts_std = params.sigma * math.sqrt(2.0) / math.sqrt(privacy_split)
        emb_std = params.sigma * sensitivity(m) / math.sqrt(1.0 - privacy_split)
        if release_log is not None:
            release_log.record(f"embedding+counts:{emb.feature_map_fingerprint}", params)
        noisy_counts = np.maximum(counts + counts_std * rng.normal(counts.shape), 0.0)
        matrix = emb.matrix + emb_std * rng.normal(emb.matrix.shape)
    else:
        params = PrivacyParams(math.inf, 0.0, 0.0, 1.0, "none")
        counts_std = 0.0
        noisy_counts = counts
        matrix = emb.matrix.copy()

    dead = np.flatnonzero(noisy_counts <= 0)
    if dead.size:
        log.warning("class(es) %s have zero released count and are excluded "
                    "from generation", dead.tolist())
    scale = np.divide(m, noisy_counts, out=np.zeros_like(noisy_counts),
                      where=noisy_counts > 0)
    matrix = matrix * scale
    matrix.flags.writeable = False

    weights = ClassWeights(counts=noisy_counts, mode="per_class", noise_std=counts_std)
    out = MeanEmbedding(matrix=matrix, m=m,
                        feature_map_fingerprint=emb.feature_map_fingerprint,
                        privatized=private, privacy=params,
                        normalization="per_class", class_weights=weights)
    return out, weights


# ---- persistence -----------------------------------------------------------

def save_embedding(emb: MeanEmbedding, path):
    """Write the released-embedding container (the privacy firewall artifact)."""
    if not emb.released:
        raise ValueError("refusing to write an un-released embedding; privatize "
                         "or explicitly release_nonprivate first")
    p = emb.privacy
    has_weights = emb.class_weights is not None
    header = _EMB_HEADER.pack(
        _EMB_MAGIC, _EMB_VERSION, emb.d, emb.c, emb.m, int(emb.privatized),
        _CALIBRATIONS.index(p.calibration), _NORMALIZATIONS.index(emb.normalization),
        int(has_weights))
    stats = struct.pack("<ddddd", p.epsilon, p.delta, p.sigma, p.sensitivity,
                        emb.class_weights.noise_std if has_weights else 0.0)
    body = bytes.fromhex(emb.feature_map_fingerprint)
    if has_weights:
        body += emb.class_weights.counts.astype("<f8").tobytes()
    body += np.ascontiguousarray(emb.matrix).astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + stats + body)


def load_embedding(path) -> MeanEmbedding:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _EMB_HEADER.size or blob[:4] != _EMB_MAGIC:
        raise ValueError("not a released-embedding container")
    (_, version, d, c, m, privatized, cal_code, norm_code,
     has_weights) = _EMB_HEADER.unpack_from(blob)
    if version != _EMB_VERSION:
        raise ValueError(f"unsupported embedding container version {version}")
    off = _EMB_HEADER.size
    epsilon, delta, sigma, sens, counts_std = struct.unpack_from("<ddddd", blob, off)
    off += 40
    fingerprint = blob[off:off + 32].hex()
    off += 32
    weights = None
    if has_weights:
        counts = np.frombuffer(blob, dtype="<f8", count=c, offset=off).copy()
        off += 8 * c
        weights = ClassWeights(counts=counts, mode="per_class", noise_std=counts_std)
    want = off + 8 * d * c
    if len(blob) != want:
        raise ValueError(f"embedding container truncated at byte {len(blob)}, "
                         f"expected {want}")
    matrix = np.frombuffer(blob, dtype="<f8", offset=off).reshape(d, c).copy()
    matrix.flags.writeable = False
    params = PrivacyParams(epsilon, delta, sigma, sens, _CALIBRATIONS[cal_code])
    return MeanEmbedding(matrix=matrix, m=m, feature_map_fingerprint=fingerprint,
                         privatized=bool(privatized), privacy=params,
                         normalization=_NORMALIZATIONS[norm_code],
                         class_weights=weights)
