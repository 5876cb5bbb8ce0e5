"""Private synthetic data from noised neural-tangent-feature mean embeddings.

The pipeline: embed a labelled dataset once through the normalized
parameter-gradient features of a frozen random network, release that
class-conditional d x c mean embedding under the Gaussian mechanism, then
train a conditional generator against the released matrix alone by
minimizing the squared Frobenius distance between embeddings. Because the
release happens exactly once, generator training and sampling incur no
further privacy loss.
"""

from ntksynth.data import LabeledDataset, load_csv, load_images, split
from ntksynth.embedding import (MeanEmbedding, data_embedding, generated_embedding,
                                imbalanced_embedding, privatize, release_nonprivate,
                                sensitivity)
from ntksynth.evaluation import EvalConfig, synth_to_real_eval
from ntksynth.generator import GeneratorModel, TrainConfig, mmd_loss, sample_dataset, train
from ntksynth.ntk import NtkArchitecture, NtkFeatureMap
from ntksynth.privacy import (PrivacyParams, analytic_sigma, classical_sigma,
                              gaussian_mechanism)
from ntksynth.tensor import Rng, Tensor

__all__ = [
    "LabeledDataset", "load_csv", "load_images", "split",
    "MeanEmbedding", "data_embedding", "generated_embedding",
    "imbalanced_embedding", "privatize", "release_nonprivate", "sensitivity",
    "EvalConfig", "synth_to_real_eval",
    "GeneratorModel", "TrainConfig", "mmd_loss", "sample_dataset", "train",
    "NtkArchitecture", "NtkFeatureMap",
    "PrivacyParams", "analytic_sigma", "classical_sigma", "gaussian_mechanism",
    "Rng", "Tensor",
]

__version__ = "0.1.0"
