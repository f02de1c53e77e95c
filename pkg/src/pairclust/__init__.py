"""Deep clustering from dense pairwise similarity constraints.

A clustering network is trained with a hinged KL-divergence contrastive loss
on every (or a fraction of every) pair inside each mini-batch. Pair labels
come from a pluggable oracle: ground truth, ground truth degraded to a chosen
recall, or a similarity prediction network trained on other classes.
"""

from ._accel import USE_NUMBA
from .data import (Batch, BlobSpec, Dataset, batch_iter, load_idx, load_mnist, make_blobs,
                   normalize, select_classes)
from .loss import (LossConfig, PairLossResult, contrastive_batch_loss, dissimilar_pair_loss, kl,
                   similar_pair_loss)
from .metrics import acc, hungarian_max, nmi
from .network import NetworkConfig, NetworkParameters, convnet, init_params, mlp, softmax
from .pairs import (GroundTruthOracle, NoiseSpec, PairConstraints, ScorerOracle, enumerate_pairs,
                    flip_for_recall, ground_truth_labels, measure_recall)
from .spn import SpnConfig, SpnModel, nway_test, predict_similarity, train_spn
from .trainer import ClusterRunConfig, ClusterRunResult, assign_clusters, train_clusternet

__version__ = "0.1.0"
from .harness import GridSpec, ResultRow, emit_csv, read_csv, run_grid, run_transfer

__all__ = [
    "USE_NUMBA",
    "Batch", "BlobSpec", "Dataset", "batch_iter", "load_idx", "load_mnist", "make_blobs",
    "normalize", "select_classes",
    "LossConfig", "PairLossResult", "contrastive_batch_loss", "dissimilar_pair_loss", "kl",
    "similar_pair_loss",
    "acc", "hungarian_max", "nmi",
    "NetworkConfig", "NetworkParameters", "convnet", "init_params", "mlp", "softmax",
    "GroundTruthOracle", "NoiseSpec", "PairConstraints", "ScorerOracle", "enumerate_pairs",
    "flip_for_recall", "ground_truth_labels", "measure_recall",
    "SpnConfig", "SpnModel", "nway_test", "predict_similarity", "train_spn",
    "ClusterRunConfig", "ClusterRunResult", "assign_clusters", "train_clusternet",
    "GridSpec", "ResultRow", "emit_csv", "read_csv", "run_grid", "run_transfer",
]
