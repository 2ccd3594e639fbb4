"""Isolated sign/gesture sequence classification with HMM banks.

Pipeline stages: dimension reduction (pooling, PCA, or a trainable
projector), per-class Gaussian/GMM-HMM model banks, and multi-modal
fusion (Max-Merge or Concat).
"""

from .sequences import FeatureSequence, Modality
from .emissions import (
    GaussianEmission,
    GmmEmission,
    VAR_FLOOR,
    WEIGHT_FLOOR,
    fit_gaussian_mle,
    fit_gmm,
    gaussian_logpdf,
    gmm_logpdf,
)
from .hmm import (
    EmissionKind,
    HmmModel,
    ScoreKind,
    Topology,
    TopologyKind,
    TrainReport,
    build_topology,
    init_model,
    log_forward,
    sample,
    score_sequence,
    viterbi_decode,
    viterbi_train,
)

__all__ = [
    "FeatureSequence",
    "Modality",
    "GaussianEmission",
    "GmmEmission",
    "VAR_FLOOR",
    "WEIGHT_FLOOR",
    "fit_gaussian_mle",
    "fit_gmm",
    "gaussian_logpdf",
    "gmm_logpdf",
    "EmissionKind",
    "HmmModel",
    "ScoreKind",
    "Topology",
    "TopologyKind",
    "TrainReport",
    "build_topology",
    "init_model",
    "log_forward",
    "sample",
    "score_sequence",
    "viterbi_decode",
    "viterbi_train",
]
