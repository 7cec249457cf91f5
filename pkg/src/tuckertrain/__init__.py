"""tuckertrain: accelerate CNN training with in-flight Tucker-2 factorization.

Train a model from scratch for a few epochs, replace each convolution
with a three-conv factor chain whose ranks come from analytic variational
Bayesian rank selection, keep training the smaller model, and optionally
merge the chains back losslessly.
"""

from .config import ExperimentConfig, load_config
from .errors import (
    ConfigError,
    DomainError,
    FormatError,
    GraphError,
    RankError,
    ShapeError,
    TuckerTrainError,
)
from .evbmf import EvbmfResult, evbmf
from .experiment import RunReport, decompose_convs, merge_all_chains, run_experiment
from .tucker import (
    CompressionEstimate,
    ConvSpec,
    RankPair,
    TuckerFactors,
    decompose_conv,
    estimate_compression,
    partial_tucker2,
    reconstruct_conv,
    select_ranks,
)

__version__ = "0.1.0"

__all__ = [
    "CompressionEstimate",
    "ConfigError",
    "ConvSpec",
    "DomainError",
    "EvbmfResult",
    "ExperimentConfig",
    "FormatError",
    "GraphError",
    "RankError",
    "RankPair",
    "RunReport",
    "ShapeError",
    "TuckerFactors",
    "TuckerTrainError",
    "decompose_conv",
    "decompose_convs",
    "estimate_compression",
    "evbmf",
    "load_config",
    "merge_all_chains",
    "partial_tucker2",
    "reconstruct_conv",
    "run_experiment",
    "select_ranks",
    "__version__",
]
