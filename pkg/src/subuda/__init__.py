"""Subtype-aware unsupervised domain adaptation with a dynamic feature queue."""

from .ablation import ABLATION_VARIANTS, ablation_suite, missing_subtype_sweep
from .clustering import ClusterConfig, SubtypeCluster, kmeans
from .estimator import SubtypeAwareAdapter
from .evaluation import EvalReport, evaluate, proxy_a_distance
from .numeric import EncoderParams, OptimizerState
from .synth import DomainShiftSpec, generate_domain_pair, make_preset, scenario_presets
from .trainer import TrainConfig, run

__version__ = "0.1.0"
