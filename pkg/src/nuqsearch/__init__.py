"""Mixed-precision bit allocation search with multi-fidelity Gaussian processes.

Per-layer bit widths are generated from a low-dimensional curve, weights are
quantized blockwise (integer kernel plus per-block scale), and a multi-task GP
over training-epoch fidelities drives a cost-aware information-gain search.
"""

from .curves import Basis, BitConfig, CurveParams, LayerGrid, bits_for_layers, constrain, parse_bits
from .decision import effective_accuracy, naive_loss, pareto_front, rank_configs
from .dsconv import QuantizedLayer, dequantize, quantize_activation_bfp, quantize_weights
from .explorer import Budget, CandidatePool, SearchConfig, info_gain, run_search, select_action
from .mtgp import FitConfig, GPModel, Observation, TaskSet, fit
from .networks import NetworkSpec, builtin_network, model_size_bytes
from .objective import ExternalObjective, ObjectiveRequest, ObjectiveResult, SurrogateObjective, SyntheticObjective

__version__ = "0.1.0"

__all__ = [
    "Basis", "BitConfig", "CurveParams", "LayerGrid", "bits_for_layers", "constrain", "parse_bits",
    "effective_accuracy", "naive_loss", "pareto_front", "rank_configs",
    "QuantizedLayer", "dequantize", "quantize_activation_bfp", "quantize_weights",
    "Budget", "CandidatePool", "SearchConfig", "info_gain", "run_search", "select_action",
    "FitConfig", "GPModel", "Observation", "TaskSet", "fit",
    "NetworkSpec", "builtin_network", "model_size_bytes",
    "ExternalObjective", "ObjectiveRequest", "ObjectiveResult", "SurrogateObjective", "SyntheticObjective",
]
