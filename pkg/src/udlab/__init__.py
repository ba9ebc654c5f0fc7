"""udlab: universal decoding for channels with hidden-Markov side information.

Exact evaluation, Monte-Carlo simulation and enumeration-based bound checks
for the ML, threshold and LZ-based universal decoders.
"""
from .decoding import (
    ML,
    UNIVERSAL,
    Codebook,
    DecoderKind,
    ErrorProbReport,
    codebook_size,
    decode,
    exact_avg_error,
    monte_carlo_error,
    monte_carlo_errors,
    pairwise_set_prob,
    u_metric,
)
from .estimation import EstimationConfig, baum_welch, plug_in_decode
from .harness import capacity_memoryless, generate_codebook, load_model, save_model
from .lz import cbar, joint_parse, v_metric
from .model import SystemModel, random_model

__version__ = "0.1.0"

__all__ = [
    "ML", "UNIVERSAL", "Codebook", "DecoderKind", "ErrorProbReport", "codebook_size", "decode",
    "exact_avg_error", "monte_carlo_error", "monte_carlo_errors", "pairwise_set_prob", "u_metric",
    "EstimationConfig", "baum_welch", "plug_in_decode",
    "capacity_memoryless", "generate_codebook", "load_model", "save_model",
    "cbar", "joint_parse", "v_metric", "SystemModel", "random_model",
]
