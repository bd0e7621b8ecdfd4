"""Irregular repetition slotted ALOHA with threshold capture over Rayleigh fading.

Submodules: ``degree`` (degree distributions), ``capture`` (per-slot capture
probabilities), ``de`` (asymptotic density evolution and decoding
thresholds), ``sim`` (finite-frame SIC simulation), ``opt`` (degree
distribution design) and ``cli``.
"""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .capture import ChannelModel, capture_prob, capture_step_prob
from .de import DeConfig, ThresholdSearch, de_fixed_point, decoding_threshold
from .degree import DegreeDistribution, EdgeDistribution, known_distribution, parse_polynomial
from .opt import OptConfig, OptConstraints, optimize_distribution
from .sim import SimConfig, decode_frame, generate_frame, load_sweep, run_simulation

__all__ = [
    "ChannelModel", "capture_prob", "capture_step_prob",
    "DeConfig", "ThresholdSearch", "de_fixed_point", "decoding_threshold",
    "DegreeDistribution", "EdgeDistribution", "known_distribution", "parse_polynomial",
    "OptConfig", "OptConstraints", "optimize_distribution",
    "SimConfig", "decode_frame", "generate_frame", "load_sweep", "run_simulation",
]
