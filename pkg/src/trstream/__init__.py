"""Tensor ring decomposition of dense and streaming tensors."""

__version__ = "0.1.0"

from .errors import ConfigError, DomainError, FormatError, NumericError, TRStreamError
from .harness import ProtocolConfig, generate_synthetic, run_protocol, write_report
from .io import load_tensor, save_tensor
from .sketching import SketchConfig, SketchKind, tr_als_sampled, tr_ksrft_als
from .solvers import SolveOptions, tr_als, tr_als_ne
from .streaming import StreamState, rstr_init, rstr_update, str_init, str_update
from .tensor_core import UnfoldKind, fold, unfold
from .tr_algebra import TRCores, random_cores, relative_error, tr_reconstruct

__all__ = [
    "ConfigError",
    "DomainError",
    "FormatError",
    "NumericError",
    "ProtocolConfig",
    "SketchConfig",
    "SketchKind",
    "SolveOptions",
    "StreamState",
    "TRCores",
    "TRStreamError",
    "UnfoldKind",
    "fold",
    "generate_synthetic",
    "load_tensor",
    "random_cores",
    "relative_error",
    "rstr_init",
    "rstr_update",
    "run_protocol",
    "save_tensor",
    "str_init",
    "str_update",
    "tr_als",
    "tr_als_ne",
    "tr_als_sampled",
    "tr_ksrft_als",
    "tr_reconstruct",
    "unfold",
    "write_report",
]
