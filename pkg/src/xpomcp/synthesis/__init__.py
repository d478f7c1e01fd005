"""Rule synthesis from traces: MAX-SMT instantiation of template thresholds."""
from .backend import (
    BackendConfig,
    BackendError,
    BackendResult,
    BackendTimeoutError,
    InfeasibleTemplateError,
    parse_output,
    run_backend,
)
from .core import SynthesisResult, partition, synthesize
from .encode import SynthesisProblem, encode_smtlib
from .oracle import OracleBoundError, oracle_synthesize
from .tighten import PairEvaluator, tighten_thresholds

__all__ = [
    "BackendConfig", "BackendError", "BackendResult", "BackendTimeoutError",
    "InfeasibleTemplateError", "OracleBoundError", "PairEvaluator", "SynthesisProblem",
    "SynthesisResult", "encode_smtlib", "oracle_synthesize", "parse_output", "partition",
    "run_backend", "synthesize", "tighten_thresholds",
]
