"""Tensor-core GEMM kernel generator with a warp-level simulator for checking what it emits."""
from .config import REFERENCE, ConfigError, GenConfig
from .dag import ComputationDag, load_dag, parse_dag_spec
from .generate import Generated, generate
from .simulator import run_kernel
from .verify import Report, verify

__all__ = ["REFERENCE", "ConfigError", "GenConfig", "ComputationDag", "load_dag", "parse_dag_spec",
           "Generated", "generate", "run_kernel", "Report", "verify"]
