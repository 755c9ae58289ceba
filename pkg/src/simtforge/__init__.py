"""simtforge: divergence management for SIMT code, from uniformity analysis to split/join.

The main entry points are re-exported here; see the submodules for the rest.
"""

from .harness import compare
from .normalize import PipelineConfig, StructurizeError
from .oracle import run_oracle
from .parser import parse_module
from .pipeline import run_pipeline
from .printer import print_module
from .sim import run_simt
from .verify import verify_module

__version__ = "0.1.0"

__all__ = [
    "PipelineConfig",
    "StructurizeError",
    "compare",
    "parse_module",
    "print_module",
    "run_oracle",
    "run_pipeline",
    "run_simt",
    "verify_module",
]
