"""Two-stage constrained evolutionary search over a GhostNet-style backbone space."""

__version__ = "0.1.0"

from .cost_model import CostReport, backbone_cost, genome_cost  # noqa: E402
from .engine import MnsgaConfig, MnsgaEngine, ParetoArchive, run, run_nsga2_baseline  # noqa: E402
from .evaluators import ProxyEvaluator, SurrogateEvaluator  # noqa: E402
from .search_space import (  # noqa: E402
    ArchitectureDesc,
    Genome,
    OpKind,
    SearchSpaceSpec,
    decode,
    default_space,
    encode,
    parse_architecture,
    random_genome,
    validate,
)
from .weight_mapping import SupernetWeights, map_individual  # noqa: E402

__all__ = [
    "ArchitectureDesc", "CostReport", "Genome", "MnsgaConfig", "MnsgaEngine", "OpKind",
    "ParetoArchive", "ProxyEvaluator", "SearchSpaceSpec", "SupernetWeights", "SurrogateEvaluator",
    "backbone_cost", "decode", "default_space", "encode", "genome_cost", "map_individual",
    "parse_architecture", "random_genome", "run", "run_nsga2_baseline", "validate",
]
