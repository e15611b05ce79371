"""lagen: blocked linear-algebra algorithm synthesis and kernel generation."""

from .codegen import emit_bench_harness, emit_function, emit_nu_kernel_header
from .invariants import build_task_graph, enumerate_invariants
from .lang import (
    Equation,
    Operand,
    Structure,
    check_properties,
    format_equation,
    parse_equation,
    partition_operand,
)
from .lowering import (
    interpret_sigma,
    lower_algorithm,
    map_nu_kernels,
    prune_structure,
    tile,
)
from .pme import derive_pmes, expand_cells, match_pattern
from .verify import (
    interpret,
    interpret_algorithm,
    oracle_solve,
    random_instance,
    residual,
)
from .worksheet import (
    derive_algorithm,
    enumerate_algorithms,
    flop_count,
    format_worksheet,
)

__all__ = [
    "Equation",
    "Operand",
    "Structure",
    "build_task_graph",
    "check_properties",
    "derive_algorithm",
    "derive_pmes",
    "emit_bench_harness",
    "emit_function",
    "emit_nu_kernel_header",
    "enumerate_algorithms",
    "enumerate_invariants",
    "expand_cells",
    "flop_count",
    "format_equation",
    "format_worksheet",
    "interpret",
    "interpret_algorithm",
    "interpret_sigma",
    "lower_algorithm",
    "map_nu_kernels",
    "match_pattern",
    "oracle_solve",
    "parse_equation",
    "partition_operand",
    "prune_structure",
    "random_instance",
    "residual",
    "tile",
]
