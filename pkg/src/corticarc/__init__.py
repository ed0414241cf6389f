"""corticarc: a distributed simulator for columnar spiking networks.

Neurons are leaky integrate-and-fire units with spike-frequency
adaptation, grouped into cortical columns on a 2D grid.  Lateral
connectivity follows a distance-decay kernel (Gaussian or exponential)
evaluated column-to-column, so connection generation reduces to a small
stencil of column offsets.  The network is partitioned column-atomically
over workers that exchange spikes in address-event form through a
pluggable transport; every random draw is keyed by entity rather than by
call order, which makes rasters bit-identical across worker counts.
"""

from .connectivity import (
    GridSpec,
    KernelSpec,
    SynapseGenSpec,
    compute_stencil,
    expected_fanout,
    generate_outgoing_synapses,
    grid_totals,
)
from .engine import (
    ExternalInputSpec,
    MemoryBudgetError,
    RunResult,
    SimConfig,
    run,
    run_multiprocess,
    write_raster,
)
from .metrics import (
    CSV_HEADER,
    SimReport,
    emit_csv,
    normalized_cost,
    parse_csv,
    report_from_run,
    scaling_harness,
)
from .model import NeuronParams
from .partition import ProcessMap, map_columns_to_workers
from .transport import TransportError, TransportTimeout

__version__ = "0.1.0"

__all__ = [
    "GridSpec",
    "KernelSpec",
    "SynapseGenSpec",
    "NeuronParams",
    "ExternalInputSpec",
    "SimConfig",
    "RunResult",
    "SimReport",
    "ProcessMap",
    "TransportError",
    "TransportTimeout",
    "MemoryBudgetError",
    "CSV_HEADER",
    "compute_stencil",
    "expected_fanout",
    "generate_outgoing_synapses",
    "grid_totals",
    "map_columns_to_workers",
    "run",
    "run_multiprocess",
    "write_raster",
    "report_from_run",
    "normalized_cost",
    "scaling_harness",
    "emit_csv",
    "parse_csv",
    "__version__",
]
