"""Cost models for GPU-to-GPU communication on heterogeneous nodes."""

from .collectives import (
    CollectiveOp,
    CollectiveSpec,
    MessageGroup,
    Strategy,
    StrategyReport,
    SweepRow,
    collective_cost,
    compare_strategies,
    crossover_message_count,
    message_plan,
    sweep,
)
from .cost_models import (
    CostBreakdown,
    Distribution,
    InjectionParams,
    LocalityClass,
    MemcpyDirection,
    MemcpyParams,
    PostalParams,
    ProtocolTable,
    SocketLocality,
    TrafficKind,
    TransferSpec,
    best_protocol_time,
    gpudirect_path_time,
    maxrate_time,
    memcpy_time,
    multi_message_time,
    postal_time,
    select_protocol,
    staged_bytes,
    three_step_time,
)
from .fitting import (
    FitResult,
    FittingError,
    TimingSample,
    fit_injection,
    fit_postal,
    fit_protocol_table,
)
from .machine_config import ConfigError, dump_machine, load_machine, parse_machine, save_machine
from .topology import (
    Endpoint,
    EndpointKind,
    MachineModel,
    builtin_machine,
    builtin_machine_names,
    classify_path,
    validate_machine,
)

__version__ = "0.1.0"
