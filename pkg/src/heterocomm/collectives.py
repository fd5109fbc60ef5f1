"""Predicted cost of GPU-buffer collectives under four transfer strategies.

CUDA_AWARE sends directly between device buffers. The other three stage
through host memory and run the collective between CPUs: THREE_STEP drives
one core per GPU, EXTRA_MSG scatters the staged buffer over all cores
backing the GPU with an extra on-node message round, and DUP_DEVPTR maps the
device buffer into every core so each stages and sends its own slice.

Costs follow the busiest participant: the plan enumerates one representative
sender's messages and the collective's cost is that sender's modeled time.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .cost_models import (
    CostBreakdown,
    Distribution,
    LocalityClass,
    MemcpyDirection,
    TrafficKind,
    TransferSpec,
    core_fanout_time,
    gpudirect_path_time,
    multi_message_time,
    select_protocol,
    staging_copy_time,
    three_step_time,
)
from .topology import EndpointKind, MachineModel


class Strategy(enum.Enum):
    """Transfer strategies, in tie-breaking order for cheapest-strategy picks."""

    CUDA_AWARE = "cuda-aware"
    THREE_STEP = "3-step"
    EXTRA_MSG = "extra-msg"
    DUP_DEVPTR = "dup-devptr"

    @classmethod
    def from_label(cls, label: str) -> "Strategy":
        for strategy in cls:
            if strategy.value == label:
                return strategy
        raise ValueError(f"unknown strategy {label!r}")


_DISTRIBUTION = {
    Strategy.THREE_STEP: Distribution.SINGLE_CPU,
    Strategy.EXTRA_MSG: Distribution.EXTRA_MSG,
    Strategy.DUP_DEVPTR: Distribution.DUP_DEVPTR,
}


class CollectiveOp(enum.Enum):
    ALLTOALL = "alltoall"
    ALLTOALLV = "alltoallv"
    ALLREDUCE = "allreduce"


@dataclass(frozen=True)
class CollectiveSpec:
    """One collective invocation over gpus ranks.

    bytes is the per-destination message size for ALLTOALL, the full send
    matrix (dense, zero diagonal, bytes[i][j] from rank i to rank j) for
    ALLTOALLV, and the vector size for ALLREDUCE. reduce_rate optionally
    charges seconds per byte combined locally during reduction steps.
    """

    op: CollectiveOp
    gpus: int
    bytes: float | tuple[tuple[float, ...], ...]
    reduce_rate: float = 0.0

    def __post_init__(self) -> None:
        if not isinstance(self.gpus, int) or self.gpus < 1:
            raise ValueError(f"gpus must be an int >= 1, got {self.gpus!r}")
        if not (math.isfinite(self.reduce_rate) and self.reduce_rate >= 0):
            raise ValueError(f"reduce_rate must be finite and >= 0, got {self.reduce_rate!r}")
        if self.op is CollectiveOp.ALLTOALLV:
            rows = tuple(tuple(float(v) for v in row) for row in self.bytes)
            if len(rows) != self.gpus or any(len(row) != self.gpus for row in rows):
                raise ValueError(f"alltoallv matrix must be {self.gpus}x{self.gpus}")
            for i, row in enumerate(rows):
                for j, value in enumerate(row):
                    if not (math.isfinite(value) and value >= 0):
                        raise ValueError(f"matrix entry [{i}][{j}] must be finite and >= 0")
                    if i == j and value != 0:
                        raise ValueError(f"matrix diagonal must be zero, got [{i}][{i}]={value}")
            object.__setattr__(self, "bytes", rows)
        else:
            value = self.bytes
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
                raise ValueError(f"bytes must be a finite number >= 0, got {value!r}")
            object.__setattr__(self, "bytes", float(value))


@dataclass(frozen=True)
class MessageGroup:
    """A batch of identical messages in one sender's plan.

    reduces marks steps whose received payload is combined into the local
    buffer (allreduce reduction steps); it drives the reduce_rate charge.
    """

    locality: LocalityClass
    sender: EndpointKind
    n_messages: int
    bytes_per_message: float
    reduces: bool = False


@dataclass(frozen=True)
class StrategyReport:
    """compare_strategies output: every strategy priced on one collective."""

    breakdowns: dict[Strategy, CostBreakdown]
    cheapest: Strategy
    speedup_vs_cuda_aware: dict[Strategy, float]


def _rank_position(machine: MachineModel, rank: int) -> tuple[int, int]:
    """(node, socket) of a GPU rank dealt round-robin over nodes, then sockets.

    Rank r lands on node r mod nodes; the j-th rank on a node lands on
    socket j mod sockets. Consecutive ranks therefore spread as widely as
    the machine allows, the balanced placement schedulers default to.
    """
    node = rank % machine.nodes
    resident = rank // machine.nodes
    return node, resident % machine.sockets_per_node


def _active_gpus_per_node(machine: MachineModel, gpus: int) -> int:
    """GPU ranks sharing the fullest (representative) node under the layout."""
    return -(-gpus // machine.nodes)  # ceil


def _rank_locality(machine: MachineModel, a: int, b: int) -> LocalityClass:
    node_a, socket_a = _rank_position(machine, a)
    node_b, socket_b = _rank_position(machine, b)
    if node_a != node_b:
        return LocalityClass.OFF_NODE
    if socket_a != socket_b:
        return LocalityClass.ON_NODE
    return LocalityClass.ON_SOCKET


def _alltoall_row(machine: MachineModel,
                  spec: CollectiveSpec) -> tuple[int, list[tuple[int, float]]]:
    """Busiest sender and its (destination, bytes) list in rank order.

    For ALLTOALL every sender is identical, so rank 0 stands in. For
    ALLTOALLV the busiest row is the one with the most bytes (ties: more
    messages, then the lowest rank); zero entries carry no message.
    """
    p = spec.gpus
    if spec.op is CollectiveOp.ALLTOALL:
        return 0, [(dest, spec.bytes) for dest in range(p) if dest != 0]
    best_rank = 0
    best_key = (-1.0, -1)
    for rank in range(p):
        row = spec.bytes[rank]
        key = (math.fsum(row), sum(1 for v in row if v > 0))
        if key > best_key:
            best_key, best_rank = key, rank
    return best_rank, [(dest, spec.bytes[best_rank][dest])
                       for dest in range(p)
                       if dest != best_rank and spec.bytes[best_rank][dest] > 0]


def _allreduce_steps(machine: MachineModel, p: int,
                     nbytes: float) -> list[tuple[LocalityClass, float, bool]]:
    """(locality, bytes, reduces) per allreduce step for rank 0, in order.

    Small vectors use recursive doubling: ceil(log2 p) exchanges of the full
    vector. Vectors at or past the off-node eager breakpoint use
    reduce-scatter plus allgather: recursive halving down to s/2^K, then the
    mirror image back up. With g ranks resident per node under the layout,
    the first floor(log2 g) exchange distances stay on node and the rest
    leave it; a single-node machine keeps every step on node.
    """
    steps_total = (p - 1).bit_length()  # ceil(log2 p)
    if machine.nodes == 1:
        intra_bits = steps_total
    else:
        g = _active_gpus_per_node(machine, p)
        intra_bits = g.bit_length() - 1  # floor(log2 g)

    def locality(bit: int) -> LocalityClass:
        if bit < intra_bits:
            return LocalityClass.ON_NODE
        return LocalityClass.OFF_NODE

    threshold = machine.cpu_tables[LocalityClass.OFF_NODE].eager_max_bytes
    if nbytes < threshold:
        return [(locality(k), nbytes, True) for k in range(steps_total)]
    scatter = [(locality(steps_total - 1 - k), nbytes / 2 ** (k + 1), True)
               for k in range(steps_total)]
    gather = [(locality(b), nbytes / 2 ** (steps_total - b), False)
              for b in range(steps_total)]
    return scatter + gather


def _build_plan(machine: MachineModel, spec: CollectiveSpec,
                strategy: Strategy) -> tuple[list[MessageGroup], float]:
    """Representative sender's message groups plus the bytes it must stage."""
    cores = machine.cores_per_gpu
    if not isinstance(cores, int) or cores < 1:
        raise ValueError(f"machine {machine.name!r} has invalid cores_per_gpu={cores!r}")
    if spec.gpus > machine.total_gpus:
        raise ValueError(f"collective needs {spec.gpus} GPUs but machine "
                         f"{machine.name!r} has {machine.total_gpus}")
    if spec.gpus == 1:
        return [], 0.0

    sender = EndpointKind.GPU if strategy is Strategy.CUDA_AWARE else EndpointKind.CPU
    split = strategy in (Strategy.EXTRA_MSG, Strategy.DUP_DEVPTR)

    if spec.op in (CollectiveOp.ALLTOALL, CollectiveOp.ALLTOALLV):
        rep, row = _alltoall_row(machine, spec)
        staged = math.fsum(nbytes for _, nbytes in row)
        if split:
            # destinations dealt round-robin over the cores; core 0 is busiest
            row = row[0::cores]
        counts: dict[tuple[LocalityClass, float], int] = {}
        for dest, nbytes in row:
            key = (_rank_locality(machine, rep, dest), nbytes)
            counts[key] = counts.get(key, 0) + 1
        groups = [MessageGroup(loc, sender, n, nbytes)
                  for (loc, nbytes), n in sorted(counts.items())]
        return groups, staged

    steps = _allreduce_steps(machine, spec.gpus, spec.bytes)
    scale = 1 / cores if split else 1.0
    groups = [MessageGroup(loc, sender, 1, nbytes * scale, reduces)
              for loc, nbytes, reduces in steps]
    return groups, spec.bytes


def message_plan(machine: MachineModel, spec: CollectiveSpec,
                 strategy: Strategy) -> list[MessageGroup]:
    """Messages the busiest sender (or its busiest core) must send.

    Alltoall yields one group per (locality, size); allreduce yields one
    group per step in execution order. EXTRA_MSG and DUP_DEVPTR report the
    per-core share: a 1/cores slice of the destinations for alltoall, the
    same step count with 1/cores of the bytes for allreduce.
    """
    return _build_plan(machine, spec, strategy)[0]


def collective_cost(machine: MachineModel, spec: CollectiveSpec,
                    strategy: Strategy) -> CostBreakdown:
    """Modeled seconds for one collective under one strategy.

    CUDA_AWARE prices each plan group on the GPU tables with the inter-GPU
    injection ceiling off node. Staged strategies add the d2h/h2d staging
    copies (and EXTRA_MSG's redistribute/gather rounds) around the plan's
    messages priced on the CPU tables with the inter-CPU ceiling off node.
    """
    plan, staged = _build_plan(machine, spec, strategy)
    if not plan:
        return CostBreakdown.from_phases(())

    active_gpus = _active_gpus_per_node(machine, spec.gpus)
    phases: list[tuple[str, float]] = []

    if strategy is Strategy.CUDA_AWARE:
        for locality in LocalityClass:
            seconds = math.fsum(
                gpudirect_path_time(
                    machine, locality,
                    TransferSpec(group.n_messages, group.bytes_per_message,
                                 ppn=active_gpus)).total
                for group in plan if group.locality is locality)
            if seconds > 0.0:
                phases.append((f"msg:{locality.label}", seconds))
    else:
        distribution = _DISTRIBUTION[strategy]
        cores = machine.cores_per_gpu
        active_cores = active_gpus * (1 if distribution is Distribution.SINGLE_CPU else cores)
        if active_cores > machine.cores_per_node:
            raise ValueError(f"strategy {strategy.value} needs {active_cores} cores "
                             f"per node but the node has {machine.cores_per_node}")
        phases.append(("d2h", staging_copy_time(
            machine, MemcpyDirection.DEVICE_TO_HOST, staged, distribution)))
        if distribution is Distribution.EXTRA_MSG:
            phases.append(("redistribute", core_fanout_time(machine, staged)))
        injection = machine.injection[TrafficKind.INTER_CPU]
        for locality in LocalityClass:
            table = machine.cpu_tables[locality]
            inj = injection if locality is LocalityClass.OFF_NODE else None
            seconds = math.fsum(
                multi_message_time(select_protocol(table, group.bytes_per_message),
                                   inj, active_cores, group.n_messages,
                                   group.bytes_per_message)
                for group in plan if group.locality is locality)
            if seconds > 0.0:
                phases.append((f"msg:{locality.label}", seconds))
        if distribution is Distribution.EXTRA_MSG:
            phases.append(("gather", core_fanout_time(machine, staged)))
        phases.append(("h2d", staging_copy_time(
            machine, MemcpyDirection.HOST_TO_DEVICE, staged, distribution)))

    if spec.reduce_rate > 0:
        reduced = math.fsum(group.n_messages * group.bytes_per_message
                            for group in plan if group.reduces)
        if reduced > 0.0:
            phases.append(("reduce", spec.reduce_rate * reduced))

    return CostBreakdown.from_phases(tuple(phases))


def compare_strategies(machine: MachineModel, spec: CollectiveSpec) -> StrategyReport:
    """All four strategies priced on one collective, with the cheapest marked.

    Ties go to the earlier Strategy declaration. Speedups are relative to
    CUDA_AWARE (values above 1 mean the strategy beats it).
    """
    breakdowns = {strategy: collective_cost(machine, spec, strategy)
                  for strategy in Strategy}
    # min keeps the first of equal keys, so ties fall to declaration order
    cheapest = min(Strategy, key=lambda s: breakdowns[s].total)
    base = breakdowns[Strategy.CUDA_AWARE].total
    speedups = {}
    for strategy in Strategy:
        total = breakdowns[strategy].total
        if total > 0:
            speedups[strategy] = base / total
        else:
            speedups[strategy] = 1.0 if base == 0 else math.inf
    return StrategyReport(breakdowns=breakdowns, cheapest=cheapest,
                          speedup_vs_cuda_aware=speedups)


def crossover_message_count(machine: MachineModel, bytes_per_message: float,
                            dedup_fraction: float = 0.0, n_max: int = 64) -> int | None:
    """Smallest message count where staging beats sending GPU-direct off node.

    Compares the single-core staged path against GPU-direct for n messages of
    the given size (one sender per node) and returns the first n in
    [1, n_max] where staging is strictly cheaper, or None if it never is.
    """
    if not (isinstance(bytes_per_message, (int, float)) and bytes_per_message > 0):
        raise ValueError(f"bytes_per_message must be > 0, got {bytes_per_message!r}")
    if not isinstance(n_max, int) or n_max < 1:
        raise ValueError(f"n_max must be an int >= 1, got {n_max!r}")
    for n in range(1, n_max + 1):
        spec = TransferSpec(n, float(bytes_per_message), ppn=1,
                            dedup_fraction=dedup_fraction)
        staged = three_step_time(machine, spec, Distribution.SINGLE_CPU).total
        direct = gpudirect_path_time(machine, LocalityClass.OFF_NODE, spec).total
        if staged < direct:
            return n
    return None


@dataclass(frozen=True)
class SweepRow:
    size_bytes: int | float
    strategy: Strategy
    seconds: float
    speedup_vs_cuda_aware: float
    cheapest: bool


def sweep(machine: MachineModel, op: CollectiveOp, gpus: int,
          sizes: list[int | float], reduce_rate: float = 0.0) -> list[SweepRow]:
    """compare_strategies over a size sweep, flattened to plot-ready rows.

    Rows are size-major in the given order, strategies in declaration order.
    ALLTOALLV sweeps a uniform matrix with the size in every off-diagonal
    entry.
    """
    if not sizes:
        raise ValueError("sizes must not be empty")
    rows: list[SweepRow] = []
    for size in sizes:
        if op is CollectiveOp.ALLTOALLV:
            matrix = tuple(tuple(0.0 if i == j else float(size) for j in range(gpus))
                           for i in range(gpus))
            spec = CollectiveSpec(op, gpus, matrix, reduce_rate)
        else:
            spec = CollectiveSpec(op, gpus, float(size), reduce_rate)
        report = compare_strategies(machine, spec)
        for strategy in Strategy:
            rows.append(SweepRow(
                size_bytes=size,
                strategy=strategy,
                seconds=report.breakdowns[strategy].total,
                speedup_vs_cuda_aware=report.speedup_vs_cuda_aware[strategy],
                cheapest=strategy is report.cheapest,
            ))
    return rows
