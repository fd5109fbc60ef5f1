"""Analytic cost models for moving data between GPUs on multi-socket nodes.

Three nested models price a transfer of one or more equal messages:

* postal: latency plus per-byte cost, ``alpha + beta*s``
* max-rate: postal with a per-node injection-bandwidth ceiling,
  ``alpha + s*max(beta, ppn*t_inject)``
* multi-message: ``n`` back-to-back messages through the max-rate model,
  ``n*alpha + n*s*max(beta, ppn*t_inject)``

On top of these sit the two inter-node transfer paths: direct GPU-to-GPU
sends, and the staged path that copies data into host memory, sends it
between CPUs, and copies it back onto the destination GPU.

All arithmetic is 64-bit floating point and every function here is pure.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

if TYPE_CHECKING:  # avoids a runtime cycle with topology
    from .topology import MachineModel

# Default message-protocol breakpoints (bytes). Vendor MPI stacks switch
# send protocols near these sizes; fitted tables may override them.
DEFAULT_SHORT_MAX_BYTES = 512
DEFAULT_EAGER_MAX_BYTES = 65536


class LocalityClass(enum.IntEnum):
    """Where two endpoints sit relative to each other, cheapest first."""

    ON_SOCKET = 0
    ON_NODE = 1
    OFF_NODE = 2

    @property
    def label(self) -> str:
        return _LOCALITY_LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "LocalityClass":
        for loc, name in _LOCALITY_LABELS.items():
            if name == label:
                return loc
        raise ValueError(f"unknown locality {label!r} (expected one of "
                         f"{', '.join(_LOCALITY_LABELS.values())})")


_LOCALITY_LABELS = {
    LocalityClass.ON_SOCKET: "on-socket",
    LocalityClass.ON_NODE: "on-node",
    LocalityClass.OFF_NODE: "off-node",
}


class MemcpyDirection(enum.Enum):
    HOST_TO_DEVICE = "host-to-device"
    DEVICE_TO_HOST = "device-to-host"


class SocketLocality(enum.Enum):
    """Whether a host buffer is on the GPU's own socket or the other one."""

    ON_SOCKET = "on-socket"
    OFF_SOCKET = "off-socket"


class TrafficKind(enum.Enum):
    """Which network endpoints an injection-rate limit applies to."""

    INTER_CPU = "inter-cpu"
    INTER_GPU = "inter-gpu"


class Distribution(enum.Enum):
    """How the staged path spreads work over the CPU cores backing one GPU.

    SINGLE_CPU drives everything from one core. EXTRA_MSG stages through one
    core, then scatters to the sibling cores with an extra on-node message
    round (mirrored by a gather on the receive side). DUP_DEVPTR maps the
    device buffer into every sibling core so each copies and sends its own
    slice directly.
    """

    SINGLE_CPU = "single-cpu"
    EXTRA_MSG = "extra-msg"
    DUP_DEVPTR = "dup-devptr"


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def _finite_nonneg(value: float, name: str) -> None:
    _require(math.isfinite(value) and value >= 0, f"{name} must be finite and >= 0, got {value!r}")


@dataclass(frozen=True)
class PostalParams:
    """Latency/bandwidth pair: seconds = alpha + beta * bytes."""

    alpha: float
    beta: float

    def __post_init__(self) -> None:
        _finite_nonneg(self.alpha, "alpha")
        _finite_nonneg(self.beta, "beta")


@dataclass(frozen=True)
class ProtocolTable:
    """Postal parameters per MPI send protocol, with the size breakpoints.

    Sizes up to short_max_bytes use the short protocol, sizes up to
    eager_max_bytes use eager, larger ones use rendezvous (both boundaries
    inclusive on the upper end).
    """

    short: PostalParams
    eager: PostalParams
    rendezvous: PostalParams
    short_max_bytes: float = DEFAULT_SHORT_MAX_BYTES
    eager_max_bytes: float = DEFAULT_EAGER_MAX_BYTES

    def __post_init__(self) -> None:
        _require(0 < self.short_max_bytes < self.eager_max_bytes,
                 f"breakpoints must satisfy 0 < short_max ({self.short_max_bytes}) "
                 f"< eager_max ({self.eager_max_bytes})")

    @classmethod
    def flat(cls, params: PostalParams,
             short_max_bytes: float = DEFAULT_SHORT_MAX_BYTES,
             eager_max_bytes: float = DEFAULT_EAGER_MAX_BYTES) -> "ProtocolTable":
        """Table whose three tiers share one parameter pair."""
        return cls(params, params, params, short_max_bytes, eager_max_bytes)


@dataclass(frozen=True)
class InjectionParams:
    """Inverse injection rate of a NIC, in seconds per byte per process."""

    t_inject: float

    def __post_init__(self) -> None:
        _require(math.isfinite(self.t_inject) and self.t_inject > 0,
                 f"t_inject must be finite and > 0, got {self.t_inject!r}")


@dataclass(frozen=True)
class MemcpyParams:
    """Postal parameters for cudaMemcpyAsync in one direction/socket placement."""

    direction: MemcpyDirection
    locality: SocketLocality
    params: PostalParams


@dataclass(frozen=True)
class TransferSpec:
    """One point-to-point workload: n messages of s bytes from each sender.

    ppn counts the active sender processes per node. dedup_fraction is the
    share of each message after the first that is duplicate payload and can
    be staged once instead of per message (0 = all messages carry distinct
    data, 1 = every message repeats the same bytes).
    """

    n_messages: int
    bytes_per_message: float
    ppn: int = 1
    dedup_fraction: float = 0.0

    def __post_init__(self) -> None:
        _require(isinstance(self.n_messages, int) and self.n_messages >= 0,
                 f"n_messages must be an int >= 0, got {self.n_messages!r}")
        _finite_nonneg(self.bytes_per_message, "bytes_per_message")
        _require(isinstance(self.ppn, int) and self.ppn >= 1,
                 f"ppn must be an int >= 1, got {self.ppn!r}")
        _require(math.isfinite(self.dedup_fraction) and 0.0 <= self.dedup_fraction <= 1.0,
                 f"dedup_fraction must be in [0, 1], got {self.dedup_fraction!r}")


@dataclass(frozen=True)
class CostBreakdown:
    """Per-phase seconds for one transfer, with their sum."""

    phases: tuple[tuple[str, float], ...]
    total: float

    def __post_init__(self) -> None:
        for name, seconds in self.phases:
            _require(math.isfinite(seconds) and seconds >= 0,
                     f"phase {name!r} must be finite and >= 0, got {seconds!r}")
        _require(math.isclose(self.total, math.fsum(s for _, s in self.phases), rel_tol=1e-12),
                 "total must equal the sum of phase seconds")

    @classmethod
    def from_phases(cls, phases: tuple[tuple[str, float], ...]) -> "CostBreakdown":
        return cls(phases=phases, total=math.fsum(s for _, s in phases))

    def phase(self, name: str) -> float:
        for label, seconds in self.phases:
            if label == name:
                return seconds
        raise KeyError(name)


def postal_time(params: PostalParams, nbytes: float) -> float:
    """Seconds to send one message of nbytes: alpha + beta * nbytes."""
    _finite_nonneg(nbytes, "nbytes")
    return params.alpha + params.beta * nbytes


def select_protocol(table: ProtocolTable, nbytes: float) -> PostalParams:
    """Parameters of the protocol an MPI stack would pick for this size."""
    _finite_nonneg(nbytes, "nbytes")
    if nbytes <= table.short_max_bytes:
        return table.short
    if nbytes <= table.eager_max_bytes:
        return table.eager
    return table.rendezvous


def best_protocol_time(table: ProtocolTable, nbytes: float) -> float:
    """Cheapest single-message time over all three tiers.

    Fitted tiers are not always cheapest inside their own size band, so
    comparisons that just need "the best this link can do" take the min
    instead of trusting the size-based selection.
    """
    _finite_nonneg(nbytes, "nbytes")
    return min(postal_time(table.short, nbytes),
               postal_time(table.eager, nbytes),
               postal_time(table.rendezvous, nbytes))


def maxrate_time(params: PostalParams, injection: InjectionParams | None,
                 ppn: int, nbytes: float) -> float:
    """Single-message seconds with ppn senders sharing the node's NIC.

    Each byte costs the worse of the link's per-byte rate and the sender's
    share of the injection ceiling. With injection=None (or one sender on an
    uncongested NIC) this reduces exactly to postal_time.
    """
    _require(ppn >= 1, f"ppn must be >= 1, got {ppn!r}")
    _finite_nonneg(nbytes, "nbytes")
    rate = params.beta
    if injection is not None:
        rate = max(rate, ppn * injection.t_inject)
    return params.alpha + nbytes * rate


def multi_message_time(params: PostalParams, injection: InjectionParams | None,
                       ppn: int, n_messages: int, nbytes: float) -> float:
    """Seconds for n_messages back-to-back sends of nbytes each.

    Latency is paid once per message, so splitting a fixed payload into n
    pieces costs up to n times more. n_messages = 0 costs nothing; with
    n_messages = 1 this is exactly maxrate_time.
    """
    _require(isinstance(n_messages, int) and n_messages >= 0,
             f"n_messages must be an int >= 0, got {n_messages!r}")
    _require(ppn >= 1, f"ppn must be >= 1, got {ppn!r}")
    _finite_nonneg(nbytes, "nbytes")
    if n_messages == 0:
        return 0.0
    rate = params.beta
    if injection is not None:
        rate = max(rate, ppn * injection.t_inject)
    return n_messages * params.alpha + (n_messages * nbytes) * rate


def memcpy_time(memcpy: MemcpyParams, nbytes: float) -> float:
    """Seconds for one cudaMemcpyAsync of nbytes."""
    return postal_time(memcpy.params, nbytes)


def staged_bytes(spec: TransferSpec) -> float:
    """Bytes the staged path must copy through host memory.

    Duplicate payload across the n messages is staged only once:
    n*s - dedup*(n-1)*s, which runs from s (all duplicates) to n*s (all
    distinct). Zero when there are no messages.
    """
    if spec.n_messages == 0:
        return 0.0
    n = spec.n_messages
    s = spec.bytes_per_message
    return n * s - spec.dedup_fraction * (n - 1) * s


def staging_copy_time(machine: "MachineModel", direction: MemcpyDirection,
                      staged: float, distribution: Distribution) -> float:
    """Seconds for the host<->device copy of one staged transfer endpoint.

    SINGLE_CPU and EXTRA_MSG issue one copy of all staged bytes. DUP_DEVPTR
    splits the buffer over the cores backing the GPU, so the modeled copy is
    1/cores of the bytes, scaled by the machine's device contention factor
    for the simultaneous per-core copies.
    """
    params = machine.memcpy_params(direction, SocketLocality.ON_SOCKET)
    if distribution is Distribution.DUP_DEVPTR:
        cores = machine.cores_per_gpu
        return machine.contention_factor * memcpy_time(params, staged / cores)
    return memcpy_time(params, staged)


def core_fanout_time(machine: "MachineModel", staged: float) -> float:
    """Seconds for EXTRA_MSG's on-node scatter of staged bytes to sibling cores.

    The staging core keeps a 1/cores share and forwards the rest in one
    intra-node message round. With a single core there is nobody to scatter
    to and the phase is free.
    """
    cores = machine.cores_per_gpu
    if cores <= 1:
        return 0.0
    table = machine.cpu_tables[LocalityClass.ON_NODE]
    return best_protocol_time(table, staged * (cores - 1) / cores)


def gpudirect_path_time(machine: "MachineModel", locality: LocalityClass,
                        spec: TransferSpec) -> CostBreakdown:
    """Cost of sending directly between GPU buffers over the given locality.

    Uses the GPU postal table for that locality; the inter-GPU injection
    ceiling applies only off node (intra-node traffic never crosses a NIC).
    """
    table = machine.gpu_tables[locality]
    params = select_protocol(table, spec.bytes_per_message)
    injection = machine.injection[TrafficKind.INTER_GPU] if locality is LocalityClass.OFF_NODE else None
    seconds = multi_message_time(params, injection, spec.ppn,
                                 spec.n_messages, spec.bytes_per_message)
    return CostBreakdown.from_phases((("gpu-direct", seconds),))


def three_step_time(machine: "MachineModel", spec: TransferSpec,
                    distribution: Distribution) -> CostBreakdown:
    """Cost of the staged device->host->network->host->device path off node.

    Phases: d2h copy of the staged bytes, an on-node redistribute round
    (EXTRA_MSG only), the inter-CPU messages over the off-node table with
    per-message protocol selection and the inter-CPU injection ceiling, a
    mirrored gather round (EXTRA_MSG only), and the h2d copy. spec.ppn counts
    active GPU processes per node; each drives one core (SINGLE_CPU) or all
    the cores backing its GPU.
    """
    cores = machine.cores_per_gpu
    cores_per_process = 1 if distribution is Distribution.SINGLE_CPU else cores
    active_cores = spec.ppn * cores_per_process
    _require(active_cores <= machine.cores_per_node,
             f"ppn={spec.ppn} with {cores_per_process} core(s) per process needs "
             f"{active_cores} cores but the node has {machine.cores_per_node}")

    with_fanout = distribution is Distribution.EXTRA_MSG
    if spec.n_messages == 0:
        labels = ("d2h", "redistribute", "inter-cpu", "gather", "h2d") if with_fanout \
            else ("d2h", "inter-cpu", "h2d")
        return CostBreakdown.from_phases(tuple((label, 0.0) for label in labels))

    staged = staged_bytes(spec)
    d2h = staging_copy_time(machine, MemcpyDirection.DEVICE_TO_HOST, staged, distribution)
    h2d = staging_copy_time(machine, MemcpyDirection.HOST_TO_DEVICE, staged, distribution)

    per_core_bytes = spec.bytes_per_message if distribution is Distribution.SINGLE_CPU \
        else spec.bytes_per_message / cores
    table = machine.cpu_tables[LocalityClass.OFF_NODE]
    params = select_protocol(table, per_core_bytes)
    inter = multi_message_time(params, machine.injection[TrafficKind.INTER_CPU],
                               active_cores, spec.n_messages, per_core_bytes)

    if with_fanout:
        fanout = core_fanout_time(machine, staged)
        phases = (("d2h", d2h), ("redistribute", fanout), ("inter-cpu", inter),
                  ("gather", fanout), ("h2d", h2d))
    else:
        phases = (("d2h", d2h), ("inter-cpu", inter), ("h2d", h2d))
    return CostBreakdown.from_phases(phases)
