"""Machine descriptions: node/socket/GPU shape plus the fitted link tables.

A MachineModel bundles the physical shape of one cluster (nodes, sockets,
GPUs, cores) with the postal-parameter tables measured on it. classify_path
reduces a pair of endpoints to the locality class that picks which table row
applies.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .cost_models import (
    InjectionParams,
    LocalityClass,
    MemcpyDirection,
    MemcpyParams,
    PostalParams,
    ProtocolTable,
    SocketLocality,
    TrafficKind,
)


class EndpointKind(enum.Enum):
    CPU = "cpu"
    GPU = "gpu"


@dataclass(frozen=True)
class Endpoint:
    """One communication endpoint: a core or a GPU at a physical position."""

    node: int
    socket: int
    kind: EndpointKind
    index: int  # core index within the socket, or GPU index within the socket


@dataclass(frozen=True)
class MachineModel:
    """Shape and fitted parameters of one machine.

    cores_per_gpu is how many cores the staged strategies may drive per GPU;
    when omitted it defaults to an even split of the node's cores over its
    GPUs. Construction never validates cross-field consistency, so configs
    can be loaded first and checked with validate_machine afterwards.
    """

    name: str
    nodes: int
    sockets_per_node: int
    gpus_per_socket: int
    cpu_cores_per_socket: int
    gpu_tables: dict[LocalityClass, ProtocolTable]
    cpu_tables: dict[LocalityClass, ProtocolTable]
    memcpy_tables: dict[tuple[MemcpyDirection, SocketLocality], MemcpyParams]
    injection: dict[TrafficKind, InjectionParams]
    cores_per_gpu: int | None = None
    contention_factor: float = 1.0

    def __post_init__(self) -> None:
        if self.cores_per_gpu is None:
            gpus = self.gpus_per_socket * self.sockets_per_node
            if isinstance(gpus, int) and gpus > 0:
                cores = self.cpu_cores_per_socket * self.sockets_per_node
                object.__setattr__(self, "cores_per_gpu", cores // gpus)

    @property
    def gpus_per_node(self) -> int:
        return self.gpus_per_socket * self.sockets_per_node

    @property
    def cores_per_node(self) -> int:
        return self.cpu_cores_per_socket * self.sockets_per_node

    @property
    def total_gpus(self) -> int:
        return self.nodes * self.gpus_per_node

    def memcpy_params(self, direction: MemcpyDirection,
                      locality: SocketLocality) -> MemcpyParams:
        return self.memcpy_tables[(direction, locality)]


def classify_path(machine: MachineModel, a: Endpoint, b: Endpoint) -> LocalityClass:
    """Locality class of the path between two endpoints.

    Same socket (including a == b) is ON_SOCKET, same node otherwise is
    ON_NODE, different nodes are OFF_NODE. Symmetric in its arguments.
    Endpoints outside the machine's shape are rejected.
    """
    for ep in (a, b):
        if not 0 <= ep.node < machine.nodes:
            raise ValueError(f"endpoint node {ep.node} outside machine with {machine.nodes} node(s)")
        if not 0 <= ep.socket < machine.sockets_per_node:
            raise ValueError(f"endpoint socket {ep.socket} outside machine with "
                             f"{machine.sockets_per_node} socket(s) per node")
        limit = machine.gpus_per_socket if ep.kind is EndpointKind.GPU else machine.cpu_cores_per_socket
        if not 0 <= ep.index < limit:
            raise ValueError(f"endpoint index {ep.index} outside socket with {limit} {ep.kind.value}(s)")
    if a.node != b.node:
        return LocalityClass.OFF_NODE
    if a.socket != b.socket:
        return LocalityClass.ON_NODE
    return LocalityClass.ON_SOCKET


def validate_machine(machine: MachineModel) -> list[str]:
    """All consistency violations in a machine, as human-readable strings.

    Returns an empty list for a usable machine; never raises.
    """
    problems: list[str] = []
    for name in ("nodes", "sockets_per_node", "gpus_per_socket", "cpu_cores_per_socket"):
        value = getattr(machine, name)
        if not isinstance(value, int) or value < 1:
            problems.append(f"{name} must be an integer >= 1, got {value!r}")
    if not isinstance(machine.cores_per_gpu, int) or machine.cores_per_gpu < 1:
        problems.append(f"cores_per_gpu must be an integer >= 1, got {machine.cores_per_gpu!r}")
    elif isinstance(machine.gpus_per_socket, int) and isinstance(machine.cpu_cores_per_socket, int) \
            and machine.gpus_per_socket >= 1 and machine.cpu_cores_per_socket >= 1:
        if machine.cores_per_gpu * machine.gpus_per_node > machine.cores_per_node:
            problems.append(
                f"cores_per_gpu={machine.cores_per_gpu} needs "
                f"{machine.cores_per_gpu * machine.gpus_per_node} cores per node "
                f"but only {machine.cores_per_node} exist")

    for attr in ("gpu_tables", "cpu_tables"):
        tables = getattr(machine, attr)
        for locality in LocalityClass:
            entry = tables.get(locality)
            if entry is None:
                problems.append(f"{attr} missing entry for {locality.label}")
            elif not isinstance(entry, ProtocolTable):
                problems.append(f"{attr}[{locality.label}] is not a ProtocolTable")

    for direction in MemcpyDirection:
        for locality in SocketLocality:
            entry = machine.memcpy_tables.get((direction, locality))
            if entry is None:
                problems.append(f"memcpy_tables missing entry for "
                                f"({direction.value}, {locality.value})")
            elif entry.direction is not direction or entry.locality is not locality:
                problems.append(f"memcpy_tables[({direction.value}, {locality.value})] "
                                f"is keyed inconsistently with its own fields")

    for kind in TrafficKind:
        if machine.injection.get(kind) is None:
            problems.append(f"injection missing entry for {kind.value}")

    if not (isinstance(machine.contention_factor, (int, float))
            and machine.contention_factor >= 1.0):
        problems.append(f"contention_factor must be >= 1, got {machine.contention_factor!r}")
    return problems


def _summit() -> MachineModel:
    """Summit: 2 sockets per node, 3 GPUs and 20 usable cores per socket.

    GPU tables carry one fitted pair per locality (the device stack does not
    switch protocols), replicated across the three tiers. CPU tables carry
    the per-protocol fits. Memcpy pairs are for pageable cudaMemcpyAsync.
    """
    gpu = {
        LocalityClass.ON_SOCKET: ProtocolTable.flat(PostalParams(1.68e-05, 1.86e-11)),
        LocalityClass.ON_NODE: ProtocolTable.flat(PostalParams(1.80e-05, 2.09e-11)),
        LocalityClass.OFF_NODE: ProtocolTable.flat(PostalParams(4.96e-06, 1.69e-10)),
    }
    cpu = {
        LocalityClass.ON_SOCKET: ProtocolTable(
            short=PostalParams(3.51e-07, 2.62e-10),
            eager=PostalParams(4.73e-07, 6.95e-11),
            rendezvous=PostalParams(2.46e-06, 3.31e-11)),
        LocalityClass.ON_NODE: ProtocolTable(
            short=PostalParams(9.08e-07, 1.46e-09),
            eager=PostalParams(1.17e-06, 2.16e-10),
            rendezvous=PostalParams(5.81e-06, 1.46e-10)),
        LocalityClass.OFF_NODE: ProtocolTable(
            short=PostalParams(1.38e-06, 3.82e-10),
            eager=PostalParams(1.85e-06, 3.93e-10),
            rendezvous=PostalParams(6.56e-06, 8.51e-11)),
    }
    memcpy = {
        (MemcpyDirection.HOST_TO_DEVICE, SocketLocality.ON_SOCKET):
            MemcpyParams(MemcpyDirection.HOST_TO_DEVICE, SocketLocality.ON_SOCKET,
                         PostalParams(1.09e-05, 2.38e-11)),
        (MemcpyDirection.DEVICE_TO_HOST, SocketLocality.ON_SOCKET):
            MemcpyParams(MemcpyDirection.DEVICE_TO_HOST, SocketLocality.ON_SOCKET,
                         PostalParams(1.09e-05, 2.36e-11)),
        (MemcpyDirection.HOST_TO_DEVICE, SocketLocality.OFF_SOCKET):
            MemcpyParams(MemcpyDirection.HOST_TO_DEVICE, SocketLocality.OFF_SOCKET,
                         PostalParams(1.26e-05, 2.71e-11)),
        (MemcpyDirection.DEVICE_TO_HOST, SocketLocality.OFF_SOCKET):
            MemcpyParams(MemcpyDirection.DEVICE_TO_HOST, SocketLocality.OFF_SOCKET,
                         PostalParams(1.25e-05, 2.72e-11)),
    }
    injection = {
        TrafficKind.INTER_CPU: InjectionParams(3.0e-11),
        TrafficKind.INTER_GPU: InjectionParams(5.1e-11),
    }
    return MachineModel(
        name="summit",
        nodes=4608,
        sockets_per_node=2,
        gpus_per_socket=3,
        cpu_cores_per_socket=20,
        cores_per_gpu=6,
        gpu_tables=gpu,
        cpu_tables=cpu,
        memcpy_tables=memcpy,
        injection=injection,
        contention_factor=1.0,
    )


_BUILTIN = {"summit": _summit}


def builtin_machine(name: str) -> MachineModel:
    """A fresh copy of a named builtin machine preset."""
    try:
        factory = _BUILTIN[name]
    except KeyError:
        known = ", ".join(sorted(_BUILTIN))
        raise ValueError(f"unknown machine {name!r} (builtin presets: {known})") from None
    return factory()


def builtin_machine_names() -> list[str]:
    return sorted(_BUILTIN)
