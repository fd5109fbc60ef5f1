"""Load and save MachineModel descriptions as YAML.

The file mirrors MachineModel's fields exactly: shape counts at the top
level, then nested sections for the per-locality protocol tables, the memcpy
pairs, and the injection rates. Parsing is strict: unknown keys anywhere are
errors, so typos surface instead of silently falling back to defaults.
"""

from __future__ import annotations

import yaml

from .cost_models import (
    DEFAULT_EAGER_MAX_BYTES,
    DEFAULT_SHORT_MAX_BYTES,
    InjectionParams,
    LocalityClass,
    MemcpyDirection,
    MemcpyParams,
    PostalParams,
    ProtocolTable,
    SocketLocality,
    TrafficKind,
)
from .topology import MachineModel


class ConfigError(ValueError):
    """Malformed machine config; the message names the offending key."""


_TOP_REQUIRED = ("name", "nodes", "sockets_per_node", "gpus_per_socket",
                 "cpu_cores_per_socket", "gpu_tables", "cpu_tables",
                 "memcpy_tables", "injection")
_TOP_OPTIONAL = ("cores_per_gpu", "contention_factor")


def _mapping(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
    return value

def _check_keys(mapping: dict, allowed: tuple[str, ...], path: str) -> None:
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(map(repr, unknown))} "
                          f"(allowed: {', '.join(allowed)})")

def _number(mapping: dict, key: str, path: str) -> float:
    if key not in mapping:
        raise ConfigError(f"{path}: missing required key {key!r}")
    value = mapping[key]
    if isinstance(value, bool):
        raise ConfigError(f"{path}.{key}: expected a number, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        # YAML 1.1 treats exponents without a sign ("1e-11" is fine, "1e5"
        # is not) inconsistently; accept numeric-looking strings
        try:
            return float(value)
        except ValueError:
            pass
    raise ConfigError(f"{path}.{key}: expected a number, got {value!r}")

def _integer(mapping: dict, key: str, path: str) -> int:
    if key not in mapping:
        raise ConfigError(f"{path}: missing required key {key!r}")
    value = mapping[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}.{key}: expected an integer, got {value!r}")
    return value


def _postal(value, path: str) -> PostalParams:
    entry = _mapping(value, path)
    _check_keys(entry, ("alpha", "beta"), path)
    return PostalParams(_number(entry, "alpha", path), _number(entry, "beta", path))


def _protocol_table(value, path: str) -> ProtocolTable:
    entry = _mapping(value, path)
    _check_keys(entry, ("short", "eager", "rendezvous",
                        "short_max_bytes", "eager_max_bytes"), path)
    for tier in ("short", "eager", "rendezvous"):
        if tier not in entry:
            raise ConfigError(f"{path}: missing required key {tier!r}")
    short_max = _number(entry, "short_max_bytes", path) if "short_max_bytes" in entry \
        else DEFAULT_SHORT_MAX_BYTES
    eager_max = _number(entry, "eager_max_bytes", path) if "eager_max_bytes" in entry \
        else DEFAULT_EAGER_MAX_BYTES
    try:
        return ProtocolTable(
            short=_postal(entry["short"], f"{path}.short"),
            eager=_postal(entry["eager"], f"{path}.eager"),
            rendezvous=_postal(entry["rendezvous"], f"{path}.rendezvous"),
            short_max_bytes=short_max, eager_max_bytes=eager_max)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _locality_tables(value, path: str) -> dict[LocalityClass, ProtocolTable]:
    section = _mapping(value, path)
    labels = tuple(loc.label for loc in LocalityClass)
    _check_keys(section, labels, path)
    for label in labels:
        if label not in section:
            raise ConfigError(f"{path}: missing required key {label!r}")
    return {LocalityClass.from_label(label): _protocol_table(entry, f"{path}.{label}")
            for label, entry in section.items()}


def _memcpy_tables(value, path: str):
    section = _mapping(value, path)
    directions = tuple(d.value for d in MemcpyDirection)
    _check_keys(section, directions, path)
    tables = {}
    for direction in MemcpyDirection:
        if direction.value not in section:
            raise ConfigError(f"{path}: missing required key {direction.value!r}")
        sub = _mapping(section[direction.value], f"{path}.{direction.value}")
        _check_keys(sub, tuple(l.value for l in SocketLocality), f"{path}.{direction.value}")
        for locality in SocketLocality:
            if locality.value not in sub:
                raise ConfigError(f"{path}.{direction.value}: missing required key "
                                  f"{locality.value!r}")
            pair = _postal(sub[locality.value], f"{path}.{direction.value}.{locality.value}")
            tables[(direction, locality)] = MemcpyParams(direction, locality, pair)
    return tables


def _injection(value, path: str) -> dict[TrafficKind, InjectionParams]:
    section = _mapping(value, path)
    kinds = tuple(k.value for k in TrafficKind)
    _check_keys(section, kinds, path)
    rates = {}
    for kind in TrafficKind:
        if kind.value not in section:
            raise ConfigError(f"{path}: missing required key {kind.value!r}")
        try:
            rates[kind] = InjectionParams(_number(section, kind.value, path))
        except ValueError as exc:
            raise ConfigError(f"{path}.{kind.value}: {exc}") from None
    return rates


def parse_machine(text: str) -> MachineModel:
    """MachineModel from YAML text. Raises ConfigError on any malformation."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}") from None
    top = _mapping(raw, "config")
    _check_keys(top, _TOP_REQUIRED + _TOP_OPTIONAL, "config")
    for key in _TOP_REQUIRED:
        if key not in top:
            raise ConfigError(f"config: missing required key {key!r}")
    if not isinstance(top["name"], str):
        raise ConfigError(f"config.name: expected a string, got {top['name']!r}")
    return MachineModel(
        name=top["name"],
        nodes=_integer(top, "nodes", "config"),
        sockets_per_node=_integer(top, "sockets_per_node", "config"),
        gpus_per_socket=_integer(top, "gpus_per_socket", "config"),
        cpu_cores_per_socket=_integer(top, "cpu_cores_per_socket", "config"),
        cores_per_gpu=_integer(top, "cores_per_gpu", "config") if "cores_per_gpu" in top else None,
        contention_factor=_number(top, "contention_factor", "config")
        if "contention_factor" in top else 1.0,
        gpu_tables=_locality_tables(top["gpu_tables"], "config.gpu_tables"),
        cpu_tables=_locality_tables(top["cpu_tables"], "config.cpu_tables"),
        memcpy_tables=_memcpy_tables(top["memcpy_tables"], "config.memcpy_tables"),
        injection=_injection(top["injection"], "config.injection"),
    )


def load_machine(path: str) -> MachineModel:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_machine(handle.read())


def machine_to_dict(machine: MachineModel) -> dict:
    """Plain-data form of a machine, in the config file's schema."""
    def pair(params: PostalParams) -> dict:
        return {"alpha": params.alpha, "beta": params.beta}

    def table(entry: ProtocolTable) -> dict:
        return {"short": pair(entry.short), "eager": pair(entry.eager),
                "rendezvous": pair(entry.rendezvous),
                "short_max_bytes": entry.short_max_bytes,
                "eager_max_bytes": entry.eager_max_bytes}

    return {
        "name": machine.name,
        "nodes": machine.nodes,
        "sockets_per_node": machine.sockets_per_node,
        "gpus_per_socket": machine.gpus_per_socket,
        "cpu_cores_per_socket": machine.cpu_cores_per_socket,
        "cores_per_gpu": machine.cores_per_gpu,
        "contention_factor": machine.contention_factor,
        "gpu_tables": {loc.label: table(machine.gpu_tables[loc])
                       for loc in LocalityClass if loc in machine.gpu_tables},
        "cpu_tables": {loc.label: table(machine.cpu_tables[loc])
                       for loc in LocalityClass if loc in machine.cpu_tables},
        "memcpy_tables": {
            direction.value: {
                locality.value: pair(machine.memcpy_tables[(direction, locality)].params)
                for locality in SocketLocality
                if (direction, locality) in machine.memcpy_tables}
            for direction in MemcpyDirection},
        "injection": {kind.value: machine.injection[kind].t_inject
                      for kind in TrafficKind if kind in machine.injection},
    }


def dump_machine(machine: MachineModel) -> str:
    """YAML text that parse_machine reads back as an equal machine."""
    return yaml.safe_dump(machine_to_dict(machine), sort_keys=False,
                          default_flow_style=False)


def save_machine(machine: MachineModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(dump_machine(machine))
