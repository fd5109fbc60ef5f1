"""Command-line front end: predict, fit, crossover, collective.

Every command prints one delimited table (CSV by default, aligned text with
--format table) so the output drops straight into plotting scripts. Floats
are serialized with 9 significant digits and identical invocations produce
byte-identical output.

Exit codes: 0 success, 2 usage or configuration error, 3 data or fit error.
"""

from __future__ import annotations

import argparse
import os
import re
import sys

import yaml

from .collectives import CollectiveOp, crossover_message_count, sweep
from .cost_models import (
    Distribution,
    LocalityClass,
    TransferSpec,
    gpudirect_path_time,
    three_step_time,
)
from .fitting import (
    FittingError,
    TimingSample,
    fit_injection,
    fit_postal,
    fit_protocol_table,
)
from .machine_config import ConfigError, load_machine
from .topology import builtin_machine, builtin_machine_names, validate_machine


class UsageError(Exception):
    """Bad invocation or configuration; exits 2."""


class TimingLogError(Exception):
    """Malformed timing CSV; exits 3. The message names the line."""


# Threshold above which a "seconds" value smells like pasted milliseconds.
SUSPICIOUS_SECONDS = 1e3

_SIZE_SUFFIXES = {"": 1, "b": 1, "k": 1024, "kb": 1024, "kib": 1024,
                  "m": 1024 ** 2, "mb": 1024 ** 2, "mib": 1024 ** 2,
                  "g": 1024 ** 3, "gb": 1024 ** 3, "gib": 1024 ** 3}

_SIZE_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?)\s*([A-Za-z]*)\s*$")


def parse_size(token: str) -> int | float:
    """One byte size, with optional binary suffix: 64, 4K, 1MiB, 1g."""
    match = _SIZE_RE.match(token)
    if not match:
        raise UsageError(f"cannot parse size {token!r}")
    number, suffix = match.groups()
    try:
        scale = _SIZE_SUFFIXES[suffix.lower()]
    except KeyError:
        raise UsageError(f"unknown size suffix {suffix!r} in {token!r} "
                         "(use K, M or G, binary multiples)") from None
    value = float(number) * scale
    return int(value) if value.is_integer() else value


def parse_sizes(text: str) -> list[int | float]:
    """A size sweep: comma list (1,2,4) or geometric range (1:1G:x4).

    Geometric ranges include every start*factor^k up to and including stop
    when it lands exactly. The result is deduplicated, ascending, and must
    be strictly positive.
    """
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3 or not parts[2].lower().startswith("x"):
            raise UsageError(f"cannot parse size range {text!r} "
                             "(expected start:stop:xFACTOR)")
        start, stop = parse_size(parts[0]), parse_size(parts[1])
        try:
            factor = float(parts[2][1:])
        except ValueError:
            raise UsageError(f"cannot parse factor {parts[2]!r}") from None
        if factor.is_integer():
            factor = int(factor)
        if start <= 0 or stop < start or factor <= 1:
            raise UsageError(f"size range {text!r} needs 0 < start <= stop and factor > 1")
        sizes, value = [], start
        while value <= stop * (1 + 1e-9):
            sizes.append(value)
            value = value * factor
            if len(sizes) > 100000:
                raise UsageError(f"size range {text!r} expands to too many points")
    else:
        sizes = [parse_size(token) for token in text.split(",") if token.strip()]
    if not sizes:
        raise UsageError("no sizes given")
    if any(size <= 0 for size in sizes):
        raise UsageError("sizes must be strictly positive")
    return sorted(set(sizes))


_TIMING_COLUMNS = ("bytes", "seconds", "ppn", "n_messages", "locality")


def read_timing_csv(path: str) -> tuple[list[TimingSample], list[str]]:
    """Timing samples plus warnings from one log file.

    Header must be bytes,seconds optionally extended (in order) with ppn,
    n_messages, locality. Lines starting with # and blank lines are ignored.
    Empty optional fields fall back to their defaults.
    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None

    header: list[str] | None = None
    samples: list[TimingSample] = []
    warnings: list[str] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if header is None:
            header = fields
            if header != list(_TIMING_COLUMNS[:len(header)]) or len(header) < 2:
                raise TimingLogError(
                    f"{path}: line {lineno}: header must be bytes,seconds"
                    f"[,ppn[,n_messages[,locality]]], got {line!r}")
            continue
        if len(fields) != len(header):
            raise TimingLogError(f"{path}: line {lineno}: expected {len(header)} "
                                 f"fields, got {len(fields)}")
        row = dict(zip(header, fields))
        try:
            nbytes = float(row["bytes"])
            seconds = float(row["seconds"])
            ppn = int(row["ppn"]) if row.get("ppn") else None
            n_messages = int(row["n_messages"]) if row.get("n_messages") else 1
            locality = LocalityClass.from_label(row["locality"]) if row.get("locality") else None
            sample = TimingSample(bytes=nbytes, seconds=seconds, ppn=ppn,
                                  n_messages=n_messages, locality=locality)
        except ValueError as exc:
            raise TimingLogError(f"{path}: line {lineno}: {exc}") from None
        if seconds > SUSPICIOUS_SECONDS:
            warnings.append(f"{path}: line {lineno}: seconds={seconds:g} is over "
                            f"{SUSPICIOUS_SECONDS:g}; milliseconds pasted as seconds?")
        samples.append(sample)
    if header is None:
        raise TimingLogError(f"{path}: no header line found")
    return samples, warnings


def _format_cell(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def render_rows(header: list[str], rows: list[list], fmt: str) -> str:
    """One output table as text, csv or aligned columns."""
    cells = [[_format_cell(v) for v in row] for row in rows]
    if fmt == "csv":
        lines = [",".join(header)] + [",".join(row) for row in cells]
        return "\n".join(lines) + "\n"
    widths = [max(len(header[i]), *(len(row[i]) for row in cells)) if cells else len(header[i])
              for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def _emit(args: argparse.Namespace, header: list[str], rows: list[list]) -> None:
    text = render_rows(header, rows, args.format)
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)


def _resolve_machine(name_or_path: str):
    if os.path.exists(name_or_path):
        machine = load_machine(name_or_path)
    else:
        try:
            machine = builtin_machine(name_or_path)
        except ValueError:
            presets = ", ".join(builtin_machine_names())
            raise UsageError(f"unknown machine {name_or_path!r}: not a builtin preset "
                             f"({presets}) and no such config file") from None
    problems = validate_machine(machine)
    if problems:
        listing = "\n  ".join(problems)
        raise UsageError(f"machine {machine.name!r} is inconsistent:\n  {listing}")
    return machine


_PATH_ALIASES = {
    "gpudirect": "gpudirect", "gpu-direct": "gpudirect",
    "3step": "3step", "3-step": "3step", "three-step": "3step",
    "extra-msg": "extra-msg", "extramsg": "extra-msg",
    "dup-devptr": "dup-devptr", "dupdevptr": "dup-devptr",
}

_PATH_DISTRIBUTION = {"3step": Distribution.SINGLE_CPU,
                      "extra-msg": Distribution.EXTRA_MSG,
                      "dup-devptr": Distribution.DUP_DEVPTR}


def _cmd_predict(args: argparse.Namespace) -> int:
    machine = _resolve_machine(args.machine)
    sizes = parse_sizes(args.sizes)
    paths = []
    for token in args.paths.split(","):
        token = token.strip().lower()
        if token not in _PATH_ALIASES:
            raise UsageError(f"unknown path {token!r} (use gpudirect, 3step, "
                             "extra-msg or dup-devptr)")
        canonical = _PATH_ALIASES[token]
        if canonical not in paths:
            paths.append(canonical)
    locality = LocalityClass.from_label(args.locality)
    rows = []
    for size in sizes:
        spec = TransferSpec(n_messages=args.n_messages, bytes_per_message=float(size),
                            ppn=args.ppn, dedup_fraction=args.dedup)
        for path in paths:
            if path == "gpudirect":
                seconds = gpudirect_path_time(machine, locality, spec).total
            else:
                seconds = three_step_time(machine, spec, _PATH_DISTRIBUTION[path]).total
            rows.append([size, path, seconds])
    _emit(args, ["size_bytes", "path", "seconds"], rows)
    return 0


def _cmd_fit(args: argparse.Namespace) -> int:
    samples, warnings = read_timing_csv(args.samples)
    for message in warnings:
        print(f"warning: {message}", file=sys.stderr)
    if args.locality:
        wanted = LocalityClass.from_label(args.locality)
        samples = [s for s in samples if s.locality is wanted]
    if not samples:
        raise UsageError(f"no samples in {args.samples}"
                         + (f" with locality {args.locality}" if args.locality else ""))

    fragment: dict
    if args.kind == "postal":
        result = fit_postal(samples)
        header = ["alpha", "beta", "rms_residual", "samples", "clamped"]
        rows = [[result.params.alpha, result.params.beta, result.residual,
                 result.sample_count, result.clamped]]
        fragment = {"alpha": result.params.alpha, "beta": result.params.beta}
    elif args.kind == "table":
        table = fit_protocol_table(samples)
        header = ["tier", "alpha", "beta", "short_max_bytes", "eager_max_bytes"]
        rows = [[tier, params.alpha, params.beta, table.short_max_bytes, table.eager_max_bytes]
                for tier, params in (("short", table.short), ("eager", table.eager),
                                     ("rendezvous", table.rendezvous))]
        fragment = {
            "short": {"alpha": table.short.alpha, "beta": table.short.beta},
            "eager": {"alpha": table.eager.alpha, "beta": table.eager.beta},
            "rendezvous": {"alpha": table.rendezvous.alpha, "beta": table.rendezvous.beta},
            "short_max_bytes": table.short_max_bytes,
            "eager_max_bytes": table.eager_max_bytes,
        }
    else:
        injection = fit_injection(samples, alpha=args.alpha)
        header = ["t_inject", "samples"]
        rows = [[injection.t_inject, len(samples)]]
        fragment = {"t_inject": injection.t_inject}

    if args.emit_config:
        with open(args.emit_config, "w", encoding="utf-8") as handle:
            yaml.safe_dump(fragment, handle, sort_keys=False)
    _emit(args, header, rows)
    return 0


def _cmd_crossover(args: argparse.Namespace) -> int:
    machine = _resolve_machine(args.machine)
    sizes = parse_sizes(args.sizes)
    if not 0.0 <= args.dedup <= 1.0:
        raise UsageError(f"--dedup must be in [0, 1], got {args.dedup}")
    if args.n_max < 1:
        raise UsageError(f"--n-max must be >= 1, got {args.n_max}")
    rows = []
    for size in sizes:
        n = crossover_message_count(machine, float(size),
                                    dedup_fraction=args.dedup, n_max=args.n_max)
        rows.append([size, n])
    _emit(args, ["size_bytes", "crossover_n"], rows)
    return 0


def _cmd_collective(args: argparse.Namespace) -> int:
    machine = _resolve_machine(args.machine)
    sizes = parse_sizes(args.sizes)
    if args.gpus < 1:
        raise UsageError(f"--gpus must be >= 1, got {args.gpus}")
    if args.reduce_rate < 0:
        raise UsageError(f"--reduce-rate must be >= 0, got {args.reduce_rate}")
    op = CollectiveOp(args.op)
    results = sweep(machine, op, args.gpus, sizes, reduce_rate=args.reduce_rate)
    rows = [[row.size_bytes, row.strategy.value, row.seconds,
             row.speedup_vs_cuda_aware, row.cheapest]
            for row in results]
    _emit(args, ["size_bytes", "strategy", "seconds", "speedup_vs_cuda_aware", "cheapest"],
          rows)
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--machine", "-m", default="summit",
                        help="builtin preset name or machine config file (default: summit)")
    parser.add_argument("--output", "-o", default=None,
                        help="write the table to this file instead of stdout")
    parser.add_argument("--format", choices=("csv", "table"), default="csv",
                        help="csv (default) or aligned text columns")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heterocomm",
        description="Model communication costs between GPUs on heterogeneous nodes.")
    commands = parser.add_subparsers(dest="command", required=True)

    predict = commands.add_parser(
        "predict", help="predict transfer path costs over a size sweep")
    _add_common(predict)
    predict.add_argument("--paths", default="gpudirect,3step",
                         help="comma list of gpudirect, 3step, extra-msg, dup-devptr")
    predict.add_argument("--sizes", required=True,
                         help="comma list (1,2,4K) or geometric range (1:1G:x4)")
    predict.add_argument("--n-messages", type=int, default=1,
                         help="messages per transfer (default 1)")
    predict.add_argument("--ppn", type=int, default=1,
                         help="active sender processes per node (default 1)")
    predict.add_argument("--dedup", type=float, default=0.0,
                         help="duplicate payload fraction staged once (default 0)")
    predict.add_argument("--locality", default="off-node",
                         choices=tuple(loc.label for loc in LocalityClass),
                         help="locality for the gpudirect path (default off-node)")
    predict.set_defaults(handler=_cmd_predict)

    fit = commands.add_parser(
        "fit", help="fit model parameters from a timing CSV")
    _add_common(fit)
    fit.add_argument("samples", help="timing CSV: bytes,seconds[,ppn,n_messages,locality]")
    fit.add_argument("--kind", required=True, choices=("postal", "table", "injection"),
                     help="postal pair, three-tier protocol table, or injection rate")
    fit.add_argument("--locality", default=None,
                     choices=tuple(loc.label for loc in LocalityClass),
                     help="use only samples annotated with this locality")
    fit.add_argument("--alpha", type=float, default=None,
                     help="latency to subtract in the injection fit "
                          "(default: pre-fit from the smallest-ppn group)")
    fit.add_argument("--emit-config", default=None, metavar="PATH",
                     help="also write the fitted parameters as a config fragment")
    fit.set_defaults(handler=_cmd_fit)

    crossover = commands.add_parser(
        "crossover", help="smallest message count where staging beats gpudirect")
    _add_common(crossover)
    crossover.add_argument("--sizes", required=True,
                           help="per-message sizes to scan (comma list or range)")
    crossover.add_argument("--dedup", type=float, default=0.0,
                           help="duplicate payload fraction (default 0)")
    crossover.add_argument("--n-max", type=int, default=64,
                           help="largest message count to scan (default 64)")
    crossover.set_defaults(handler=_cmd_crossover)

    collective = commands.add_parser(
        "collective", help="compare strategies for a collective over a size sweep")
    _add_common(collective)
    collective.add_argument("--op", required=True,
                            choices=tuple(op.value for op in CollectiveOp))
    collective.add_argument("--gpus", required=True, type=int,
                            help="number of GPU ranks")
    collective.add_argument("--sizes", required=True,
                            help="per-destination (alltoall/v) or vector (allreduce) sizes")
    collective.add_argument("--reduce-rate", type=float, default=0.0,
                            help="seconds per byte of local reduction work (default 0)")
    collective.set_defaults(handler=_cmd_collective)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.handler(args)
    except (TimingLogError, FittingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (UsageError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
