"""Recover model parameters from ping-pong style timing logs.

Postal pairs come from ordinary least squares on (bytes, seconds). Protocol
tables come from a segmented fit that tries every pair of breakpoint
candidates (geometric midpoints between observed sizes) and keeps the pair
with the smallest total squared error. Injection rates come from the slope
of per-byte cost against the process count once the NIC is saturated.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .cost_models import (
    DEFAULT_EAGER_MAX_BYTES,
    DEFAULT_SHORT_MAX_BYTES,
    InjectionParams,
    LocalityClass,
    PostalParams,
    ProtocolTable,
)

# Below a nanosecond no real message timing survives; such values are unit
# mistakes (milliseconds pasted as seconds go the other way and are warned
# about at the CLI border).
MIN_SECONDS = 1e-9

# Per-byte cost must move more than this, relative, across ppn groups before
# the injection fit believes the NIC was ever the bottleneck.
FLATNESS_TOLERANCE = 0.10


class FittingError(ValueError):
    """A fit that cannot proceed; the message says what data would fix it."""


@dataclass(frozen=True)
class TimingSample:
    """One timed transfer: n_messages sends of bytes each, took seconds."""

    bytes: float
    seconds: float
    ppn: int | None = None
    n_messages: int = 1
    locality: LocalityClass | None = None

    def __post_init__(self) -> None:
        if not (isinstance(self.bytes, (int, float)) and math.isfinite(self.bytes)
                and self.bytes >= 0):
            raise ValueError(f"bytes must be finite and >= 0, got {self.bytes!r}")
        if not (isinstance(self.seconds, (int, float)) and math.isfinite(self.seconds)):
            raise ValueError(f"seconds must be finite, got {self.seconds!r}")
        if self.seconds < MIN_SECONDS:
            raise ValueError(f"seconds={self.seconds!r} is below {MIN_SECONDS:g}; "
                             "sub-nanosecond timings are nonphysical (wrong units?)")
        if self.ppn is not None and (not isinstance(self.ppn, int) or self.ppn < 1):
            raise ValueError(f"ppn must be an int >= 1, got {self.ppn!r}")
        if not isinstance(self.n_messages, int) or self.n_messages < 1:
            raise ValueError(f"n_messages must be an int >= 1, got {self.n_messages!r}")


@dataclass(frozen=True)
class FitResult:
    """Fitted postal pair with its RMS residual in seconds.

    clamped is set when least squares drove alpha or beta negative and the
    offending parameter was pinned to zero before refitting the other.
    """

    params: PostalParams
    residual: float
    sample_count: int
    clamped: bool = False


def _clamped_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, bool]:
    """Least-squares alpha/beta for y = alpha + beta*x, clamped nonnegative."""
    design = np.column_stack([np.ones_like(x), x])
    (alpha, beta), *_ = np.linalg.lstsq(design, y, rcond=None)
    if alpha >= 0 and beta >= 0:
        return float(alpha), float(beta), False
    if alpha < 0:
        # pin alpha, refit beta through the origin
        beta = max(0.0, float(x @ y) / float(x @ x)) if float(x @ x) > 0 else 0.0
        return 0.0, beta, True
    # pin beta, alpha is then just the mean
    return float(np.mean(y)), 0.0, True


def fit_postal(samples: list[TimingSample]) -> FitResult:
    """Least-squares postal parameters for one link.

    Needs at least two samples at two distinct sizes. Negative fitted
    parameters are clamped to zero and the fit re-run with the clamped
    parameter fixed (flagged on the result).
    """
    if len(samples) < 2:
        raise FittingError(f"need at least 2 samples to fit a line, got {len(samples)}")
    if len({s.bytes for s in samples}) < 2:
        raise FittingError("need samples at two or more distinct sizes to separate "
                           "latency from bandwidth")
    x = np.array([s.bytes for s in samples], dtype=float)
    y = np.array([s.seconds for s in samples], dtype=float)
    alpha, beta, clamped = _clamped_line(x, y)
    residual = float(np.sqrt(np.mean((y - (alpha + beta * x)) ** 2)))
    return FitResult(params=PostalParams(alpha, beta), residual=residual,
                     sample_count=len(samples), clamped=clamped)


def _segment_sse(x: np.ndarray, y: np.ndarray) -> float | None:
    """Squared error of one segment's clamped fit, or None if unfittable."""
    if len(x) < 2 or len(np.unique(x)) < 2:
        return None
    alpha, beta, _ = _clamped_line(x, y)
    return float(np.sum((y - (alpha + beta * x)) ** 2))


def fit_protocol_table(samples: list[TimingSample]) -> ProtocolTable:
    """Segmented three-tier fit with fitted protocol breakpoints.

    Breakpoint candidates are the geometric midpoints between consecutive
    distinct observed sizes; every candidate pair that leaves two usable
    samples in each tier is scored by total squared error and the best
    (smallest breakpoints on ties) wins. Needs at least 6 samples spanning
    three decades of size. If no candidate pair is feasible the single-tier
    fit is replicated across all tiers with default breakpoints (warned).
    """
    if len(samples) < 6:
        raise FittingError(f"need at least 6 samples for a three-tier fit, got {len(samples)}")
    positive = sorted({s.bytes for s in samples if s.bytes > 0})
    if not positive or positive[-1] < 1000 * positive[0]:
        raise FittingError("samples must span at least three decades of message size "
                           "to separate the protocol tiers")

    x = np.array([s.bytes for s in samples], dtype=float)
    y = np.array([s.seconds for s in samples], dtype=float)
    candidates = [math.sqrt(a * b) for a, b in zip(positive, positive[1:])]

    best: tuple[float, float, float] | None = None  # (sse, short_max, eager_max)
    for i, short_max in enumerate(candidates):
        for eager_max in candidates[i + 1:]:
            masks = (x <= short_max,
                     (x > short_max) & (x <= eager_max),
                     x > eager_max)
            sse = 0.0
            for mask in masks:
                part = _segment_sse(x[mask], y[mask])
                if part is None:
                    sse = None
                    break
                sse += part
            # strict < keeps the earliest, i.e. smallest, breakpoint pair on ties
            if sse is not None and (best is None or sse < best[0]):
                best = (sse, short_max, eager_max)

    if best is None:
        warnings.warn("no breakpoint pair leaves two usable samples per tier; "
                      "replicating a single-tier fit across all tiers",
                      stacklevel=2)
        single = fit_postal(samples)
        return ProtocolTable.flat(single.params,
                                  DEFAULT_SHORT_MAX_BYTES, DEFAULT_EAGER_MAX_BYTES)

    _, short_max, eager_max = best
    tiers = []
    for mask in (x <= short_max, (x > short_max) & (x <= eager_max), x > eager_max):
        alpha, beta, _ = _clamped_line(x[mask], y[mask])
        tiers.append(PostalParams(alpha, beta))
    return ProtocolTable(short=tiers[0], eager=tiers[1], rendezvous=tiers[2],
                         short_max_bytes=short_max, eager_max_bytes=eager_max)


def fit_injection(samples: list[TimingSample], alpha: float | None = None) -> InjectionParams:
    """Inverse injection rate from a ppn sweep.

    Models seconds = alpha + bytes*ppn*t_inject on the samples whose per-byte
    cost sits above the flattest ppn group, i.e. where the NIC rather than
    the link bandwidth set the pace. alpha defaults to a postal fit of the
    smallest-ppn group. Errors out when the per-byte cost is flat in ppn
    (within 10%): then nothing in the log ever saturated the NIC.
    """
    if any(s.ppn is None for s in samples):
        raise FittingError("every sample needs a ppn annotation for an injection fit")
    ppn_values = sorted({s.ppn for s in samples})
    if len(ppn_values) < 2:
        raise FittingError("need samples at two or more distinct ppn values")

    if alpha is None:
        lowest = [s for s in samples if s.ppn == ppn_values[0]]
        if len({s.bytes for s in lowest}) < 2:
            raise FittingError("cannot pre-fit alpha: the smallest-ppn group needs two "
                               "distinct sizes (or pass alpha explicitly)")
        alpha = fit_postal(lowest).params.alpha

    per_byte: dict[int, float] = {}
    for ppn in ppn_values:
        rates = [(s.seconds - alpha) / s.bytes
                 for s in samples if s.ppn == ppn and s.bytes > 0]
        if rates:
            per_byte[ppn] = float(np.mean(rates))
    if len(per_byte) < 2:
        raise FittingError("need nonzero-size samples at two or more distinct ppn values")

    flattest = min(per_byte.values())
    if max(per_byte.values()) <= (1 + FLATNESS_TOLERANCE) * flattest:
        raise FittingError("per-byte cost is flat in ppn (within 10%): no sample was "
                           "injection limited; rerun the sweep with more processes")

    limited = {ppn for ppn, rate in per_byte.items()
               if rate > (1 + FLATNESS_TOLERANCE) * flattest}
    x = np.array([s.bytes * s.ppn for s in samples
                  if s.ppn in limited and s.bytes > 0], dtype=float)
    y = np.array([s.seconds - alpha for s in samples
                  if s.ppn in limited and s.bytes > 0], dtype=float)
    t_inject = float(x @ y) / float(x @ x)
    if not (math.isfinite(t_inject) and t_inject > 0):
        raise FittingError(f"injection fit produced t_inject={t_inject!r}; "
                           "the limited samples do not scale with bytes*ppn")
    return InjectionParams(t_inject)
