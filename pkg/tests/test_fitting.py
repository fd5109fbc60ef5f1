"""Unit tests for parameter recovery from timing logs."""

import math

import numpy as np
import pytest

from heterocomm import (
    FittingError,
    LocalityClass,
    TimingSample,
    builtin_machine,
    fit_injection,
    fit_postal,
    fit_protocol_table,
    select_protocol,
)


def line_samples(alpha, beta, sizes, **kwargs):
    return [TimingSample(bytes=float(s), seconds=alpha + beta * float(s), **kwargs)
            for s in sizes]


def test_timing_sample_validation():
    with pytest.raises(ValueError):
        TimingSample(bytes=-1.0, seconds=1e-6)
    with pytest.raises(ValueError):
        TimingSample(bytes=10.0, seconds=float("inf"))
    with pytest.raises(ValueError):
        TimingSample(bytes=10.0, seconds=1e-10)  # sub-nanosecond: wrong units
    with pytest.raises(ValueError):
        TimingSample(bytes=10.0, seconds=1e-6, ppn=0)
    with pytest.raises(ValueError):
        TimingSample(bytes=10.0, seconds=1e-6, n_messages=0)
    ok = TimingSample(bytes=10.0, seconds=1e-6, locality=LocalityClass.ON_NODE)
    assert ok.n_messages == 1 and ok.ppn is None


def test_fit_postal_recovers_a_noiseless_line():
    rng = np.random.default_rng(7)
    for _ in range(20):
        alpha = float(rng.uniform(1e-7, 1e-4))
        beta = float(rng.uniform(1e-12, 1e-8))
        sizes = np.geomspace(1, 1e7, 12)
        result = fit_postal(line_samples(alpha, beta, sizes))
        assert result.params.alpha == pytest.approx(alpha, rel=1e-9)
        assert result.params.beta == pytest.approx(beta, rel=1e-9)
        assert result.residual < 1e-12
        assert result.sample_count == 12
        assert not result.clamped


def test_fit_postal_clamps_a_negative_intercept():
    samples = [TimingSample(1e6, 0.01), TimingSample(2e6, 0.03)]
    result = fit_postal(samples)
    assert result.clamped
    assert result.params.alpha == 0.0
    # refit through the origin: sum(xy)/sum(xx)
    assert result.params.beta == pytest.approx(7e4 / 5e12, rel=1e-12)


def test_fit_postal_clamps_a_negative_slope():
    samples = [TimingSample(1e3, 0.02), TimingSample(1e6, 0.01)]
    result = fit_postal(samples)
    assert result.clamped
    assert result.params.beta == 0.0
    assert result.params.alpha == pytest.approx(0.015, rel=1e-12)


def test_fit_postal_needs_two_distinct_sizes():
    with pytest.raises(FittingError):
        fit_postal([TimingSample(64.0, 1e-6)])
    with pytest.raises(FittingError):
        fit_postal([TimingSample(64.0, 1e-6), TimingSample(64.0, 2e-6)])


def test_fit_protocol_table_recovers_tiers_and_breakpoints():
    table = builtin_machine("summit").cpu_tables[LocalityClass.ON_SOCKET]
    sizes = [float(2 ** k) for k in range(0, 24)]
    samples = [TimingSample(s, select_protocol(table, s).alpha
                            + select_protocol(table, s).beta * s)
               for s in sizes]
    fitted = fit_protocol_table(samples)
    for tier in ("short", "eager", "rendezvous"):
        true = getattr(table, tier)
        got = getattr(fitted, tier)
        assert got.alpha == pytest.approx(true.alpha, rel=1e-9)
        assert got.beta == pytest.approx(true.beta, rel=1e-9)
    # fitted breakpoints are geometric midpoints that induce the same tiers
    assert 512 < fitted.short_max_bytes < 1024
    assert 65536 < fitted.eager_max_bytes < 131072
    assert fitted.short_max_bytes == pytest.approx(math.sqrt(512 * 1024), rel=1e-12)
    assert fitted.eager_max_bytes == pytest.approx(math.sqrt(65536 * 131072), rel=1e-12)


def test_fit_protocol_table_needs_enough_samples_and_span():
    samples = line_samples(1e-6, 1e-10, [1, 2, 4, 8, 16])
    with pytest.raises(FittingError):
        fit_protocol_table(samples)  # only 5 samples
    narrow = line_samples(1e-6, 1e-10, [100, 200, 300, 400, 500, 600])
    with pytest.raises(FittingError):
        fit_protocol_table(narrow)  # spans less than three decades


def test_fit_protocol_table_falls_back_to_a_single_tier():
    # two distinct sizes only: no candidate pair leaves two usable segments
    samples = line_samples(2e-6, 3e-10, [1.0, 1.0, 1.0, 2000.0, 2000.0, 2000.0])
    with pytest.warns(UserWarning, match="single-tier"):
        table = fit_protocol_table(samples)
    assert table.short == table.eager == table.rendezvous
    assert table.short.alpha == pytest.approx(2e-6, rel=1e-9)
    assert table.short.beta == pytest.approx(3e-10, rel=1e-9)
    assert table.short_max_bytes == 512
    assert table.eager_max_bytes == 65536


def injection_sweep(alpha, beta, t_inject, ppn_values, sizes):
    samples = []
    for ppn in ppn_values:
        rate = max(beta, ppn * t_inject)
        samples += [TimingSample(float(s), alpha + float(s) * rate, ppn=ppn)
                    for s in sizes]
    return samples


def test_fit_injection_recovers_the_inverse_rate():
    alpha, beta, t_inject = 6.56e-6, 8.51e-11, 3.0e-11
    samples = injection_sweep(alpha, beta, t_inject,
                              [1, 2, 4, 8, 16, 32], np.geomspace(1e5, 1e7, 5))
    fitted = fit_injection(samples)
    assert fitted.t_inject == pytest.approx(t_inject, rel=1e-9)


def test_fit_injection_accepts_an_explicit_alpha():
    alpha, beta, t_inject = 6.56e-6, 8.51e-11, 3.0e-11
    # single size per ppn group: the alpha pre-fit would fail
    samples = injection_sweep(alpha, beta, t_inject, [1, 4, 8], [1e6])
    with pytest.raises(FittingError):
        fit_injection(samples)
    fitted = fit_injection(samples, alpha=alpha)
    assert fitted.t_inject == pytest.approx(t_inject, rel=1e-9)


def test_fit_injection_requires_ppn_annotations_and_spread():
    with pytest.raises(FittingError):
        fit_injection([TimingSample(1e6, 1e-3), TimingSample(1e6, 2e-3, ppn=2)])
    single_ppn = injection_sweep(1e-6, 1e-10, 5e-11, [4], [1e5, 1e6])
    with pytest.raises(FittingError):
        fit_injection(single_ppn)


def test_fit_injection_rejects_a_flat_sweep():
    # beta dominates at every ppn: nothing was ever injection limited
    samples = injection_sweep(1e-6, 1e-9, 1e-12, [1, 2, 4, 8],
                              np.geomspace(1e5, 1e7, 4))
    with pytest.raises(FittingError, match="flat"):
        fit_injection(samples)
