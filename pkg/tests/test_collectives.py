"""Unit tests for collective cost plans, strategy comparison and sweeps."""

import dataclasses
import math

import numpy as np
import pytest

from heterocomm import (
    CollectiveOp,
    CollectiveSpec,
    InjectionParams,
    LocalityClass,
    MemcpyParams,
    PostalParams,
    ProtocolTable,
    Strategy,
    collective_cost,
    compare_strategies,
    crossover_message_count,
    message_plan,
    sweep,
)

import model_reference


def uniform_matrix(p, size):
    return tuple(tuple(0.0 if i == j else float(size) for j in range(p))
                 for i in range(p))


def test_collective_spec_validation():
    with pytest.raises(ValueError):
        CollectiveSpec(CollectiveOp.ALLTOALL, 0, 64.0)
    with pytest.raises(ValueError):
        CollectiveSpec(CollectiveOp.ALLTOALL, 2, -1.0)
    with pytest.raises(ValueError):
        CollectiveSpec(CollectiveOp.ALLREDUCE, 2, 8.0, reduce_rate=-1.0)
    with pytest.raises(ValueError):
        CollectiveSpec(CollectiveOp.ALLTOALLV, 3, ((0.0, 1.0), (1.0, 0.0)))
    bad_diag = ((1.0, 2.0), (2.0, 0.0))
    with pytest.raises(ValueError):
        CollectiveSpec(CollectiveOp.ALLTOALLV, 2, bad_diag)
    with pytest.raises(ValueError):
        CollectiveSpec(CollectiveOp.ALLTOALLV, 2, ((0.0, -2.0), (2.0, 0.0)))


def test_plan_rejects_more_ranks_than_gpus(two_node):
    spec = CollectiveSpec(CollectiveOp.ALLTOALL, 9, 64.0)  # machine has 8
    with pytest.raises(ValueError):
        message_plan(two_node, spec, Strategy.CUDA_AWARE)


def test_single_gpu_collectives_are_free(summit):
    for op in (CollectiveOp.ALLTOALL, CollectiveOp.ALLREDUCE):
        spec = CollectiveSpec(op, 1, 64.0)
        for strategy in Strategy:
            assert message_plan(summit, spec, strategy) == []
            assert collective_cost(summit, spec, strategy).total == 0.0


def test_alltoall_plan_on_one_node_groups_by_socket(two_node):
    # 4 ranks on one node of 2 sockets x 2 GPUs: ranks alternate sockets, so
    # rank 0 sees one same-socket peer and two cross-socket peers
    one_node = dataclasses.replace(two_node, nodes=1)
    plan = message_plan(one_node, CollectiveSpec(CollectiveOp.ALLTOALL, 4, 64.0),
                        Strategy.CUDA_AWARE)
    by_locality = {group.locality: group.n_messages for group in plan}
    assert by_locality == {LocalityClass.ON_SOCKET: 1, LocalityClass.ON_NODE: 2}
    assert all(group.bytes_per_message == 64.0 for group in plan)


def test_ranks_spread_over_nodes_before_filling_sockets(two_node):
    # 2 ranks on a 2-node machine land on different nodes
    plan = message_plan(two_node, CollectiveSpec(CollectiveOp.ALLTOALL, 2, 64.0),
                        Strategy.CUDA_AWARE)
    assert [group.locality for group in plan] == [LocalityClass.OFF_NODE]


def test_allreduce_with_one_gpu_per_node_is_all_off_node(two_node):
    sparse = dataclasses.replace(two_node, nodes=8)
    plan = message_plan(sparse, CollectiveSpec(CollectiveOp.ALLREDUCE, 8, 64.0),
                        Strategy.CUDA_AWARE)
    assert len(plan) == 3  # log2(8) exchanges
    assert all(group.locality is LocalityClass.OFF_NODE for group in plan)
    assert all(group.reduces for group in plan)


def test_alltoall_split_strategies_share_destinations_across_cores(two_node):
    # 8 ranks, 2 cores per GPU: 7 destinations -> 4 for the busiest core,
    # with per-message bytes unchanged
    spec = CollectiveSpec(CollectiveOp.ALLTOALL, 8, 1000.0)
    whole = message_plan(two_node, spec, Strategy.THREE_STEP)
    assert sum(group.n_messages for group in whole) == 7
    for strategy in (Strategy.EXTRA_MSG, Strategy.DUP_DEVPTR):
        split = message_plan(two_node, spec, strategy)
        assert sum(group.n_messages for group in split) == math.ceil(7 / 2)
        assert all(group.bytes_per_message == 1000.0 for group in split)


def test_allreduce_split_strategies_divide_bytes_not_steps(two_node):
    spec = CollectiveSpec(CollectiveOp.ALLREDUCE, 8, 4096.0)
    whole = message_plan(two_node, spec, Strategy.THREE_STEP)
    split = message_plan(two_node, spec, Strategy.EXTRA_MSG)
    assert len(whole) == len(split) == 3
    for one, half in zip(whole, split):
        assert half.bytes_per_message == one.bytes_per_message / 2
        assert half.n_messages == one.n_messages


def test_allreduce_large_sizes_use_halving_then_doubling(two_node):
    s = 2 ** 20
    plan = message_plan(two_node, CollectiveSpec(CollectiveOp.ALLREDUCE, 4, float(s)),
                        Strategy.CUDA_AWARE)
    sizes = [group.bytes_per_message for group in plan]
    assert sizes == [s / 2, s / 4, s / 4, s / 2]
    assert [group.reduces for group in plan] == [True, True, False, False]
    # total traffic for p = 4: 2 * s * (p - 1) / p
    assert math.fsum(sizes) == pytest.approx(2 * s * 3 / 4, rel=1e-15)


def test_empty_alltoallv_plan_costs_nothing(summit):
    spec = CollectiveSpec(CollectiveOp.ALLTOALLV, 3, uniform_matrix(3, 0.0))
    for strategy in Strategy:
        assert message_plan(summit, spec, strategy) == []
        assert collective_cost(summit, spec, strategy).total == 0.0


def test_alltoallv_prices_the_busiest_senders_row(two_node):
    # rank 2 sends the most bytes; it sits at node 0 socket 1, rank 6 shares
    # that socket, and rank 3 lives on node 1
    p = 8
    matrix = [[0.0] * p for _ in range(p)]
    matrix[1][0] = 10.0
    matrix[2][6] = 500.0
    matrix[2][3] = 600.0
    spec = CollectiveSpec(CollectiveOp.ALLTOALLV, p,
                          tuple(tuple(row) for row in matrix))
    plan = message_plan(two_node, spec, Strategy.CUDA_AWARE)
    got = {(group.locality, group.bytes_per_message, group.n_messages)
           for group in plan}
    assert got == {(LocalityClass.ON_SOCKET, 500.0, 1),
                   (LocalityClass.OFF_NODE, 600.0, 1)}


def test_alltoallv_busiest_tie_breaks_to_more_messages_then_lowest_rank(two_node):
    p = 4
    matrix = [[0.0] * p for _ in range(p)]
    matrix[1][0] = 300.0               # one message, 300 bytes
    matrix[3][0] = matrix[3][1] = 150.0  # two messages, 300 bytes
    spec = CollectiveSpec(CollectiveOp.ALLTOALLV, p,
                          tuple(tuple(row) for row in matrix))
    plan = message_plan(two_node, spec, Strategy.THREE_STEP)
    assert sum(group.n_messages for group in plan) == 2
    assert {group.bytes_per_message for group in plan} == {150.0}


def test_collective_cost_matches_brute_force_enumeration(two_node):
    rng = np.random.default_rng(42)
    sizes = [64.0, 4096.0, 1.0e6]
    strategies = [(Strategy.CUDA_AWARE, "cuda-aware"), (Strategy.THREE_STEP, "3-step"),
                  (Strategy.EXTRA_MSG, "extra-msg"), (Strategy.DUP_DEVPTR, "dup-devptr")]
    for p in range(2, 9):
        matrix = rng.uniform(1.0, 1e5, size=(p, p))
        matrix[rng.uniform(size=(p, p)) < 0.2] = 0.0
        np.fill_diagonal(matrix, 0.0)
        vmatrix = tuple(tuple(float(v) for v in row) for row in matrix)
        for size in sizes:
            cases = [
                (CollectiveSpec(CollectiveOp.ALLTOALL, p, size), "alltoall", size),
                (CollectiveSpec(CollectiveOp.ALLTOALLV, p, vmatrix), "alltoallv", vmatrix),
                (CollectiveSpec(CollectiveOp.ALLREDUCE, p, size), "allreduce", size),
            ]
            for spec, op_label, payload in cases:
                for strategy, strategy_label in strategies:
                    got = collective_cost(two_node, spec, strategy).total
                    want = model_reference.brute_force_cost(
                        two_node, op_label, p, payload, strategy_label)
                    assert got == pytest.approx(want, rel=1e-9), \
                        (op_label, strategy_label, p, size)


def test_reduce_rate_charges_only_reduction_steps(two_node):
    rate = 1.0e-10
    base = CollectiveSpec(CollectiveOp.ALLREDUCE, 4, 4096.0)
    charged = CollectiveSpec(CollectiveOp.ALLREDUCE, 4, 4096.0, reduce_rate=rate)
    for strategy, divisor in ((Strategy.CUDA_AWARE, 1), (Strategy.DUP_DEVPTR, 2)):
        plain = collective_cost(two_node, base, strategy)
        with_reduce = collective_cost(two_node, charged, strategy)
        reduced_bytes = 2 * 4096.0 / divisor  # 2 doubling steps of the payload
        assert with_reduce.phase("reduce") == pytest.approx(rate * reduced_bytes, rel=1e-12)
        assert with_reduce.total - plain.total == pytest.approx(
            rate * reduced_bytes, rel=1e-9)
    # a brute-force check with the reduction charge included
    got = collective_cost(two_node, charged, Strategy.CUDA_AWARE).total
    want = model_reference.brute_force_cost(two_node, "allreduce", 4, 4096.0,
                                            "cuda-aware", reduce_rate=rate)
    assert got == pytest.approx(want, rel=1e-9)
    # alltoall never reduces, so the rate must change nothing
    a2a = CollectiveSpec(CollectiveOp.ALLTOALL, 4, 4096.0, reduce_rate=rate)
    a2a_plain = CollectiveSpec(CollectiveOp.ALLTOALL, 4, 4096.0)
    assert collective_cost(two_node, a2a, Strategy.CUDA_AWARE).total == \
        collective_cost(two_node, a2a_plain, Strategy.CUDA_AWARE).total


def test_compare_strategies_reports_consistent_speedups(two_node):
    report = compare_strategies(two_node, CollectiveSpec(CollectiveOp.ALLTOALL, 8, 4096.0))
    assert set(report.breakdowns) == set(Strategy)
    assert report.speedup_vs_cuda_aware[Strategy.CUDA_AWARE] == 1.0
    base = report.breakdowns[Strategy.CUDA_AWARE].total
    for strategy in Strategy:
        total = report.breakdowns[strategy].total
        assert report.speedup_vs_cuda_aware[strategy] == pytest.approx(base / total)
    cheapest_total = min(bd.total for bd in report.breakdowns.values())
    assert report.breakdowns[report.cheapest].total == cheapest_total


def test_compare_strategies_ties_fall_to_declaration_order(two_node):
    # one rank: every strategy costs exactly zero
    report = compare_strategies(two_node, CollectiveSpec(CollectiveOp.ALLTOALL, 1, 64.0))
    assert report.cheapest is Strategy.CUDA_AWARE
    assert all(speedup == 1.0 for speedup in report.speedup_vs_cuda_aware.values())


def scale_machine(machine, k):
    def pair(p):
        return PostalParams(p.alpha * k, p.beta * k)

    def table(t):
        return ProtocolTable(pair(t.short), pair(t.eager), pair(t.rendezvous),
                             t.short_max_bytes, t.eager_max_bytes)

    return dataclasses.replace(
        machine,
        gpu_tables={loc: table(t) for loc, t in machine.gpu_tables.items()},
        cpu_tables={loc: table(t) for loc, t in machine.cpu_tables.items()},
        memcpy_tables={key: MemcpyParams(key[0], key[1], pair(entry.params))
                       for key, entry in machine.memcpy_tables.items()},
        injection={kind: InjectionParams(entry.t_inject * k)
                   for kind, entry in machine.injection.items()},
    )


def test_cheapest_strategy_is_invariant_under_uniform_scaling(two_node):
    # every cost term is one parameter times sizes, so scaling all parameters
    # scales every total and cannot change the argmin
    scaled = scale_machine(two_node, 8.0)  # power of two: exact in floats
    for op in (CollectiveOp.ALLTOALL, CollectiveOp.ALLREDUCE):
        for p in (2, 5, 8):
            for size in (64.0, 4096.0, 1.0e6):
                spec = CollectiveSpec(op, p, size)
                base = compare_strategies(two_node, spec)
                big = compare_strategies(scaled, spec)
                assert big.cheapest is base.cheapest
                for strategy in Strategy:
                    assert big.breakdowns[strategy].total == \
                        8.0 * base.breakdowns[strategy].total


def test_costs_never_decrease_with_size_on_continuous_tiers(continuous):
    sizes = [float(2 ** k) for k in range(0, 31)]
    sizes += [511.0, 512.0, 513.0, 65535.0]
    sizes = sorted(set(sizes))
    for op in (CollectiveOp.ALLTOALL, CollectiveOp.ALLTOALLV):
        for strategy in Strategy:
            previous = -1.0
            for size in sizes:
                payload = uniform_matrix(6, size) if op is CollectiveOp.ALLTOALLV else size
                total = collective_cost(continuous, CollectiveSpec(op, 6, payload),
                                        strategy).total
                assert total >= previous, (op, strategy, size)
                previous = total
    # the reduction collective switches algorithms at the eager breakpoint,
    # so monotonicity holds within each algorithm's size range
    doubling = [s for s in sizes if s < 65536]
    halving = [s for s in sizes if s >= 65536]
    for strategy in Strategy:
        for regime in (doubling, halving):
            previous = -1.0
            for size in regime:
                total = collective_cost(
                    continuous, CollectiveSpec(CollectiveOp.ALLREDUCE, 6, size),
                    strategy).total
                assert total >= previous, (strategy, size)
                previous = total


def test_extra_msg_beats_dup_devptr_only_when_shared_copies_contend():
    fair = model_reference.make_two_node(contention_factor=1.0)
    contended = model_reference.make_two_node(contention_factor=1.5)
    spec = CollectiveSpec(CollectiveOp.ALLTOALLV, 8, uniform_matrix(8, 64.0))
    fair_report = compare_strategies(fair, spec)
    assert fair_report.breakdowns[Strategy.DUP_DEVPTR].total <= \
        fair_report.breakdowns[Strategy.EXTRA_MSG].total
    contended_report = compare_strategies(contended, spec)
    assert contended_report.breakdowns[Strategy.EXTRA_MSG].total < \
        contended_report.breakdowns[Strategy.DUP_DEVPTR].total


def test_crossover_matches_a_direct_scan(summit):
    from heterocomm import Distribution, TransferSpec, gpudirect_path_time, three_step_time
    for size in (1e3, 1e5):
        expected = None
        for n in range(1, 65):
            spec = TransferSpec(n, size, ppn=1)
            staged = three_step_time(summit, spec, Distribution.SINGLE_CPU).total
            direct = gpudirect_path_time(summit, LocalityClass.OFF_NODE, spec).total
            if staged < direct:
                expected = n
                break
        assert crossover_message_count(summit, size) == expected
    assert crossover_message_count(summit, 1e3) == 8


def test_crossover_none_when_staging_never_wins(summit):
    # a single tiny message cannot amortize two extra copies
    assert crossover_message_count(summit, 8.0, n_max=1) is None


def test_duplicate_payload_lowers_the_crossover(summit):
    distinct = crossover_message_count(summit, 1e6, dedup_fraction=0.0)
    duplicate = crossover_message_count(summit, 1e6, dedup_fraction=1.0)
    assert duplicate is not None and distinct is not None
    assert duplicate <= distinct


def test_crossover_validation(summit):
    with pytest.raises(ValueError):
        crossover_message_count(summit, 0.0)
    with pytest.raises(ValueError):
        crossover_message_count(summit, 1e3, n_max=0)
    with pytest.raises(ValueError):
        crossover_message_count(summit, 1e3, dedup_fraction=2.0)


def test_sweep_rows_are_size_major_with_one_cheapest_per_size(two_node):
    sizes = [64, 4096]
    rows = sweep(two_node, CollectiveOp.ALLTOALL, 8, sizes)
    assert len(rows) == len(sizes) * len(Strategy)
    assert [row.size_bytes for row in rows] == [64, 64, 64, 64, 4096, 4096, 4096, 4096]
    assert [row.strategy for row in rows[:4]] == list(Strategy)
    for size in sizes:
        flags = [row.cheapest for row in rows if row.size_bytes == size]
        assert sum(flags) == 1
    report = compare_strategies(two_node, CollectiveSpec(CollectiveOp.ALLTOALL, 8, 64.0))
    assert rows[0].seconds == report.breakdowns[Strategy.CUDA_AWARE].total


def test_sweep_alltoallv_uses_a_uniform_matrix(two_node):
    rows = sweep(two_node, CollectiveOp.ALLTOALLV, 4, [128.0])
    spec = CollectiveSpec(CollectiveOp.ALLTOALLV, 4, uniform_matrix(4, 128.0))
    for row in rows:
        assert row.seconds == collective_cost(two_node, spec, row.strategy).total


def test_sweep_rejects_an_empty_size_list(two_node):
    with pytest.raises(ValueError):
        sweep(two_node, CollectiveOp.ALLTOALL, 4, [])
