import itertools
import random
from fractions import Fraction

import pytest

from lacg.frontier import INF, build_frontiers
from lacg.instance import END, START, compute_la_neighbors, random_instance
from lacg.master import build_beta
from lacg.oracle import brute_arc_cost, in_family, oracle_enumerate, oracle_family
from lacg.pricing import (
    Partition,
    RelaxedNode,
    compute_eta,
    edge_cost,
    family_allows,
    find_violation,
    format_trace,
    init_partition,
    initial_cell,
    price,
    project,
    route_positions,
    sink_node,
    source_node,
    split_node,
)

from conftest import toy_instance, trace_fixture, trace_mismatches


def int_duals(inst, rng, hi=1500):
    return {u: rng.randint(0, hi) for u in inst.ids}


# -- eta ----------------------------------------------------------------------


def test_eta_single_arc():
    # one customer, demand 3; its depot arc has c - pi = -6
    inst = toy_instance({1: (150, 0)}, {(-1, 1): 10, (1, -2): 4}, demand={1: 3})
    table = build_frontiers(inst, 0)
    assert compute_eta({1: 10}, table) == 2
    assert compute_eta({1: 0}, table) == 0
    assert compute_eta({1: 4}, table) == 0


def test_eta_bounds_min_route_cost():
    rng = random.Random(3)
    for seed in range(8):
        inst = random_instance(6, seed)
        table = build_frontiers(inst, 3)
        duals = int_duals(inst, rng)
        eta = compute_eta(duals, table)
        _, best = oracle_enumerate(inst, duals)
        assert eta >= 0
        assert -eta * inst.vehicle_capacity <= best


def test_eta_float_matches_exact():
    inst = random_instance(6, 1)
    table = build_frontiers(inst, 3)
    duals = int_duals(inst, random.Random(0))
    exact = compute_eta(duals, table)
    approx = compute_eta({u: float(v) for u, v in duals.items()}, table)
    assert approx == pytest.approx(float(exact))


# -- cells and edges ------------------------------------------------------------


def test_init_partition():
    inst = random_instance(3, 2)
    part = init_partition(inst, build_frontiers(inst, 1))
    assert len(part.nodes) == 5
    for u in inst.ids:
        (gid,) = part.cells[u]
        g = part.nodes[gid]
        assert g.must == 0 and g.may == inst.all_mask & ~(1 << u)
        assert (g.d_lo, g.d_hi, g.t_lo, g.t_hi) == (inst.demand[u], inst.vehicle_capacity, inst.late[u], inst.early[u])
    part.check_invariants()
    src, snk = part.nodes[part.source], part.nodes[part.sink]
    assert src == source_node(inst) and snk == sink_node(inst)
    assert snk.may == inst.all_mask


def test_edge_cost_source_to_customer():
    inst = random_instance(4, 3)
    table = build_frontiers(inst, 2)
    duals = {u: 10 * u for u in inst.ids}
    eta = Fraction(3, 2)
    src = source_node(inst)
    for u in inst.ids:
        g = initial_cell(inst, u)
        cost, arc, order = edge_cost(src, g, duals, eta, table)
        assert arc.key == (START, u, 0)
        assert order == (START, u)
        # the depot arc covers nothing, so no dual; d ranges down to 0
        assert cost == inst.travel[START][u]


def test_edge_cost_demand_incompatible():
    inst = random_instance(4, 3)
    table = build_frontiers(inst, 2)
    f = initial_cell(inst, 1)._replace(d_hi=inst.demand[1] + 1, d_lo=inst.demand[1])
    g = initial_cell(inst, 2)._replace(d_lo=inst.vehicle_capacity)
    assert edge_cost(f, g, {u: 1 for u in inst.ids}, 0, table)[0] == INF


def _subsets(lo_mask, hi_mask, ids):
    free = [u for u in ids if hi_mask >> u & 1 and not lo_mask >> u & 1]
    for r in range(len(free) + 1):
        for extra in itertools.combinations(free, r):
            m = lo_mask
            for u in extra:
                m |= 1 << u
            yield m


def _exact_edge_min(inst, table, f, g, duals, eta):
    """Enumerate exact states of both cells: every demand pair, every visited
    set of ``f`` and the loosest time pair, priced by the brute-force arc cost."""
    best = INF
    ids = list(inst.ids)
    fd = range(f.d_lo, f.d_hi + 1)
    gd = [0] if g.cust == END else range(g.d_lo, g.d_hi + 1)
    for arc in table.by_pair.get((f.cust, g.cust), ()):
        if f.d_lo - arc.demand > g.d_hi:
            continue  # no waste forced on every state pair
        # arc cost only grows as t1 falls or t2 rises, so the corner is the minimum
        c = brute_arc_cost(inst, arc.key, f.t_hi, g.t_lo)
        if c is None:
            continue
        pi = sum(duals[w] for w in arc.key.intermediates) + (duals[arc.first] if arc.first > 0 else 0)
        vbit = 1 << g.cust if g.cust > 0 else 0
        ok_sets = any(
            not (mi & (arc.cover | vbit)) and g.must & ~(mi | arc.cover) == 0 and (mi | arc.cover) & ~g.may == 0
            for mi in _subsets(f.must, f.may, ids)
        )
        if not ok_sets:
            continue
        for di in fd:
            for dj in gd:
                if di - arc.demand < dj:
                    continue
                best = min(best, eta * (di - dj) - pi + c)
    return best


def test_edge_cost_matches_state_oracle():
    rng = random.Random(7)
    for seed in range(6):
        inst = random_instance(4, seed, capacity=20)
        table = build_frontiers(inst, 2)
        duals = int_duals(inst, rng, 800)
        # refine a partition so cells are not all trivial
        _, part = price(inst, table, duals, alpha=0)
        eta = compute_eta(duals, table)
        nodes = list(part.nodes.values())
        for f in nodes:
            if f.cust == END:
                continue
            for g in nodes:
                if g.cust == START or g.cust == f.cust:
                    continue
                got = edge_cost(f, g, duals, eta, table)[0]
                assert got == _exact_edge_min(inst, table, f, g, duals, eta)


# -- paths and violations -----------------------------------------------------


def test_q_prefix_counts():
    customers, q = route_positions([(-1, 8), (8, 3, 5, 6, 7), (7, 9, -2)])
    assert customers == (-1, 8, 3, 5, 6, 7, 9, -2)
    assert q == [0, 0, 4, 6]


def test_single_customer_path_cost():
    inst = random_instance(1, 4)
    table = build_frontiers(inst, 0)
    duals = {1: 37}
    res, _ = price(inst, table, duals, alpha=0)
    assert res.route == (START, 1, END)
    cost = inst.travel[START][1] + inst.travel[1][END]
    assert res.lb == cost - 37 == res.reduced_cost


def test_no_route_when_unreachable():
    inst = toy_instance({1: (100, 90)}, {(-1, 1): 500, (1, -2): 500}, horizon=200)
    table = build_frontiers(inst, 0)
    res, _ = price(inst, table, {1: 0}, alpha=0)
    assert res.status == "no_route" and res.route is None


def _wide_pair():
    return toy_instance({1: (190, 0), 2: (190, 0)},
                        {(-1, 1): 5, (-1, 2): 5, (1, 2): 5, (2, 1): 5, (1, -2): 5, (2, -2): 5},
                        demand={1: 2, 2: 3}, capacity=20)


def test_case4_on_repeated_customer():
    inst = _wide_pair()
    cap = inst.vehicle_capacity
    g1, g2, g3 = (initial_cell(inst, u) for u in (1, 2, 1))
    nodes = [source_node(inst), g1, g2, g3, sink_node(inst)]
    customers, q = route_positions([(-1, 1), (1, 2), (2, 1), (1, -2)])
    assert customers == (-1, 1, 2, 1, -2) and q == [0, 0, 1, 2, 3]
    # demand balances, so only the repeat of customer 1 is wrong
    d = [0, 2, 3, cap - 5]
    viol = find_violation(inst, nodes, d, 7, customers, q)
    assert viol is not None and viol.case == 4 and viol.value == 1 and viol.positions == (2,)
    a, b = split_node(g2, 4, 1)
    assert a.must == 0b10 and not b.may & 0b10
    assert find_violation(inst, nodes, d, 7, customers, q, family=True) is None


def test_demand_violation_is_case_1():
    inst = _wide_pair()
    nodes = [source_node(inst), initial_cell(inst, 1), sink_node(inst)]
    customers, q = route_positions([(-1, 1), (1, -2)])
    # the relaxed path only pays for 2 of the 20 units it claims
    viol = find_violation(inst, nodes, [0, 2], 2, customers, q)
    assert viol.case == 1 and viol.positions == (1,) and viol.value == 20


def test_split_examples():
    g = RelaxedNode(3, 10, 50, 0, 100, 0, 0b110)
    a, b = split_node(g, 1, 30)
    assert (a.d_lo, a.d_hi, b.d_lo, b.d_hi) == (10, 29, 30, 50)
    a, b = split_node(g, 2, 30)
    assert (a.d_lo, a.d_hi, b.d_lo, b.d_hi) == (31, 50, 10, 30)
    a, b = split_node(g, 3, 60)
    assert (a.t_lo, a.t_hi, b.t_lo, b.t_hi) == (61, 100, 0, 60)
    a, b = split_node(g, 4, 1)
    assert (a.must, a.may, b.must, b.may) == (0b10, 0b110, 0, 0b100)
    with pytest.raises(AssertionError):
        split_node(g, 1, 10)
    with pytest.raises(AssertionError):
        split_node(g, 3, 100)


def test_projection():
    inst = toy_instance({u: (190, 0) for u in (1, 2, 3)},
                        {(u, v): 5 for u in (-1, 1, 2, 3) for v in (1, 2, 3, -2) if u != v})
    assert project(inst, (-1, 2, 3, 2, -2)) == (-1, 2, 3, -2)


# -- price ----------------------------------------------------------------------


def test_zero_duals():
    inst = random_instance(5, 2)
    res, _ = price(inst, build_frontiers(inst, 2), {u: 0 for u in inst.ids}, alpha=0)
    assert res.lb >= 0 and res.reduced_cost >= 0


@pytest.mark.parametrize("k", [0, 2, 4])
def test_exact_against_enumeration(k):
    rng = random.Random(k)
    for seed in range(10):
        inst = random_instance(4 + seed % 4, seed)
        table = build_frontiers(inst, k)
        cache = None
        for _ in range(4):
            duals = int_duals(inst, rng)
            res, cache = price(inst, table, duals, cache, alpha=0)
            _, best = oracle_enumerate(inst, duals)
            assert res.reduced_cost == best
            assert all(lb <= best for lb in res.lb_history)
            assert res.lb == res.reduced_cost  # path cost = rc + eta * d0 at termination
            assert inst.route_feasible(res.route)
            cache.check_invariants()


def test_lb_non_decreasing_within_call():
    inst = random_instance(7, 3)
    res, _ = price(inst, build_frontiers(inst, 3), int_duals(inst, random.Random(2)), alpha=0)
    assert res.lb_history == sorted(res.lb_history)


def test_early_exit_route_is_negative():
    rng = random.Random(5)
    for seed in range(10):
        inst = random_instance(7, seed)
        duals = int_duals(inst, rng, 3000)
        res, _ = price(inst, build_frontiers(inst, 3), duals, alpha=0.2)
        if res.status == "early":
            assert res.reduced_cost < 0 and res.reduced_cost < 0.2 * res.lb
            assert inst.route_feasible(res.route)


def test_float_duals():
    rng = random.Random(9)
    inst = random_instance(6, 9)
    table = build_frontiers(inst, 3)
    for _ in range(5):
        duals = {u: rng.uniform(0, 1500) for u in inst.ids}
        res, _ = price(inst, table, duals, alpha=0)
        assert res.reduced_cost == pytest.approx(oracle_enumerate(inst, duals)[1], abs=1e-6)
        assert res.min_weight >= 0


def test_exact_arithmetic_flag_gives_rationals():
    inst = random_instance(5, 1)
    duals = {u: 100.5 for u in inst.ids}
    res, _ = price(inst, build_frontiers(inst, 2), duals, alpha=0, exact_arithmetic=True)
    assert isinstance(res.lb, Fraction)
    assert res.reduced_cost == oracle_enumerate(inst, {u: Fraction(201, 2) for u in inst.ids})[1]


def test_family_mode_respects_beta():
    rng = random.Random(11)
    for seed in range(8):
        inst = random_instance(6, seed)
        nbrs = compute_la_neighbors(inst, 3)
        table = build_frontiers(inst, nbrs)
        duals = int_duals(inst, rng)
        seed_route, _ = oracle_enumerate(inst, duals)
        beta = build_beta(seed_route, inst)
        res, part = price(inst, table, duals, beta=beta, trace=True)
        _, best = oracle_family(inst, duals, nbrs, beta)
        assert res.reduced_cost == best
        assert in_family(res.route, nbrs, beta)
        assert all(family_allows(beta, a) for a in res.path_arcs)
        assert all(family_allows(beta, a) for a in part.arcs)
        assert all(c != 4 for c in (t["case"] for t in res.trace))


def test_seeded_partition_same_answer():
    rng = random.Random(4)
    inst = random_instance(7, 4)
    table = build_frontiers(inst, 3)
    duals = int_duals(inst, rng)
    _, exact_part = price(inst, table, duals, alpha=0)
    beta = build_beta(oracle_enumerate(inst, duals)[0], inst)
    plain, _ = price(inst, table, duals, beta=beta)
    seeded, part = price(inst, table, duals, Partition(inst, table, beta, seed=exact_part), beta=beta)
    assert plain.reduced_cost == seeded.reduced_cost
    part.check_invariants()


def test_trace_lines():
    inst = random_instance(5, 6)
    res, _ = price(inst, build_frontiers(inst, 2), int_duals(inst, random.Random(1)), alpha=0, trace=True)
    lines = format_trace(res)
    assert len(lines) == res.iterations
    assert lines[-1].endswith("stop exact")


def test_oracle_single_and_forced_order():
    inst = random_instance(1, 0)
    r, rc = oracle_enumerate(inst, {1: 5})
    assert r == (START, 1, END) and rc == inst.route_cost(r) - 5
    # 2 must precede 1: 1's window is late, 2's early
    two = toy_instance({1: (50, 10), 2: (190, 150)},
                       {(-1, 1): 20, (-1, 2): 20, (1, -2): 5, (2, -2): 5, (1, 2): 10, (2, 1): 10})
    r, _ = oracle_enumerate(two, {1: 100, 2: 100})
    assert r == (START, 2, 1, END)


def test_hand_worked_trace():
    inst, duals, spec = trace_fixture()
    res, _ = price(inst, build_frontiers(inst, spec["la_neighbors"]), duals, alpha=0, trace=True)
    assert res.eta == spec["eta"]
    assert trace_mismatches(res, spec) == []
