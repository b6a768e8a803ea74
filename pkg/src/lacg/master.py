"""Restricted master problems and the two column-generation drivers.

``run_standard_cg`` keeps explicit route columns.  ``run_gm`` keeps one
multigraph per family (a generated route plus the ordering derived from it)
over shared pools of ``(u, d, t)`` nodes and LA-arcs, and optimizes flows
over all of them at once.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

from .frontier import INF, FrontierTable, LAArcKey, build_frontiers
from .instance import END, START, Instance, compute_la_neighbors
from .lp import IncrementalLP, SparseModel, solve_ilp, solve_lp
from .pricing import EPS, Partition, PricingResult, family_allows, format_trace, price
from .report import RunReport

log = logging.getLogger(__name__)


class MasterError(RuntimeError):
    pass


@dataclass
class Config:
    la_neighbors: int = 6
    alpha: float = 0.2
    epsilon: float = EPS
    max_seconds: float | None = None
    max_iterations: int | None = None
    prune: bool = False
    backend: str | None = None
    exact_arithmetic: bool = False
    ilp: bool = True
    ilp_time_limit: float | None = 600.0
    bound_exit: bool = True
    trace: bool = False
    seed_families: str = "exact"  # start new family partitions from: "exact", "family" (latest) or "none"


@dataclass
class MasterSolution:
    objective: float
    duals: list  # indexed by customer id
    primal: dict


def _dual_vector(inst: Instance, pis) -> list:
    duals = [0.0] * (inst.n + 3)
    for u, p in zip(inst.ids, pis):
        duals[u] = max(0.0, p)
    return duals


class _Clock:
    def __init__(self):
        self.t = {}

    def add(self, name, dt):
        self.t[name] = self.t.get(name, 0.0) + dt

    def ms(self, name):
        return None if name not in self.t else 1000.0 * self.t[name]


# ---------------------------------------------------------------------------
# orderings


def build_beta(route, inst: Instance) -> dict:
    """Total order over customers and depots seeded by ``route``.

    Each customer off the route goes right behind the route stop (or start
    depot) it is cheapest to reach from, counting a stop as unreachable when
    the two-customer route through both is infeasible.  Customers whose best
    anchor is the start depot go to the end of the order, before the end
    depot."""
    stops = [u for u in route if u > 0]
    if len(set(stops)) != len(stops):
        raise ValueError("route must be elementary")
    on_route = set(stops)
    behind = {u: [] for u in stops}
    tail = []
    for v in inst.ids:
        if v in on_route:
            continue
        best = (inst.travel[START][v], START)
        for u in stops:
            c = inst.travel[u][v] if inst.pair_route_feasible(u, v) else INF
            if c < best[0] or (c == best[0] and best[1] != START and u < best[1]):
                best = (c, u)
        (tail if best[1] == START else behind[best[1]]).append((best[0], v))
    order = [START]
    for u in stops:
        order.append(u)
        order.extend(v for _, v in sorted(behind[u]))
    order.extend(v for _, v in sorted(tail))
    order.append(END)
    return {u: i for i, u in enumerate(order)}


# ---------------------------------------------------------------------------
# standard column generation


def _cover_model(inst: Instance, columns, kind="C", costs=None) -> SparseModel:
    """Set-covering master over explicit routes: one >= 1 row per customer."""
    if costs is None:
        costs = [inst.route_cost(r) for r in columns]
    rows, cols = [], []
    for j, r in enumerate(columns):
        for u in r[1:-1]:
            rows.append(u - 1)
            cols.append(j)
    A = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(inst.n, len(columns)))
    return SparseModel(np.array(costs, dtype=float), A, np.array([">="] * inst.n, dtype=object),
                       np.ones(inst.n), np.array([kind] * len(columns), dtype=object))


def singleton_routes(inst: Instance) -> list:
    out = []
    for u in inst.ids:
        r = (START, u, END)
        if not inst.route_feasible(r):
            raise MasterError(f"customer {u} cannot be served by any route")
        out.append(r)
    return out


def _prepare(inst: Instance, config: Config, table: FrontierTable | None, clock: _Clock):
    if table is None:
        t = time.perf_counter()
        table = build_frontiers(inst, compute_la_neighbors(inst, config.la_neighbors))
        clock.add("frontier", time.perf_counter() - t)
    else:
        clock.add("frontier", 0.0)
    return table


def _price_exact(inst, table, duals, cache, config, clock, sink=None):
    t = time.perf_counter()
    res, cache = price(inst, table, duals, cache, alpha=config.alpha, epsilon=config.epsilon,
                       bound_exit=config.bound_exit, exact_arithmetic=config.exact_arithmetic,
                       trace=config.trace or sink is not None, prune=config.prune)
    clock.add("pricing_exact", time.perf_counter() - t)
    _emit(sink, "exact", res)
    return res, cache


def _emit(sink, label, res):
    if sink is not None:
        sink.append(f"# {label} pricing: status {res.status}, reduced cost {res.reduced_cost}")
        sink.extend(format_trace(res))


def run_standard_cg(inst: Instance, config: Config | None = None, table: FrontierTable | None = None,
                    history: list | None = None, trace: list | None = None) -> RunReport:
    """Set-cover CG over explicit routes.  ``history`` collects per-call
    pricing data, ``trace`` the pricing trace lines."""
    config = config or Config()
    clock = _Clock()
    t_total = time.perf_counter()
    table = _prepare(inst, config, table, clock)
    t_loop = time.perf_counter()
    columns = singleton_routes(inst)
    costs = [inst.route_cost(r) for r in columns]
    known = set(columns)
    lp = None
    cache = None
    iterations = 0
    converged = False
    lp_obj = None
    lagrangian = -math.inf
    stats = {"min_edge_weight": None, "pricing_calls": 0}
    while True:
        if _out_of_time(config, t_total) or (config.max_iterations and iterations >= config.max_iterations):
            break
        t = time.perf_counter()
        if lp is None:
            lp = IncrementalLP(config.backend)
            lp.add_rows(np.ones(inst.n), np.full(inst.n, np.inf))
        if lp.n_cols < len(columns):
            block = _cover_model(inst, columns[lp.n_cols:], costs=costs[lp.n_cols:])
            lp.add_cols(block.cost, block.A)
        sol = lp.solve()
        clock.add("rmp", time.perf_counter() - t)
        if sol.status != "optimal":
            raise MasterError(f"restricted master not optimal: {sol.status}")
        iterations += 1
        lp_obj = sol.objective
        duals = _dual_vector(inst, sol.duals)
        res, cache = _price_exact(inst, table, duals, cache, config, clock, trace)
        _note(stats, res)
        lagrangian = max(lagrangian, lp_obj + inst.n * min(0.0, float(res.lb)))
        if history is not None:
            history.append({"lp": lp_obj, "lb": float(res.lb), "rc": float(res.reduced_cost),
                            "lagrangian": lp_obj + inst.n * min(0.0, float(res.lb)),
                            "lb_history": [float(x) for x in res.lb_history],
                            "min_weight": res.min_weight})
        if res.route is None or res.reduced_cost >= -config.epsilon:
            converged = res.status in ("optimal", "bound", "no_route")
            break
        if res.route in known:
            raise MasterError("pricing returned a column already in the master")
        columns.append(res.route)
        costs.append(inst.route_cost(res.route))
        known.add(res.route)
    mp_loop = time.perf_counter() - t_loop
    clock.add("mp_loop", mp_loop)
    ilp_obj = gap = None
    if config.ilp and lp_obj is not None:
        t = time.perf_counter()
        ilp_obj, gap = postprocess_ilp(_cover_model(inst, columns, "I", costs), lp_obj, config)
        clock.add("ilp", time.perf_counter() - t)
    clock.add("total", time.perf_counter() - t_total)
    return RunReport.build(
        inst, "cg", config, clock, iterations=iterations, rmp_solves=iterations,
        lp_objective=lp_obj, ilp_objective=ilp_obj, gap=gap, converged=converged,
        columns=len(columns), families=None, pool_nodes=None, pool_arcs=None,
        lagrangian_bound=lagrangian, min_edge_weight=stats["min_edge_weight"],
        pricing_calls=stats["pricing_calls"],
    )


def _note(stats, res: PricingResult):
    stats["pricing_calls"] += 1
    if res.min_weight is not None:
        mw = float(res.min_weight)
        if stats["min_edge_weight"] is None or mw < stats["min_edge_weight"]:
            stats["min_edge_weight"] = mw


def _out_of_time(config, t0):
    return config.max_seconds is not None and time.perf_counter() - t0 > config.max_seconds


def postprocess_ilp(model: SparseModel, lp_obj: float, config: Config):
    sol = solve_ilp(model, config.backend, config.ilp_time_limit)
    if sol.objective is None:
        return None, None
    gap = sol.objective - lp_obj
    if abs(gap) <= 1e-6 * max(1.0, abs(lp_obj)):
        gap = 0.0
    return sol.objective, gap


# ---------------------------------------------------------------------------
# graph master


@dataclass
class Family:
    id: int
    source_route: tuple
    beta: dict
    cache: Partition | None = None
    edges: list = field(default_factory=list)  # (i, j, arc index, cost)
    edge_set: set = field(default_factory=set)
    # flow-row bookkeeping: customer node -> local row, per-edge tail/head rows (-1 at depots)
    node_row: dict = field(default_factory=dict)
    tail: list = field(default_factory=list)
    head: list = field(default_factory=list)

    def push(self, i, j, a, c):
        self.edge_set.add((i, j, a))
        self.edges.append((i, j, a, c))
        self.tail.append(self._row(i))
        self.head.append(self._row(j))

    def _row(self, node):
        if node[0] < 0:
            return -1
        r = self.node_row.get(node)
        if r is None:
            r = self.node_row[node] = len(self.node_row)
        return r

    def reindex(self, edges):
        self.edges, self.edge_set, self.node_row, self.tail, self.head = [], set(), {}, [], []
        for e in edges:
            self.push(*e)


class GmRmp:
    """Pools of nodes and LA-arcs shared by every family's multigraph."""

    def __init__(self, inst: Instance, table: FrontierTable):
        self.inst = inst
        self.table = table
        cap, t0 = inst.vehicle_capacity, inst.horizon
        self.source = (START, cap, t0)
        self.sink = (END, 0, 0)
        self.nodes: set = {self.source, self.sink}
        self.by_cust: dict = {START: [self.source], END: [self.sink]}
        self.arcs: set = set()
        self.arcs_by_pair: dict = {}
        self.families: list[Family] = []
        self.backend = None
        self.reset_lp()
        nodes, arcs = [], []
        for u in inst.ids:
            nodes.append((u, cap, min(t0 - inst.travel[START][u], inst.early[u])))
            for key in (LAArcKey(START, u, 0), LAArcKey(u, END, 0)):
                arc = table.by_key.get(key)
                if arc is None:
                    raise MasterError(f"no depot arc {key}")
                arcs.append(arc.index)
        self.absorb(nodes, arcs)

    # pools ------------------------------------------------------------------

    def absorb(self, nodes, arcs) -> bool:
        """Add nodes/arcs to the pools and extend every family's edges."""
        new_nodes = [n for n in dict.fromkeys(nodes) if n not in self.nodes]
        new_arcs = [a for a in dict.fromkeys(arcs) if a not in self.arcs]
        if not new_nodes and not new_arcs:
            return False
        for n in new_nodes:
            self.nodes.add(n)
            self.by_cust.setdefault(n[0], []).append(n)
        for a in new_arcs:
            self.arcs.add(a)
            arc = self.table.arcs[a]
            self.arcs_by_pair.setdefault((arc.first, arc.last), []).append(a)
        for fam in self.families:
            self._extend(fam, set(new_nodes), set(new_arcs))
        return True

    def add_family(self, fam: Family):
        self.families.append(fam)
        self._extend(fam, None, None)

    def _edge(self, i, j, arc):
        if i[1] - arc.demand < j[1]:
            return None
        c = self.table.arc_cost(arc, i[2], j[2])
        return None if c == INF else c

    def _extend(self, fam: Family, new_nodes, new_arcs):
        table = self.table
        for (u, v), arc_ids in self.arcs_by_pair.items():
            src = self.by_cust.get(u, ())
            dst = self.by_cust.get(v, ())
            for a in arc_ids:
                arc = table.arcs[a]
                if not family_allows(fam.beta, arc):
                    continue
                fresh_arc = new_arcs is None or a in new_arcs
                for i in src:
                    for j in dst:
                        if not fresh_arc and i not in new_nodes and j not in new_nodes:
                            continue
                        key = (i, j, a)
                        if key in fam.edge_set:
                            continue
                        c = self._edge(i, j, arc)
                        if c is not None:
                            fam.push(i, j, a, c)

    # LP ---------------------------------------------------------------------

    def model(self, kind="C") -> tuple[SparseModel, list]:
        """Cover rows (one per customer, first) then flow-balance rows per
        family.  ``index`` maps variable positions back to edges."""
        inst = self.inst
        n = inst.n
        cover = self.table.arrays().cover[:, 1: n + 1]
        costs, arc_ids, rows, cols, vals = [], [], [], [], []
        index = []
        offset = n
        k0 = 0
        for fam in self.families:
            m = len(fam.edges)
            if not m:
                continue
            index.extend((fam.id, i, j, a) for (i, j, a, _) in fam.edges)
            costs.append(np.fromiter((e[3] for e in fam.edges), float, m))
            arc_ids.append(np.fromiter((e[2] for e in fam.edges), np.int64, m))
            ks = np.arange(k0, k0 + m)
            for loc, sign in ((np.asarray(fam.tail), -1.0), (np.asarray(fam.head), 1.0)):
                keep = loc >= 0
                rows.append(loc[keep] + offset)
                cols.append(ks[keep])
                vals.append(np.full(int(keep.sum()), sign))
            offset += len(fam.node_row)
            k0 += m
        n_vars = k0
        if n_vars:
            cov = coo_matrix(cover[np.concatenate(arc_ids)].T.astype(float))
            rows.append(cov.row)
            cols.append(cov.col)
            vals.append(cov.data)
            cost = np.concatenate(costs)
            A = csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(offset, n_vars))
        else:
            cost = np.zeros(0)
            A = csr_matrix((offset, 0))
        sense = np.array([">="] * n + ["="] * (offset - n), dtype=object)
        rhs = np.concatenate([np.ones(n), np.zeros(offset - n)])
        kinds = np.array([kind] * n_vars, dtype=object)
        return SparseModel(cost, A, sense, rhs, kinds), index

    def reset_lp(self):
        self._lp = None
        self._index: list = []  # variable position -> (family id, i, j, arc)
        self._rows_of: dict = {}  # family id -> global row per local flow row
        self._synced: dict = {}  # family id -> edges already in the LP

    def lp(self) -> IncrementalLP:
        """The persistent LP, brought up to date with the families' edges."""
        n = self.inst.n
        if self._lp is None:
            self._lp = IncrementalLP(self.backend)
            self._lp.add_rows(np.ones(n), np.full(n, np.inf))
        lp = self._lp
        cover = self.table.arrays().cover[:, 1: n + 1]
        for fam in self.families:
            rows = self._rows_of.setdefault(fam.id, [])
            fresh = len(fam.node_row) - len(rows)
            if fresh:
                rows.extend(range(lp.n_rows, lp.n_rows + fresh))
                lp.add_rows(np.zeros(fresh), np.zeros(fresh))
            done = self._synced.get(fam.id, 0)
            m = len(fam.edges) - done
            if not m:
                continue
            new = fam.edges[done:]
            self._index.extend((fam.id, i, j, a) for (i, j, a, _) in new)
            arc_ids = np.fromiter((e[2] for e in new), np.int64, m)
            cov = coo_matrix(cover[arc_ids].T.astype(float))
            r, c, v = [cov.row], [cov.col], [cov.data]
            glob = np.asarray(rows, dtype=np.int64)
            ks = np.arange(m)
            for loc, sign in ((np.asarray(fam.tail[done:]), -1.0), (np.asarray(fam.head[done:]), 1.0)):
                keep = loc >= 0
                r.append(glob[loc[keep]])
                c.append(ks[keep])
                v.append(np.full(int(keep.sum()), sign))
            A = coo_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=(lp.n_rows, m))
            lp.add_cols(np.fromiter((e[3] for e in new), float, m), A)
            self._synced[fam.id] = len(fam.edges)
        return lp

    def n_edges(self):
        return sum(len(f.edges) for f in self.families)


def solve_gm_rmp(rmp: GmRmp, backend=None) -> MasterSolution:
    rmp.backend = backend
    sol = rmp.lp().solve()
    index = rmp._index
    if sol.status != "optimal":
        raise MasterError(f"graph master LP not optimal: {sol.status}")
    duals = _dual_vector(rmp.inst, sol.duals[: rmp.inst.n])
    primal = {index[k]: float(sol.x[k]) for k in np.flatnonzero(sol.x > 1e-9)}
    return MasterSolution(sol.objective, duals, primal)


def route_pools(table: FrontierTable, res: PricingResult):
    """Nodes ``(u, d, t)`` and arc ids used along a priced route."""
    return list(res.realized), [a.index for a in res.path_arcs]


def absorb_route(rmp: GmRmp, res: PricingResult) -> bool:
    nodes, arcs = route_pools(rmp.table, res)
    return rmp.absorb(nodes, arcs)


def _prune_pools(rmp: GmRmp, primal: dict):
    used_nodes = {rmp.source, rmp.sink}
    used_arcs = set()
    for (_, i, j, a) in primal:
        used_nodes.add(i)
        used_nodes.add(j)
        used_arcs.add(a)
    keep = GmRmp(rmp.inst, rmp.table)
    base_nodes, base_arcs = set(keep.nodes), set(keep.arcs)
    rmp.nodes = used_nodes | base_nodes
    rmp.arcs = used_arcs | base_arcs
    rmp.by_cust = {}
    for n in rmp.nodes:
        rmp.by_cust.setdefault(n[0], []).append(n)
    for lst in rmp.by_cust.values():
        lst.sort()
    rmp.arcs_by_pair = {}
    for a in sorted(rmp.arcs):
        arc = rmp.table.arcs[a]
        rmp.arcs_by_pair.setdefault((arc.first, arc.last), []).append(a)
    for fam in rmp.families:
        fam.reindex([e for e in fam.edges if e[0] in rmp.nodes and e[1] in rmp.nodes and e[2] in rmp.arcs])
    rmp.reset_lp()


def _seed_partition(rmp: GmRmp, exact_cache, config):
    mode = config.seed_families
    if mode == "exact":
        return exact_cache
    if mode == "family" and rmp.families:
        return rmp.families[-1].cache
    return None


def run_gm(inst: Instance, config: Config | None = None, table: FrontierTable | None = None,
           history: list | None = None, trace: list | None = None) -> RunReport:
    config = config or Config()
    clock = _Clock()
    t_total = time.perf_counter()
    table = _prepare(inst, config, table, clock)
    t_loop = time.perf_counter()
    rmp = GmRmp(inst, table)
    rmp.add_family(Family(0, (START, END), build_beta((START, END), inst)))
    exact_cache = None
    outer = 0
    rmp_solves = 0
    converged = False
    limit_hit = False
    sol = None
    stats = {"min_edge_weight": None, "pricing_calls": 0}
    lagrangian = -math.inf
    pruned_at = math.inf
    while not limit_hit:
        # inner loop: optimize over the union of the families
        while True:
            if _out_of_time(config, t_total):
                limit_hit = True
                break
            t = time.perf_counter()
            sol = solve_gm_rmp(rmp, config.backend)
            clock.add("rmp", time.perf_counter() - t)
            rmp_solves += 1
            found = []
            t = time.perf_counter()
            for fam in rmp.families:
                res, fam.cache = price(inst, table, sol.duals, fam.cache, beta=fam.beta, alpha=0.0,
                                       epsilon=config.epsilon, exact_arithmetic=config.exact_arithmetic,
                                       bound_exit=config.bound_exit, trace=trace is not None)
                _emit(trace, f"family {fam.id}", res)
                _note(stats, res)
                if res.route is not None and res.reduced_cost < -config.epsilon:
                    found.append(res)
            clock.add("pricing_family", time.perf_counter() - t)
            if history is not None:
                history.append({"kind": "inner", "lp": sol.objective,
                                "family_rc": [float(r.reduced_cost) for r in found]})
            if not found:
                break
            grew = False
            for res in found:
                grew |= absorb_route(rmp, res)
            if not grew:
                log.warning("negative family routes already expressible; stopping inner loop")
                break
        if limit_hit:
            break
        # only prune after a strict improvement; otherwise a degenerate RMP can
        # drop and regrow the same pool items forever
        if config.prune and sol.objective < pruned_at - config.epsilon:
            pruned_at = sol.objective
            _prune_pools(rmp, sol.primal)
            t = time.perf_counter()
            sol = solve_gm_rmp(rmp, config.backend)
            clock.add("rmp", time.perf_counter() - t)
            rmp_solves += 1
        if config.max_iterations and outer >= config.max_iterations:
            limit_hit = True
            break
        res, exact_cache = _price_exact(inst, table, sol.duals, exact_cache, config, clock, trace)
        _note(stats, res)
        outer += 1
        lagrangian = max(lagrangian, sol.objective + inst.n * min(0.0, float(res.lb)))
        if history is not None:
            history.append({"kind": "outer", "lp": sol.objective, "lb": float(res.lb),
                            "rc": float(res.reduced_cost), "lb_history": [float(x) for x in res.lb_history],
                            "min_weight": res.min_weight})
        if res.route is None or res.reduced_cost >= -config.epsilon:
            converged = res.status in ("optimal", "bound", "no_route")
            break
        beta = build_beta(res.route, inst)
        seed = _seed_partition(rmp, exact_cache, config)
        fam = Family(len(rmp.families), res.route, beta)
        if seed is not None:
            fam.cache = Partition(inst, table, beta, seed=seed)
        rmp.add_family(fam)
        if _out_of_time(config, t_total):
            limit_hit = True
    # final RMP solve so the reported objective covers the last family
    if not converged and sol is None:
        sol = solve_gm_rmp(rmp, config.backend)
    lp_obj = sol.objective if sol is not None else None
    clock.add("mp_loop", time.perf_counter() - t_loop)
    ilp_obj = gap = None
    if config.ilp and lp_obj is not None:
        t = time.perf_counter()
        model, _ = rmp.model("I")
        ilp_obj, gap = postprocess_ilp(model, lp_obj, config)
        clock.add("ilp", time.perf_counter() - t)
    clock.add("total", time.perf_counter() - t_total)
    return RunReport.build(
        inst, "gm", config, clock, iterations=outer, rmp_solves=rmp_solves,
        lp_objective=lp_obj, ilp_objective=ilp_obj, gap=gap, converged=converged,
        columns=None, families=len(rmp.families), pool_nodes=len(rmp.nodes), pool_arcs=len(rmp.arcs),
        lagrangian_bound=lagrangian, min_edge_weight=stats["min_edge_weight"],
        pricing_calls=stats["pricing_calls"], edges=rmp.n_edges(),
    )
