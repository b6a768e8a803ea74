"""Brute-force reference implementations used to check the fast paths.

Everything here is exponential and meant for desk-scale instances only.
"""

from __future__ import annotations

from itertools import permutations
from typing import Sequence

from .frontier import LAArcKey, members
from .instance import END, START, Instance


def departure_time_recursive(inst: Instance, ordering: Sequence[int], t):
    """Departure time at ``ordering[-1]`` after leaving ``ordering[0]`` with
    ``t`` remaining, evaluated stop by stop; ``None`` if a window is missed."""
    u = ordering[0]
    if t < inst.late[u]:
        return None
    if len(ordering) == 1:
        return min(t, inst.early[u])
    w = ordering[1]
    return departure_time_recursive(inst, ordering[1:], min(t, inst.early[u]) - inst.travel[u][w])


def brute_taus(inst: Instance, ordering: Sequence[int]):
    """``(cost, tau1, tau2)`` of an ordering recovered from the stop-by-stop
    recursion alone: tau2 is the least feasible start time (bisection) and
    ``T(t) = -cost + tau1`` once ``t`` reaches the first stop's early bound.
    ``None`` if no start time works."""
    top = inst.early[ordering[0]]
    cost = inst.route_cost(ordering)
    last = departure_time_recursive(inst, ordering, top)
    if last is None:
        return None
    lo, hi = 0, top  # smallest feasible t in [lo, hi]
    while lo < hi:
        mid = (lo + hi) // 2
        if departure_time_recursive(inst, ordering, mid) is None:
            lo = mid + 1
        else:
            hi = mid
    return cost, last + cost, lo


def brute_frontier(inst: Instance, key: LAArcKey) -> set:
    """(cost, tau1, tau2) triples of the Pareto set over every ordering."""
    u, v, inter = key
    cands = set()
    for perm in permutations(members(inter)):
        trip = brute_taus(inst, (u, *perm, v))
        if trip is not None:
            cands.add(trip)
    out = set()
    for e in cands:
        if not any(f != e and e[0] >= f[0] and e[2] >= f[2] and e[1] - e[0] <= f[1] - f[0] for f in cands):
            out.add(e)
    return out


def brute_arc_cost(inst: Instance, key: LAArcKey, t1, t2):
    best = None
    u, v, inter = key
    for perm in permutations(members(inter)):
        order = (u, *perm, v)
        dep = departure_time_recursive(inst, order, t1)
        if dep is not None and dep >= t2:
            c = inst.route_cost(order)
            best = c if best is None or c < best else best
    return best


def enumerate_routes(inst: Instance, max_n: int = 8) -> list[tuple]:
    """All elementary, capacity- and time-feasible routes ``(-1, ..., -2)``."""
    if inst.n > max_n:
        raise ValueError(f"route enumeration limited to {max_n} customers")
    out = []
    cap = inst.vehicle_capacity

    def grow(route, load, t, used):
        last = route[-1]
        for v in inst.ids:
            if used >> v & 1 or load + inst.demand[v] > cap:
                continue
            arrive = t - inst.travel[last][v]
            if arrive < inst.late[v]:
                continue
            dep = min(arrive, inst.early[v])
            nxt = route + (v,)
            if dep - inst.travel[v][END] >= 0:
                out.append(nxt + (END,))
            grow(nxt, load + inst.demand[v], dep, used | 1 << v)

    grow((START,), 0, inst.horizon, 0)
    return out


def oracle_enumerate(inst: Instance, duals, max_n: int = 8):
    """Lowest reduced-cost elementary route by exhaustive enumeration."""
    best, best_rc = None, None
    for r in enumerate_routes(inst, max_n):
        rc = inst.reduced_cost(r, duals)
        if best_rc is None or rc < best_rc or (rc == best_rc and r < best):
            best, best_rc = r, rc
    return best, best_rc


def la_decomposition(route: Sequence[int], nbrs) -> list[LAArcKey]:
    """Split a route into its LA-arcs.  From each arc start, the arc runs over
    the following LA-neighbors and ends at the first stop that is not one."""
    arcs = []
    i = 0
    while i < len(route) - 1:
        u = route[i]
        nb = set(nbrs[u]) if u > 0 else set()
        j = i + 1
        while route[j] in nb:
            j += 1
        inter = 0
        for w in route[i + 1:j]:
            inter |= 1 << w
        arcs.append(LAArcKey(u, route[j], inter))
        i = j
    return arcs


def in_family(route: Sequence[int], nbrs, beta: dict) -> bool:
    """Whether every LA-arc of ``route`` respects the family order."""
    for key in la_decomposition(route, nbrs):
        lo, hi = beta[key.first], beta[key.last]
        if lo >= hi or any(not lo < beta[w] < hi for w in members(key.inter)):
            return False
    return True


def oracle_family(inst: Instance, duals, nbrs, beta: dict, max_n: int = 8):
    """Like :func:`oracle_enumerate` restricted to the routes of one family."""
    best, best_rc = None, None
    for r in enumerate_routes(inst, max_n):
        if not in_family(r, nbrs, beta):
            continue
        rc = inst.reduced_cost(r, duals)
        if best_rc is None or rc < best_rc:
            best, best_rc = r, rc
    return best, best_rc


def enumeration_lp(inst: Instance, backend: str | None = None, max_n: int = 8):
    """Set-cover LP over every feasible route: ``(objective, duals)``."""
    from .lp import LinearModel, solve_lp

    routes = enumerate_routes(inst, max_n)
    model = LinearModel()
    for r in routes:
        model.add_var(inst.route_cost(r))
    for u in inst.ids:
        cols = [j for j, r in enumerate(routes) if u in r]
        model.add_row({j: 1 for j in cols}, ">=", 1)
    sol = solve_lp(model, backend)
    return sol.objective, {u: sol.duals[i] for i, u in enumerate(inst.ids)}
