"""LA-arcs and their efficient frontiers of intermediate orderings.

An LA-arc ``p = (first, last, inter)`` leaves ``first``, visits every
customer of ``inter`` in some order and ends at ``last``.  Each ordering
``r`` is summarized by its cost and two remaining-time thresholds:

* ``latest_nowait`` (tau1): leaving ``first`` with more time than this
  forces waiting somewhere along ``r``;
* ``latest_feasible`` (tau2): leaving ``first`` with less time than this
  misses a window.

With those, the departure time at ``last`` is ``-c + min(t, tau1)`` as long
as ``min(t, early[first]) >= tau2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .instance import END, START, Instance, NeighborSets, compute_la_neighbors

# Cost sentinel for "no feasible ordering".  Never added to anything.
INF = math.inf


def mask_of(items: Iterable[int]) -> int:
    m = 0
    for u in items:
        m |= 1 << u
    return m


def members(mask: int) -> list[int]:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


class LAArcKey(NamedTuple):
    first: int
    last: int
    inter: int  # bitmask over customer ids

    @property
    def intermediates(self) -> frozenset:
        return frozenset(members(self.inter))

    def __str__(self):
        return f"({self.first},{sorted(self.intermediates)},{self.last})"


class FrontierEntry(NamedTuple):
    ordering: tuple
    cost: int
    latest_nowait: int  # tau1
    latest_feasible: int  # tau2


def _checked(inst, ordering, cost, tau1, tau2):
    # An ordering whose tau2 exceeds the first stop's early bound can never be
    # started; mark it dead so every extension of it stays dead too.
    if tau2 > inst.early[ordering[0]]:
        tau2 = INF
    return FrontierEntry(ordering, cost, tau1, tau2)


def pair_entry(inst: Instance, u: int, v: int) -> FrontierEntry:
    t = inst.travel[u][v]
    return _checked(inst, (u, v), t, min(inst.early[u], inst.early[v] + t),
                    max(inst.late[u], inst.late[v] + t))


def extend_tau(inst: Instance, entry: FrontierEntry, u: int) -> FrontierEntry:
    """Prepend ``u`` to ``entry``'s ordering."""
    w = entry.ordering[0]
    t = inst.travel[u][w]
    return _checked(inst, (u, *entry.ordering), entry.cost + t,
                    min(inst.early[u], entry.latest_nowait + t),
                    max(inst.late[u], entry.latest_feasible + t))


def is_dead(entry: FrontierEntry) -> bool:
    return entry.latest_feasible == INF


def entry_for(inst: Instance, ordering: Sequence[int]) -> FrontierEntry:
    """Summarize an explicit ordering (length >= 2)."""
    e = pair_entry(inst, ordering[-2], ordering[-1])
    for u in reversed(ordering[:-2]):
        e = extend_tau(inst, e, u)
    return e


def departure_time(inst: Instance, entry: FrontierEntry, t):
    """Departure time at the last stop when leaving the first one with ``t``
    remaining; ``None`` if some window is missed."""
    if min(t, inst.early[entry.ordering[0]]) < entry.latest_feasible:
        return None
    return -entry.cost + min(t, entry.latest_nowait)


def dominates(a: FrontierEntry, b: FrontierEntry) -> bool:
    """Whether ``a`` makes ``b`` redundant (weakly better on all three
    criteria).  Identical triples count, so callers must break that tie."""
    return (
        b.cost >= a.cost
        and b.latest_feasible >= a.latest_feasible
        and b.latest_nowait - b.cost <= a.latest_nowait - a.cost
    )


def _sort_key(e: FrontierEntry):
    return (e.cost, e.latest_feasible, -(e.latest_nowait - e.cost), e.ordering)


def pareto_filter(cands: Iterable[FrontierEntry]) -> list[FrontierEntry]:
    """Non-dominated entries, cost ascending.  Among identical
    (cost, tau1, tau2) triples the lexicographically smallest ordering stays."""
    kept: list[FrontierEntry] = []
    for e in sorted(cands, key=_sort_key):
        # anything that could dominate e sorts before it
        if any(dominates(k, e) for k in kept):
            continue
        kept.append(e)
    return kept


@dataclass
class LAArc:
    index: int
    key: LAArcKey
    demand: int  # d_p, excludes the last stop
    cover: int  # bitmask of customers in first + intermediates
    frontier: list

    @property
    def first(self):
        return self.key.first

    @property
    def last(self):
        return self.key.last

    @property
    def inter(self):
        return self.key.inter

    @property
    def min_cost(self):
        return self.frontier[0].cost if self.frontier else INF


class ArcArrays(NamedTuple):
    cover: np.ndarray  # arcs x (n+3), 1 where the arc covers the customer
    demand: np.ndarray
    widest: np.ndarray  # widest_cost, inf for arcs without orderings


@dataclass
class FrontierTable:
    """Frontiers for every usable LA-arc plus the memo of sub-arcs."""

    inst: Instance
    nbrs: NeighborSets
    lazy: bool = False
    arcs: list = field(default_factory=list)
    by_pair: dict = field(default_factory=dict)
    by_key: dict = field(default_factory=dict)
    _memo: dict = field(default_factory=dict, repr=False)
    _cost_memo: dict = field(default_factory=dict, repr=False)
    _arrays: object = field(default=None, repr=False)

    # -- frontier DP -------------------------------------------------------

    def frontier(self, key: LAArcKey) -> list:
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        # iterative by level would also work; recursion depth is at most k
        inst = self.inst
        u, v, inter = key
        if not inter:
            e = pair_entry(inst, u, v)
            out = [e] if e.latest_feasible <= inst.early[u] else []
        else:
            cands = []
            bound = inst.early[u]
            for w in members(inter):
                for sub in self.frontier(LAArcKey(w, v, inter & ~(1 << w))):
                    e = extend_tau(inst, sub, u)
                    if e.latest_feasible <= bound:
                        cands.append(e)
            out = pareto_filter(cands)
        self._memo[key] = out
        return out

    def _add_arc(self, key: LAArcKey, demand: int, cover: int):
        fr = None if self.lazy else self.frontier(key)
        if fr is not None and not fr:
            return
        arc = LAArc(len(self.arcs), key, demand, cover, fr if fr is not None else [])
        if self.lazy:
            arc.frontier = None
        self.arcs.append(arc)
        self.by_pair.setdefault((key.first, key.last), []).append(arc)
        self.by_key[key] = arc

    def build(self):
        inst = self.inst
        cap = inst.vehicle_capacity
        for v in inst.ids:
            self._add_arc(LAArcKey(START, v, 0), 0, 0)
        for u in inst.ids:
            nb = self.nbrs[u]
            outside = [v for v in inst.ids if v != u and v not in nb] + [END]
            for size in range(len(nb) + 1):
                for sub in combinations(nb, size):
                    dem = inst.demand[u] + sum(inst.demand[w] for w in sub)
                    if dem > cap:
                        continue
                    inter = mask_of(sub)
                    for v in outside:
                        if dem + inst.demand[v] > cap:
                            continue
                        self._add_arc(LAArcKey(u, v, inter), dem, inter | (1 << u))
        return self

    def entries(self, arc: LAArc) -> list:
        if arc.frontier is None:
            arc.frontier = self.frontier(arc.key)
        return arc.frontier

    # -- queries -----------------------------------------------------------

    def arc_entry(self, arc: LAArc, t1, t2):
        """Cheapest frontier entry that can leave ``first`` no earlier than
        ``t1`` and still leave ``last`` with at least ``t2`` remaining."""
        for e in self.entries(arc):
            if t1 >= e.latest_feasible and t2 <= -e.cost + min(t1, e.latest_nowait):
                return e
        return None

    def arc_cost(self, arc: LAArc, t1, t2):
        k = (arc.index, t1, t2)
        hit = self._cost_memo.get(k)
        if hit is None:
            e = self.arc_entry(arc, t1, t2)
            hit = INF if e is None else e.cost
            self._cost_memo[k] = hit
        return hit

    def widest_cost(self, arc: LAArc):
        """Cost with the loosest query times."""
        return self.arc_cost(arc, self.inst.early[arc.first], self.inst.late[arc.last])

    def arrays(self) -> "ArcArrays":
        """Per-arc numpy views used by the pricing weights (built once)."""
        if self._arrays is None or len(self._arrays.demand) != len(self.arcs):
            n_cols = self.inst.n + 3
            cover = np.zeros((len(self.arcs), n_cols), dtype=np.int8)
            for a in self.arcs:
                for u in members(a.cover):
                    cover[a.index, u] = 1
            demand = np.array([a.demand for a in self.arcs], dtype=np.int64)
            widest = np.array([self.widest_cost(a) if self.entries(a) else INF for a in self.arcs], dtype=float)
            self._arrays = ArcArrays(cover, demand, widest)
        return self._arrays

    def usable_arcs(self) -> list:
        return [a for a in self.arcs if self.entries(a)]

    # -- persistence -------------------------------------------------------

    def cache_key(self) -> str:
        return f"{self.inst.digest()}-k{self.nbrs.k}-s{self.inst.time_scale}"

    def dump(self, path):
        data = {
            "key": self.cache_key(),
            "frontiers": [
                [a.first, a.last, a.inter, [list(e.ordering) + [e.cost, e.latest_nowait, e.latest_feasible]
                                            for e in self.entries(a)]]
                for a in self.arcs
            ],
        }
        with open(path, "w") as fh:
            json.dump(data, fh)

    @classmethod
    def load(cls, path, inst: Instance, nbrs: NeighborSets) -> "FrontierTable":
        with open(path) as fh:
            data = json.load(fh)
        table = cls(inst, nbrs)
        if data["key"] != table.cache_key():
            raise ValueError("frontier cache does not match instance/k/time_scale")
        for first, last, inter, rows in data["frontiers"]:
            key = LAArcKey(first, last, inter)
            table._memo[key] = [FrontierEntry(tuple(r[:-3]), *r[-3:]) for r in rows]
            cover = inter | (1 << first) if first > 0 else 0
            dem = inst.route_demand(members(cover))
            table._add_arc(key, dem, cover)
        return table


def build_frontiers(inst: Instance, nbrs: NeighborSets | int, lazy: bool = False) -> FrontierTable:
    if isinstance(nbrs, int):
        nbrs = compute_la_neighbors(inst, nbrs)
    return FrontierTable(inst, nbrs, lazy=lazy).build()
