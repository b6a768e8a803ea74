"""Pricing by shortest paths on a relaxed graph refined through node splits.

A relaxed node is a box of exact pricing states ``(u, d, t, M)``: demand
remaining ``d`` in ``[d_lo, d_hi]``, time remaining ``t`` in ``[t_lo, t_hi]``
and visited set ``M`` with ``must <= M <= may``.  Edge weights lower-bound
every exact edge between the two boxes, so the relaxed shortest path is a
lower bound on the best reduced cost.  Whenever the path is not a genuine
route, one cell on it is split and the search repeats.

Candidate edges ``(f, g, arc)`` do not depend on duals.  They are stored once
per partition and updated incrementally when a cell is split; a pricing call
only re-weights them.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from fractions import Fraction
from math import lcm
from typing import NamedTuple, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .frontier import INF, FrontierTable, LAArc
from .instance import END, START, Instance
from .oracle import oracle_enumerate  # noqa: F401  re-exported

EPS = 1e-6
FLOAT_ETA_NUDGE = 1e-9


class RelaxedNode(NamedTuple):
    cust: int
    d_lo: int
    d_hi: int
    t_lo: int
    t_hi: int
    must: int  # bitmask
    may: int  # bitmask

    def contains(self, d, t, visited: int) -> bool:
        return (self.d_lo <= d <= self.d_hi and self.t_lo <= t <= self.t_hi
                and visited & self.must == self.must and visited & ~self.may == 0)


def source_node(inst: Instance) -> RelaxedNode:
    return RelaxedNode(START, inst.vehicle_capacity, inst.vehicle_capacity, inst.horizon, inst.horizon, 0, 0)


def sink_node(inst: Instance) -> RelaxedNode:
    return RelaxedNode(END, 0, inst.vehicle_capacity, 0, inst.horizon, 0, inst.all_mask)


def initial_cell(inst: Instance, u: int) -> RelaxedNode:
    return RelaxedNode(u, inst.demand[u], inst.vehicle_capacity, inst.late[u], inst.early[u], 0,
                       inst.all_mask & ~(1 << u))


def family_allows(beta: dict, arc: LAArc) -> bool:
    lo, hi = beta[arc.first], beta[arc.last]
    if lo >= hi:
        return False
    w = arc.inter
    while w:
        low = w & -w
        b = beta[low.bit_length() - 1]
        if not lo < b < hi:
            return False
        w ^= low
    return True


def edge_row(f: RelaxedNode, g: RelaxedNode, arc: LAArc, table: FrontierTable):
    """``(d_fgp, cost)`` for one arc between two cells, or ``None`` if the
    arc cannot connect them.  Dual independent."""
    dp = arc.demand
    if f.d_hi - dp < g.d_lo or f.d_lo - dp > g.d_hi:
        return None
    cover = arc.cover
    vbit = 1 << g.cust if g.cust > 0 else 0
    if f.must & (cover | vbit):
        return None
    if g.must & ~(f.may | cover):
        return None
    if (f.must | cover) & ~g.may:
        return None
    c = table.arc_cost(arc, f.t_hi, g.t_lo)
    if c == INF:
        return None
    d = max(f.d_lo - (g.d_hi if g.cust != END else 0), dp)
    return d, c


def arc_dual(arc: LAArc, duals) -> object:
    s = 0
    w = arc.cover
    while w:
        low = w & -w
        s += duals[low.bit_length() - 1]
        w ^= low
    return s


def _exact(x) -> bool:
    return isinstance(x, (int, Fraction)) and not isinstance(x, bool)


def _dual_scale(duals, ids, extra=()):
    S = 1
    for u in ids:
        S = lcm(S, Fraction(duals[u]).denominator)
    for x in extra:
        S = lcm(S, Fraction(x).denominator)
    return S


def _dual_array(inst: Instance, duals, scale=None) -> np.ndarray:
    """Duals as a vector over node indices; scaled to ints when ``scale``
    is given (object dtype if int64 could overflow)."""
    if scale is None:
        v = np.zeros(inst.n + 3)
        for u in inst.ids:
            v[u] = float(duals[u])
        return v
    vals = [0] * (inst.n + 3)
    for u in inst.ids:
        vals[u] = int(Fraction(duals[u]) * scale)
    big = max(abs(x) for x in vals) * inst.n
    return np.array(vals, dtype=np.int64 if big < 2 ** 60 else object)


def _arc_selection(table: FrontierTable, arcs):
    if arcs is None:
        return np.arange(len(table.arcs))
    if isinstance(arcs, np.ndarray):
        return arcs
    return np.array([a.index for a in arcs], dtype=np.int64)


def compute_eta(duals, table: FrontierTable, arcs: Sequence[LAArc] | np.ndarray | None = None):
    """Steepest reduced cost per unit demand over the arcs, clamped at 0."""
    inst = table.inst
    exact = all(_exact(duals[u]) for u in inst.ids)
    A = table.arrays()
    idx = _arc_selection(table, arcs)
    if len(idx):
        idx = idx[(A.demand[idx] > 0) & np.isfinite(A.widest[idx])]
    if not len(idx):
        return Fraction(0) if exact else 0.0
    dem = A.demand[idx]
    if not exact:
        num = A.widest[idx] - A.cover[idx] @ _dual_array(inst, duals)
        best = float(np.min(num / dem))
        return -best if best < 0 else 0.0
    S = _dual_scale(duals, inst.ids)
    vec = _dual_array(inst, duals, S)
    wide = A.widest[idx].astype(np.int64)
    if vec.dtype == object:
        num = wide.astype(object) * S - A.cover[idx].astype(object) @ vec
    else:
        num = wide * S - A.cover[idx] @ vec
    # float screen, then exact comparison among the near-minimal ratios
    approx = num.astype(float) / dem
    m = approx.min()
    near = np.flatnonzero(approx <= m + 1e-9 * max(1.0, abs(m)))
    best = min(Fraction(int(num[i]), int(dem[i]) * S) for i in near)
    return -best if best < 0 else Fraction(0)


def edge_cost(f: RelaxedNode, g: RelaxedNode, duals, eta, table: FrontierTable, beta: dict | None = None):
    """Cheapest relaxed edge ``f -> g``: ``(cost, arc, ordering)``, or
    ``(INF, None, None)`` when no arc connects the two cells."""
    best = (INF, None, None)
    for arc in table.by_pair.get((f.cust, g.cust), ()):
        if beta is not None and not family_allows(beta, arc):
            continue
        row = edge_row(f, g, arc, table)
        if row is None:
            continue
        d, c = row
        w = eta * d - arc_dual(arc, duals) + c
        if w < best[0]:
            best = (w, arc, table.arc_entry(arc, f.t_hi, g.t_lo).ordering)
    return best


# ---------------------------------------------------------------------------
# partition with incrementally maintained candidate rows


class _Rows:
    """Growable columnar store of candidate edges."""

    def __init__(self):
        self.n = 0
        cap = 1024
        self.f = np.zeros(cap, np.int64)
        self.g = np.zeros(cap, np.int64)
        self.arc = np.zeros(cap, np.int64)
        self.d = np.zeros(cap, np.int64)
        self.c = np.zeros(cap, np.int64)
        self.pair = np.zeros(cap, np.int64)  # id of the (f, g) cell pair
        self.alive = np.zeros(cap, bool)
        self.gen = 0  # bumped when row ids are renumbered

    def extend(self, fs, gs, arcs, ds, cs, pairs):
        k = len(fs)
        if not k:
            return range(0)
        need = self.n + k
        if need > len(self.f):
            cap = max(need, 2 * len(self.f))
            for name in ("f", "g", "arc", "d", "c", "pair", "alive"):
                old = getattr(self, name)
                new = np.zeros(cap, old.dtype)
                new[: self.n] = old[: self.n]
                setattr(self, name, new)
        s = slice(self.n, need)
        self.f[s] = fs
        self.g[s] = gs
        self.arc[s] = arcs
        self.d[s] = ds
        self.c[s] = cs
        self.pair[s] = pairs
        self.alive[s] = True
        out = range(self.n, need)
        self.n = need
        return out

    def compact(self):
        keep = np.flatnonzero(self.alive[: self.n])
        for name in ("f", "g", "arc", "d", "c", "pair", "alive"):
            arr = getattr(self, name)
            arr[: len(keep)] = arr[keep]
        self.n = len(keep)
        self.gen += 1


@dataclass
class Partition:
    """The retained node set of one pricing problem (all routes, or one
    family when ``beta`` is given)."""

    inst: Instance
    table: FrontierTable
    beta: dict | None = None
    nodes: dict = field(default_factory=dict)  # id -> RelaxedNode
    cells: dict = field(default_factory=dict)  # customer -> list of live ids
    source: int = 0
    sink: int = 1
    seed: object = None  # optional partition whose customer cells we start from

    def __post_init__(self):
        inst, table = self.inst, self.table
        if self.beta is None:
            self.pair_arcs = table.by_pair
        else:
            self.pair_arcs = {}
            for key, arcs in table.by_pair.items():
                ok = [a for a in arcs if family_allows(self.beta, a)]
                if ok:
                    self.pair_arcs[key] = ok
        self.arcs = [a for arcs in self.pair_arcs.values() for a in arcs]
        self.arc_index = np.array([a.index for a in self.arcs], dtype=np.int64)
        self.succ = {}
        for (u, v) in self.pair_arcs:
            self.succ.setdefault(u, []).append(v)
        self.pred = {}
        for (u, v) in self.pair_arcs:
            self.pred.setdefault(v, []).append(u)
        self._next_id = 0
        self._dlo = np.zeros(0, np.int64)
        self._dhi = np.zeros(0, np.int64)
        self._dhi_eff = np.zeros(0, np.int64)
        self._live = np.zeros(0, bool)
        self.rows = _Rows()
        self.pair_id: dict = {}  # (f << 32 | g) -> pair id
        self.pair_f = np.zeros(0, np.int64)
        self.pair_g = np.zeros(0, np.int64)
        self.n_pairs = 0
        self.out_rows: dict = {}
        self.in_rows: dict = {}
        self.splits = 0
        self.source = self._new(source_node(inst))
        self.sink = self._new(sink_node(inst))
        seed, copied = self.seed, {}
        for u in inst.ids:
            cells = [initial_cell(inst, u)]
            if seed is not None and seed.cells.get(u):
                # any partition of u's states is a valid start; refined ones save splits
                for i in seed.cells[u]:
                    copied[i] = self._new(seed.nodes[i])
                continue
            for c in cells:
                self._new(c)
        self.seed = None
        if seed is not None and seed.beta is None and len(copied) == len(self.nodes) - 2:
            self._rows_copied(seed, copied)
        elif inst.n < 62:
            self._rows_all()
        else:
            for f in list(self.nodes):
                self._rows_from(f)

    # -- bookkeeping -------------------------------------------------------

    def _new(self, node: RelaxedNode) -> int:
        i = self._next_id
        self._next_id += 1
        if i >= len(self._dlo):
            grow = max(64, len(self._dlo))
            self._dlo = np.concatenate([self._dlo, np.zeros(grow, np.int64)])
            self._dhi = np.concatenate([self._dhi, np.zeros(grow, np.int64)])
            self._dhi_eff = np.concatenate([self._dhi_eff, np.zeros(grow, np.int64)])
            self._live = np.concatenate([self._live, np.zeros(grow, bool)])
        self._live[i] = True
        self._dlo[i] = node.d_lo
        self._dhi[i] = node.d_hi
        self._dhi_eff[i] = 0 if node.cust == END else node.d_hi  # the sink ends at d = 0
        self.nodes[i] = node
        self.cells.setdefault(node.cust, []).append(i)
        self.out_rows[i] = []
        self.in_rows[i] = []
        return i

    def _pairs(self, fs, gs):
        fs = np.asarray(fs, dtype=np.int64)
        gs = np.asarray(gs, dtype=np.int64)
        keys = fs << 32 | gs
        uniq, inverse = np.unique(keys, return_inverse=True)
        ids = self.pair_id
        local = np.empty(len(uniq), np.int64)
        for i, k in enumerate(uniq.tolist()):
            p = ids.get(k)
            if p is None:
                p = ids[k] = self._push_pair(k >> 32, k & 0xFFFFFFFF)
            local[i] = p
        return local[inverse]

    def _push_pair(self, f, g):
        p = self.n_pairs
        if p >= len(self.pair_f):
            grow = max(256, len(self.pair_f))
            self.pair_f = np.concatenate([self.pair_f, np.zeros(grow, np.int64)])
            self.pair_g = np.concatenate([self.pair_g, np.zeros(grow, np.int64)])
        self.pair_f[p] = f
        self.pair_g[p] = g
        self.n_pairs = p + 1
        return p

    def _add_rows(self, fs, gs, arcs, ds, cs):
        idx = self.rows.extend(fs, gs, arcs, ds, cs, self._pairs(fs, gs))
        if not len(idx):
            return
        idx = np.arange(idx.start, idx.stop)
        for ends, store in ((fs, self.out_rows), (gs, self.in_rows)):
            ends = np.asarray(ends, dtype=np.int64)
            order = np.argsort(ends, kind="stable")
            e = ends[order]
            cut = np.flatnonzero(e[1:] != e[:-1]) + 1
            for lo, hi in zip(np.concatenate([[0], cut]).tolist(), np.concatenate([cut, [len(e)]]).tolist()):
                store[int(e[lo])].append(idx[order[lo:hi]])

    def _take_rows(self, store, gid):
        """Pop the live row ids recorded for ``gid`` in ``store``."""
        chunks = store.pop(gid)
        if not chunks:
            return np.zeros(0, np.int64)
        rr = np.concatenate(chunks)
        return rr[self.rows.alive[rr]]

    def _rows_from(self, fid: int, targets=None):
        """Generate rows out of ``fid`` from scratch (towards ``targets`` ids,
        default all live cells)."""
        f = self.nodes[fid]
        table = self.table
        fs, gs, arcs, ds, cs = [], [], [], [], []
        for v in self.succ.get(f.cust, ()):
            for gid in self.cells.get(v, ()):
                if targets is not None and gid not in targets:
                    continue
                g = self.nodes[gid]
                for arc in self.pair_arcs[(f.cust, v)]:
                    row = edge_row(f, g, arc, table)
                    if row is not None:
                        fs.append(fid)
                        gs.append(gid)
                        arcs.append(arc.index)
                        ds.append(row[0])
                        cs.append(row[1])
        self._add_rows(fs, gs, arcs, ds, cs)

    def _rows_copied(self, seed: "Partition", copied: dict):
        """Rows taken over from an all-routes partition with the same cells.
        Rows do not depend on duals or beta, so ours are its live rows over
        the arcs this partition keeps."""
        sr = seed.rows
        fwd = np.full(seed._next_id, -1, np.int64)
        fwd[seed.source], fwd[seed.sink] = self.source, self.sink
        fwd[list(copied)] = list(copied.values())
        allowed = np.zeros(len(self.table.arcs), bool)
        allowed[self.arc_index] = True
        r = np.flatnonzero(sr.alive[: sr.n])
        r = r[allowed[sr.arc[r]]]
        self._add_rows(fwd[sr.f[r]], fwd[sr.g[r]], sr.arc[r], sr.d[r], sr.c[r])

    def _rows_all(self):
        """Every row of the current partition; the same rows as calling
        ``_rows_from`` on each cell, with the cheap gates done in bulk."""
        table, nodes = self.table, self.nodes
        fs, gs, arcs, ds, cs = [], [], [], [], []
        for (u, v), alist in self.pair_arcs.items():
            F = self.cells.get(u, ())
            G = self.cells.get(v, ())
            if not F or not G:
                continue
            fn = [nodes[i] for i in F]
            gn = [nodes[i] for i in G]
            fa = np.array([(n.d_lo, n.d_hi, n.must, n.may) for n in fn], np.int64)
            ga = np.array([(n.d_lo, n.d_hi, n.must, n.may) for n in gn], np.int64)
            dp = np.array([a.demand for a in alist], np.int64)
            cov = np.array([a.cover for a in alist], np.int64)
            vbit = 1 << v if v > 0 else 0
            f_dlo, f_dhi, f_must, f_may = (fa[:, i, None, None] for i in range(4))
            g_dlo, g_dhi, g_must, g_may = (ga[None, :, i, None] for i in range(4))
            ok = (f_dhi - dp >= g_dlo) & (f_dlo - dp <= g_dhi)
            ok &= (f_must & (cov | vbit)) == 0
            ok &= (g_must & ~(f_may | cov)) == 0
            ok &= ((f_must | cov) & ~g_may) == 0
            gd = 0 if v == END else None
            for i, j, k in zip(*(x.tolist() for x in np.nonzero(ok))):
                f, g, arc = fn[i], gn[j], alist[k]
                c = table.arc_cost(arc, f.t_hi, g.t_lo)
                if c == INF:
                    continue
                fs.append(F[i])
                gs.append(G[j])
                arcs.append(arc.index)
                ds.append(max(f.d_lo - (g.d_hi if gd is None else 0), arc.demand))
                cs.append(c)
        self._add_rows(fs, gs, arcs, ds, cs)

    def live_arcs(self):
        return self.arc_index

    # -- splitting ---------------------------------------------------------

    def replace(self, gid: int, parts: Sequence[RelaxedNode]) -> list[int]:
        """Swap cell ``gid`` for the given sub-cells and rebuild the rows that
        touched it from the rows it already had."""
        old = self.nodes[gid]
        if gid in (self.source, self.sink):
            raise AssertionError("source and sink are never split")
        self.cells[old.cust].remove(gid)
        new_ids = [self._new(p) for p in parts]
        rows = self.rows
        out_r = self._take_rows(self.out_rows, gid)
        in_r = self._take_rows(self.in_rows, gid)
        rows.alive[out_r] = False
        rows.alive[in_r] = False
        del self.nodes[gid]
        self._live[gid] = False
        out_r = out_r[self._live[rows.g[out_r]]]
        in_r = in_r[self._live[rows.f[in_r]]]
        fs, gs, ar, ds, cs = [], [], [], [], []
        for nid in new_ids:
            part = self.nodes[nid]
            for outgoing, rr in ((True, out_r), (False, in_r)):
                if not len(rr):
                    continue
                got = self._rebuild(nid, old, part, rr, outgoing)
                for lst, vals in zip((fs, gs, ar, ds, cs), got):
                    lst.extend(vals)
        self._add_rows(fs, gs, ar, ds, cs)
        self.splits += 1
        if rows.n > 4096 and rows.alive[: rows.n].sum() < rows.n // 2:
            self._compact()
        return new_ids

    def _rebuild(self, nid, old, part, rr, outgoing):
        """Rows of sub-cell ``part`` (id ``nid``) derived from the rows ``rr``
        its parent ``old`` had, as ``(fs, gs, arcs, ds, cs)`` lists.

        A split changes one aspect of the cell.  Demand splits only move the
        capacity test and ``d``; time splits only move the arc cost, and only
        at the changed end.  Visited-set splits go through ``edge_row``."""
        rows = self.rows
        other = (rows.g if outgoing else rows.f)[rr]
        arc_ix = rows.arc[rr]
        dp = self.table.arrays().demand[arc_ix]
        if part._replace(d_lo=old.d_lo, d_hi=old.d_hi) == old:
            lo, hi = part.d_lo, part.d_hi
            if outgoing:
                ok = (hi - dp >= self._dlo[other]) & (lo - dp <= self._dhi[other])
                d = np.maximum(lo - self._dhi_eff[other], dp)
            else:
                ok = (self._dhi[other] - dp >= lo) & (self._dlo[other] - dp <= hi)
                d = np.maximum(self._dlo[other] - hi, dp)  # the sink is never split
            keep = np.flatnonzero(ok)
            mine = np.full(len(keep), nid, np.int64)
            c = rows.c[rr][keep]
            pairs = (mine, other[keep]) if outgoing else (other[keep], mine)
            return pairs[0].tolist(), pairs[1].tolist(), arc_ix[keep].tolist(), d[keep].tolist(), c.tolist()
        if part._replace(t_lo=old.t_lo, t_hi=old.t_hi) == old and (
                (outgoing and part.t_hi == old.t_hi) or (not outgoing and part.t_lo == old.t_lo)):
            # the end that matters kept its time: rows carry over unchanged
            mine = [nid] * len(rr)
            o = other.tolist()
            pairs = (mine, o) if outgoing else (o, mine)
            return pairs[0], pairs[1], arc_ix.tolist(), rows.d[rr].tolist(), rows.c[rr].tolist()
        fs, gs, ar, ds, cs = [], [], [], [], []
        arcs = self.table.arcs
        for q, a in zip(other.tolist(), arc_ix.tolist()):
            arc = arcs[a]
            row = edge_row(part, self.nodes[q], arc, self.table) if outgoing else \
                edge_row(self.nodes[q], part, arc, self.table)
            if row is not None:
                if outgoing:
                    fs.append(nid); gs.append(q)
                else:
                    fs.append(q); gs.append(nid)
                ar.append(a); ds.append(row[0]); cs.append(row[1])
        return fs, gs, ar, ds, cs

    def _compact(self):
        rows = self.rows
        alive = rows.alive[: rows.n].copy()
        new_index = np.cumsum(alive) - 1
        rows.compact()
        for d in (self.out_rows, self.in_rows):
            for k, chunks in d.items():
                if chunks:
                    rr = np.concatenate(chunks)
                    d[k] = [new_index[rr[alive[rr]]]]
        # renumber the cell pairs that still have rows
        live, inverse = np.unique(rows.pair[: rows.n], return_inverse=True)
        rows.pair[: rows.n] = inverse
        self.pair_f = self.pair_f[live]
        self.pair_g = self.pair_g[live]
        self.n_pairs = len(live)
        self.pair_id = dict(zip((self.pair_f << 32 | self.pair_g).tolist(), range(self.n_pairs)))

    def reset_customer(self, u: int):
        """Collapse every cell of ``u`` back to the initial cell."""
        ids = list(self.cells.get(u, ()))
        if len(ids) <= 1:
            return
        rows = self.rows
        for gid in ids:
            rows.alive[self._take_rows(self.out_rows, gid)] = False
            rows.alive[self._take_rows(self.in_rows, gid)] = False
            del self.nodes[gid]
            self._live[gid] = False
        self.cells[u] = []
        nid = self._new(initial_cell(self.inst, u))
        self._rows_from(nid)
        for v in self.pred.get(u, ()):
            for fid in self.cells.get(v, ()):
                self._rows_from(fid, {nid})

    def check_invariants(self) -> None:
        """Cells of each customer are disjoint and cover the initial cell.
        Checked by exhaustive point sampling of the d range and the corner
        times for every visited set consistent with the initial cell."""
        inst = self.inst
        for u in inst.ids:
            base = initial_cell(inst, u)
            cells = [self.nodes[i] for i in self.cells[u]]
            for c in cells:
                assert c.d_lo <= c.d_hi and c.t_lo <= c.t_hi and c.must & ~c.may == 0
                assert not c.may >> u & 1
            ts = sorted({base.t_lo, base.t_hi} | {c.t_lo for c in cells} | {c.t_hi for c in cells})
            ds = sorted({base.d_lo, base.d_hi} | {c.d_lo for c in cells} | {c.d_hi for c in cells})
            others = [w for w in inst.ids if w != u]
            sample = [0, base.may] + [1 << w for w in others] + [base.may & ~(1 << w) for w in others]
            for d in ds:
                for t in ts:
                    for m in sample:
                        hits = sum(c.contains(d, t, m) for c in cells)
                        assert hits == 1, (u, d, t, bin(m), hits)


def init_partition(inst: Instance, table: FrontierTable, beta: dict | None = None) -> Partition:
    return Partition(inst, table, beta)


# ---------------------------------------------------------------------------
# shortest path, violations and splits


class Violation(NamedTuple):
    case: int
    positions: tuple  # path positions k of the cells to split
    value: object  # d_{0:k}, t_hat or the repeated customer


@dataclass
class PricingResult:
    route: tuple | None
    lb: object
    reduced_cost: object
    eta: object
    status: str = "optimal"  # optimal | early | bound | no_route | limit
    path_nodes: list = field(default_factory=list)
    path_arcs: list = field(default_factory=list)
    orderings: list = field(default_factory=list)
    d_fgp: list = field(default_factory=list)
    q: list = field(default_factory=list)
    customers: tuple = ()
    realized: list = field(default_factory=list)  # (u, d, t) per path node
    lb_history: list = field(default_factory=list)
    min_weight: object = None
    iterations: int = 0
    trace: list = field(default_factory=list)


def route_positions(orderings: Sequence[Sequence[int]]) -> tuple[tuple, list[int]]:
    """Customer sequence of a relaxed path and the ``q`` prefix counts of its
    nodes (``q[0] = q[1] = 0``)."""
    seq = []
    q = [0]
    served = 0
    for k, order in enumerate(orderings):
        seq.extend(order[:-1])
        if k == 0:
            q.append(0)
        else:
            served += len(order) - 1
            q.append(served)
    seq.append(orderings[-1][-1] if orderings else END)
    return tuple(seq), q


def _path_states(inst: Instance, customers, q):
    cap = inst.vehicle_capacity
    served = [0]
    for u in customers[1:-1]:
        served.append(served[-1] + inst.demand[u])
    # served[i] = demand of route positions 1..i
    d0k = [cap] + [cap - served[qk] for qk in q[1:]]
    chain = inst.departure_chain(customers)
    t_hat = [inst.horizon] + [chain[qk + 1] for qk in q[1:]]
    return d0k, t_hat, chain


def find_violation(inst: Instance, nodes: Sequence[RelaxedNode], d_fgp, demand_served, customers, q,
                   family: bool = False) -> Violation | None:
    """First applicable refinement for a relaxed path, or ``None`` if the
    path is an exact elementary route."""
    cap = inst.vehicle_capacity
    d0k, t_hat, chain = _path_states(inst, customers, q)
    inner = range(1, len(nodes) - 1)
    if sum(d_fgp) != cap or demand_served > cap:
        for k in inner:
            g = nodes[k]
            if g.d_hi >= d0k[k] > g.d_lo:
                return Violation(1, (k,), d0k[k])
        for k in inner:
            g = nodes[k]
            if g.d_hi > d0k[k] >= g.d_lo:
                return Violation(2, (k,), d0k[k])
        raise AssertionError("demand violation without a splittable cell")
    if chain[-1] == -math.inf:
        for k in inner:
            g = nodes[k]
            if g.t_hi > t_hat[k] >= g.t_lo:
                return Violation(3, (k,), t_hat[k])
        raise AssertionError("time violation without a splittable cell")
    if family:
        return None
    cyc = _min_cycle(customers, q, len(nodes))
    if cyc is None:
        return None
    u, k1, k2 = cyc
    targets = tuple(k for k in range(k1 + 1, k2) if nodes[k].may >> u & 1 and not nodes[k].must >> u & 1)
    if not targets:
        raise AssertionError("cycle without a splittable cell")
    return Violation(4, targets, u)


def _min_cycle(customers, q, n_nodes):
    last = {}
    best = None
    pos_of = [qk + 1 for qk in q[1:]]  # route position of node k (k >= 1)
    for i2, u in enumerate(customers):
        if u <= 0:
            continue
        if u in last:
            i1 = last[u]
            k1 = max(k for k in range(1, n_nodes) if pos_of[k - 1] <= i1)
            k2 = min(k for k in range(1, n_nodes) if i2 <= pos_of[k - 1])
            key = (k2 - k1 - 1, i1)
            if best is None or key < best[0]:
                best = (key, (u, k1, k2))
        last[u] = i2
    return None if best is None else best[1]


def split_node(node: RelaxedNode, case: int, value) -> tuple[RelaxedNode, RelaxedNode]:
    if case == 1:
        if not node.d_lo < value <= node.d_hi:
            raise AssertionError("case 1 split outside the cell")
        return node._replace(d_hi=value - 1), node._replace(d_lo=value)
    if case == 2:
        if not node.d_lo <= value < node.d_hi:
            raise AssertionError("case 2 split outside the cell")
        return node._replace(d_lo=value + 1), node._replace(d_hi=value)
    if case == 3:
        if not node.t_lo <= value < node.t_hi:
            raise AssertionError("case 3 split outside the cell")
        return node._replace(t_lo=value + 1), node._replace(t_hi=value)
    if case == 4:
        bit = 1 << value
        if not (node.may & bit and not node.must & bit):
            raise AssertionError("case 4 split on a customer the cell already pins")
        return node._replace(must=node.must | bit), node._replace(may=node.may & ~bit)
    raise ValueError(case)


def split(part: Partition, path_ids: Sequence[int], violation: Violation) -> list:
    """Apply a violation's splits to the partition; returns the new ids."""
    created = []
    for k in violation.positions:
        gid = path_ids[k]
        g1, g2 = split_node(part.nodes[gid], violation.case, violation.value)
        created.append((gid, part.replace(gid, (g1, g2))))
    return created


def project(inst: Instance, customers: Sequence[int]) -> tuple:
    """Greedy elementary feasible route from a relaxed visit sequence."""
    route = [START, END]
    seen = set()
    for u in customers:
        if u <= 0 or u in seen:
            continue
        cand = route[:-1] + [u, END]
        if inst.route_feasible(cand):
            route = cand
            seen.add(u)
    return tuple(route)


@dataclass
class _Weights:
    scale: object  # S
    eta_scaled: object  # E = S * eta
    arc_pi: np.ndarray  # S * pi_p per arc index
    dtype: object
    # per-row weights and per-pair minima already computed, valid for one
    # (rows, gen); rows are append-only between compactions
    _key: tuple = (None, -1)
    _wt: np.ndarray | None = None
    _wt_done: int = 0
    _best: np.ndarray | None = None
    _best_done: int = 0

    def _sync(self, rows: _Rows):
        key = (id(rows), rows.gen)
        if self._key != key:
            self._key, self._wt, self._best, self._best_done = key, None, None, 0
            self._wt_done = 0

    def rows(self, rows: _Rows) -> np.ndarray:
        """Weights of rows[:n]; only the tail added since the last call is
        computed."""
        self._sync(rows)
        done = self._wt_done
        if done < rows.n:
            if self._wt is None or len(self._wt) < rows.n:
                grown = np.zeros(max(rows.n, 2 * (0 if self._wt is None else len(self._wt))), self.dtype)
                if self._wt is not None:
                    grown[:done] = self._wt[:done]
                self._wt = grown
            s = slice(done, rows.n)
            if self.dtype is object:
                self._wt[s] = (self.eta_scaled * rows.d[s].astype(object) - self.arc_pi[rows.arc[s]]
                               + self.scale * rows.c[s].astype(object))
            else:
                self._wt[s] = self.eta_scaled * rows.d[s] - self.arc_pi[rows.arc[s]] + self.scale * rows.c[s]
            self._wt_done = rows.n
        if self._wt is None:
            return np.zeros(0, self.dtype)
        return self._wt[: rows.n]

    @property
    def top(self):
        return np.inf if self.dtype is float else np.iinfo(np.int64).max

    def pair_best(self, part: "Partition") -> np.ndarray:
        """Least row weight per cell pair (``top`` for pairs with no rows),
        numeric dtypes only.  Dead pairs keep their value; callers mask them."""
        rows = part.rows
        wt = self.rows(rows)
        n_p = part.n_pairs
        if self._best is None or len(self._best) < n_p:
            grown = np.full(max(n_p, 2 * (0 if self._best is None else len(self._best))), self.top, wt.dtype)
            if self._best is not None:
                grown[: len(self._best)] = self._best
            self._best = grown
        if self._best_done < rows.n:
            s = slice(self._best_done, rows.n)
            np.minimum.at(self._best, rows.pair[s], wt[s])
            self._best_done = rows.n
        return self._best[:n_p]


def _weights(inst: Instance, table: FrontierTable, duals, eta, exact: bool) -> _Weights:
    cover = table.arrays().cover
    if exact:
        S = _dual_scale(duals, inst.ids, (eta,))
        E = int(eta * S)
        vec = _dual_array(inst, duals, S)
        if vec.dtype == object:
            pis = cover.astype(object) @ vec
        else:
            pis = cover @ vec
        max_c = max((a.frontier[-1].cost for a in table.arcs if a.frontier), default=0)
        bound = abs(E) * inst.vehicle_capacity + S * max_c + (int(np.abs(pis).max()) if len(pis) else 0)
        dtype = np.int64 if bound < 2 ** 60 and vec.dtype != object else object
        return _Weights(S, E, pis.astype(dtype), dtype)
    return _Weights(1, float(eta), cover @ _dual_array(inst, duals), float)


def shortest_path(part: Partition, w: _Weights):
    """Dijkstra over the pair-minimum of the candidate rows.  Returns
    ``(dist_to_sink, node ids, row ids, min finite pair weight)`` with
    ``dist`` in scaled units, or ``None`` if the sink is unreachable."""
    rows = part.rows
    n_p = part.n_pairs
    pf, pg = part.pair_f[:n_p], part.pair_g[:n_p]
    live = part._live[pf] & part._live[pg]
    if w.dtype is object:
        alive = np.flatnonzero(rows.alive[: rows.n])
        pid = rows.pair[alive]
        best = [None] * n_p
        for p, x in zip(pid.tolist(), w.rows(rows)[alive]):
            if best[p] is None or x < best[p]:
                best[p] = x
        has = np.array([b is not None for b in best], bool)
        pw = [b for b in best if b is not None]
    else:
        best = w.pair_best(part)
        has = live & (best < w.top)
        pw = best[has]
    if not len(pw):
        return None
    min_w = min(pw) if w.dtype is object else pw.min().item()
    f, g = pf[has], pg[has]
    if w.dtype is float:
        path = _csgraph_path(part, f, g, pw)
    else:
        path = _heap_path(part, f, g, pw)
    if path is None:
        return None
    dist, nodes = path
    # cheapest row of each path pair, lowest arc index on ties
    wt = w.rows(rows)
    picked = []
    for a, b in zip(nodes, nodes[1:]):
        rr = np.concatenate(part.out_rows[a])
        rr = rr[rows.alive[rr] & (rows.g[rr] == b)]
        k = min(range(len(rr)), key=lambda i: (wt[rr[i]], rows.arc[rr[i]]))
        picked.append(int(rr[k]))
    return dist, nodes, picked, min_w


def _heap_path(part: Partition, f, g, wt):
    """Exact weights: Dijkstra with ties going to the smaller predecessor id."""
    order = np.argsort(f, kind="stable")
    fl = f[order].tolist()
    gl = g[order].tolist()
    wl = [wt[i] for i in order.tolist()] if isinstance(wt, list) else wt[order].tolist()
    starts = {}
    i, m = 0, len(fl)
    while i < m:
        j = i
        while j < m and fl[j] == fl[i]:
            j += 1
        starts[fl[i]] = (i, j)
        i = j
    src, snk = part.source, part.sink
    dist = {src: 0}
    prev = {}
    done = set()
    heap = [(0, src)]
    while heap:
        du, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == snk:
            break
        span = starts.get(u)
        if span is None:
            continue
        for e in range(*span):
            v = gl[e]
            if v in done:
                continue
            nd = du + wl[e]
            old = dist.get(v)
            if old is None or nd < old or (nd == old and u < prev[v]):
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    if snk not in done:
        return None
    path = [snk]
    while path[-1] != src:
        path.append(prev[path[-1]])
    path.reverse()
    return dist[snk], path


def _csgraph_path(part: Partition, f, g, wt):
    """Float weights: compiled Dijkstra.  Ties between equal-length paths
    are broken by scipy, not by node id."""
    N = part._next_id
    G = csr_matrix((np.maximum(wt, 0.0), (f, g)), shape=(N, N))
    dist, pred = dijkstra(G, directed=True, indices=part.source, return_predecessors=True)
    snk = part.sink
    if not np.isfinite(dist[snk]):
        return None
    path = [snk]
    while path[-1] != part.source:
        path.append(int(pred[path[-1]]))
    path.reverse()
    return float(dist[snk]), path


def price(inst: Instance, table: FrontierTable, duals, cache: Partition | None = None, *,
          beta: dict | None = None, alpha: float = 0.2, epsilon: float = EPS,
          bound_exit: bool = False, exact_arithmetic: bool = False,
          max_iterations: int | None = None, trace: bool = False,
          prune: bool = False) -> tuple[PricingResult, Partition]:
    """Lowest reduced-cost route over all routes (``beta=None``) or over one
    family.  ``cache`` is the partition retained from earlier calls and is
    updated in place.  ``alpha > 0`` enables early exit with a projected
    route once it is within that factor of the lower bound (all-routes mode
    only)."""
    family = beta is not None
    if cache is None:
        cache = Partition(inst, table, beta)
    part = cache
    if family:
        alpha = 0.0
    if exact_arithmetic:
        duals = {u: Fraction(duals[u]) for u in inst.ids}
    exact = all(_exact(duals[u]) for u in inst.ids)
    eta = compute_eta(duals, table, part.live_arcs())
    if not exact:
        eta = eta + FLOAT_ETA_NUDGE * max(1.0, eta)
    w = _weights(inst, table, duals, eta, exact)
    S = w.scale
    cap = inst.vehicle_capacity
    res = PricingResult(None, INF, INF, eta)
    it = 0
    while True:
        sp = shortest_path(part, w)
        it += 1
        if sp is None:
            res.status = "no_route"
            res.iterations = it
            return res, part
        dist, ids, rids, min_w = sp
        lb = (Fraction(dist, S) if exact else dist) - eta * cap
        mw = None if min_w is None else (Fraction(min_w, S) if exact else min_w)
        if mw is not None and (res.min_weight is None or mw < res.min_weight):
            res.min_weight = mw
        res.lb_history.append(lb)
        nodes = [part.nodes[i] for i in ids]
        rows = part.rows
        arcs = [table.arcs[int(rows.arc[r])] for r in rids]
        d_fgp = [int(rows.d[r]) for r in rids]
        orderings = [table.arc_entry(a, nodes[k].t_hi, nodes[k + 1].t_lo).ordering for k, a in enumerate(arcs)]
        customers, q = route_positions(orderings)
        served = sum(a.demand for a in arcs)
        viol = find_violation(inst, nodes, d_fgp, served, customers, q, family)
        res.lb, res.eta, res.iterations = lb, eta, it
        res.path_nodes, res.path_arcs, res.orderings = nodes, arcs, orderings
        res.d_fgp, res.q, res.customers = d_fgp, q, customers
        if viol is None:
            route = customers
            res.route = route
            res.reduced_cost = inst.reduced_cost(route, duals)
            res.status = "optimal"
            d0k, t_hat, _ = _path_states(inst, customers, q)
            res.realized = [(nodes[k].cust, d0k[k] if k < len(nodes) - 1 else 0,
                             t_hat[k] if k < len(nodes) - 1 else 0) for k in range(len(nodes))]
            if trace:
                res.trace.append({"iteration": it, "lb": lb, "case": None})
            if prune and not family:
                _prune(part, customers)
            return res, part
        if family and bound_exit and lb >= -epsilon:
            # certified: nothing in this family prices out
            res.status = "bound"
            if trace:
                res.trace.append({"iteration": it, "lb": lb, "case": "bound"})
            return res, part
        if not family and (alpha > 0 or bound_exit):
            proj = project(inst, customers)
            rc = inst.reduced_cost(proj, duals) if len(proj) > 2 else INF
            if alpha > 0 and rc < -epsilon and rc < alpha * lb:
                res.route, res.reduced_cost, res.status = proj, rc, "early"
                if trace:
                    res.trace.append({"iteration": it, "lb": lb, "case": "early"})
                return res, part
            if bound_exit and lb >= -epsilon:
                res.route, res.reduced_cost, res.status = (proj if len(proj) > 2 else None), rc, "bound"
                if trace:
                    res.trace.append({"iteration": it, "lb": lb, "case": "bound"})
                return res, part
        created = split(part, ids, viol)
        if trace:
            res.trace.append({
                "iteration": it, "lb": lb, "case": viol.case, "value": viol.value,
                "split": [(str_node(nodes[k]),) for k in viol.positions],
                "parts": [tuple(str_node(part.nodes[i]) for i in new) for _, new in created],
            })
        if max_iterations is not None and it >= max_iterations:
            res.status = "limit"
            return res, part


def _prune(part: Partition, customers):
    keep = set(customers)
    for u in part.inst.ids:
        if u not in keep:
            part.reset_customer(u)


def str_node(g: RelaxedNode) -> str:
    def ms(m):
        out, u = [], 0
        while m:
            if m & 1:
                out.append(u)
            m >>= 1
            u += 1
        return "{" + ",".join(map(str, out)) + "}"

    return f"({g.cust},d[{g.d_lo},{g.d_hi}],t[{g.t_lo},{g.t_hi}],M-{ms(g.must)},M+{ms(g.may)})"


def format_trace(res: PricingResult) -> list[str]:
    lines = []
    for t in res.trace:
        if t["case"] in (None, "early", "bound"):
            lines.append(f"iter {t['iteration']} lb {t['lb']} stop {t['case'] or 'exact'}")
        else:
            lines.append(f"iter {t['iteration']} lb {t['lb']} case {t['case']} at {t['value']} "
                         f"split {t['split'][0][0]}" + (f" (+{len(t['split']) - 1} more)" if len(t['split']) > 1 else ""))
    return lines
