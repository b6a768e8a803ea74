"""CVRPTW instances: Solomon parsing, normalization, feasibility helpers and
LA-neighborhoods.

Time runs in the *remaining-time* convention: the clock counts down from the
horizon ``t0`` to 0, so a customer's earliest service start ``tw_early`` is
the larger number and ``tw_late`` the smaller one.

Per-node arrays (demand, windows, travel rows/cols) have length ``n + 3``.
Customers occupy slots ``1..n``; slot ``n + 1`` is the end depot and slot
``n + 2`` the start depot, so plain Python negative indexing resolves node
ids ``-2`` and ``-1`` without any translation.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Sequence

START = -1
END = -2


class InstanceError(ValueError):
    """Malformed or infeasible instance data."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Customer:
    id: int
    demand: int
    tw_early: int
    tw_late: int
    service_time: int
    x: float = 0.0
    y: float = 0.0


@dataclass
class Instance:
    name: str
    customers: list[Customer]
    vehicle_capacity: int
    horizon: int
    travel: list[list[int]]
    time_scale: int = 10
    normalized: bool = False
    service_offset: int = 0

    demand: list[int] = field(init=False, repr=False)
    early: list[int] = field(init=False, repr=False)
    late: list[int] = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.customers)
        if [c.id for c in self.customers] != list(range(1, n + 1)):
            raise InstanceError("customer ids must be 1..n in order")
        if len(self.travel) != n + 3 or any(len(r) != n + 3 for r in self.travel):
            raise InstanceError("travel matrix must be (n+3)x(n+3)")
        self.demand = [0] * (n + 3)
        self.early = [0] * (n + 3)
        self.late = [0] * (n + 3)
        for c in self.customers:
            self.demand[c.id] = c.demand
            self.early[c.id] = c.tw_early
            self.late[c.id] = c.tw_late
        for depot in (START, END):
            self.early[depot] = self.horizon
            self.late[depot] = 0

    @property
    def n(self) -> int:
        return len(self.customers)

    @property
    def ids(self) -> range:
        return range(1, self.n + 1)

    @property
    def all_mask(self) -> int:
        return sum(1 << u for u in self.ids)

    def t(self, u: int, v: int) -> int:
        return self.travel[u][v]

    # -- routes -----------------------------------------------------------

    def departure_chain(self, route: Sequence[int]) -> list[float]:
        """Departure times (remaining) along ``route`` with no unnecessary
        waiting; ``-inf`` from the first window miss onwards."""
        out = [self.horizon]
        cur = self.horizon
        for prev, u in zip(route, route[1:]):
            if cur == -math.inf:
                out.append(cur)
                continue
            arrive = cur - self.travel[prev][u]
            cur = -math.inf if arrive < self.late[u] else min(self.early[u], arrive)
            out.append(cur)
        return out

    def route_time_feasible(self, route: Sequence[int]) -> bool:
        return self.departure_chain(route)[-1] != -math.inf

    def route_demand(self, route: Iterable[int]) -> int:
        return sum(self.demand[u] for u in route if u > 0)

    def route_feasible(self, route: Sequence[int]) -> bool:
        inner = [u for u in route if u > 0]
        if len(set(inner)) != len(inner):
            return False
        if self.route_demand(inner) > self.vehicle_capacity:
            return False
        return self.route_time_feasible(route)

    def route_cost(self, route: Sequence[int]) -> int:
        return sum(self.travel[a][b] for a, b in zip(route, route[1:]))

    def reduced_cost(self, route: Sequence[int], duals):
        return self.route_cost(route) - sum(duals[u] for u in route if u > 0)

    def pair_route_feasible(self, u: int, v: int) -> bool:
        """Whether ``[-1, u, v, -2]`` respects capacity and time windows."""
        if self.demand[u] + self.demand[v] > self.vehicle_capacity:
            return False
        return self.route_time_feasible((START, u, v, END))

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        order = [START, *self.ids, END]
        return {
            "name": self.name,
            "time_scale": self.time_scale,
            "vehicle_capacity": self.vehicle_capacity,
            "horizon": self.horizon,
            "normalized": self.normalized,
            "service_offset": self.service_offset,
            "customers": [
                {
                    "id": c.id,
                    "demand": c.demand,
                    "tw_early": c.tw_early,
                    "tw_late": c.tw_late,
                    "service_time": c.service_time,
                    "x": c.x,
                    "y": c.y,
                }
                for c in self.customers
            ],
            "node_order": order,
            "travel": [[self.travel[u][v] for v in order] for u in order],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data: dict) -> "Instance":
        customers = [Customer(**c) for c in data["customers"]]
        n = len(customers)
        travel = [[0] * (n + 3) for _ in range(n + 3)]
        order = data["node_order"]
        for a, u in enumerate(order):
            for b, v in enumerate(order):
                travel[u][v] = int(data["travel"][a][b])
        return cls(
            name=data["name"],
            customers=customers,
            vehicle_capacity=data["vehicle_capacity"],
            horizon=data["horizon"],
            travel=travel,
            time_scale=data["time_scale"],
            normalized=data["normalized"],
            service_offset=data["service_offset"],
        )

    @classmethod
    def from_json(cls, text: str) -> "Instance":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json(sort_keys=True).encode()).hexdigest()[:16]


def _scaled(value: float, scale: int) -> int:
    return int(Fraction(str(value)) * scale)


def _distance(a: Customer | tuple, b: Customer | tuple, scale: int) -> int:
    ax, ay = (a.x, a.y) if isinstance(a, Customer) else a
    bx, by = (b.x, b.y) if isinstance(b, Customer) else b
    dx, dy = ax - bx, ay - by
    if float(dx).is_integer() and float(dy).is_integer():
        return math.isqrt(int(dx) ** 2 * scale**2 + int(dy) ** 2 * scale**2)
    return math.floor(math.hypot(dx, dy) * scale)


def build_instance(
    name: str,
    depot: tuple[float, float],
    horizon_raw: float,
    capacity: int,
    rows: Sequence[tuple],
    time_scale: int = 10,
) -> Instance:
    """Assemble an un-normalized instance from raw Solomon-style rows
    ``(id, x, y, demand, ready, due, service)``; ids are renumbered 1..n
    after sorting."""
    if not rows:
        raise InstanceError("no customers")
    if time_scale <= 0:
        raise InstanceError("time_scale must be positive")
    customers = []
    for new_id, (cid, x, y, dem, ready, due, service) in enumerate(sorted(rows), 1):
        if due < ready:
            raise InstanceError(f"customer {cid}: due time {due} before ready time {ready}")
        if dem > capacity:
            raise InstanceError(f"customer {cid}: demand {dem} exceeds capacity {capacity}")
        if dem <= 0:
            raise InstanceError(f"customer {cid}: demand must be positive")
        customers.append(
            Customer(
                id=new_id,
                demand=int(dem),
                tw_early=_scaled(horizon_raw - ready, time_scale),
                tw_late=max(0, _scaled(horizon_raw - due, time_scale)),
                service_time=_scaled(service, time_scale),
                x=float(x),
                y=float(y),
            )
        )
    n = len(customers)
    travel = [[0] * (n + 3) for _ in range(n + 3)]
    points = {c.id: c for c in customers}
    for u in [START, END, *points]:
        pu = depot if u < 0 else points[u]
        for v in [START, END, *points]:
            if u == v:
                continue
            pv = depot if v < 0 else points[v]
            travel[u][v] = _distance(pu, pv, time_scale)
    travel[START][END] = travel[END][START] = 0
    return Instance(
        name=name,
        customers=customers,
        vehicle_capacity=int(capacity),
        horizon=_scaled(horizon_raw, time_scale),
        travel=travel,
        time_scale=time_scale,
    )


def parse_solomon(text: str, time_scale: int = 10, max_customers: int | None = None,
                  name: str | None = None) -> Instance:
    """Parse Solomon benchmark text into an un-normalized :class:`Instance`."""
    lines = text.splitlines()
    capacity = None
    first_name = None
    rows = []
    depot_row = None
    section = None
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        upper = line.upper()
        if first_name is None and section is None and upper not in ("VEHICLE", "CUSTOMER"):
            first_name = line
            continue
        if upper == "VEHICLE":
            section = "vehicle"
            continue
        if upper == "CUSTOMER":
            section = "customer"
            continue
        if upper.startswith("NUMBER") or upper.startswith("CUST"):
            continue
        parts = line.split()
        if section == "vehicle":
            try:
                _, capacity = int(parts[0]), int(parts[1])
            except (ValueError, IndexError):
                raise InstanceError("expected '<vehicles> <capacity>'", lineno) from None
        elif section == "customer":
            if len(parts) != 7:
                raise InstanceError(f"expected 7 fields, got {len(parts)}", lineno)
            try:
                cid = int(parts[0])
                vals = [float(p) for p in parts[1:]]
            except ValueError:
                raise InstanceError(f"non-numeric field in {line!r}", lineno) from None
            row = (cid, *vals)
            if depot_row is None:
                depot_row = row
            else:
                rows.append((lineno, row))
        else:
            raise InstanceError(f"unexpected content {line!r}", lineno)
    if capacity is None:
        raise InstanceError("missing VEHICLE section")
    if depot_row is None:
        raise InstanceError("missing depot row")
    if max_customers is not None:
        rows = rows[:max_customers]
    for lineno, (cid, x, y, dem, ready, due, service) in rows:
        if due < ready:
            raise InstanceError(f"customer {cid}: due time before ready time", lineno)
        if dem > capacity:
            raise InstanceError(f"customer {cid}: demand exceeds capacity", lineno)
    raw_rows = [(int(r[0]), *r[1:]) for _, r in rows]
    _, dx, dy, _, _, ddue, _ = depot_row
    label = name or (first_name or "instance")
    if max_customers is not None:
        label = f"{label}.{len(raw_rows)}"
    return build_instance(label, (dx, dy), ddue, capacity, raw_rows, time_scale)


def load_solomon(path, time_scale: int = 10, max_customers: int | None = None) -> Instance:
    with open(path) as fh:
        return normalize(parse_solomon(fh.read(), time_scale, max_customers))


def normalize(inst: Instance) -> Instance:
    """Fold service times into outgoing travel so that ``c_uv = t_uv``."""
    if inst.normalized:
        return inst
    travel = [row[:] for row in inst.travel]
    for c in inst.customers:
        row = travel[c.id]
        for v in range(len(row)):
            if v != c.id and v != 0:
                row[v] += c.service_time
    return replace(
        inst,
        travel=travel,
        normalized=True,
        service_offset=sum(c.service_time for c in inst.customers),
    )


@dataclass(frozen=True)
class NeighborSets:
    k: int
    neighbors: dict[int, tuple[int, ...]]

    def __getitem__(self, u: int) -> tuple[int, ...]:
        return self.neighbors.get(u, ())

    def mask(self, u: int) -> int:
        return sum(1 << v for v in self[u])


def compute_la_neighbors(inst: Instance, k: int) -> NeighborSets:
    """The ``k`` cheapest customers reachable from ``u`` in a two-customer
    route (either direction), ties broken by id."""
    if k < 0:
        raise ValueError("k must be non-negative")
    out = {}
    for u in inst.ids:
        cands = [
            (inst.travel[u][v], v)
            for v in inst.ids
            if v != u and (inst.pair_route_feasible(u, v) or inst.pair_route_feasible(v, u))
        ]
        out[u] = tuple(v for _, v in sorted(cands)[:k])
    return NeighborSets(k, out)


def random_instance(n: int, seed: int, capacity: int = 40, time_scale: int = 10,
                    horizon: int = 230, service: int = 5) -> Instance:
    """Uniform Euclidean instance whose windows keep every singleton route
    feasible.  Returned normalized."""
    rng = random.Random(seed)
    depot = (50, 50)
    rows = []
    for cid in range(1, n + 1):
        x, y = rng.randint(0, 100), rng.randint(0, 100)
        dist = math.ceil(math.hypot(x - depot[0], y - depot[1]))
        lo = dist
        hi = horizon - service - dist
        width = rng.randint(20, 120)
        ready = rng.randint(lo, max(lo, hi - 1))
        due = min(hi, ready + width)
        rows.append((cid, x, y, rng.randint(1, 12), ready, due, service))
    return normalize(build_instance(f"rand{n}-{seed}", depot, horizon, capacity, rows, time_scale))
