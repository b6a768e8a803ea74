"""Run reports: one flat record per solver run, serializable to JSON/CSV."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, fields

SCHEMA_VERSION = 1


@dataclass
class RunReport:
    schema_version: int
    instance: str
    mode: str
    la_neighbors: int
    n_customers: int
    time_scale: int
    alpha: float
    epsilon: float
    iterations: int  # outer iterations (gm) or master solves (cg)
    rmp_solves: int
    pricing_calls: int
    pricing_time_exact: float | None  # all times in milliseconds
    pricing_time_family: float | None
    rmp_lp_time: float | None
    mp_loop_time: float | None
    frontier_time: float | None
    ilp_time: float | None
    total_time: float | None
    lp_objective: float | None  # scaled units, service folded into travel
    lp_distance: float | None  # raw units, service removed
    ilp_objective: float | None
    gap: float | None
    lagrangian_bound: float | None
    converged: bool
    columns: int | None
    families: int | None
    pool_nodes: int | None
    pool_arcs: int | None
    edges: int | None
    min_edge_weight: float | None
    status: str = ""
    error: str | None = None

    @classmethod
    def build(cls, inst, mode, config, clock, **kw):
        lp = kw.get("lp_objective")
        fam = clock.ms("pricing_family")
        return cls(
            schema_version=SCHEMA_VERSION,
            instance=inst.name,
            mode=mode,
            la_neighbors=config.la_neighbors,
            n_customers=inst.n,
            time_scale=inst.time_scale,
            alpha=config.alpha,
            epsilon=config.epsilon,
            iterations=kw["iterations"],
            rmp_solves=kw["rmp_solves"],
            pricing_calls=kw.get("pricing_calls", 0),
            pricing_time_exact=clock.ms("pricing_exact") or 0.0,
            pricing_time_family=(fam or 0.0) if mode == "gm" else None,
            rmp_lp_time=clock.ms("rmp") or 0.0,
            mp_loop_time=clock.ms("mp_loop"),
            frontier_time=clock.ms("frontier"),
            ilp_time=clock.ms("ilp"),
            total_time=clock.ms("total"),
            lp_objective=lp,
            lp_distance=None if lp is None else (lp - inst.service_offset) / inst.time_scale,
            ilp_objective=kw.get("ilp_objective"),
            gap=kw.get("gap"),
            lagrangian_bound=kw.get("lagrangian_bound"),
            converged=kw["converged"],
            columns=kw.get("columns"),
            families=kw.get("families"),
            pool_nodes=kw.get("pool_nodes"),
            pool_arcs=kw.get("pool_arcs"),
            edges=kw.get("edges"),
            min_edge_weight=kw.get("min_edge_weight"),
            status="converged" if kw["converged"] else "limit",
        )

    @classmethod
    def failed(cls, instance: str, mode: str, k: int, message: str) -> "RunReport":
        blank = {f.name: None for f in fields(cls)}
        blank.update(schema_version=SCHEMA_VERSION, instance=instance, mode=mode, la_neighbors=k,
                     converged=False, status="error", error=message)
        return cls(**blank)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["lagrangian_bound"] is not None and d["lagrangian_bound"] == float("-inf"):
            d["lagrangian_bound"] = None
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def field_names() -> list[str]:
    return [f.name for f in fields(RunReport)]


def to_csv(reports, header=True) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=field_names())
    if header:
        w.writeheader()
    for r in reports:
        w.writerow(r.to_dict())
    return buf.getvalue()


def append_csv(path, report: RunReport):
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        fh.write(to_csv([report], header=new))
