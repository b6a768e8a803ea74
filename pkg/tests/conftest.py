import json
from importlib import resources
from pathlib import Path

import pytest

from lacg.instance import Customer, Instance, load_solomon


def toy_instance(windows, travel, demand=None, capacity=100, horizon=200, name="toy"):
    """Instance straight from remaining-time windows ``{u: (early, late)}`` and
    a travel dict ``{(u, v): t}``; missing pairs get ``horizon`` (unusable)."""
    ids = sorted(windows)
    n = len(ids)
    assert ids == list(range(1, n + 1))
    demand = demand or {u: 1 for u in ids}
    custs = [Customer(u, demand[u], windows[u][0], windows[u][1], 0) for u in ids]
    mat = [[horizon] * (n + 3) for _ in range(n + 3)]
    for (u, v), t in travel.items():
        mat[u][v] = t
    for u in ids:
        for d in (-1, -2):
            mat[d][u] = travel.get((-1, u), mat[d][u])
            mat[u][d] = travel.get((u, -2), mat[u][d])
    return Instance(name, custs, capacity, horizon, mat, normalized=True)


@pytest.fixture
def toy():
    return toy_instance


def solomon(name, n=25):
    path = resources.files("lacg") / "data" / "solomon" / f"{name}.txt"
    return load_solomon(path, 10, n)


FIXTURES = Path(__file__).parent / "fixtures"


def trace_fixture(name="trace3.json"):
    """The hand-worked pricing fixture: ``(instance, duals, spec dict)``."""
    spec = json.loads((FIXTURES / name).read_text())
    travel = {tuple(int(x) for x in k.split(",")): t for k, t in spec["travel"].items()}
    windows = {int(u): tuple(w) for u, w in spec["windows"].items()}
    demand = {int(u): d for u, d in spec["demand"].items()}
    inst = toy_instance(windows, travel, demand=demand, capacity=spec["capacity"],
                        horizon=spec["horizon"], name=name)
    duals = {int(u): p for u, p in spec["duals"].items()}
    return inst, duals, spec


def trace_mismatches(res, spec):
    """Differences between a traced pricing run and the fixture's steps."""
    got, want = res.trace, spec["steps"]
    out = []
    if len(got) != len(want):
        out.append(f"{len(got)} iterations, expected {len(want)}")
    for k, (g, w) in enumerate(zip(got, want)):
        if g["lb"] != w["lb"] or g["case"] != w["case"]:
            out.append(f"step {k}: lb {g['lb']} case {g['case']}, expected lb {w['lb']} case {w['case']}")
            continue
        if w["case"] is None:
            continue
        if g["value"] != w["value"] or g["split"][0][0] != w["cell"] or list(g["parts"][0]) != w["parts"]:
            out.append(f"step {k}: split {g['split'][0][0]} at {g['value']} into {list(g['parts'][0])}")
    if tuple(res.route) != tuple(spec["route"]) or res.reduced_cost != spec["reduced_cost"]:
        out.append(f"route {res.route} rc {res.reduced_cost}")
    return out


# one verdict line per acceptance criterion, printed after the run
VERDICTS: dict = {}


def verdict(n: int, ok: bool, detail: str) -> None:
    VERDICTS[n] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(VERDICTS):
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
