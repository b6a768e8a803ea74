import numpy as np
import pytest
from scipy.sparse import csr_matrix

from lacg import lp as lpmod
from lacg.lp import (
    BackendError,
    IncrementalLP,
    LinearModel,
    resolve_backend,
    solve_ilp,
    solve_lp,
    to_sparse,
    write_lp,
)


def test_min_x_at_least_one():
    m = LinearModel()
    x = m.add_var(1.0)
    m.add_row({x: 1.0}, ">=", 1)
    sol = solve_lp(m)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(1.0)
    assert sol.duals == pytest.approx([1.0])


@pytest.mark.parametrize("backend", ["highs", "highs-ds", "highs-ipm"])
def test_strong_duality_and_signs(backend):
    # cover 3 items with 4 sets
    sets = [({0, 1}, 3.0), ({1, 2}, 4.0), ({0, 2}, 5.0), ({0}, 1.5)]
    m = LinearModel()
    for _, c in sets:
        m.add_var(c)
    for item in range(3):
        m.add_row({j: 1.0 for j, (s, _) in enumerate(sets) if item in s}, ">=", 1)
    sol = solve_lp(m, backend)
    assert sol.objective == pytest.approx(sum(sol.duals), abs=1e-7)
    assert all(d >= -1e-9 for d in sol.duals)
    # reduced costs are nonnegative at optimality
    for s, c in sets:
        assert c - sum(sol.duals[i] for i in s) >= -1e-7


def test_equality_and_le_rows():
    m = LinearModel()
    a, b = m.add_var(1.0), m.add_var(2.0)
    m.add_row({a: 1.0, b: 1.0}, "=", 3)
    m.add_row({a: 1.0}, "<=", 1)
    sol = solve_lp(m)
    assert sol.objective == pytest.approx(5.0)
    assert sol.x == pytest.approx([1.0, 2.0])
    assert sol.duals[1] <= 1e-9  # raising the <= bound can only help


def test_ilp_rounds_fractional_cover():
    # three half-routes over two customers, each pair covered twice
    m = LinearModel()
    for c in (1.0, 1.0, 1.0):
        m.add_var(c, "I")
    m.add_row({0: 1.0, 1: 1.0}, ">=", 1)
    m.add_row({1: 1.0, 2: 1.0}, ">=", 1)
    m.add_row({0: 1.0, 2: 1.0}, ">=", 1)
    lp = solve_lp(m)
    ilp = solve_ilp(m)
    assert lp.objective == pytest.approx(1.5)
    assert ilp.objective == pytest.approx(2.0)
    assert ilp.objective - lp.objective >= 0


def test_integral_lp_has_zero_gap():
    m = LinearModel()
    x = m.add_var(2.0, "I")
    m.add_row({x: 1.0}, ">=", 1)
    assert solve_ilp(m).objective == pytest.approx(solve_lp(m).objective)


def test_infeasible_reported():
    m = LinearModel()
    x = m.add_var(1.0)
    m.add_row({x: 1.0}, "<=", -1)
    assert solve_lp(m).status == "infeasible"


def test_unknown_backend(monkeypatch):
    with pytest.raises(BackendError):
        resolve_backend("glpk")
    monkeypatch.setenv("LACG_BACKEND", "highs-ipm")
    assert resolve_backend() == "highs-ipm"
    monkeypatch.setenv("LACG_BACKEND", "nope")
    with pytest.raises(BackendError):
        resolve_backend()


def _grow(lp):
    lp.add_rows(np.ones(2), np.full(2, np.inf))
    lp.add_cols([3.0, 3.0], csr_matrix(np.array([[1.0, 0.0], [0.0, 1.0]])))
    first = lp.solve()
    lp.add_cols([4.0], csr_matrix(np.array([[1.0], [1.0]])))
    second = lp.solve()
    lp.add_rows([0.0], [0.0])  # empty equality row, harmless
    lp.add_cols([1.0], csr_matrix(np.array([[1.0], [0.0], [1.0]])))
    third = lp.solve()
    return first, second, third


@pytest.mark.parametrize("warm", [True, False])
def test_incremental_lp(warm):
    first, second, third = _grow(IncrementalLP(warm=warm))
    assert first.objective == pytest.approx(6.0)
    assert first.duals[:2] == pytest.approx([3.0, 3.0])
    assert second.objective == pytest.approx(4.0)
    # column 3 is balanced by nothing on row 2, so it cannot be used
    assert third.objective == pytest.approx(4.0)
    assert third.x[3] == pytest.approx(0.0)


def test_incremental_warm_equals_cold():
    a = _grow(IncrementalLP(warm=True))
    b = _grow(IncrementalLP(warm=False))
    for x, y in zip(a, b):
        assert x.objective == pytest.approx(y.objective)


def test_incremental_without_highspy(monkeypatch):
    monkeypatch.setattr(lpmod, "highspy", None)
    lp = IncrementalLP()
    assert not lp.warm
    assert _grow(lp)[1].objective == pytest.approx(4.0)


def test_to_sparse_and_write(tmp_path):
    m = LinearModel()
    a, b = m.add_var(1.0, "B"), m.add_var(2.0, "I")
    m.add_row({a: 1.0, b: 1.0}, ">=", 1)
    sm = to_sparse(m)
    assert sm.A.toarray().tolist() == [[1.0, 1.0]]
    path = tmp_path / "m.lp"
    write_lp(m, path)
    text = path.read_text()
    assert "Minimize" in text and "Binary" in text and "General" in text
    with pytest.raises(ValueError):
        m.add_row({a: 1.0}, "!", 0)
