import csv
import io
import json

import pytest

from lacg.cli import EXIT_ERROR, EXIT_LIMIT, EXIT_OK, builtin_names, load_instance, main
from lacg.instance import random_instance
from lacg.oracle import enumeration_lp
from lacg.report import field_names

from conftest import toy_instance


@pytest.fixture
def toy_file(tmp_path):
    inst = toy_instance({1: (180, 60), 2: (150, 20), 3: (170, 0)},
                        {(u, v): 12 + 3 * abs(u - v) for u in (-1, 1, 2, 3) for v in (1, 2, 3, -2) if u != v})
    path = tmp_path / "toy.json"
    path.write_text(inst.to_json())
    return inst, str(path)


@pytest.fixture
def six_file(tmp_path):
    inst = random_instance(6, 31)
    path = tmp_path / "six.json"
    path.write_text(inst.to_json())
    return inst, str(path)


def _report(capsys):
    return json.loads(capsys.readouterr().out)


def test_cg_k0_toy_matches_oracle(toy_file, capsys):
    inst, path = toy_file
    assert main(["run", "--instance", path, "--mode", "cg", "--la-neighbors", "0"]) == EXIT_OK
    rep = _report(capsys)
    assert rep["converged"] and rep["mode"] == "cg"
    assert rep["lp_objective"] == pytest.approx(enumeration_lp(inst)[0], abs=1e-6)


@pytest.mark.parametrize("mode", ["gm", "cg"])
def test_oracle_check(six_file, capsys, mode):
    inst, path = six_file
    assert main(["--instance", path, "--mode", mode, "--la-neighbors", "3", "--oracle-check"]) == EXIT_OK
    out = capsys.readouterr()
    assert "ok" in out.err and "iterations" in out.err
    assert json.loads(out.out)["lp_objective"] == pytest.approx(enumeration_lp(inst)[0], abs=1e-6)


def test_oracle_check_refuses_big(capsys):
    assert main(["run", "--instance", "R101.25", "--oracle-check"]) == EXIT_ERROR
    assert "oracle-check" in capsys.readouterr().err


def test_missing_instance(capsys):
    assert main(["run", "--mode", "gm"]) == EXIT_ERROR
    assert "usage" in capsys.readouterr().err
    assert main(["run", "--instance", "/no/such/file.txt"]) == EXIT_ERROR
    assert main(["run", "--instance", "x", "--bogus"]) == EXIT_ERROR
    assert main([]) == EXIT_ERROR


def test_limit_exit_code(six_file, capsys):
    _, path = six_file
    assert main(["run", "--instance", path, "--mode", "cg", "--max-seconds", "0"]) == EXIT_LIMIT
    rep = _report(capsys)
    assert rep["converged"] is False and rep["status"] == "limit"


def test_outputs_and_trace(toy_file, tmp_path, capsys):
    _, path = toy_file
    js, tr, cs = tmp_path / "r.json", tmp_path / "trace.txt", tmp_path / "rows.csv"
    for _ in range(2):
        assert main(["-v", "--instance", path, "--out", str(cs), "--la-neighbors", "1"]) == EXIT_OK
    assert main(["run", "--instance", path, "--out", str(js), "--trace", str(tr)]) == EXIT_OK
    capsys.readouterr()
    assert set(json.loads(js.read_text())) == set(field_names())
    rows = list(csv.DictReader(cs.open()))
    assert len(rows) == 2 and list(rows[0]) == field_names()
    lines = tr.read_text().splitlines()
    assert lines[0].startswith("# ") and any(l.startswith("iter ") for l in lines)


def test_sweep_rows_and_determinism(toy_file, tmp_path, capsys):
    _, path = toy_file
    args = ["sweep", "--instances", path, "--modes", "gm", "cg", "--k", "0", "2"]
    assert main(args) == EXIT_OK
    first = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(first) == 4
    assert {(r["mode"], r["la_neighbors"]) for r in first} == {(m, k) for m in ("gm", "cg") for k in ("0", "2")}
    assert main(args) == EXIT_OK
    second = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    keys = ("lp_objective", "ilp_objective", "iterations", "rmp_solves")
    assert [[r[k] for k in keys] for r in first] == [[r[k] for k in keys] for r in second]


def test_sweep_records_failures(toy_file, tmp_path, capsys):
    _, path = toy_file
    out = tmp_path / "s.csv"
    code = main(["sweep", "--instances", path, "/no/such.txt", "--modes", "cg", "--k", "0", "--out", str(out)])
    assert code == EXIT_ERROR
    rows = list(csv.DictReader(out.open()))
    assert [r["status"] for r in rows] == ["converged", "error"]


def test_dump_round_trip(tmp_path, capsys):
    out = tmp_path / "c.json"
    assert main(["dump", "--instance", "C101", "--max-customers", "5", "--out", str(out)]) == EXIT_OK
    inst = load_instance(str(out))
    assert inst.n == 5 and inst.digest() == load_instance("C101.5").digest()


def test_builtin_names():
    names = builtin_names()
    assert {"C101", "R101", "RC101"} <= set(names) and len(names) >= 9
    assert load_instance("r101.10").n == 10
