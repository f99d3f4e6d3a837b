import json
import math
import os
import subprocess
import sys

import pytest

from btbslab.cli import (
    EXIT_ACCURACY,
    EXIT_OK,
    EXIT_TOLERANCE,
    EXIT_USAGE,
    UsageError,
    dumps,
    main,
    parse_grid,
    parse_initial,
    write_atomic,
)
from btbslab.model import Constant, CosineProduct, GaussianBump


def run(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


def csv_rows(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    header = lines[0].split(",")
    return header, [dict(zip(header, map(float, ln.split(",")))) for ln in lines[1:]]


def test_parse_initial():
    assert parse_initial("cosine:1,2", 2) == CosineProduct((1.0, 2.0))
    assert parse_initial("gaussian:0.5,2", 1) == GaussianBump((0.5,), 2.0)
    assert parse_initial("const:3", 1) == Constant(3.0)
    for bad in ("cosine:1", "gaussian:1", "const:1,2", "sine:1", "cosine:a,b"):
        with pytest.raises(UsageError):
            parse_initial(bad, 2)


def test_parse_grid():
    g = parse_grid("t=0.5,1;x=-1:1:3")
    assert g == {"t": [0.5, 1.0], "x": [-1.0, 0.0, 1.0]}
    for bad in ("t=1", "t=1;y=2", "t=0:1;x=0", "t=0:1:z;x=0"):
        with pytest.raises(UsageError):
            parse_grid(bad)


def test_dumps_full_precision():
    text = dumps({"a": 0.1, "b": 1 + 2j, "c": [1, 2.5]})
    back = json.loads(text)
    assert back["a"] == 0.1 and back["b"] == [1.0, 2.0] and back["c"] == [1, 2.5]


def test_estimate_quad_closed_form(capsys):
    code, out, _ = run(["estimate", "--n", "1", "--t", "1", "--x", "0", "--f", "cosine:1"], capsys)
    assert code == EXIT_OK
    rec = json.loads(out)
    assert rec["value"][0] == pytest.approx(0.6992377, abs=1e-7)
    assert rec["value"][1] == 0.0
    assert rec["config"]["seed"] == 0


def test_estimate_bs_family(capsys):
    code, out, _ = run(["estimate", "--family", "bs", "--n", "2", "--t", "0.5,0.5", "--f", "cosine:1"], capsys)
    assert code == EXIT_OK
    assert json.loads(out)["value"][0] == pytest.approx(math.exp(-0.125), rel=1e-15)


def test_estimate_constant_exact(capsys):
    for method in ("quad", "mc"):
        code, out, _ = run(
            ["estimate", "--n", "2", "--t", "1,2", "--f", "const:1", "--method", method, "--samples", "100"], capsys
        )
        assert code == EXIT_OK
        assert json.loads(out)["value"] == [1, 0]


def test_estimate_boundary_reduces_to_f(capsys):
    code, out, _ = run(["estimate", "--n", "2", "--t", "0,1", "--x", "0.4", "--f", "cosine:1"], capsys)
    assert code == EXIT_OK
    assert json.loads(out)["value"][0] == math.cos(0.4)


def test_estimate_mc_deterministic(capsys):
    argv = ["estimate", "--n", "1", "--t", "1", "--method", "mc", "--samples", "20000", "--seed", "7"]
    a = json.loads(run(argv, capsys)[1])
    b = json.loads(run(argv + ["--workers", "3"], capsys)[1])
    assert a["value"] == b["value"] and a["stderr"] == b["stderr"]
    assert abs(a["value"][0] - 0.6992377) < 4 * a["stderr"]


def test_estimate_env_seed(capsys, monkeypatch):
    monkeypatch.setenv("BTBS_SEED", "99")
    code, out, _ = run(["estimate", "--n", "1", "--t", "1"], capsys)
    assert code == EXIT_OK and json.loads(out)["config"]["seed"] == 99
    monkeypatch.setenv("BTBS_SEED", "abc")
    assert run(["estimate", "--n", "1", "--t", "1"], capsys)[0] == EXIT_USAGE


@pytest.mark.parametrize(
    "argv",
    [
        ["estimate"],
        ["estimate", "--t", "1,2"],
        ["estimate", "--t", "1", "--p", "2"],
        ["estimate", "--t", "1", "--family", "bs", "--p", "2", "--j", "1"],
        ["estimate", "--t", "-1"],
        ["verify", "--system", "bs-lin", "--grid", "t=0,1;x=0"],
        ["export", "--what", "nothing"],
        ["frobnicate"],
    ],
)
def test_usage_errors(argv, capsys):
    assert run(argv, capsys)[0] == EXIT_USAGE


def test_accuracy_failure(capsys, tmp_path):
    out = tmp_path / "v.json"
    argv = ["estimate", "--family", "ks", "--n", "1", "--t", "1.5", "--f", "gaussian:0,0.3", "--order", "40"]
    code, _, err = run(argv + ["--out", str(out)], capsys)
    assert code == EXIT_ACCURACY
    assert "coarse" in err and not out.exists()


def test_verify_passes_and_fails(capsys):
    code, out, _ = run(["verify", "--system", "bs-lin", "--n", "2", "--tol", "1e-10"], capsys)
    assert code == EXIT_OK
    header, rows = csv_rows(out)
    assert header[:4] == ["t1", "t2", "x1", "j"] and len(rows) == 2 * 2 * 2 * 2
    assert max(r["rel_residual"] for r in rows) < 1e-10
    code, _, _ = run(["verify", "--system", "btbs-lin", "--n", "2", "--tol", "1e-5"], capsys)
    assert code == EXIT_OK
    code, _, err = run(["verify", "--system", "bs-2n", "--n", "2", "--tol", "1e-14"], capsys)
    assert code == EXIT_TOLERANCE and "exceeded" in err


def test_verify_json(capsys):
    code, out, _ = run(["verify", "--system", "ks", "--n", "1", "--format", "json", "--tol", "1e-4"], capsys)
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc["config"]["system"] == "ks"
    assert len(doc["rows"]) == 4 and len(doc["columns"]) == len(doc["rows"][0])


def test_export_field_grid_boundary_row(capsys):
    code, out, _ = run(["export", "--what", "field-grid", "--n", "1", "--grid", "t=0,1;x=-1:1:3"], capsys)
    assert code == EXIT_OK
    _, rows = csv_rows(out)
    for r in rows:
        if r["t1"] == 0.0:
            assert r["re"] == math.cos(r["x1"])
        else:
            assert r["re"] == pytest.approx(0.6992377 * math.cos(r["x1"]), abs=1e-7)


def test_export_sheet_sample_reproducible(capsys, tmp_path):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    base = ["export", "--what", "sheet-sample", "--n", "2", "--d", "2", "--grid", "t=0,0.5,1;x=0", "--seed", "3"]
    assert run(base + ["--out", str(paths[0])], capsys)[0] == EXIT_OK
    assert run(base + ["--out", str(paths[1]), "--workers", "4"], capsys)[0] == EXIT_OK
    assert paths[0].read_bytes() == paths[1].read_bytes()
    _, rows = csv_rows(paths[0].read_text())
    assert len(rows) == 9
    for r in rows:
        if r["t1"] == 0.0 or r["t2"] == 0.0:
            assert r["w1"] == 0.0 and r["w2"] == 0.0


def test_export_martingale_profile_flat(capsys):
    argv = ["export", "--what", "martingale-profile", "--n", "2", "--t", "1,1", "--x", "0.2", "--samples", "50000"]
    code, out, _ = run(argv, capsys)
    assert code == EXIT_OK
    _, rows = csv_rows(out)
    target = math.cos(0.2) * math.exp(-0.5)
    assert rows[0]["s"] == 0.0 and rows[0]["stderr"] == 0.0
    for r in rows:
        assert abs(r["re"] - target) <= 3 * r["stderr"] + 1e-15


def test_config_file(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# test run\nsystem = bs-nonlin\nn = 2\ntol = 1e-9\n")
    code, out, _ = run(["verify", "--config", str(cfg)], capsys)
    assert code == EXIT_OK
    assert "# system=bs-nonlin" in out and "# n=2" in out
    code, out, _ = run(["verify", "--config", str(cfg), "--n", "3"], capsys)
    assert code == EXIT_OK and "# n=3" in out
    cfg.write_text("colour = blue\n")
    assert run(["estimate", "--t", "1", "--config", str(cfg)], capsys)[0] == EXIT_USAGE
    cfg.write_text("system = nope\n")
    assert run(["verify", "--config", str(cfg)], capsys)[0] == EXIT_USAGE


def test_write_atomic_leaves_no_partial_file(tmp_path):
    target = tmp_path / "out.txt"
    target.write_text("old")

    write_atomic(str(target), "new")
    assert target.read_text() == "new"
    with pytest.raises(TypeError):
        write_atomic(str(target), 12345)
    assert target.read_text() == "new"
    assert sorted(os.listdir(tmp_path)) == ["out.txt"]


def test_missing_output_directory(capsys, tmp_path):
    out = tmp_path / "missing" / "x.json"
    assert run(["estimate", "--t", "1", "--out", str(out)], capsys)[0] == EXIT_USAGE
    assert not out.exists()


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "btbslab", "estimate", "--t", "1", "--f", "const:2"],
        capture_output=True,
        text=True,
        check=False,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["value"] == [2, 0]


@pytest.mark.parametrize(
    "argv, code",
    [
        (["verify", "--system", "bs-lin", "--n", "2", "--f", "cosine:1", "--tol", "1e-6"], EXIT_OK),
        (["verify", "--system", "btbs-lin", "--n", "1", "--tol", "1e-3"], EXIT_OK),
        (["verify", "--system", "ks", "--n", "2", "--tol", "1e-10"], EXIT_TOLERANCE),
    ],
)
def test_verify_documented_exit_codes(argv, code, capsys):
    assert run(argv, capsys)[0] == code


def test_estimate_documented_values(capsys):
    argv = ["estimate", "--family", "btbs", "--n", "1", "--d", "1", "--f", "cosine:1", "--p", "0"]
    _, out, _ = run(argv + ["--t", "1", "--x", "0", "--method", "quad", "--order", "80"], capsys)
    assert json.loads(out)["value"][0] == pytest.approx(0.6992, abs=5e-5)
    argv = ["estimate", "--family", "ks", "--n", "1", "--f", "cosine:1", "--t", "1", "--x", "0", "--p", "0"]
    _, out, _ = run(argv + ["--method", "quad"], capsys)
    re, im = json.loads(out)["value"]
    # u = cos(theta x) exp(-t (1 - theta^2/2)^2 / 2) at theta = t = 1
    assert re == pytest.approx(math.exp(-0.125), abs=1e-6) and abs(im) < 1e-6


def test_export_defaults(capsys, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert run(["export", "--what", "sheet-sample", "--n", "2", "--seed", "7", "--out", str(path)], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    code, out, _ = run(["export", "--what", "martingale-profile", "--format", "json"], capsys)
    assert code == EXIT_OK
    doc = json.loads(out)
    cols = doc["columns"]
    target = math.exp(-0.5)
    for row in doc["rows"]:
        r = dict(zip(cols, row))
        assert abs(r["re"] - target) <= 3 * r["stderr"] + 1e-15
