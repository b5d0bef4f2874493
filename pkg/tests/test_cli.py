import csv
import json
import xml.etree.ElementTree as ET

import pytest

from conformal_snowflakes import cli


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def read_csv_rows(path):
    with open(path) as fh:
        return list(csv.reader(line for line in fh if not line.startswith("#")))


def test_no_command_is_usage_error(capsys):
    assert run([], capsys)[0] == cli.EXIT_USAGE


def test_unknown_flag_and_bad_value_are_usage_errors(capsys):
    assert run(["eigen", "--bogus"], capsys)[0] == 1
    assert run(["eigen", "--k", "two"], capsys)[0] == 1
    assert run(["eigen", "--k", "1"], capsys)[0] == 1
    assert run(["eigen", "--binning", "floor"], capsys)[0] == 1
    assert run(["render", "--depth", "9"], capsys)[0] == 1


def test_degenerate_block_rejected(capsys, tmp_path):
    code, _, err = run(["eigen", "--t", "1", "--k", "2", "--l", "0", "--s", "1", "--out", str(tmp_path)], capsys)
    assert code == 1 and "degenerate block" in err


def test_eigen_outputs_and_determinism(capsys, tmp_path):
    args = ["eigen", "--t", "1", "--k", "4", "--l", "21", "--N", "200", "--M", "100"]
    code, out, _ = run(args + ["--out", str(tmp_path / "a")], capsys)
    assert code == 0 and "log_4 lambda" in out
    run(args + ["--out", str(tmp_path / "b")], capsys)
    name = "eigen_t1_k4_l21_s1_N200_M100"
    for ext in (".csv", ".json"):
        a = (tmp_path / "a" / (name + ext)).read_text()
        b = (tmp_path / "b" / (name + ext)).read_text()
        assert a.replace(str(tmp_path / "a"), "") == b.replace(str(tmp_path / "b"), "")
    meta = json.loads((tmp_path / "a" / (name + ".json")).read_text())
    assert meta["N"] == 200 and meta["metadata"]["tool_version"]
    assert len(read_csv_rows(tmp_path / "a" / (name + ".csv"))) == 201


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"N": 300, "M": 50, "l": 21, "k": 4}))
    merged = cli.resolve_config("eigen", {"M": 70}, str(cfg))
    assert merged["N"] == 300 and merged["M"] == 70 and merged["k"] == 4 and merged["t"] == 1.0


def test_config_unknown_key_is_error(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"N": 300, "kk": 4}))
    code, _, err = run(["eigen", "--config", str(cfg)], capsys)
    assert code == 1 and "kk" in err
    cfg.write_text(json.dumps({"k": 4.5}))
    assert run(["eigen", "--config", str(cfg)], capsys)[0] == 1
    cfg.write_text("[1, 2]")
    assert run(["eigen", "--config", str(cfg)], capsys)[0] == 1


def test_parse_values():
    assert cli.parse_values("2:5", int) == [2, 3, 4, 5]
    assert cli.parse_values("1:2:0.5") == [1.0, 1.5, 2.0]
    assert cli.parse_values("3,7", int) == [3, 7]
    assert cli.parse_values("") == []
    with pytest.raises(cli.UsageError):
        cli.parse_values("1:2:0")


def test_table_empty_selection_writes_header_only(capsys, tmp_path):
    out = tmp_path / "t.csv"
    code, _, _ = run(["table", "--rows", "", "--out", str(out)], capsys)
    assert code == 0
    rows = read_csv_rows(out)
    assert rows == [list(cli.TABLE_COLUMNS)]


def test_table_unknown_row(capsys, tmp_path):
    assert run(["table", "--rows", "0.3", "--out", str(tmp_path / "t.csv")], capsys)[0] == 1


def test_table_small_grid_row_with_bounds(capsys, tmp_path):
    out = tmp_path / "t.csv"
    code, text, _ = run(
        ["table", "--rows", "2.0,-2.0", "--N", "200", "--M", "100", "--bounds", "--points", "20", "--out", str(out)],
        capsys,
    )
    assert code == 0
    rows = read_csv_rows(out)
    assert len(rows) == 3
    t2 = dict(zip(rows[0], rows[1]))
    assert float(t2["published_log_k_lambda"]) == 0.9548 and t2["beta_lower"]
    tm2 = dict(zip(rows[0], rows[2]))
    assert "unreliable" in tm2["note"]


def test_sweep_command(capsys, tmp_path):
    out = tmp_path / "s.csv"
    code, text, _ = run(
        ["sweep", "--t", "1", "--k-values", "3,4", "--l-values", "0,10", "--N", "100", "--M", "50", "--out", str(out)],
        capsys,
    )
    assert code == 0 and "2 failed" in text
    assert len(read_csv_rows(out)) == 5


def test_bound_command(capsys, tmp_path):
    out = tmp_path / "b.json"
    code, text, _ = run(
        ["bound", "--t", "2", "--k", "4", "--l", "21", "--N", "300", "--M", "150", "--points", "20", "--out", str(out)],
        capsys,
    )
    assert code == 0 and "semi-rigorous" in text
    data = json.loads(out.read_text())
    assert data["metadata"]["command"] == "bound" and 0.8 < data["beta_lower"] < 1.0


def test_certify_coarse_quadrature_fails_with_exit_3(capsys, tmp_path):
    out = tmp_path / "c.json"
    code, text, _ = run(
        ["certify", "--nodes", "100", "--points", "30", "--no-spot-checks", "--out", str(out)], capsys
    )
    assert code == cli.EXIT_CERT_FAILED and "verdict: FAILED" in text
    assert json.loads(out.read_text())["verdict"] == "FAILED"


def test_render_command(capsys, tmp_path):
    svg, pts = tmp_path / "s.svg", tmp_path / "s.csv"
    args = ["render", "--depth", "2", "--seed", "4", "--svg", str(svg), "--csv", str(pts)]
    code, text, _ = run(args, capsys)
    assert code == 0 and "winding number 1" in text
    ET.parse(svg)
    first = svg.read_bytes()
    run(args, capsys)
    assert svg.read_bytes() == first
    assert read_csv_rows(pts)[0] == ["curve_id", "re", "im"]


def test_render_bad_radii_and_arc(capsys, tmp_path):
    assert run(["render", "--radii", "0.9", "--svg", str(tmp_path / "x.svg")], capsys)[0] == 1
    assert run(["render", "--arc", "1,0", "--svg", str(tmp_path / "x.svg")], capsys)[0] == 1


def test_unwritable_output(capsys, tmp_path):
    code, _, err = run(["render", "--depth", "0", "--svg", str(tmp_path / "no" / "x.svg")], capsys)
    assert code == 1


def test_numerical_failure_exit_code(capsys, monkeypatch, tmp_path):
    from conformal_snowflakes.errors import ConvergenceError

    def boom(*a, **k):
        raise ConvergenceError("did not converge")

    monkeypatch.setattr(cli, "compute_eigen", boom)
    code, _, err = run(["eigen", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_NUMERIC and "did not converge" in err
