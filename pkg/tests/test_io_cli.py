import csv
import io
import json

import numpy as np
import pytest

from maxent import cli
from maxent.errors import ParseError, ValidationError
from maxent.io import (dumps_instance, format_report, instance_from_dict, load_instance)

SQUARE = {"support": [[0, 0], [1, 0], [0, 1], [1, 1]], "log_weights": [0.0, 0.5, -0.5, 1.0],
          "theta": [0.25, 0.5]}


def _write(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(path)


def _run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_instance_round_trip():
    inst = instance_from_dict(dict(SQUARE, facets={"A": [[1, 0], [-1, 0], [0, 1], [0, -1]],
                                                   "b": [1, 0, 1, 0]}))
    again = instance_from_dict(json.loads(dumps_instance(inst)))
    assert np.array_equal(again.oracle.points, inst.oracle.points)
    assert np.array_equal(again.oracle.log_weights, inst.oracle.log_weights)
    assert np.array_equal(again.theta, inst.theta)
    assert np.array_equal(again.facets.A, inst.facets.A)
    tree = {"oracle": {"type": "spanning_tree", "num_vertices": 3, "edges": [[0, 1], [1, 2], [0, 2]]}}
    t = instance_from_dict(tree)
    assert instance_from_dict(json.loads(dumps_instance(t))).oracle.edges == t.oracle.edges


@pytest.mark.parametrize("bad,err", [
    ({"log_weights": [0.0]}, ParseError),
    (dict(SQUARE, support=[[0.5, 0], [1, 0]], log_weights=[0, 0]), ParseError),
    (dict(SQUARE, theta=[0.5]), ParseError),
    (dict(SQUARE, schema_version=7), ParseError),
    (dict(SQUARE, dimension=3), ValidationError),
    (dict(SQUARE, facets={"A": [[1, 0]], "b": [0.5]}), ValidationError),
    (dict(SQUARE, facets={"A": [[2, 0]], "b": [2], "M": 1}), ValidationError),
    ({"oracle": {"type": "spanning_tree", "num_vertices": 4, "edges": [[0, 1], [2, 3]]}},
     ValidationError),
    ({"oracle": {"type": "mystery"}}, ParseError),
])
def test_invalid_instances(bad, err):
    with pytest.raises(err):
        instance_from_dict(bad)


def test_broken_json_reports_position(tmp_path):
    with pytest.raises(ParseError, match="line 2"):
        load_instance(_write(tmp_path, "b.json", '{"support": [[0], [1]],\n  "theta": [0.5,]}'))


def test_csv_floats_round_trip():
    text = format_report([("a", "b"), ("x", 0.1 + 0.2)], "csv", deterministic=True)
    rows = list(csv.reader(io.StringIO("".join(l + "\n" for l in text.splitlines()
                                               if not l.startswith("#")))))
    assert float(rows[1][1]) == 0.1 + 0.2
    assert "generated_at" not in text
    assert "generated_at" in format_report({"a": 1}, "json")


def test_cli_solve_is_deterministic(tmp_path, capsys):
    path = _write(tmp_path, "sq.json", SQUARE)
    code1, out1, _ = _run(["--deterministic", "solve", path, "--eps", "1e-8"], capsys)
    code2, out2, _ = _run(["solve", path, "--eps", "1e-8", "--deterministic"], capsys)
    assert code1 == code2 == 0 and out1 == out2
    rep = json.loads(out1)["report"]
    assert rep["gap_certificate"] <= 1e-8
    assert np.array(rep["q"]) @ np.array(SQUARE["support"]) == pytest.approx(SQUARE["theta"],
                                                                             abs=1e-6)


def test_cli_error_exit_codes(tmp_path, capsys):
    code, _, err = _run(["solve", _write(tmp_path, "x.json", "{nope")], capsys)
    assert code == 1 and "ParseError" in err
    code, _, _ = _run(["solve", str(tmp_path / "missing.json")], capsys)
    assert code == 1
    outside = dict(SQUARE, theta=[2.0, 0.0])
    code, _, err = _run(["solve", _write(tmp_path, "o.json", outside)], capsys)
    assert code == 1 and "DomainError" in err


def test_cli_other_commands(tmp_path, capsys):
    vec = _write(tmp_path, "v.json", [[1, 0], [0, 1], [1, 1]])
    code, out, _ = _run(["--deterministic", "bl", "--vectors", vec, "--p", "1,1,0"], capsys)
    assert code == 0 and json.loads(out)["report"]["bl"] == pytest.approx(1.0, abs=1e-6)
    code, out, _ = _run(["--deterministic", "minnorm", "--vectors",
                         _write(tmp_path, "m.json", [[1, 1], [1, -1]])], capsys)
    assert code == 0 and json.loads(out)["report"]["delta"] == pytest.approx(1.0)
    mat = _write(tmp_path, "a.json", [[1, 2], [3, 4]])
    code, out, _ = _run(["--deterministic", "scale", "--matrix", mat, "--r", "1,1", "--c", "1,1"],
                        capsys)
    assert code == 0 and json.loads(out)["report"]["col_residual"] <= 1e-6
    csv_out = tmp_path / "probes.csv"
    code, out, _ = _run(["--deterministic", "lowerbound", "--probes", "20", "--out",
                         str(csv_out)], capsys)
    assert code == 0 and json.loads(out)["report"]["min_gap"] > 0
    assert len([l for l in csv_out.read_text().splitlines() if not l.startswith("#")]) == 21
    code, out, _ = _run(["--deterministic", "boundary", "--m", "3", "--n", "3", "--trials",
                         "1000"], capsys)
    assert code == 0 and "z_exact" in json.loads(out)["report"]
    cap = _write(tmp_path, "c.json", {"support": [[0], [1], [2]], "log_weights": [0, 0.6931471805599453, 0],
                                      "B": [[1]]})
    code, out, _ = _run(["--deterministic", "capacity", cap, "--eps", "1e-4"], capsys)
    assert code == 0 and json.loads(out)["report"]["value"] == pytest.approx(4.0, rel=1e-3)


def test_cli_stability_csv(tmp_path, capsys):
    path = _write(tmp_path, "line.json", {"support": [[0], [1]]})
    out = tmp_path / "s.csv"
    code, _, _ = _run(["--deterministic", "stability", path, "--pairs", "3", "--eps", "1e-3,1e-5",
                       "--out", str(out), "--instance-id", "line"], capsys)
    assert code == 0
    rows = [l for l in out.read_text().splitlines() if not l.startswith("#")]
    assert rows[0].split(",") == ["instance_id", "eps", "theta_dist", "tv", "bound", "margin",
                                  "iters1", "iters2"]
    assert len(rows) == 7
