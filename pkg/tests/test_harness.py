import csv
import json

import numpy as np
import pytest

from dglab.cli import main
from dglab.degiorgi import IterationTrace, radius_sequence
from dglab.errors import ConfigError
from dglab.harness import (
    ExperimentConfig,
    center_node,
    empty_trace_table,
    export_report,
    render_csv,
    report_tables,
    run_experiment,
)
from dglab.space import grid_graph, path_graph

TWO = {"nodes": [{"id": 0, "weight": 1.0}, {"id": 1, "weight": 1.0}],
       "edges": [{"a": 0, "b": 1, "length": 1.0}]}


def _minimal(tmp_path, **extra):
    (tmp_path / "two.json").write_text(json.dumps(TWO))
    cfg = {"space": "two.json", "steps": 3, "solver": {"p": 3, "tau": 0.1},
           "initial": {"kind": "random"}, "reduction": {"levels": 1}}
    cfg.update(extra)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def _trace(n_ratios):
    n = n_ratios
    Y = np.linspace(0.5, 0.1, n)
    return IterationTrace("minus", "space_time", radius_sequence(1.0, n - 1), np.linspace(1, 0.5, n),
                          np.ones(n), 0.0, Y, Y, np.ones(n), 3.0, 6.0, 1, 0.5, 1.0)


# ------------------------------------------------------------------ config

def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig.from_file(_minimal(tmp_path))
    again = ExperimentConfig.from_json(cfg.to_json(), base_dir=tmp_path)
    assert again == cfg and again.hash() == cfg.hash()
    assert cfg.dgc["variant"] == "full" and cfg.reduction["levels"] == 1


def test_config_hash_changes_with_content(tmp_path):
    a = ExperimentConfig.from_file(_minimal(tmp_path))
    b = ExperimentConfig.from_file(_minimal(tmp_path, seed=7))
    assert a.hash() != b.hash()


def test_config_lists_every_problem(tmp_path):
    bad = {"space": "nope.json", "steps": -1, "solver": {"p": 1, "tau": 0}, "bogus": 1,
           "output": {"format": "xml"}, "dgc": {"variant": "half", "extra": 2}}
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(bad, base_dir=tmp_path)
    text = "\n".join(exc.value.problems)
    for key in ("bogus", "space", "steps", "solver", "output.format", "dgc.variant", "dgc.extra"):
        assert key in text
    assert "does not exist" in text and "nope.json" in text


def test_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        ExperimentConfig.from_file(tmp_path / "absent.json")


def test_config_invalid_json():
    with pytest.raises(ConfigError, match="invalid JSON"):
        ExperimentConfig.from_json("{not json")


def test_inline_space(tmp_path):
    cfg = ExperimentConfig.from_dict({"space": TWO, "steps": 0})
    assert cfg.load_space().n_nodes == 2


# ----------------------------------------------------------------- export

def test_empty_trace_csv_is_header_only(tmp_path):
    header, rows = empty_trace_table()
    path = tmp_path / "t.csv"
    path.write_text(render_csv(header, rows))
    lines = path.read_text().splitlines()
    assert lines == [",".join(header)]


def test_trace_csv_rows(tmp_path):
    tr = _trace(5)
    paths = export_report(tr, "csv", tmp_path, "trace")
    with open(paths[0]) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5
    assert [float(r["Y_n"]) for r in rows] == tr.Y.tolist()


def test_json_round_trip_is_exact(tmp_path):
    tr = _trace(4)
    (path,) = export_report(tr, "json", tmp_path, "trace")
    back = json.loads(path.read_text())
    assert back["Y"] == tr.Y.tolist() and back["r"] == tr.r.tolist()


def test_report_tables_flatten_generic():
    tables = report_tables({"a": 1, "b": {"c": 2.5}})
    (header, rows), = tables.values()
    assert header == ["key", "value"]
    assert {r[0] for r in rows} == {"a", "b.c"}


def test_center_node():
    assert center_node(path_graph(7)) == 3
    assert center_node(grid_graph(3, 3)) == 4


# -------------------------------------------------------------------- runs

def test_minimal_run_all_stages_ok(tmp_path):
    cfg = ExperimentConfig.from_file(_minimal(tmp_path))
    man = run_experiment(cfg, tmp_path / "out")
    assert man.ok, [(s.name, s.status, s.message) for s in man.stages]
    assert [s.name for s in man.stages] == ["space", "structural", "trajectory", "dgc", "reduction", "emit"]
    assert set(man.files) >= {"report.json", "structural.json", "trajectory.csv"}
    on_disk = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert on_disk["config_hash"] == cfg.hash()


def test_runs_are_deterministic(tmp_path):
    cfg = ExperimentConfig.from_file(_minimal(tmp_path))
    a = run_experiment(cfg, tmp_path / "a")
    b = run_experiment(cfg, tmp_path / "b")
    assert a.files == b.files and a.files
    for name in a.files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_space_failure_skips_dependents(tmp_path):
    (tmp_path / "broken.json").write_text('{"nodes": []}')
    cfg = ExperimentConfig.from_dict({"space": "broken.json"}, base_dir=tmp_path)
    man = run_experiment(cfg, tmp_path / "out")
    assert man.stage("space").status == "failed"
    assert man.stage("trajectory").status == "skipped"
    assert not man.ok


# --------------------------------------------------------------------- CLI

def test_cli_exit_codes(tmp_path, capsys):
    good = _minimal(tmp_path)
    assert main(["run", "--config", str(good), "--out", str(tmp_path / "o")]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"space": "nope.json", "steps": -1}))
    assert main(["run", "--config", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "space" in err and "steps" in err
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code == 1


def test_cli_lemma_demo(capsys, tmp_path):
    assert main(["lemma-demo", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "0.70710678118654757" in out and "diverges" in out
    doc = json.loads((tmp_path / "lemma_demo.json").read_text())
    assert doc["threshold"] == pytest.approx(np.sqrt(2) / 2, abs=1e-12)


def test_cli_check_space_grid(tmp_path, capsys):
    (tmp_path / "g.json").write_text(json.dumps(grid_graph(32, 32).to_dict()))
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"space": "g.json", "structural": {"window": [4, 8]}}))
    assert main(["check-space", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "structural.json").read_text())
    assert 1.5 < rep["d_mu"] < 2.5


def test_cli_solve_csv(tmp_path):
    cfg = _minimal(tmp_path)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o"), "--format", "csv"]) == 0
    assert (tmp_path / "o" / "trajectory.csv").is_file()
