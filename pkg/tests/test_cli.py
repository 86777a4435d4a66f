import json
import shutil
import subprocess
import sys

import pytest

from sodamatch.cli import main
from sodamatch.engines import soda
from sodamatch.fixtures import example_market
from sodamatch.generators import counterexample_market
from sodamatch.market import Market, Matching


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def test_check_example_soda_matching(tmp_path, capsys):
    m = example_market()
    mk = write(tmp_path / "m.json", m.to_dict())
    mu = write(tmp_path / "mu.json", soda(m).matching.to_dict())
    assert main(["check", mk, mu]) == 0
    assert capsys.readouterr().out.strip() == "stable"


def test_check_reports_blocks(tmp_path, capsys):
    m = example_market()
    mk = write(tmp_path / "m.json", m.to_dict())
    mu = write(tmp_path / "mu.json", Matching.empty(m).to_dict())
    assert main(["check", mk, mu]) == 1
    out = capsys.readouterr().out
    assert out.startswith("unstable") and "SingleBlock" in out


def test_generate_solve_check_pipeline(tmp_path, capsys):
    mk = str(tmp_path / "m.json")
    mu = str(tmp_path / "mu.json")
    assert main(["generate", "--n", "80", "--couples", "0", "--seed", "4", "--out", mk]) == 0
    assert main(["solve", mk, "--out", mu]) == 0
    assert capsys.readouterr().out.startswith("stable")
    assert main(["check", mk, mu]) == 0
    assert capsys.readouterr().out.strip() == "stable"


def test_generate_round_trip(tmp_path):
    mk = tmp_path / "m.json"
    assert main(["generate", "--n", "40", "--alpha", "0.1", "--seed", "9", "--out", str(mk)]) == 0
    data = json.loads(mk.read_text())
    assert Market.from_dict(data).to_dict() == data
    again = tmp_path / "m2.json"
    main(["generate", "--n", "40", "--alpha", "0.1", "--seed", "9", "--out", str(again)])
    assert again.read_bytes() == mk.read_bytes()


def test_solve_trace_and_modes(tmp_path, capsys):
    mk = write(tmp_path / "m.json", example_market().to_dict())
    trace = tmp_path / "t.jsonl"
    for mode in ("classic", "backward-edge", "direct"):
        assert main(["solve", mk, "--mode", mode, "--pi", "1,0", "--trace", str(trace)]) == 0
    lines = trace.read_text().splitlines()
    assert lines and all("evictor" in json.loads(x) for x in lines)
    assert "permutation=[1, 0]" in capsys.readouterr().out


def test_solve_failure_exit_one(tmp_path, capsys):
    mk = write(tmp_path / "m.json", counterexample_market(4).to_dict())
    assert main(["solve", mk]) == 1
    assert capsys.readouterr().out.startswith("fail-")


def test_oracle_exit_codes(tmp_path, capsys):
    bad = write(tmp_path / "c.json", counterexample_market(4).to_dict())
    assert main(["oracle", bad]) == 1
    assert capsys.readouterr().out.strip() == "none"
    good = write(tmp_path / "e.json", example_market().to_dict())
    assert main(["oracle", good]) == 0
    assert capsys.readouterr().out.strip() == "exists"
    assert main(["oracle", bad, "--budget", "10"]) == 2


def test_malformed_inputs(tmp_path, capsys):
    broken = tmp_path / "broken.json"
    broken.write_text('{"format": "soda-market/1",\n  "hospitals": [}\n')
    assert main(["check", str(broken), str(broken)]) == 2
    err = capsys.readouterr().err
    assert f"{broken}:2:" in err
    wrong = write(tmp_path / "w.json", {"format": "nope"})
    assert main(["solve", wrong]) == 2
    assert main(["solve", str(tmp_path / "missing.json")]) == 2
    assert main(["solve", wrong, "--bogus"]) == 2


def test_config_echoed(tmp_path, capsys):
    main(["generate", "--n", "5", "--out", str(tmp_path / "m.json")])
    assert capsys.readouterr().err.startswith("config: {")


def test_analyze_exports(tmp_path, capsys):
    mk = write(tmp_path / "m.json", example_market().to_dict())
    prefix = str(tmp_path / "ex")
    assert main(["analyze", mk, "--r", "1", "--out", prefix]) == 0
    out = capsys.readouterr().out
    assert "r=1 couples=2" in out
    trees = json.loads((tmp_path / "ex.trees.json").read_text())
    assert len(trees) == 2
    assert (tmp_path / "ex.graph.dot").read_text().startswith("digraph")


def test_pessimistic(tmp_path, capsys):
    mk = tmp_path / "m.json"
    main(["generate", "--n", "20", "--couples", "20", "--capacity", "1", "--lambda", "20", "--list-cap", "10",
          "--out", str(mk)])
    capsys.readouterr()
    assert main(["pessimistic", str(mk), "--l", "3", "--seed", "1"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert set(stats) == {"visited_hospitals", "steps", "settled_histogram", "terminated"}
    assert main(["pessimistic", str(mk), "--l", "50"]) == 2


def test_experiment_csv(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["experiment", "sweep", "--n", "40,80", "--alpha", "0.05", "--trials", "3", "--out", str(out)]) == 0
    text = out.read_text()
    assert text.startswith("# sodamatch")
    assert len([x for x in text.splitlines() if not x.startswith("#")]) == 3
    assert main(["experiment", "sweep", "--n", "80,40", "--trials", "1"]) == 2
    assert main(["experiment", "sweep", "--n", "40", "--alpha", "0.1", "--epsilon", "0.5"]) == 2


@pytest.mark.skipif(shutil.which("sodamatch") is None, reason="console script not installed")
def test_console_script(tmp_path):
    mk = write(tmp_path / "m.json", example_market().to_dict())
    res = subprocess.run(["sodamatch", "solve", mk], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("stable")
    res = subprocess.run([sys.executable, "-m", "sodamatch.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
