import csv
import io
import json
import re
import shlex
import shutil
from pathlib import Path

import pytest

from polycurve import cli

ROOT = Path(__file__).resolve().parents[1]


def run(args, capsys):
    code = cli.main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    shutil.copytree(ROOT / "data", tmp_path / "data")
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_verify_r_circle(capsys):
    code, out, _ = run(["verify", "--family", "r-circle", "--r", "3"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["residuals"]["residual_triharmonic_ode"]["max_norm"] <= 1e-8
    assert rep["passed"] is True


def test_verify_failure_exit_code(capsys):
    code, out, _ = run(["verify", "--family", "circle", "--a2", "2.5", "--r", "3"], capsys)
    assert code == 1 and json.loads(out)["passed"] is False


def test_classify_row(capsys):
    code, out, _ = run(["classify", "--K", "1", "--r", "2", "--k", "1", "--tau", "0"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert rows[0]["satisfied"] == "true"


def test_malformed_curve_writes_nothing(workdir, capsys):
    bad = workdir / "bad.json"
    bad.write_text('{"type": "discrete", "L": 1.0, "samples": [[1, 0, 0]]}')
    code, _, err = run(["residual", str(bad), "--r", "2", "-o", "out.json"], capsys)
    assert code == 2 and "invalid input" in err
    assert not (workdir / "out.json").exists()
    (workdir / "broken.json").write_text("{not json")
    assert run(["residual", "broken.json", "--r", "2"], capsys)[0] == 2


def test_io_error(capsys):
    code, _, err = run(["residual", "/nonexistent/curve.json", "--r", "2"], capsys)
    assert code == 4 and "I/O" in err


def test_unknown_config_keys_rejected(workdir, capsys):
    cfg = workdir / "run.json"
    cfg.write_text(json.dumps({"command": "probe", "params": {"alpha": 1, "beta": 2}, "colour": "red"}))
    assert run(["probe", "--config", str(cfg)], capsys)[0] == 2
    cfg.write_text(json.dumps({"command": "probe", "params": {"alpha": 1, "beta": 2, "gamma": 3}}))
    assert run(["probe", "--config", str(cfg)], capsys)[0] == 2
    with pytest.raises(cli.ConfigError):
        cli.RunConfig.from_dict({"command": "probe", "params": {"alfa": 1}})


def test_config_file_and_override(workdir, capsys):
    cfg = workdir / "run.json"
    cfg.write_text(json.dumps({"command": "probe", "params": {"alpha": 1, "beta": 1, "n": 5},
                               "format": "json"}))
    code, out, _ = run(["probe", "--config", str(cfg), "--beta", "2"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["beta"] == 2 and rep["max_abs"] <= 1e-12


def test_sweep_single_freq_minima(workdir, capsys):
    code, _, _ = run(["sweep", "--r", "3", "--a2-min", "0.5", "--a2-max", "5", "--n", "50", "-o", "s.csv"], capsys)
    assert code == 0
    rows = list(csv.DictReader(open("s.csv")))
    a2 = [float(r["a2"]) for r in rows]
    assert a2 == sorted(a2)
    minima = sorted(float(r["refined_a2"]) for r in rows if r["local_min"] == "true")
    assert len(minima) == 2
    assert minima == pytest.approx([1.0, 3.0], abs=1e-6)


def test_sweep_two_freq_line(capsys):
    code, out, _ = run(["sweep", "--grid", "two-freq", "--r", "2", "--a2-min", "0.25", "--a2-max", "1.75",
                        "--n", "7"], capsys)
    assert code == 0
    for row in csv.DictReader(io.StringIO(out)):
        if row["feasible"] != "true":
            continue
        on_line = abs(float(row["a2"]) + float(row["b2"]) - 2) < 1e-12
        res = float(row["residual"])
        assert res <= 1e-8 if on_line else res > 1e-3


def test_sweep_empty_grid(capsys):
    assert run(["sweep", "--r", "3", "--n", "0"], capsys)[0] == 2
    assert run(["sweep", "--r", "3", "--a2-min", "5", "--a2-max", "1"], capsys)[0] == 2


def test_solve_outputs(capsys):
    code, out, _ = run(["solve", "--system", "single-freq", "--r", "3"], capsys)
    assert code == 0
    assert [r["a2"] for r in json.loads(out)["roots"]] == pytest.approx([1, 3])
    code, out, _ = run(["solve", "--system", "biharmonic-three-freq"], capsys)
    sol = json.loads(out)["solutions"][0]
    assert sol["is_geodesic"] and sol["unknowns"]["a2"] == pytest.approx(1)


def test_minimize_restricted(workdir, capsys):
    code, _, _ = run(["minimize", "--r", "2", "--alpha2", "0.4", "-o", "flow.json"], capsys)
    assert code == 0
    trace = json.load(open("flow.json"))
    assert trace["params"]["alpha2"] == pytest.approx(0.5, abs=0.01)


def test_minimize_nonconvergence_exit(workdir, capsys):
    code, _, _ = run(["minimize", "--r", "2", "--alpha2", "0.4", "--max-iters", "2", "-o", "f.json"], capsys)
    assert code == 3
    assert json.load(open("f.json"))["status"] == "max_iters"


def test_json_reals_have_17_digits():
    text = cli.dumps({"x": 0.1, "y": [1.0 / 3.0], "z": float("nan"), "ok": True})
    data = json.loads(text)
    assert data["x"] == 0.1 and data["y"][0] == 1.0 / 3.0 and data["z"] is None
    assert "0.10000000000000001" in text and "0.33333333333333331" in text


def test_deterministic_and_thread_independent(workdir, capsys, monkeypatch):
    args = ["sweep", "--grid", "two-freq", "--r", "2", "--a2-min", "0.3", "--a2-max", "1.7", "--n", "5"]
    outs = []
    for threads in ("1", "1", "4"):
        monkeypatch.setenv("POLYCURVE_THREADS", threads)
        outs.append(run(args, capsys)[1])
    assert outs[0] == outs[1] == outs[2]
    seeds = ["solve", "--system", "triharmonic-two-freq", "--n-freq", "4", "--n-simplex", "3",
             "--random-seeds", "20", "--seed", "5"]
    assert run(seeds, capsys)[1] == run(seeds, capsys)[1]
    monkeypatch.setenv("POLYCURVE_THREADS", "zero")
    assert run(args, capsys)[0] == 2


def _readme_commands():
    text = (ROOT / "README.md").read_text()
    cmds = []
    for block in re.findall(r"```sh\n(.*?)```", text, flags=re.S):
        for line in block.splitlines():
            line = line.strip()
            if not line.startswith("polycurve "):
                continue
            expected = 0
            m = re.search(r"#\s*exit\s+(\d+)\s*$", line)
            if m:
                expected = int(m.group(1))
                line = line[: m.start()].strip()
            cmds.append((shlex.split(line)[1:], expected))
    return cmds


README_COMMANDS = _readme_commands()


def test_readme_has_examples_for_every_command():
    used = {args[0] for args, _ in README_COMMANDS}
    assert used == set(cli.COMMANDS)


@pytest.mark.parametrize("args,expected", README_COMMANDS, ids=[" ".join(a) for a, _ in README_COMMANDS])
def test_readme_examples(args, expected, workdir, capsys):
    code, out, _ = run(args, capsys)
    assert code == expected
    if "-o" in args:
        target = workdir / args[args.index("-o") + 1]
        assert target.exists() == (expected in (0, 1, 3))
    elif expected == 0:
        assert out


def test_formats_doc_examples_parse():
    text = (ROOT / "FORMATS.md").read_text()
    blocks = re.findall(r"```json\n(.*?)```", text, flags=re.S)
    assert blocks
    for block in blocks:
        json.loads(block)
    from polycurve.ambient import curve_from_dict

    curve_from_dict(json.loads(blocks[0]))
