import csv
import shutil
import subprocess
import sys
from importlib import resources

import pytest

from iterplan import cli

CONFIGS = resources.files("iterplan.configs")

UNREALIZABLE = """controlled a
uncontrolled b
process P = states 1 ; 0 -a-> 0 ; 0 -b-> 0
goal liveness []<> a
goal safety always (b => not b wuntil a)
plant P
"""


def config(name, tmp_path):
    dst = tmp_path / name
    with resources.as_file(CONFIGS / name) as p:
        shutil.copy(p, dst)
    return dst


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def without_wall(rows):
    k = list(cli.CSV_HEADER).index("wall_s")
    return [r[:k] + r[k + 1:] for r in rows]


# ---------------------------------------------------------------- synth

def test_synth_builtin_twice_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["synth", "builtin:fire_patrol", "--out", str(a)]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "verified yes" in out and "controller_states 18" in out
    assert cli.main(["synth", "builtin:fire_patrol", "--out", str(b)]) == cli.EXIT_OK
    for suffix in (".ctl", ".dot", ".report.txt"):
        assert (a / f"fire_patrol{suffix}").read_bytes() == (b / f"fire_patrol{suffix}").read_bytes()
    wall = float(out.split("wall_ms ")[1].split()[0])
    assert wall < 5000.0


def test_synth_ordered_arity(tmp_path, capsys):
    assert cli.main(["synth", "builtin:ordered_patrol", "--order", "2", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "ordered_patrol.ctl").exists()
    assert cli.main(["synth", "builtin:ordered_patrol", "--order", "9", "--out", str(tmp_path)]) != 0


def test_synth_exit_codes(tmp_path, capsys):
    bad = tmp_path / "unreal.isp"
    bad.write_text(UNREALIZABLE)
    assert cli.main(["synth", str(bad), "--out", str(tmp_path)]) == cli.EXIT_FAIL
    assert "unrealizable" in capsys.readouterr().err
    broken = tmp_path / "broken.isp"
    broken.write_text("controlled a\nprocess P = states 1 ; 0 -a-> 3\n")
    assert cli.main(["synth", str(broken)]) == cli.EXIT_PARSE
    err = capsys.readouterr().err
    assert "2:" in err
    assert cli.main(["synth", str(tmp_path / "missing.isp")]) == cli.EXIT_IO
    assert cli.main(["synth", "builtin:no_such_task"]) in (cli.EXIT_IO, cli.EXIT_PARSE)


def test_synth_controller_is_spec_fragment(tmp_path, capsys):
    from iterplan import speclang as sl
    cli.main(["synth", "builtin:cover", "--out", str(tmp_path)])
    doc = sl.parse((tmp_path / "cover.ctl").read_text())
    assert "CONTROLLER" in doc.processes


# ---------------------------------------------------------------- run

def test_run_writes_outputs_and_repeats(tmp_path, capsys):
    cfg = config("fire_patrol_7x7.toml", tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", str(cfg), "--out", str(a)]) == cli.EXIT_OK
    assert cli.main(["run", str(cfg), "--out", str(b)]) == cli.EXIT_OK
    rows_a, rows_b = read_csv(a / "fire_patrol_7x7.csv"), read_csv(b / "fire_patrol_7x7.csv")
    assert tuple(rows_a[0]) == cli.CSV_HEADER
    assert len(rows_a) == 2
    assert without_wall(rows_a) == without_wall(rows_b)
    assert float(rows_a[1][cli.CSV_HEADER.index("overhead")]) >= 0
    for suffix in (".log", ".poses.csv", ".svg"):
        assert (a / f"fire_patrol_7x7{suffix}").read_bytes() == (b / f"fire_patrol_7x7{suffix}").read_bytes()
    assert (a / "fire_patrol_7x7.csv").read_bytes().count(b"\r") == 0


def test_run_seed_override(tmp_path, capsys):
    cfg = config("fire_patrol_7x7.toml", tmp_path)
    assert cli.main(["run", str(cfg), "--seed", "7", "--out", str(tmp_path)]) == 0
    assert read_csv(tmp_path / "fire_patrol_7x7.csv")[1][cli.CSV_HEADER.index("seed")] == "7"


def test_run_bad_configs(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "nope.toml")]) == cli.EXIT_IO
    bad = tmp_path / "bad.toml"
    bad.write_text("[mission]\ntask = 'fire_patrol'\n")
    assert cli.main(["run", str(bad)]) == cli.EXIT_IO
    bad.write_text("[mission\n")
    assert cli.main(["run", str(bad)]) == cli.EXIT_IO


# ---------------------------------------------------------------- sweep

def write_plan(path, **kw):
    body = {"name": "p", "task": "fire_patrol", "sorters": ["distance"], "universes": [100],
            "repetitions": 1, "seed": 0}
    body.update(kw)
    lines = ["[sweep]"]
    for k, v in body.items():
        lines.append(f"{k} = {v!r}".replace("'", '"'))
    path.write_text("\n".join(lines) + "\n")
    return path


def test_single_cell_plan(tmp_path, capsys):
    plan = write_plan(tmp_path / "one.toml")
    assert cli.main(["sweep", str(plan), "--out", str(tmp_path)]) == cli.EXIT_OK
    rows = read_csv(tmp_path / "p.csv")
    assert len(rows) == 2
    summary = read_csv(tmp_path / "p.summary.csv")
    assert tuple(summary[0]) == cli.SUMMARY_HEADER and summary[1][4] == "1"
    assert (tmp_path / "p.svg").exists()
    assert (tmp_path / "p.status.txt").read_text().strip().endswith("ok")


def test_sweep_jobs_do_not_change_results(tmp_path, capsys):
    plan = write_plan(tmp_path / "two.toml", sorters=["distance", "last", "random"], universes=[100, 200],
                      repetitions=2, targets=4)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["sweep", str(plan), "--out", str(a)]) == 0
    assert cli.main(["sweep", str(plan), "--jobs", "2", "--out", str(b)]) == 0
    ra, rb = read_csv(a / "p.csv"), read_csv(b / "p.csv")
    assert len(ra) == 1 + 3 * 2 * 2
    assert without_wall(ra) == without_wall(rb)
    assert (a / "p.summary.csv").read_bytes() == (b / "p.summary.csv").read_bytes()


@pytest.mark.slow
def test_patrol_plan_row_count(tmp_path, capsys):
    plan = config("ordered_patrol_sweep.toml", tmp_path)
    assert cli.main(["sweep", str(plan), "--jobs", "2", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "ordered_patrol_sweep.csv")
    assert len(rows) == 1 + 45
    assert {r[2] for r in rows[1:]} == {"distance", "last", "random"}
    svg = (tmp_path / "ordered_patrol_sweep.svg").read_text()
    for s in ("distance", "last", "random"):
        assert f">{s}<" in svg


def test_sweep_failures_reported(tmp_path, capsys):
    plan = write_plan(tmp_path / "bad.toml", task="ordered_patrol", universes=[100, 1000])
    assert cli.main(["sweep", str(plan), "--out", str(tmp_path)]) == cli.EXIT_FAIL
    status = (tmp_path / "p.status.txt").read_text().splitlines()
    assert any("failed" in s for s in status) and any(s.endswith(" ok") for s in status)
    assert len(read_csv(tmp_path / "p.csv")) == 2


def test_bad_plans(tmp_path, capsys):
    assert cli.main(["sweep", str(tmp_path / "none.toml")]) == cli.EXIT_IO
    assert cli.main(["sweep", str(write_plan(tmp_path / "r.toml", repetitions=0))]) == cli.EXIT_IO
    assert cli.main(["sweep", str(write_plan(tmp_path / "t.toml", task="juggle"))]) == cli.EXIT_IO
    assert cli.main(["sweep", str(write_plan(tmp_path / "u.toml", universes=[]))]) == cli.EXIT_IO


# ---------------------------------------------------------------- plot

def test_empty_csv_plot(tmp_path, capsys):
    src = tmp_path / "empty.csv"
    src.write_text("")
    assert cli.main(["plot", str(src)]) == cli.EXIT_OK
    assert (tmp_path / "empty.svg").read_text().lstrip().startswith("<?xml")
    src.write_text(",".join(cli.CSV_HEADER) + "\n")
    assert cli.main(["plot", str(src), "--kind", "scatter"]) == cli.EXIT_OK


def test_plot_schema_mismatch(tmp_path, capsys):
    src = tmp_path / "x.csv"
    src.write_text("a,b\n1,2\n")
    assert cli.main(["plot", str(src)]) == cli.EXIT_IO
    assert cli.main(["plot", str(src), "--kind", "path"]) == cli.EXIT_IO
    assert cli.main(["plot", str(tmp_path / "missing.csv")]) == cli.EXIT_IO


def test_plots_are_byte_stable(tmp_path, capsys):
    plan = write_plan(tmp_path / "plan.toml", sorters=["distance", "random"], universes=[100, 200],
                      repetitions=2, targets=4)
    cli.main(["sweep", str(plan), "--out", str(tmp_path)])
    for kind in ("line", "scatter"):
        a, b = tmp_path / f"{kind}1.svg", tmp_path / f"{kind}2.svg"
        assert cli.main(["plot", str(tmp_path / "p.csv"), "--kind", kind, "--out", str(a)]) == 0
        assert cli.main(["plot", str(tmp_path / "p.csv"), "--kind", kind, "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
    text = (tmp_path / "line1.svg").read_text()
    assert ">distance<" in text and ">random<" in text
    cfg = config("fire_patrol_7x7.toml", tmp_path)
    cli.main(["run", str(cfg), "--out", str(tmp_path)])
    p1, p2 = tmp_path / "path1.svg", tmp_path / "path2.svg"
    for p in (p1, p2):
        assert cli.main(["plot", str(tmp_path / "fire_patrol_7x7.poses.csv"), "--kind", "path",
                         "--out", str(p)]) == 0
    assert p1.read_bytes() == p2.read_bytes()


def test_console_script():
    exe = shutil.which("iterplan")
    cmd = [exe] if exe else [sys.executable, "-m", "iterplan.cli"]
    res = subprocess.run(cmd + ["--help"], capture_output=True, text=True, timeout=60)
    assert res.returncode == 0
    for sub in ("synth", "run", "sweep", "plot"):
        assert sub in res.stdout
