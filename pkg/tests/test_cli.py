import hashlib
import json
from pathlib import Path

import pytest

from blhomlab.cli import main
from blhomlab.config import ConfigError, load_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


# --- strict configs -------------------------------------------------------------


def test_unknown_key_rejected_with_line():
    text = '{\n  "experiment": "E5",\n  "coefficients": {\n    "name": "layered",\n    "gird": 64\n  }\n}\n'
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "e5.json")
    assert str(exc.value) == "e5.json:5: coefficients.gird: unknown key"


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_config('{"experiment": "E2",\n "m_lsit": [1]}', "x.json")
    assert str(exc.value).startswith("x.json:2: m_lsit: unknown key")


def test_bad_value_and_experiment():
    with pytest.raises(ConfigError, match=r"c.json:3: grid.nt"):
        parse_config('{"experiment": "E1",\n "grid": {\n  "nt": 1}}', "c.json")
    with pytest.raises(ConfigError, match="unknown experiment"):
        parse_config('{"experiment": "E9"}')
    with pytest.raises(ConfigError, match="missing key 'experiment'"):
        parse_config("{}")
    with pytest.raises(ConfigError, match=r"<config>:2: invalid JSON"):
        parse_config('{"experiment": "E1",\n ]')


def test_frame_spec_exactly_one():
    with pytest.raises(ConfigError, match="exactly one"):
        parse_config('{"experiment": "E1", "frame": {"named": "axis", "normal": [0, 1]}}')


@pytest.mark.parametrize("name", [f"e{i}.json" for i in range(1, 7)])
def test_shipped_configs_parse(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.experiment == name[:2].upper()


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "nope.json")


# --- exit codes ------------------------------------------------------------------


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj, indent=2))
    return str(p)


def test_run_pass_exit_zero(tmp_path, capsys):
    cfg = write(tmp_path, "e5.json", {"experiment": "E5", "coefficients": {"name": "layered", "grid": 64}})
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
    assert "E5: PASS" in capsys.readouterr().out


def test_run_config_error_exit_three(tmp_path, capsys):
    cfg = write(tmp_path, "bad.json", {"experiment": "E5", "colour": "red"})
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "out")]) == 3
    assert "bad.json:3: colour: unknown key" in capsys.readouterr().err


def test_run_nonconvergence_exit_four(tmp_path, capsys):
    cfg = write(tmp_path, "e1.json", {"experiment": "E1", "tolerance": 1e-30,
                                       "grid": {"n_theta": 16, "nt": 64, "T": 6.0}})
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "out")]) == 4
    assert "non-convergence" in capsys.readouterr().err


def test_run_criterion_failure_exit_two(tmp_path, capsys):
    cfg = write(tmp_path, "e6.json", {"experiment": "E6", "min_slope": 5.0})
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "out")]) == 2
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["exit_code"] == 2
    assert [c["name"] for c in manifest["criteria"] if not c["passed"]] == ["slope"]


def test_run_jobs_takes_worst_code(tmp_path):
    good = write(tmp_path, "e5.json", {"experiment": "E5", "coefficients": {"grid": 64, "name": "layered"}})
    bad = write(tmp_path, "x.json", {"experiment": "E5", "oops": 1})
    assert main(["run", "--config", good, "--config", bad, "--jobs", "2", "--out", str(tmp_path / "o")]) == 3
    assert (tmp_path / "o" / "e5" / "manifest.json").exists()


def test_subcommand_usage_error(capsys):
    assert main(["decay", "--frame", "0,0"]) == 3
    assert main(["decay", "--data", "tan:1,0"]) == 3


# --- determinism and manifests ---------------------------------------------------


def test_byte_identical_reruns_and_checksums(tmp_path):
    cfg = str(CONFIGS / "e3.json")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(a)]) == 2
    assert main(["run", "--config", cfg, "--out", str(b)]) == 2
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["files"] == mb["files"]
    listed = {e["path"] for e in ma["files"]}
    on_disk = {str(p.relative_to(a)) for p in a.rglob("*") if p.is_file()} - {"manifest.json"}
    assert listed == on_disk
    for e in ma["files"]:
        data = (a / e["path"]).read_bytes()
        assert data == (b / e["path"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == e["sha256"]
    assert ma["config"]["experiment"] == "E3"
    assert ma["config"]["search_radius"] == 10000


@pytest.mark.parametrize("argv,expect", [
    (["dioph", "--frame", "golden", "--radius", "30", "--format", "csv"], "xi1,xi2,abs_Ndot_xi,norm_xi,violates"),
    (["dioph", "--frame", "liouville:3", "--xi-seq", "3", "--radius", "10000", "--format", "csv"], "xi1,xi2,abs_Ndot_xi,norm_xi,violates"),
    (["decay", "--solver", "series", "--format", "csv"], "t,l2,linf"),
    (["slowcv", "--format", "csv"], "M,xi1,xi2,absNdotxi,tM,value,threshold,pass"),
    (["err-sweep", "--format", "csv"], "eps,error"),
    (["tailscan", "--path", "series", "--format", "csv"], "a,tail,difference"),
    (["kernel-check", "--format", "csv"], "check,value,limit,pass"),
])
def test_subcommands_emit_csv(argv, expect, capsys, tmp_path):
    code = main(argv + ["--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert out.splitlines()[0] == expect
    assert code in (0, 2)
    assert any(tmp_path.iterdir())


def test_slowcv_exit_code_reflects_literal_bound(capsys):
    assert main(["slowcv", "--l", "1"]) == 2
    assert json.loads(capsys.readouterr().out)["proven_bound_passed"] is True


def test_cell_subcommand_writes_fields(tmp_path, capsys):
    assert main(["cell", "--coefficients", "layered", "--grid", "32", "--out", str(tmp_path)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["A0"][0][0] == pytest.approx(3**0.5, abs=1e-12)
    assert (tmp_path / "chi_1.csv").exists()
