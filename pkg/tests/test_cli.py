import json
import subprocess
import sys

import pytest
import yaml

from circlelab.cli import (ConfigError, apply_overrides, dumps, list_examples, load_config, main, run_scenario,
                           validate_config)

SMALL = {
    "name": "tiny",
    "seed": 1,
    "generators": {"a": {"mobius": [[3.0, 0.0], [0.0, 1 / 3]]},
                   "b": {"mobius": [[5 / 3, 4 / 3], [4 / 3, 5 / 3]]}},
    "base_point": 0.3,
    "pipelines": ["orbit", "jets-selftest"],
    "params": {"jets-selftest": {"words": 5, "max_length": 3, "points": 10}, "orbit": {"radius": 3}},
}


def tiny():
    return json.loads(json.dumps(SMALL))


def test_examples_catalog():
    names = [e["name"] for e in list_examples()]
    assert names == sorted(names)
    for n in ("psl2z", "schottky", "rotations", "perturbed-rotations"):
        assert n in names
    assert all(e["description"] for e in list_examples())


def test_examples_command(capsys):
    assert main(["examples"]) == 0
    assert "psl2z" in capsys.readouterr().out


def test_overrides():
    cfg = apply_overrides(tiny(), ["params.orbit.radius=2", "params.probe.interval=[0.1, 0.2]", "seed=9"])
    assert cfg["params"]["orbit"]["radius"] == 2
    assert cfg["params"]["probe"]["interval"] == [0.1, 0.2]
    assert cfg["seed"] == 9
    with pytest.raises(ConfigError):
        apply_overrides(tiny(), ["params.orbit.radius"])
    with pytest.raises(ConfigError):
        apply_overrides(tiny(), ["name.x=1"])


@pytest.mark.parametrize("patch, field", [
    ({"pipelines": ["orbit", "plot"]}, "pipelines[1]"),
    ({"params": {"orbit": {"radius": 40}}}, "params.orbit.radius"),
    ({"params": {"orbit": {"tol": -1}}}, "params.orbit.tol"),
    ({"params": {"probe": {"f1": "z"}}}, "params.probe.f1"),
    ({"params": {"holonomy": {"letter": "a", "gamma": "a c"}}}, "params.holonomy.gamma"),
    ({"generators": {"a": {"mobius": [[1, 0], [0, -1]]}}}, "generators"),
    ({"seed": "x"}, "seed"),
])
def test_config_errors_name_field(patch, field):
    cfg = tiny()
    cfg.update(patch)
    with pytest.raises(ConfigError) as e:
        validate_config(cfg)
    assert e.value.path == field


def test_missing_field():
    cfg = tiny()
    del cfg["generators"]
    with pytest.raises(ConfigError, match="generators"):
        validate_config(cfg)


def test_yaml_error_has_line(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("name: x\ngenerators: {a: [1, 2\npipelines: []\n")
    with pytest.raises(ConfigError) as e:
        load_config(p)
    assert "line" in e.value.path


def test_pipelines_run_in_canonical_order(tmp_path):
    rep = run_scenario(tiny(), tmp_path)
    assert list(rep.pipelines) == ["jets-selftest", "orbit"]
    assert rep.exit_code == 0


def test_report_structure_and_provenance(tmp_path):
    run_scenario(tiny(), tmp_path)
    r = json.loads((tmp_path / "report.json").read_text())
    assert r["scenario"] == "tiny" and r["seed"] == 1
    assert set(r["summary"].values()) <= {"pass", "fail", "inconclusive", "error"}
    for pipe in r["pipelines"].values():
        for c in pipe["claims"]:
            assert c["provenance"]
            assert c["status"] in ("pass", "fail", "inconclusive")
        for f in pipe["files"]:
            assert (tmp_path / f).is_file()


def test_deterministic_and_parallel_identical(tmp_path):
    run_scenario("schottky", tmp_path / "a", jobs=1)
    run_scenario("schottky", tmp_path / "b", jobs=4)
    a = (tmp_path / "a" / "report.json").read_bytes()
    assert a == (tmp_path / "b" / "report.json").read_bytes()

    def reject(c):
        raise ValueError(c)

    json.loads(a, parse_constant=reject)  # non-finite floats are written as strings


def test_pipeline_error_is_isolated(tmp_path):
    cfg = tiny()
    cfg["pipelines"].append("markov-validate")
    rep = run_scenario(cfg, tmp_path)
    assert rep.pipelines["markov-validate"].status == "error"
    assert rep.pipelines["orbit"].status == "pass"
    assert rep.exit_code == 1


def test_inconclusive_is_not_an_error(tmp_path):
    cfg = tiny()
    cfg["pipelines"] = ["probe"]
    cfg["params"] = {"probe": {"f1": "a", "f2": "b"}}
    rep = run_scenario(cfg, tmp_path)
    assert rep.pipelines["probe"].status == "inconclusive"
    assert rep.exit_code == 0


def test_cli_exit_codes(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text(yaml.safe_dump(tiny()))
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 0
    assert main(["run", str(p), "--out", str(tmp_path / "o"), "--set", "pipelines=[nope]"]) == 2
    assert main(["run", "no-such-scenario", "--out", str(tmp_path / "o")]) == 2


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "circlelab.cli", "run", "rotations", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert "probe" in out.stdout


def test_dumps_formats_floats():
    assert dumps({"x": 0.1, "y": [1, float("inf")]}) == '{\n  "x": 0.10000000000000001,\n  "y": [1, "inf"]\n}'
