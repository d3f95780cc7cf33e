"""Config schema behaviour and the command-line front end, exercised
in-process through main()."""

import json
import warnings

import numpy as np
import pytest

from chclab import ConfigError, config_hash, load_config, validate_config
from chclab.cli import main


def _base_config(**over):
    cfg = {
        "schema_version": 1,
        "command": "simulate",
        "seed": 0,
        "domain": {"dim": 1, "modes_per_axis": 8},
        "noise": {"kind": "white", "q0": 1.0},
        "initial": {"preset": "zero"},
        "scheme": {"M": 8, "N": 8, "T": 0.008},
        "output": {"thin": 2, "fields": True},
    }
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(val)
        else:
            cfg[key] = val
    return cfg


def _write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _run(tmp_path, cfg, *extra, name="config.json"):
    out = tmp_path / "out"
    argv = ["--config", _write_config(tmp_path, cfg, name), "--out", str(out)]
    argv += list(extra)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        code = main(argv)
    return code, out


# --- schema ------------------------------------------------------------------


def test_validate_fills_defaults():
    cfg = validate_config({"schema_version": 1, "command": "simulate"})
    assert cfg["seed"] == 0 and cfg["workers"] == 1
    assert cfg["noise"]["kind"] == "trace-class-power"
    assert cfg["scheme"]["M"] == 256
    assert cfg["output"]["dir"] == "out"
    assert "q" not in cfg["noise"]  # optional keys without defaults stay absent


def test_validate_collects_every_violation():
    bad = {
        "command": "fly",
        "scheme": {"M": 0, "warp": 9},
        "turbo": True,
        "noise": {"kind": "white", "s": -1},
    }
    with pytest.raises(ConfigError) as err:
        validate_config(bad)
    msgs = "\n".join(err.value.problems)
    assert len(err.value.problems) >= 5
    for frag in ("schema_version", "command", "scheme.M", "scheme.warp", "turbo", "noise.s"):
        assert frag in msgs


def test_validate_rejects_non_object():
    with pytest.raises(ConfigError):
        validate_config([1, 2])


def test_config_hash_canonical():
    a = validate_config({"schema_version": 1, "command": "simulate", "seed": 3})
    b = validate_config({"command": "simulate", "schema_version": 1, "seed": 3})
    assert config_hash(a) == config_hash(b)
    c = validate_config({"schema_version": 1, "command": "simulate", "seed": 4})
    assert config_hash(a) != config_hash(c)


def test_load_config_round_trip_and_parse_errors(tmp_path):
    path = _write_config(tmp_path, _base_config())
    cfg = load_config(path)
    assert cfg["command"] == "simulate"
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(broken))


# --- CLI ---------------------------------------------------------------------


def test_simulate_writes_artifacts(tmp_path):
    code, out = _run(tmp_path, _base_config())
    assert code == 0
    assert (out / "trajectory.csv").exists()
    assert (out / "fields.bin").exists()
    assert not (out / "error.json").exists()
    meta = json.loads((out / "meta.json").read_text())
    assert meta["command"] == "simulate"
    assert meta["seed"] == 0
    assert len(meta["config_hash"]) == 64
    assert meta["wall_time_s"] >= 0.0


def test_rerun_is_byte_identical(tmp_path):
    cfg = _base_config()
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    path = _write_config(tmp_path, cfg)
    assert main(["--config", path, "--out", str(out_a)]) == 0
    assert main(["--config", path, "--out", str(out_b)]) == 0
    assert (out_a / "trajectory.csv").read_bytes() == (out_b / "trajectory.csv").read_bytes()
    assert (out_a / "fields.bin").read_bytes() == (out_b / "fields.bin").read_bytes()
    ma = json.loads((out_a / "meta.json").read_text())
    mb = json.loads((out_b / "meta.json").read_text())
    for m in (ma, mb):
        m.pop("wall_time_s")
        m["config"]["output"].pop("dir")
        m.pop("config_hash")
    assert ma == mb


def test_bad_config_exits_2_with_all_problems(tmp_path):
    cfg = _base_config()
    del cfg["schema_version"]
    cfg["scheme"]["M"] = -3
    cfg["extra"] = 1
    code, out = _run(tmp_path, cfg)
    assert code == 2
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "config"
    text = "\n".join(err["problems"])
    assert "schema_version" in text and "scheme.M" in text and "extra" in text


def test_missing_study_keys_exit_2(tmp_path):
    cfg = _base_config(command="converge-time")
    code, out = _run(tmp_path, cfg)
    assert code == 2
    err = json.loads((out / "error.json").read_text())
    assert any("study.levels_M" in p for p in err["problems"])


def test_infeasible_ladder_exits_2(tmp_path):
    cfg = _base_config(
        command="converge-time",
        study={"levels_M": [3, 8, 16], "reference_M": 64, "reference_N": 8,
               "n_paths": 2, "gamma": 1.45},
        scheme={"M": 8, "N": 8, "T": 0.064},
    )
    code, out = _run(tmp_path, cfg)
    assert code == 2
    err = json.loads((out / "error.json").read_text())
    assert any("divide" in p for p in err["problems"])


def test_solver_blowup_exits_3(tmp_path):
    cfg = _base_config(
        initial={"preset": "single-mode", "index": 1, "amplitude": 1e6},
        scheme={"M": 1, "N": 8, "T": 1.0, "max_iters": 4},
    )
    code, out = _run(tmp_path, cfg)
    assert code == 3
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "solver"
    assert err["step"] == 1
    assert "path" in err


def test_flag_beats_env_beats_config(tmp_path, monkeypatch):
    monkeypatch.setenv("CHCLAB_SEED", "5")
    code, out = _run(tmp_path, _base_config())
    assert code == 0
    assert json.loads((out / "meta.json").read_text())["seed"] == 5
    code, out2 = _run(tmp_path, _base_config(output={"dir": "ignored"}), "--seed", "9")
    assert code == 0
    assert json.loads((out2 / "meta.json").read_text())["seed"] == 9


def test_paths_override_reaches_study(tmp_path, monkeypatch):
    monkeypatch.setenv("CHCLAB_PATHS", "6")
    cfg = _base_config(
        command="converge-time",
        domain={"dim": 1, "modes_per_axis": 16},
        noise={"kind": "trace-class-power", "s": 2.5, "q0": 0.0},
        initial={"preset": "smooth-random", "decay": 3.95, "amplitude": 0.3},
        scheme={"M": 8, "N": 8, "T": 0.0625},
        study={"levels_M": [4, 8, 16], "reference_M": 64, "reference_N": 8,
               "n_paths": 4, "gamma": 3.95},
    )
    code, out = _run(tmp_path, cfg)
    assert code == 0
    meta = json.loads((out / "meta.json").read_text())
    assert meta["config"]["study"]["n_paths"] == 6
    report = json.loads((out / "rate_report.json").read_text())
    assert report["n_paths"] == 6
    lines = (out / "errors.csv").read_text().splitlines()
    assert lines[0] == "axis,level_M,level_N,h,error,stderr"
    assert len(lines) == 4


def test_verify_operators_command(tmp_path):
    code, out = _run(tmp_path, _base_config(command="verify-operators"))
    assert code == 0
    smoothing = (out / "smoothing.csv").read_text().splitlines()
    assert smoothing[0] == "bound,exponent,constant,fitted_rate,expected_rate"
    discrete = (out / "discrete_smoothing.csv").read_text().splitlines()
    assert discrete[0] == "bound,k,exponent,constant"
    assert len(discrete) > 4


def test_regularity_command(tmp_path):
    cfg = _base_config(
        command="regularity",
        scheme={"M": 256, "N": 8, "T": 0.256},
        study={"n_paths": 4, "betas": [0.0], "gamma": 1.45},
    )
    code, out = _run(tmp_path, cfg)
    assert code == 0
    probes = json.loads((out / "regularity.json").read_text())
    assert len(probes) == 1
    assert np.isfinite(probes[0]["exponent"])
    lines = (out / "regularity.csv").read_text().splitlines()
    assert lines[0] == "beta,p,exponent,exponent_se,expected"
    assert len(lines) == 2


def test_config_flag_is_required():
    with pytest.raises(SystemExit):
        main([])
