import csv
import json

import numpy as np
import pytest

from molarkit import __version__
from molarkit.cli import main
from molarkit.config import config_hash, expand_grid, load_config, seed_list
from molarkit.exceptions import ConfigError
from molarkit.experiments import REGRESS_COLUMNS, derive_seed, read_rows


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg, indent=2))
    return str(p)


def regress_cfg(**grid):
    g = {"d": [6], "n": [40], "M": [4], "s": [1], "sigma": [0.2]}
    g.update(grid)
    return {"kind": "regress", "seeds": {"base": 3, "count": 3}, "grid": g,
            "methods": [{"name": "OLS"}, {"name": "MOLAR"}, {"name": "MOLAR", "label": "MOLAR0", "c_gamma": 0},
                        {"name": "LASSO"}, {"name": "POOLED"}, {"name": "RM"}]}


def run(tmp_path, cfg, out="out", extra=()):
    path = write_cfg(tmp_path, cfg, f"{out}.json")
    code = main([cfg["kind"] if "tune" not in extra else "tune", "--config", path,
                 "--out", str(tmp_path / out), *[e for e in extra if e != "tune"]])
    return code, tmp_path / out


def csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- config handling

def test_unknown_key_is_config_error(tmp_path, capsys):
    cfg = regress_cfg()
    cfg["methods"][0]["c_gama"] = 1.0
    code, _ = run(tmp_path, cfg)
    assert code == 2
    err = capsys.readouterr().err
    assert "c_gama" in err and ".json:" in err


def test_bad_json_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "kind": "regress",\n  "grid": {,\n}')
    assert main(["regress", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "bad.json:3:" in capsys.readouterr().err


def test_kind_mismatch_and_missing_file(tmp_path):
    path = write_cfg(tmp_path, regress_cfg())
    assert main(["bandit", "--config", path, "--out", str(tmp_path)]) == 2
    assert main(["regress", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "nope.json"))


def test_invalid_combination_is_config_error(tmp_path):
    code, _ = run(tmp_path, regress_cfg(s=[9]))  # s > d
    assert code == 2


def test_numerical_failure_exit_code(tmp_path, capsys):
    code, _ = run(tmp_path, regress_cfg(n=[4]))  # n < d: OLS is undefined
    assert code == 3
    assert "SingularDesign" in capsys.readouterr().err


def test_seed_helpers():
    assert seed_list({"seeds": {"base": 5, "count": 3}}) == [5, 6, 7]
    assert seed_list({"seeds": [4, 9]}, override_base=10) == [14, 19]
    assert seed_list({}) == [0]
    assert derive_seed(1, 2) == derive_seed(1, 2) != derive_seed(2, 1)
    assert expand_grid({"d": [1, 2], "n": [5, 6]}, ["d", "n"]) == [
        {"d": 1, "n": 5}, {"d": 1, "n": 6}, {"d": 2, "n": 5}, {"d": 2, "n": 6}]
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})


# ---------------------------------------------------------------- regress

def test_regress_outputs_and_manifest(tmp_path):
    code, out = run(tmp_path, regress_cfg())
    assert code == 0
    rows = csv_rows(out / "regress_results.csv")
    assert list(rows[0]) == REGRESS_COLUMNS
    assert len(rows) == 6 * 3 * 4
    man = json.loads((out / "manifest.json").read_text())
    assert man["version"] == __version__ and man["started"] and man["finished"]
    assert {r["config_hash"] for r in rows} == {man["config_hash"]}
    assert {int(r["seed"]) for r in rows} == {3, 4, 5}
    # every float round-trips
    for r in rows:
        assert repr(float(r["l1_error"])) == r["l1_error"]


def test_regress_zero_threshold_matches_ols(tmp_path):
    _, out = run(tmp_path, regress_cfg())
    rows = csv_rows(out / "regress_results.csv")
    ols = [(r["seed"], r["task"], r["l1_error"], r["l2_error"]) for r in rows if r["method"] == "OLS"]
    zero = [(r["seed"], r["task"], r["l1_error"], r["l2_error"]) for r in rows if r["method"] == "MOLAR0"]
    assert ols == zero


def test_regress_noiseless(tmp_path):
    cfg = regress_cfg(s=[0], sigma=[0.0])
    cfg["methods"] = [{"name": "OLS"}, {"name": "MOLAR"}, {"name": "POOLED"}, {"name": "MOLAR", "option": "soft"}]
    _, out = run(tmp_path, cfg)
    assert max(float(r["l1_error"]) for r in csv_rows(out / "regress_results.csv")) <= 1e-7


def test_regress_deterministic_and_worker_independent(tmp_path):
    cfg = regress_cfg(n=[30, 60])
    run(tmp_path, cfg, "a")
    run(tmp_path, cfg, "b")
    run(tmp_path, cfg, "c", extra=("--workers", "3"))
    a = read_rows(tmp_path / "a" / "regress_results.csv")
    assert a == read_rows(tmp_path / "b" / "regress_results.csv")
    assert a == read_rows(tmp_path / "c" / "regress_results.csv")
    assert (tmp_path / "a" / "regress_summary.csv").read_bytes() == (tmp_path / "c" / "regress_summary.csv").read_bytes()


def test_adding_a_method_keeps_other_draws(tmp_path):
    cfg = regress_cfg()
    run(tmp_path, cfg, "a")
    cfg2 = dict(cfg, methods=cfg["methods"][:1])
    run(tmp_path, cfg2, "b")
    a = [r for r in read_rows(tmp_path / "a" / "regress_results.csv", {"wall_ms", "config_hash"}) if r["method"] == "OLS"]
    b = read_rows(tmp_path / "b" / "regress_results.csv", {"wall_ms", "config_hash"})
    assert a == b


def test_seed_override_changes_draws(tmp_path):
    cfg = regress_cfg()
    run(tmp_path, cfg, "a")
    run(tmp_path, cfg, "b", extra=("--seed", "100"))
    a = csv_rows(tmp_path / "a" / "regress_results.csv")
    b = csv_rows(tmp_path / "b" / "regress_results.csv")
    assert {r["seed"] for r in b} == {"100", "101", "102"}
    assert a[0]["l1_error"] != b[0]["l1_error"]


# ---------------------------------------------------------------- bandit

def bandit_cfg(**grid):
    g = {"d": [3], "s": [1], "M": [3], "K": [3], "T": [120], "sigma": [0.3]}
    g.update(grid)
    return {"kind": "bandit", "seeds": {"count": 2}, "grid": g,
            "methods": [{"name": "MOLARB"}, {"name": "OLSB"}]}


def test_bandit_single_arm_zero(tmp_path):
    code, out = run(tmp_path, bandit_cfg(K=[1]))
    assert code == 0
    assert all(float(r["mean_regret"]) == 0.0 for r in csv_rows(out / "bandit_summary.csv"))


def test_bandit_single_instance_policies_agree(tmp_path):
    _, out = run(tmp_path, bandit_cfg(M=[1]))
    rows = csv_rows(out / "bandit_traces.csv")
    key = lambda r: (r["seed"], r["instance"], r["round"])
    molar = {key(r): r["cumulative_regret"] for r in rows if r["policy"] == "MOLARB"}
    ols = {key(r): r["cumulative_regret"] for r in rows if r["policy"] == "OLSB"}
    assert molar == ols and len(molar) == 2 * 120


def test_bandit_single_seed_zero_stderr(tmp_path):
    cfg = bandit_cfg()
    cfg["seeds"] = [7]
    _, out = run(tmp_path, cfg)
    assert all(float(r["stderr"]) == 0.0 for r in csv_rows(out / "bandit_summary.csv"))


def test_bandit_parallel_serial_equivalence(tmp_path):
    cfg = bandit_cfg(M=[3, 4])
    cfg["world_seed"] = 5
    run(tmp_path, cfg, "a")
    run(tmp_path, cfg, "b", extra=("--workers", "2"))
    for name in ("bandit_traces.csv", "bandit_summary.csv", "bandit_refit_log.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    probs = {r["activation_prob"] for r in csv_rows(tmp_path / "a" / "bandit_summary.csv")}
    assert "" not in probs


# ---------------------------------------------------------------- recover

def test_recover_homogeneous_noiseless(tmp_path):
    cfg = {"kind": "recover", "seeds": {"count": 2}, "grid": {"d": [10], "n": [4], "M": [4], "s": [0]}}
    code, out = run(tmp_path, cfg)
    assert code == 0
    rows = csv_rows(out / "recover_results.csv")
    assert len(rows) == 2
    for r in rows:
        assert float(r["l1_error"]) <= 1e-6
        if r["converged"] == "true":
            assert float(r["max_constraint_violation"]) <= 1e-8


def test_recover_underdetermined_reports_error(tmp_path):
    cfg = {"kind": "recover", "seeds": {"count": 2}, "grid": {"d": [30], "n": [2], "M": [1], "s": [5]},
           "solver": {"max_iterations": 2000}}
    _, out = run(tmp_path, cfg)
    assert all(float(r["l1_error"]) > 1e-2 for r in csv_rows(out / "recover_results.csv"))


# ---------------------------------------------------------------- tune

def tune_cfg(grid, parameter="c_lambda", method="LASSO", sigma=0.0):
    cfg = regress_cfg(s=[0], sigma=[sigma])
    cfg["methods"] = [{"name": "OLS"}]
    cfg["tune"] = {"method": {"name": method}, "parameter": parameter, "grid": grid}
    return cfg


def test_tune_single_element(tmp_path, capsys):
    code, out = run(tmp_path, tune_cfg([0.7]), extra=("tune",))
    assert code == 0
    assert json.loads((out / "tune_result.json").read_text())["chosen"] == 0.7


def test_tune_picks_exact_value(tmp_path):
    _, out = run(tmp_path, tune_cfg([0.5, 0.0, 2.0]), extra=("tune",))
    res = json.loads((out / "tune_result.json").read_text())
    assert res["chosen"] == 0.0
    table = csv_rows(out / "tune_table.csv")
    assert [float(r["value"]) for r in table] == [0.0, 0.5, 2.0]


def test_tune_ties_take_smaller_and_deterministic(tmp_path):
    # one task: every threshold reproduces OLS bit-for-bit, so all values tie exactly
    cfg = tune_cfg([2.0, 0.35, 1.0], parameter="c_gamma", method="MOLAR", sigma=0.3)
    cfg["grid"]["M"] = [1]
    _, a = run(tmp_path, cfg, "a", extra=("tune",))
    _, b = run(tmp_path, cfg, "b", extra=("tune",))
    assert json.loads((a / "tune_result.json").read_text())["chosen"] == 0.35
    assert (a / "tune_table.csv").read_bytes() == (b / "tune_table.csv").read_bytes()


def test_tune_requires_block(tmp_path):
    path = write_cfg(tmp_path, regress_cfg())
    assert main(["tune", "--config", path, "--out", str(tmp_path)]) == 2


# ---------------------------------------------------------------- ingest

def test_ingest_subcommand(tmp_path):
    r = np.random.default_rng(0)
    n = 300
    X = r.normal(size=(n, 4))
    lines = ["task,y,a,b,c,d"] + [
        f"{'uv'[i % 2]},{X[i, 0] - X[i, 1] + 0.1 * r.normal()},{X[i, 0]},{X[i, 1]},{X[i, 2]},{X[i, 3]}"
        for i in range(n)]
    (tmp_path / "in.csv").write_text("\n".join(lines) + "\n")
    cfg = {"kind": "ingest", "input": str(tmp_path / "in.csv"), "split_fractions": [0.8, 0.1, 0.1]}
    code, out = run(tmp_path, cfg)
    assert code == 0
    assert (out / "processed.csv").exists() and (out / "split_train.csv").exists()
    cfg["input"] = str(tmp_path / "missing.csv")
    assert run(tmp_path, cfg, "x")[0] == 2
    cfg["split_fractions"] = [0.5, 0.1, 0.1]
    assert run(tmp_path, cfg, "y")[0] == 2
