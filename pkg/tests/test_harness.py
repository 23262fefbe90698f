import csv
import io

import pytest

from mhfl.harness import cli
from mhfl.harness.config import ConfigError, ExperimentConfig, load_config, loads
from mhfl.harness.runner import cell_seed, plan, read_manifest, replay, run
from mhfl.network import InstanceConfig

FAST = """
[instance]
K = 2
n_relays = 3
"""


def _rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def test_empty_config_gives_system_defaults():
    cfg = loads("")
    inst = cfg.instance_config()
    assert inst == InstanceConfig()
    assert inst.leaf_max_freq == 2e9 and inst.system_bandwidth == 20e6 and inst.n_rounds == 84


def test_out_of_range_power_names_key():
    with pytest.raises(ConfigError) as err:
        loads("[instance]\nP_m = 30\n")
    assert err.value.key == "instance.P_m" and "25" in str(err.value)


def test_unknown_keys_are_named():
    for text, key in (("bogus = 1\n", "bogus"), ("[instance]\nfoo = 1\n", "instance.foo"),
                      ("[solver]\nspeed = 2\n", "solver.speed"),
                      ('[[sweep]]\nparameter = "nope"\ngrid = [1]\n', "sweep[0].parameter")):
        with pytest.raises(ConfigError) as err:
            loads(text)
        assert err.value.key == key


def test_duplicate_key_reports_line():
    with pytest.raises(ConfigError) as err:
        loads('kind = "sweep"\nseed = 1\nseed = 2\n')
    assert err.value.line == 3 and "line 3" in str(err.value)


def test_sweep_grid_values_are_range_checked():
    with pytest.raises(ConfigError) as err:
        loads('kind = "sweep"\n[[sweep]]\nparameter = "P_n"\ngrid = [5, 35]\n')
    assert err.value.key == "sweep[0].grid[1]"


def test_roundtrip_is_idempotent(tmp_path):
    text = ('kind = "sweep"\nseed = 4\n[instance]\nK = 5\ncycles_range = [1e4, 2e4]\n'
            '[[sweep]]\nparameter = "F_m"\ngrid = [1e9, 2e9]\n')
    cfg = loads(text)
    again = loads(cfg.dumps())
    assert again == cfg and again.dumps() == cfg.dumps()
    path = tmp_path / "c.toml"
    path.write_text(cfg.dumps())
    assert load_config(path).digest() == cfg.digest()
    assert loads(ExperimentConfig().dumps()) == ExperimentConfig()


def test_cell_seeds_are_distinct_and_stable():
    seeds = [cell_seed(7, i) for i in range(50)]
    assert len(set(seeds)) == 50
    assert seeds == [cell_seed(7, i) for i in range(50)]


def test_eh_table_has_one_row_per_node_count(tmp_path):
    res = run(loads('kind = "eh-table"\n' + FAST), out=tmp_path)
    assert res.exit_status == 0
    rows = _rows(tmp_path / "eh_table.csv")
    assert [int(r["node_count"]) for r in rows] == [3, 6, 9]
    assert all(float(r["gap_s"]) == float(r["latency_eh_off_s"]) - float(r["latency_eh_on_s"]) for r in rows)


def test_baseline_compare_traces_all_schemes(tmp_path):
    res = run(loads('kind = "baseline-compare"\n' + FAST), out=tmp_path)
    assert res.exit_status == 0
    rows = _rows(tmp_path / "baselines.csv")
    assert {r["scheme"] for r in rows} == {"scheme1", "scheme2", "scheme3", "greedy", "proposed"}
    assert all(r["status"] == "ok" for r in rows)


def test_one_point_sweep_gives_one_row_per_scheme(tmp_path):
    cfg = loads('kind = "sweep"\n[[sweep]]\nparameter = "P_m"\ngrid = [20]\n'
                'schemes = ["greedy", "scheme1", "proposed"]\n' + FAST)
    run(cfg, out=tmp_path)
    rows = _rows(tmp_path / "sweep_P_m.csv")
    assert [r["scheme"] for r in rows] == ["greedy", "scheme1", "proposed"]


def test_failed_cell_is_recorded_and_run_continues(tmp_path):
    # a budget far below any useful training energy makes every solve fail
    cfg = loads('kind = "baseline-compare"\n[baseline]\nschemes = ["greedy", "proposed"]\n'
                + FAST + "leaf_energy_range = [1e-12, 2e-12]\n")
    res = run(cfg, out=tmp_path)
    assert res.exit_status != 0 and len(res.failures) == 2
    rows = _rows(tmp_path / "baselines.csv")
    assert len(rows) == 2 and all(r["status"].startswith("failed: InfeasibleProblemError") for r in rows)
    assert len(read_manifest(tmp_path / "manifest.toml")["failures"]) == 2


def test_rerun_and_replay_are_byte_identical(tmp_path):
    cfg = loads('kind = "convergence"\nreplicates = 2\n' + FAST)
    a = run(cfg, out=tmp_path / "a")
    b = run(cfg, out=tmp_path / "b", jobs=2)
    assert (tmp_path / "a" / "convergence.csv").read_bytes() == (tmp_path / "b" / "convergence.csv").read_bytes()
    assert a.outputs == b.outputs
    rep = replay(tmp_path / "a" / "manifest.toml", out=tmp_path / "c")
    assert rep.identical
    doc = read_manifest(tmp_path / "a" / "manifest.toml")
    assert doc["manifest"]["config_sha256"] == cfg.digest()
    assert doc["manifest"]["seeds"] == cfg.replicate_seeds()


def test_fl_metrics_columns(tmp_path):
    cfg = loads('kind = "fl-training"\nseeds = [3]\n[fl]\nrounds = 2\nlocal_steps = 2\nn_clients = 3\n')
    run(cfg, out=tmp_path)
    text = (tmp_path / "fl_metrics.csv").read_text()
    assert text.splitlines()[0] == "round,algorithm,accuracy,loss,seed"
    assert len(text.splitlines()) == 1 + 2 * 3


def test_plan_orders_cells():
    cfg = loads('kind = "sweep"\nreplicates = 2\n[[sweep]]\nparameter = "F_n"\ngrid = [1e9, 2e9]\n')
    cells = plan(cfg)
    assert len(cells) == 2 * 2 * 2
    assert [c.index for c in cells] == list(range(8))


def test_cli_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.toml"
    good.write_text('kind = "eh-table"\n[eh_table]\nnode_counts = [3]\n' + FAST)
    bad = tmp_path / "bad.toml"
    bad.write_text("[instance]\nP_m = 30\n")
    assert cli.main(["validate", str(good), "--seed", "9"]) == 0
    assert "seed = 9" in capsys.readouterr().out
    assert cli.main(["validate", str(bad)]) == 2
    assert "instance.P_m" in capsys.readouterr().err
    out = tmp_path / "out"
    assert cli.main(["run", str(good), "--out", str(out), "--tol", "1e-3"]) == 0
    assert cli.main(["replay", str(out / "manifest.toml"), "--out", str(tmp_path / "re")]) == 0
