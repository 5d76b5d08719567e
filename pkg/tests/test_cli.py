import csv
import io
import json

import numpy as np
import pytest

from shield import mpc
from shield.cli import main
from shield.instances import d1, d2, t0
from shield.predictor import TrainingSample, all_active, save_model, train
from shield.problem import dump


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def record(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    assert len(lines) == 1
    return json.loads(lines[0])


@pytest.fixture
def files(tmp_path):
    paths = {}
    for name, make in (("t0", t0), ("d1", d1), ("d2", d2)):
        paths[name] = tmp_path / f"{name}.json"
        dump(make(), paths[name])
    return paths


def test_solve_t0(files, capsys):
    code, out, _ = run(["solve", files["t0"]], capsys)
    rec = record(out)
    assert code == 0 and rec["status"] == "optimal"
    assert rec["objective"] == pytest.approx(0.0, abs=1e-12)


def test_solve_d2_dual(files, capsys):
    code, out, _ = run(["solve", files["d2"], "--dual", "--kkt-report"], capsys)
    rec = record(out)
    assert code == 0
    assert rec["dual"]["mu"] == pytest.approx([1.5], abs=1e-9)
    assert rec["dual"]["g"] == pytest.approx([1.0], abs=1e-9)
    assert rec["kkt_residual"] <= 1e-8 and "kkt_report" in rec


def test_solve_reduced_matches_full(files, capsys):
    _, full, _ = run(["solve", files["d1"]], capsys)
    _, red, _ = run(["solve", files["d1"], "--reduced"], capsys)
    assert record(red)["theta"] == pytest.approx(record(full)["theta"], abs=1e-9)
    assert "screen" in record(red)


def test_malformed_file_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"format": "shield-v1", "Q": [[1.0]\n')
    code, out, err = run(["solve", bad], capsys)
    assert code == 1 and out == "" and "error" in err


def test_infeasible_exits_two(tmp_path, capsys):
    from shield.problem import RegularizedProgram
    pr = RegularizedProgram.build([[1.0]], [0.0], A_s=[[1.0], [-1.0]], b_s=[-1.0, -1.0])
    path = tmp_path / "infeasible.json"
    dump(pr, path)
    code, out, _ = run(["solve", path], capsys)
    assert code == 2 and record(out)["status"] == "infeasible"


def test_shield_d1_oracle_and_all_active(files, tmp_path, capsys):
    # a memorized model returns the D1 labels mu = 0, g = 1 for its one feature
    oracle = train([TrainingSample([0.0], [0], [1])] * 10, epochs=500, step_size=0.1, zeta=0.5)
    oracle_path = tmp_path / "oracle.txt"
    save_model(oracle, oracle_path)
    feat = tmp_path / "z.json"
    feat.write_text("[0.0]")
    code, out, _ = run(["shield", files["d1"], "--model", oracle_path, "--features", feat], capsys)
    rec = record(out)
    assert code == 0 and rec["screen"]["K"] == [0] and rec["fallback"] is False
    assert rec["theta"] == pytest.approx([2.0], abs=1e-9)
    assert set(rec["timings"]) >= {"Avg. Classifier Query Time", "Avg. Dual Approx. Time",
                                   "Avg. Total Computation Time"}

    active_path = tmp_path / "active.txt"
    save_model(all_active(0, 1, 1), active_path)
    code, out, _ = run(["shield", files["d1"], "--model", active_path], capsys)
    rec = record(out)
    assert code == 0 and rec["screen"]["K"] == [] and rec["theta"] == pytest.approx([2.0], abs=1e-9)


def test_shield_large_epsilon_disables_certificates(files, capsys, caplog):
    code, out, _ = run(["shield", files["d2"], "--epsilon", "10"], capsys)
    rec = record(out)
    assert code == 0 and rec["certificates_disabled"] is True
    assert rec["screen"]["K"] == [] and rec["screen"]["I"] == []
    assert "exceeds critical" in caplog.text


def test_shield_model_size_mismatch(files, tmp_path, capsys):
    path = tmp_path / "m.txt"
    save_model(all_active(0, 3, 1), path)
    code, _, err = run(["shield", files["d1"], "--model", path], capsys)
    assert code == 1 and "do not match" in err


def test_simulate_no_agents(capsys):
    code, out, _ = run(["simulate", "--agents", "0", "--steps", "5", "--summary", "/dev/null"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 10 and {r["policy"] for r in rows} == {"full", "reduced"}


def test_simulate_summary_feasible(tmp_path, capsys):
    summary = tmp_path / "summary.jsonl"
    code, _, _ = run(["simulate", "--agents", "0", "--steps", "5", "--format", "json-lines",
                      "--out", tmp_path / "steps.jsonl", "--summary", summary], capsys)
    rows = [json.loads(ln) for ln in summary.read_text().splitlines()]
    assert code == 0 and len(rows) == 2
    for row in rows:
        assert row["feasible"] == 100.0 and row["collision"] == 0.0


def test_simulate_no_timings_byte_identical(tmp_path, capsys):
    outs = []
    for k in range(2):
        path = tmp_path / f"run{k}.csv"
        run(["simulate", "--seed", "3", "--steps", "4", "--horizon", "6", "--no-timings",
             "--out", path, "--summary", tmp_path / f"sum{k}.csv"], capsys)
        outs.append((path.read_bytes(), (tmp_path / f"sum{k}.csv").read_bytes()))
    assert outs[0] == outs[1]


def test_sweep_keep_rate_grows_as_epsilon_shrinks(capsys):
    code, out, _ = run(["sweep", "--epsilons", "0.1,0.001", "--scenarios", "2", "--steps", "3",
                        "--horizon", "6", "--format", "json-lines"], capsys)
    rows = [json.loads(ln) for ln in out.splitlines()]
    assert code == 0 and set(rows[0]) == set(mpc.SWEEP_COLUMNS)
    by_eps = {r["epsilon"]: r for r in rows}
    key = "Constraint Keep (%)"
    assert by_eps[0.001][key] >= by_eps[0.1][key]


def test_config_file_supplies_defaults(tmp_path, capsys):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"steps": 2, "agents": 0, "no_timings": True}))
    code, out, _ = run(["simulate", "--config", conf, "--summary", "/dev/null"], capsys)
    assert code == 0 and len(list(csv.DictReader(io.StringIO(out)))) == 4


def test_collect_train_shield_round_trip(tmp_path, capsys):
    data, model = tmp_path / "data.jsonl", tmp_path / "model.txt"
    code, out, _ = run(["collect", "--scenarios", "4", "--steps", "50", "--horizon", "6",
                        "--out", data], capsys)
    assert code == 0 and record(out)["samples"] == 200
    code, out, _ = run(["train", "--data", data, "--out", model, "--zeta", "0.5",
                        "--epochs", "100"], capsys)
    report = record(out)["report"]
    assert code == 0 and report["eval"]["n"] == 30
    assert 0.0 <= report["eval"]["recall"] <= 1.0

    # one step program of the same family, with its feature vector
    params = mpc.MPCParams(N=6)
    sc = mpc.generate_scenario(99, N=6)
    world = mpc.AgentWorld(sc, mpc.LinearSystem().dt)
    state = mpc.scenario_state(world, np.array(sc.ego), params)
    program = mpc.build_step_program(mpc.LinearSystem(), state, mpc.PolicyLayout(3, 2, 6), params)
    dump(program, tmp_path / "step.json")
    (tmp_path / "z.json").write_text(json.dumps(state.features().tolist()))
    code, out, _ = run(["shield", tmp_path / "step.json", "--model", model,
                        "--features", tmp_path / "z.json"], capsys)
    rec = record(out)
    assert code == 0 and rec["status"] == "optimal"
    assert program.max_violation(np.array(rec["theta"]), tighten=False) <= 1e-8
