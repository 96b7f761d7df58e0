import json
import math

import numpy as np
import pytest

from chainsim import cli
from chainsim.spin_dynamics import ChainSpec, encode_packet


def run(*argv):
    return cli.main([str(a) for a in argv])


def data_lines(path):
    return [ln for ln in open(path).read().splitlines() if not ln.startswith("#")]


def test_propagate_columns_normalised(tmp_path):
    out = tmp_path / "snap.csv"
    assert run("propagate", "--n", 501, "--j", 0.70710678, "--delta", 0, "--dist", "normal",
               "--dt", 25, "--steps", 8, "--out", out) == 0
    meta, header, data = cli.read_csv(out)
    assert header[0] == "site" and len(header) == 9
    assert data.shape == (501, 9)
    assert np.allclose(data[:, 1:].sum(axis=0), 1.0, atol=1e-9)
    assert meta["config"]["n"] == 501


def test_propagate_zero_time_is_initial_packet(tmp_path):
    out = tmp_path / "p0.csv"
    assert run("propagate", "--n", 60, "--alice", 12, "--bob", 12, "--delta", 0.2,
               "--steps", 1, "--dt", 0, "--out", out) == 0
    _, _, data = cli.read_csv(out)
    want = encode_packet(ChainSpec(60, 0.70710678, 12, 12)).probabilities
    assert np.allclose(data[:, 1], want, atol=1e-14)


def test_propagate_disorder_reduces_bob_mass(tmp_path):
    def capture(delta, seed):
        out = tmp_path / f"c{delta}_{seed}.json"
        assert run("propagate", "--n", 501, "--delta", delta, "--dist", "normal",
                   "--dt", 325, "--steps", 2, "--seed", seed, "--format", "json",
                   "--out", out) == 0
        doc = json.load(open(out))
        (name,) = [k for k in doc["bob_capture"] if k.endswith("t=325.0")]
        return doc["bob_capture"][name]

    clean = capture(0.0, 0)
    noisy = np.array([capture(0.3, s) for s in range(50)])
    se = noisy.std(ddof=1) / math.sqrt(noisy.size)
    assert noisy.mean() < clean - 2 * se


def test_propagate_json_and_stdout(capsys):
    assert run("propagate", "--n", 30, "--alice", 6, "--bob", 6, "--delta", 0,
               "--steps", 2, "--format", "json", "--out", "-") == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["config"]["command"] == "propagate"
    assert len(doc["columns"]) == 2


def test_propagate_rejects_bad_ranges(tmp_path):
    assert run("propagate", "--delta", -0.1, "--out", tmp_path / "x.csv") == 2
    assert run("propagate", "--n", 10, "--alice", 6, "--bob", 6, "--out", tmp_path / "x.csv") == 2
    assert not (tmp_path / "x.csv").exists()


def test_missing_out_exits_2():
    with pytest.raises(SystemExit) as exc:
        run("surface", "--trials", 2)
    assert exc.value.code == 2


def test_synthetic_surface_fit_round_trip(tmp_path):
    surf, fit = tmp_path / "s.csv", tmp_path / "f.json"
    assert run("surface", "--synthetic", 2.56, 0.029, "--times", "1:20:1",
               "--deltas", "0.02:0.2:0.02", "--out", surf) == 0
    assert run("fit", "--surface", surf, "--format", "json", "--out", fit) == 0
    doc = json.load(open(fit))
    assert doc["alpha"] == pytest.approx(2.56, abs=1e-6)
    assert doc["beta"] == pytest.approx(0.029, abs=1e-6)
    assert doc["reference_alpha"] == 2.56 and doc["reference_beta"] == 0.029
    rows = np.array(doc["overlay"]["rows"])
    assert rows.shape == (200, 4)
    assert np.allclose(rows[:, 2], rows[:, 3], atol=1e-9)


@pytest.mark.slow
def test_default_surface_fit_quality(tmp_path):
    surf, fit = tmp_path / "s.csv", tmp_path / "f.json"
    assert run("surface", "--out", surf) == 0
    _, header, data = cli.read_csv(surf)
    assert header == ["t", "delta", "mean_gamma", "stderr", "trials"]
    assert data.shape == (120, 5)
    assert run("fit", "--surface", surf, "--format", "json", "--out", fit) == 0
    doc = json.load(open(fit))
    assert doc["r_squared"] >= 0.9
    lo, hi = doc["alpha_ci95"]
    assert lo < doc["alpha"] < hi


def test_surface_both_modes_write_two_files(tmp_path):
    out = tmp_path / "s.csv"
    assert run("surface", "--n", 80, "--alice", 10, "--bob", 10, "--times", "5,10",
               "--deltas", "0.1,0.2", "--trials", 3, "--mode", "both", "--out", out) == 0
    raw = tmp_path / "s_raw.csv"
    assert raw.exists()
    assert cli.read_csv(out)[0]["surface"]["mode"] == "relative"
    assert cli.read_csv(raw)[0]["surface"]["mode"] == "raw"


def test_fit_unreadable_surface(tmp_path):
    assert run("fit", "--surface", tmp_path / "nope.csv", "--out", tmp_path / "f.json") == 2


def qec_rows(tmp_path, grid, k_max):
    out = tmp_path / "q.csv"
    assert run("qec", "--p-grid", grid, "--k-max", k_max, "--out", out) == 0
    _, header, data = cli.read_csv(out)
    assert header == ["p", "k", "p_enumeration", "p_polynomial", "bound"]
    return data


def test_qec_examples(tmp_path):
    data = qec_rows(tmp_path, f"0,0.1,{2 / 15!r}", 2)
    by = {(round(r[0], 6), int(r[1])): r for r in data}
    row = by[(0.1, 1)]
    assert row[2] == pytest.approx(0.063235, abs=5e-7)
    assert row[3] == pytest.approx(0.063235, abs=5e-7)
    assert row[4] == pytest.approx(0.075, abs=1e-15)
    assert np.all(by[(0.0, 1)][2:] == 0) and np.all(by[(0.0, 2)][2:] == 0)
    row = by[(round(2 / 15, 6), 1)]
    assert row[2] == pytest.approx(0.10601086, abs=1e-8)
    assert row[4] == pytest.approx(2 / 15, abs=1e-12)


def test_qec_default_grid_columns_agree(tmp_path):
    data = qec_rows(tmp_path, "0:1:0.01", 3)
    assert data.shape == (303, 5)
    assert np.max(np.abs(data[:, 2] - data[:, 3])) <= 1e-12


def test_qec_rejects_out_of_range(tmp_path):
    assert run("qec", "--p-grid", "0.5,1.5", "--out", tmp_path / "q.csv") == 2


def test_plan_fixed_worked_point(tmp_path):
    out = tmp_path / "plan.json"
    assert run("plan", "--p", 0.1, "--m", 100, "--epsilon", 0.1, "--out", out) == 0
    doc = json.load(open(out))
    assert doc["level_k"] == 6 and doc["depth_n"] == 15625
    assert doc["p_total_bound"] == pytest.approx(1.35e-7, rel=0.01)
    for key in ("delta", "epsilon", "fit_alpha", "fit_beta", "seed"):
        assert key in doc["metadata"]


def test_plan_infeasible_exits_3(tmp_path, capsys):
    assert run("plan", "--p", 0.2, "--m", 10, "--out", tmp_path / "p.json") == 3
    assert "threshold" in capsys.readouterr().err


def test_plan_from_fit_and_endtoend(tmp_path):
    fit = tmp_path / "fit.json"
    json.dump({"alpha": 0.11, "beta": 0.15, "r_squared": 0.97, "distribution": "uniform",
               "mode": "relative"}, open(fit, "w"))
    plan = tmp_path / "plan.json"
    assert run("plan", "--delta", 0.1, "--distance", 400, "--epsilon", 0.3,
               "--fit", fit, "--out", plan) == 0
    doc = json.load(open(plan))
    assert doc["p_total_bound"] < 0.3
    assert doc["metadata"]["fit_alpha"] == 0.11
    rep = tmp_path / "rep.json"
    assert run("endtoend", "--plan", plan, "--source", "empirical", "--fit", fit,
               "--delta", 0.1, "--trials", 500, "--format", "json", "--out", rep) == 0
    report = json.load(open(rep))
    assert report["p_hat"] <= report["p_total_bound"] + 3 * max(report["stderr"], 1e-3)


def test_plan_requires_mode(tmp_path):
    assert run("plan", "--out", tmp_path / "p.json") == 2


def test_endtoend_zero_noise(tmp_path):
    out = tmp_path / "e.json"
    assert run("endtoend", "--p", 0, "--k", 1, "--m", 4, "--trials", 1000,
               "--format", "json", "--out", out) == 0
    doc = json.load(open(out))
    assert doc["p_hat"] == 0 and doc["p_total_bound"] == 0


def test_endtoend_one_level(tmp_path):
    out = tmp_path / "e.json"
    assert run("endtoend", "--p", 0.1, "--k", 1, "--m", 1, "--trials", 100000,
               "--seed", 11, "--format", "json", "--out", out) == 0
    doc = json.load(open(out))
    assert abs(doc["p_hat"] - 0.063235) < 3 * doc["stderr"]
    assert doc["p_hat"] < doc["p_total_bound"] == pytest.approx(0.075)
    assert doc["p_exact"] == pytest.approx(0.063235, abs=5e-7)
    lo, hi = doc["ci95"]
    assert lo <= doc["p_hat"] <= hi


def test_endtoend_needs_complete_spec(tmp_path):
    assert run("endtoend", "--p", 0.1, "--out", tmp_path / "e.csv") == 2


@pytest.mark.parametrize("argv", [
    ["qec", "--p-grid", "0:0.2:0.05", "--k-max", 2],
    ["surface", "--n", 60, "--alice", 8, "--bob", 8, "--times", "4,8", "--deltas", "0.1,0.3",
     "--trials", 4, "--seed", 5],
    ["endtoend", "--p", 0.1, "--k", 1, "--m", 3, "--trials", 3000, "--seed", 2],
    ["propagate", "--n", 40, "--alice", 8, "--bob", 8, "--delta", 0, 0.2, "--steps", 3],
])
def test_replay_is_byte_identical(tmp_path, argv):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(*argv, "--out", first) == 0
    assert run("replay", first, "--out", second) == 0
    assert data_lines(first) == data_lines(second)
    assert open(first).read() == open(second).read()


def test_replay_json(tmp_path):
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    assert run("qec", "--p-grid", "0.05,0.1", "--format", "json", "--out", first) == 0
    assert run("replay", first, "--out", second) == 0
    assert json.load(open(first)) == json.load(open(second))


def test_threads_do_not_change_results(tmp_path, monkeypatch):
    argv = ["surface", "--n", 60, "--alice", 8, "--bob", 8, "--times", "4,8,12",
            "--deltas", "0.1,0.3", "--trials", 6]
    assert run(*argv, "--threads", 1, "--out", tmp_path / "one.csv") == 0
    monkeypatch.setenv("CHAINSIM_THREADS", "3")
    assert run(*argv, "--out", tmp_path / "env.csv") == 0
    assert data_lines(tmp_path / "one.csv") == data_lines(tmp_path / "env.csv")


def test_csv_metadata_header(tmp_path):
    out = tmp_path / "q.csv"
    run("qec", "--p-grid", "0.1", "--k-max", 1, "--seed", 7, "--out", out)
    lines = open(out).read().splitlines()
    assert lines[0].startswith("# chainsim ")
    assert lines[1].startswith("# config: ")
    assert json.loads(lines[1][len("# config: "):])["seed"] == 7


def test_parse_grid():
    assert cli.parse_grid("0:1:0.25") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert cli.parse_grid("0.1,0.2") == [0.1, 0.2]
    assert len(cli.parse_grid("0:1:0.01")) == 101
