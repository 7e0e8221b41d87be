import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shuffling_sgd import build_interpolating_generator, random_reshuffle, run
from shuffling_sgd.cli import main
from shuffling_sgd.harness import (
    DEFAULT_GRID,
    ConfigError,
    ExperimentConfig,
    cmd_grid_search,
    cmd_run,
    cmd_scaling,
    fit_scaling,
    read_summary,
    resolve,
    summary_from_files,
)
from shuffling_sgd.schedule import ConstantSchedule
from shuffling_sgd.traces import TraceFormatError, read_trace, read_trace_csv, write_trace

PROBLEM = {"kind": "interpolating", "n": 10, "d": 25, "seed": 2, "radius": 2.0}


def config(tmp_path, **kw):
    base = dict(problem=PROBLEM, scheme="rr", seed=1, schedule={"kind": "constant", "eta": 0.4}, T=40,
                out=str(tmp_path / "out"))
    base.update(kw)
    return ExperimentConfig(**base)


def write_config(tmp_path, **kw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(config(tmp_path, **kw).to_dict()))
    return path


def test_trace_round_trip(tmp_path):
    p = build_interpolating_generator(6, 9, 1)
    trace = run(p, np.zeros(9), ConstantSchedule(0.3), random_reshuffle(2), 15, full_trace=True)
    csv_path = write_trace(trace, tmp_path / "t")
    back = read_trace(csv_path)
    np.testing.assert_array_equal(back.data, trace.data)
    np.testing.assert_array_equal(back.final_point, trace.final_point)
    np.testing.assert_array_equal(back.iterates, trace.iterates)
    np.testing.assert_array_equal(back.permutations, trace.permutations)
    assert back.problem == trace.problem and back.scheme == "rr" and back.seed == 2
    assert csv_path.read_text().splitlines()[0] == "# trace-format: 1"


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(allow_nan=True, allow_infinity=True, width=64), min_size=11, max_size=11))
def test_csv_round_trip_any_floats(tmp_path_factory, values):
    from shuffling_sgd.optimizer import RunTrace

    row = np.array([1.0] + values + [0.0])
    trace = RunTrace(row[None, :], {}, "ig", 0, {}, np.zeros(1), np.zeros(1), 0.0)
    path = write_trace(trace, tmp_path_factory.mktemp("csv") / "t")
    back = read_trace_csv(path)
    np.testing.assert_array_equal(back, row[None, :])


def test_bad_trace_header(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,eta\n1,2\n")
    with pytest.raises(TraceFormatError):
        read_trace_csv(bad)


def test_resolve_rejects_zero_epochs(tmp_path):
    with pytest.raises(ConfigError):
        resolve(config(tmp_path, T=0))
    with pytest.raises(ConfigError):
        resolve(config(tmp_path, T=None))
    with pytest.raises(ConfigError):
        resolve(config(tmp_path, schedule={"kind": "exotic"}))


def test_unknown_config_keys():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"problem": PROBLEM, "colour": "red"})


def test_problem_file_reference(tmp_path):
    (tmp_path / "prob.json").write_text(json.dumps(PROBLEM))
    (tmp_path / "cfg.json").write_text(json.dumps({"problem": "prob.json", "schedule": {"kind": "constant", "eta": 0.1}}))
    from shuffling_sgd.harness import load_config

    assert load_config(tmp_path / "cfg.json").problem == PROBLEM


def test_run_summary_matches_raw_files(tmp_path):
    res = cmd_run(config(tmp_path, repeat=4))
    assert len(res.files) == 4
    header, rows = read_summary(res.summary)
    h2, recomputed = summary_from_files(res.files)
    assert header == h2
    np.testing.assert_allclose(rows, recomputed, rtol=1e-12, atol=0)
    gaps = np.stack([read_trace_csv(f)[:, 3] for f in res.files])
    np.testing.assert_allclose(rows[:, header.index("mean_gap")], gaps.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(rows[:, header.index("std_gap")], gaps.std(axis=0, ddof=1), rtol=1e-10)
    manifest = (tmp_path / "out" / "manifest.jsonl").read_text().splitlines()
    assert len(manifest) == 5


def test_theorem_run_mean_gap_nonincreasing(tmp_path):
    cfg = config(tmp_path, schedule={"kind": "theorem", "eps_hat": 0.05, "D": 1.0}, T=400, repeat=5)
    res = cmd_run(cfg)
    header, rows = read_summary(res.summary)
    mean_gap = rows[:, header.index("mean_gap")]
    assert np.all(np.diff(mean_gap[10:]) <= 0)


def test_run_is_byte_identical(tmp_path):
    a = cmd_run(config(tmp_path, out=str(tmp_path / "a")))
    b = cmd_run(config(tmp_path, out=str(tmp_path / "b")))
    assert a.files[0].read_bytes() == b.files[0].read_bytes()


def test_grid_default_and_single(tmp_path):
    assert DEFAULT_GRID == (0.0001, 0.001, 0.01, 0.1, 1.0)
    res = cmd_grid_search(config(tmp_path), [0.3])
    assert res.best_eta == 0.3
    res = cmd_grid_search(config(tmp_path))
    assert [r["eta"] for r in res.table] == list(DEFAULT_GRID)
    assert res.best_eta == 1.0  # L = 1, so steps up to n/(2M) = 5 stay stable here


def test_grid_all_diverged(tmp_path):
    cfg = config(tmp_path, problem={"kind": "least_squares", "rows": [[3.0], [3.0]], "targets": [1.0, 1.0]})
    res = cmd_grid_search(cfg, [100.0, 1000.0], epochs=20)
    assert res.best_eta is None
    assert all(r["status"].startswith("diverged") for r in res.table)


def test_fit_scaling_recovers_power_law():
    eps = np.array([1e-1, 3e-2, 1e-2, 3e-3, 1e-3])
    slope, intercept, resid = fit_scaling(eps, 3.0 * eps**-1.5)
    assert slope == pytest.approx(1.5, abs=1e-9)
    assert intercept == pytest.approx(math.log(3.0), abs=1e-9)
    assert max(abs(r) for r in resid) < 1e-9
    with pytest.raises(ConfigError):
        fit_scaling([0.1, 0.01], [10, 100])


def test_scaling_rejects_two_points(tmp_path):
    with pytest.raises(ConfigError):
        cmd_scaling(config(tmp_path), [0.1, 0.01])


def test_scaling_censoring(tmp_path):
    cfg = config(tmp_path, schedule={"kind": "constant", "eta": 0.4})
    res = cmd_scaling(cfg, [1e-1, 1e-2, 1e-3, 1e-30], family="constant", max_epochs=300)
    assert res.censored == [False, False, False, True]
    assert res.epochs[-1] is None and math.isfinite(res.slope)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def test_cli_run_and_diagnose(tmp_path, capsys):
    cfg = write_config(tmp_path, schedule={"kind": "theorem", "eps_hat": 0.05, "D": 1.0}, T=60)
    assert main(["run", "--config", str(cfg), "--full-trace", "--seed", "3"]) == 0
    trace = tmp_path / "out" / "run_rr_seed3.csv"
    assert trace.exists() and trace.with_suffix(".npz").exists()
    out = tmp_path / "report.json"
    assert main(["diagnose", "--trace", str(trace), "--out", str(out), "--samples", "100"]) == 0
    report = json.loads(out.read_text())
    assert report["checks"]["eq_lem_convex_02"]["status"] == "pass"
    assert "eq_lem_convex_02" in capsys.readouterr().out


def test_cli_diagnose_without_w_star(tmp_path, capsys):
    mlp = {"kind": "bias_mlp", "architecture": {"input_dim": 2, "hidden": [3], "output_dim": 1},
           "inputs": [[0.1, 0.2], [0.3, -0.1], [1.0, 0.5]], "labels": [0.0, 1.0, 0.5]}
    cfg = write_config(tmp_path, problem=mlp, schedule={"kind": "constant", "eta": 0.1}, T=10)
    assert main(["run", "--config", str(cfg)]) == 0
    code = main(["diagnose", "--trace", str(tmp_path / "out" / "run_rr_seed1.csv"), "--samples", "50"])
    assert code == 0
    text = capsys.readouterr().out
    assert "unavailable" in text and "w* unknown" in text


def test_cli_diagnose_wrong_constants_exit_3(tmp_path):
    cfg = write_config(tmp_path, schedule={"kind": "constant", "eta": 0.45}, T=50)
    assert main(["run", "--config", str(cfg)]) == 0
    trace = str(tmp_path / "out" / "run_rr_seed1.csv")
    assert main(["diagnose", "--trace", trace, "--mu", "100", "--samples", "50"]) == 3


def test_cli_schedule_plan(capsys, tmp_path):
    out = tmp_path / "plan.json"
    assert main(["schedule-plan", "--eps", "0.04", "--D", "1", "--lambda", "1", "--C1", "1", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "1.008" in text and "125" in text
    assert json.loads(out.read_text())["T"] == 125
    assert main(["schedule-plan", "--eps", "0.04", "--D", "1", "--lambda", "1", "--C1", "1", "--cap", "0.01"]) == 1


def test_cli_gradcheck(tmp_path, capsys):
    prob = tmp_path / "p.json"
    prob.write_text(json.dumps({"kind": "least_squares", "rows": [[1.0, 2.0], [3.0, -1.0]], "targets": [1.0, 0.0]}))
    assert main(["gradcheck", "--problem", str(prob), "--tol", "1e-9"]) == 0
    assert "max relative error" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 1
    cfg = write_config(tmp_path, T=0)
    assert main(["run", "--config", str(cfg)]) == 1
    div = write_config(tmp_path, problem={"kind": "least_squares", "rows": [[3.0], [3.0]], "targets": [1.0, 1.0]},
                       schedule={"kind": "constant", "eta": 100.0}, T=50)
    assert main(["run", "--config", str(div)]) == 2
    assert main(["grid", "--config", str(div), "--grid", "100,1000"]) == 2


def test_cli_grid_and_scaling(tmp_path, capsys):
    cfg = write_config(tmp_path, schedule={"kind": "theorem", "D": 1.0})
    assert main(["grid", "--config", str(cfg), "--grid", "0.01,0.1", "--epochs", "20"]) == 0
    assert main(["scaling", "--config", str(cfg), "--eps-hats", "0.1,0.05,0.03"]) == 0
    doc = json.loads((tmp_path / "out" / "scaling.json").read_text())
    assert len(doc["points"]) == 3 and math.isfinite(doc["slope"])
