import json
import math

import numpy as np
import pytest

import lobmm


def test_version():
    assert lobmm.__version__ == "0.1.0"


def test_market_size_pmf_sums_to_one():
    pmf = lobmm.market_size_pmf(0.35, 25, 0.91, [0.02, 0.035, 0.01, 0.015, 0.01])
    assert len(pmf) == 25
    assert math.isclose(sum(pmf), 1.0, abs_tol=1e-9)
    assert all(p >= 0 for p in pmf)


def test_value_iterate_matches_hand_solution():
    # State 0: stop for 1 or move to state 1 for free; state 1: stop for 3.
    values, policy, residual = lobmm.value_iterate(
        [[(0.0, [(1, 1.0)])], []], [[1.0], [3.0]], 1e-12
    )
    assert values == pytest.approx([3.0, 3.0])
    assert residual <= 1e-12
    assert len(policy) == 2


def test_synthetic_model_round_trip(tmp_path):
    model = lobmm.synthetic_model(8)
    assert model["queue_cap"] == 8
    path = tmp_path / "model.v1.json"
    lobmm.save_model(path, model)
    once = lobmm.load_model(path)
    assert once["queue_cap"] == 8
    # Laws are renormalised on load, so the text is stable after one pass.
    lobmm.save_model(path, once)
    assert lobmm.load_model(path) == once


def test_simulate_is_deterministic(tmp_path):
    model = lobmm.synthetic_model(8)
    a = lobmm.simulate(model, "II", 600.0, seed=4, events_out=tmp_path / "a.csv")
    b = lobmm.simulate(model, "II", 600.0, seed=4, events_out=tmp_path / "b.csv")
    assert a == b
    assert a["samples"] > 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert lobmm.file_hash(tmp_path / "a.csv") == lobmm.file_hash(tmp_path / "b.csv")


def test_calibrate_from_simulated_day(tmp_path):
    model = lobmm.synthetic_model(8)
    lobmm.simulate(model, "0", 3600.0, seed=1, events_out=tmp_path / "day.csv")
    fitted = lobmm.calibrate([tmp_path / "day.csv"], qmax=8)
    assert fitted["queue_cap"] == 8


def test_solve_pair_model0_positive():
    out = lobmm.solve_pair(lobmm.synthetic_model(6), "0", tol=1e-9)
    values = out["values"]
    assert isinstance(values, np.ndarray)
    assert values.shape == (6, 6)
    assert np.all(values > 0)
    assert out["residual"] <= 1e-9


def test_monte_carlo_naive_shape():
    stats = lobmm.monte_carlo_naive(lobmm.synthetic_model(8), "II", runs=4, horizon=120.0, seed=2)
    assert stats["runs"] == 4
    assert math.isfinite(stats["pnl_mean_ticks_lots"])
    assert stats["turnover_mean_contracts"] >= 0


def test_cli_exit_codes(tmp_path):
    assert lobmm.cli(["--help"]) == 0
    assert lobmm.cli([]) == 1
    assert lobmm.cli(["solve", "--model", str(tmp_path / "missing.json"), "--variant", "II",
                      "--problem", "pair", "--out", str(tmp_path / "v.bin")]) == 2


def test_cli_writes_manifest(tmp_path):
    out = tmp_path / "events.csv"
    code = lobmm.cli(["simulate", "--model", "builtin:synthetic", "--variant", "0", "--horizon", "60",
                      "--qmax", "8", "--out", str(tmp_path / "stats.json"), "--events-out", str(out)])
    assert code == 0
    manifests = list(tmp_path.glob("*.manifest.json"))
    assert len(manifests) == 1
    assert json.loads(manifests[0].read_text())["schema"] == "manifest.v1"
    assert lobmm.verify_manifest(manifests[0]) == []
