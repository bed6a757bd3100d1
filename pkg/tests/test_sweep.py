import json
import os
from dataclasses import replace
from types import SimpleNamespace

import pytest

from promptfusion import sweep as SW
from promptfusion import trainer as TR
from promptfusion.data import DatasetSpec
from promptfusion.errors import ConfigError, DivergenceError, UsageError

# smallest run that still exercises every phase
EXP = TR.ExperimentConfig(
    data=DatasetSpec(seed=3, shots=2, eval_per_class=4),
    train=TR.TrainConfig(epochs_stage1_lang=1, epochs_stage1_vis=1,
                         epochs_stage2=1, batch_size=8),
    warm=TR.WarmConfig(steps=20, learning_rate=0.5, batch_size=8),
)


def test_mean_std_oracle():
    m, s = SW.mean_std([2, 4, 4, 4, 5, 5, 7, 9])
    assert m == 5.0
    assert s == 2.0  # population, not sample
    m1, s1 = SW.mean_std([3.5])
    assert (m1, s1) == (3.5, 0.0)
    with pytest.raises(UsageError):
        SW.mean_std([])


def test_aggregate_rows_hand_oracle():
    rows = [{"value": 2, "base": 80.0, "novel": 40.0, "harmonic": 53.0},
            {"value": 4, "base": 90.0, "novel": 60.0, "harmonic": 72.0}]
    agg = SW.aggregate_rows(rows)
    assert agg["base_mean"] == 85.0
    assert agg["novel_mean"] == 50.0
    assert agg["harmonic_mean"] == 62.5
    assert agg["harmonic_std"] == 9.5


def test_apply_prompt_length_requires_int():
    for bad in (2.0, "4", True):
        with pytest.raises(UsageError):
            SW._apply(EXP, "prompt_length", bad)
    assert SW._apply(EXP, "prompt_length", 4).train.prompt_length == 4


def test_apply_each_axis_touches_one_field():
    assert SW._apply(EXP, "sigma", 0.2).adapter.sigma == 0.2
    assert SW._apply(EXP, "lambda_d", 1.5).train.lambda_d == 1.5
    assert SW._apply(EXP, "lambda_g", 0.0).train.lambda_g == 0.0
    off = SW._apply(EXP, "adaptation_on_off", "off")
    assert off.train.epochs_stage2 == 0
    assert SW._apply(EXP, "adaptation_on_off", "on") == EXP
    with pytest.raises(UsageError):
        SW._apply(EXP, "adaptation_on_off", "maybe")
    with pytest.raises(UsageError):
        SW._apply(EXP, "granularity", 3)


def test_sweep_rejects_bad_requests(tmp_path):
    with pytest.raises(UsageError):
        SW.sweep(EXP, "granularity", [1, 2])
    with pytest.raises(UsageError):
        SW.sweep(EXP, "lambda_d", [0.5])  # one value is not a sweep
    with pytest.raises(UsageError):
        SW.sweep(EXP, "adaptation_on_off", ["on", "on"])


def test_invalid_value_fails_before_any_run(tmp_path):
    out = tmp_path / "s"
    with pytest.raises(ConfigError):
        SW.sweep(EXP, "prompt_length", [2, 0], out_dir=str(out))
    assert not out.exists()  # validated up front, nothing ran


def _stub_report(h):
    return SimpleNamespace(report=SimpleNamespace(
        base_accuracy=80.0, novel_accuracy=40.0, harmonic=h))


def test_failures_are_recorded_and_skipped(monkeypatch):
    calls = []

    def fake(exp, out_dir=None, sink=None):
        calls.append(exp.train.lambda_d)
        if exp.train.lambda_d == 1.0:
            raise DivergenceError("loss went non-finite", {"step": 3})
        return _stub_report(50.0 + exp.train.lambda_d)

    monkeypatch.setattr(TR, "run_pipeline", fake)
    res = SW.sweep(EXP, "lambda_d", [0.0, 1.0, 2.0])
    assert calls == [0.0, 1.0, 2.0]  # kept going past the failure
    assert [r["value"] for r in res.rows] == [0.0, 2.0]
    assert res.failures == [{"value": 1.0, "type": "DivergenceError",
                             "error": "loss went non-finite"}]
    assert res.aggregate["harmonic_mean"] == 51.0


def test_unexpected_errors_propagate(monkeypatch):
    def fake(exp, out_dir=None, sink=None):
        raise ValueError("a bug, not a training outcome")

    monkeypatch.setattr(TR, "run_pipeline", fake)
    with pytest.raises(ValueError):
        SW.sweep(EXP, "lambda_d", [0.0, 1.0])


def test_emit_sweep_files(monkeypatch, tmp_path):
    monkeypatch.setattr(
        TR, "run_pipeline",
        lambda exp, out_dir=None, sink=None: _stub_report(60.0))
    res = SW.sweep(EXP, "sigma", [0.05, 0.1], out_dir=str(tmp_path))
    doc = json.loads((tmp_path / "sweep.json").read_text())
    assert doc == res.to_json_dict()
    assert doc["axis"] == "sigma"
    assert doc["base_fingerprint"] == TR.config_fingerprint(EXP)

    lines = (tmp_path / "tables.csv").read_text().splitlines()
    assert lines[0] == "sigma,base,novel,harmonic"
    assert lines[1] == "0.05,80.00,40.00,60.00"
    assert lines[3] == "mean,80.00,40.00,60.00"
    assert lines[4] == "std,,,0.00"

    plot = (tmp_path / "plotdata.csv").read_text().splitlines()
    assert plot == ["x,harmonic", "0.05,60", "0.1,60"]


def test_adaptation_default_values(monkeypatch):
    seen = []

    def fake(exp, out_dir=None, sink=None):
        seen.append(exp.train.epochs_stage2)
        return _stub_report(55.0)

    monkeypatch.setattr(TR, "run_pipeline", fake)
    res = SW.sweep(EXP, "adaptation_on_off")
    assert res.values == ["on", "off"]
    assert seen == [EXP.train.epochs_stage2, 0]


def test_real_sweep_end_to_end(tmp_path):
    res = SW.sweep(EXP, "lambda_d", [0.0, 1.0], out_dir=str(tmp_path))
    assert res.failures == []
    assert len(res.rows) == 2
    for row in res.rows:
        assert 0.0 <= row["novel"] <= 100.0
        assert 0.0 <= row["base"] <= 100.0
    assert set(res.aggregate) == {"base_mean", "base_std", "novel_mean",
                                  "novel_std", "harmonic_mean",
                                  "harmonic_std"}
    # each value got its own full run directory
    for i, v in enumerate(res.values):
        run = tmp_path / f"run_{i:02d}_{v}"
        assert (run / "report.json").is_file()
        assert (run / "state.json").is_file()
