import json
import math

import numpy as np
import pytest

from cachecast.errors import StageError
from cachecast.experiment import (ExperimentConfig, format_table1, hitrates_csv, run_experiment,
                                  table1_csv, write_report)
from cachecast.models import TABLE1_ORDER, ArchSpec, Kind
from cachecast.trace import SynthConfig
from cachecast.trainer import TrainConfig

TINY_SYNTH = SynthConfig(num_blocks=12, num_events=3000, num_windows=40, period_windows=8,
                         phase_blocks=4, seed=3)


def tiny(kinds=TABLE1_ORDER, seeds=(0, 1), **kw):
    return ExperimentConfig(synth=TINY_SYNTH, num_windows=40,
                            archs=tuple(ArchSpec.default(k, hidden_size=4) for k in kinds),
                            train=TrainConfig(epochs=3, batch_size=4), seeds=seeds,
                            capacities=(3,), **kw)


@pytest.fixture(scope="module")
def report():
    return run_experiment(tiny())


def test_heuristic_only_config_trains_nothing():
    r = run_experiment(tiny(kinds=(Kind.LRU, Kind.LFU)))
    assert all(run.curve is None for run in r.runs)
    assert set(r.aggregates) == {Kind.LRU, Kind.LFU}


def test_repeated_seed_gives_identical_rows():
    r = run_experiment(tiny(kinds=(Kind.GRU,), seeds=(5, 5)))
    a, b = r.runs
    assert a.metrics == b.metrics and a.curve == b.curve


def test_aggregates_are_exact_means(report):
    for kind, agg in report.aggregates.items():
        mse = [r.metrics.mse for r in report.runs_for(kind)]
        assert abs(agg.mse_mean - float(np.mean(mse))) <= 1e-12
        assert abs(agg.mse_std - float(np.std(mse))) <= 1e-12


def test_every_row_satisfies_metric_identity(report):
    assert all(r.metrics.mae <= math.sqrt(r.metrics.mse) + 1e-15 for r in report.runs)


def test_report_csvs_and_provenance(tmp_path, report):
    out = write_report(report, tmp_path)
    rows = (out / "table1.csv").read_text().splitlines()
    assert rows[0] == "model,seed,mse,mae"
    assert [r.split(",")[0] for r in rows[1:13:2]] == ["LRU", "LFU", "RNN", "GRU-RNN", "LSTM", "CNN-LSTM"]
    assert len(rows) == 1 + 6 * 2 + 6 * 2
    assert (out / "hitrates.csv").read_text().startswith("model,seed,capacity,")
    assert (out / "losscurve_cnn-lstm_0.csv").exists()
    assert not (out / "losscurve_lru_0.csv").exists()
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["config_sha256"] == tiny().digest() and prov["artifact_version"]


def test_rerun_is_byte_identical(report):
    again = run_experiment(tiny())
    assert table1_csv(again) == table1_csv(report)
    assert hitrates_csv(again) == hitrates_csv(report)


def test_format_table1_rounding_and_order():
    values = {"CNN-LSTM": (0.244, 0.127), "LRU": (0.951, 0.5)}
    csv_text = format_table1(values, "csv")
    assert "CNN-LSTM,0.244,0.127" in csv_text.splitlines()
    assert csv_text.splitlines()[1].startswith("LRU,")
    text = format_table1(values, "text")
    assert text.split() == ["Model", "MSE", "MAE", "LRU", "0.951", "0.500", "CNN-LSTM", "0.244", "0.127"]
    assert len(format_table1({"LSTM": (0.1, 0.2)}).splitlines()) == 2


def test_missing_trace_is_labelled_with_stage(tmp_path):
    cfg = ExperimentConfig(synth=None, trace_path=str(tmp_path / "nope.csv"))
    with pytest.raises(StageError) as exc:
        run_experiment(cfg)
    assert exc.value.stage == "ingest"


def test_config_invariants():
    with pytest.raises(ValueError):
        tiny(seeds=())
    with pytest.raises(ValueError):
        ExperimentConfig(capacities=(0,))
    with pytest.raises(ValueError):
        ExperimentConfig(synth=None)
