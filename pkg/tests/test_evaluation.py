import json

import numpy as np
import pytest

from conftest import make_series, series_from_tp
from nowcastbench.evaluation import (
    EvaluationReport,
    ExtremeConfig,
    MetricSet,
    ProtocolGrid,
    aeere,
    eere,
    extreme_mask,
    mae,
    metric_set,
    mse,
    rank_models,
    render_long_csv,
    render_markdown,
    run_protocol,
    validate_grid_fits,
)
from nowcastbench.models import TrainConfig


class TestMseMae:
    def test_identity(self):
        y = np.array([1.0, 2.0, 3.0])
        assert mse(y, y) == 0.0
        assert mae(y, y) == 0.0

    def test_hand_case(self):
        assert mse([1.0, 2.0], [0.0, 2.0]) == 0.5
        assert mae([1.0, 2.0], [0.0, 2.0]) == 0.5

    def test_three_step(self):
        assert mse([0.0, 0.0, 0.0], [3.0, 0.0, 0.0]) == 3.0
        assert mae([0.0, 0.0, 0.0], [3.0, 0.0, 0.0]) == 1.0

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            mse([], [])
        with pytest.raises(ValueError, match="differ"):
            mae([1.0], [1.0, 2.0])

    def test_jensen_bound(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a, b = rng.normal(size=20), rng.normal(size=20)
            assert mse(a, b) >= mae(a, b) ** 2 - 1e-12


class TestExtremeMask:
    def test_threshold(self):
        mask = extreme_mask(np.array([5.0, 3.0, 6.0]))
        np.testing.assert_array_equal(np.flatnonzero(mask), [0, 2])

    def test_boundary_strictly_greater(self):
        assert not extreme_mask(np.array([4.0]))[0]
        assert extreme_mask(np.array([4.0 + 1e-9]))[0]

    def test_all_dry(self):
        ms = metric_set(np.zeros(5), np.zeros(5))
        assert not ms.extreme_defined
        assert ms.eere is None and ms.aeere is None
        assert ms.mse == 0.0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ExtremeConfig(threshold=0.0)


class TestEere:
    def test_hand_case(self):
        y = np.array([5.0, 3.0, 6.0])
        y_hat = np.array([4.0, 3.0, 8.0])
        mask = extreme_mask(y)
        assert eere(y_hat, y, mask) == pytest.approx(2.5)
        assert aeere(y_hat, y, mask) == pytest.approx(1.5)

    def test_identity_on_extremes(self):
        y = np.array([5.0, 3.0, 6.0])
        mask = extreme_mask(y)
        assert eere(y, y, mask) == 0.0

    def test_single_point(self):
        y = np.array([5.0])
        assert eere(np.array([8.0]), y, extreme_mask(y)) == 9.0
        assert aeere(np.array([8.0]), y, extreme_mask(y)) == 3.0

    def test_empty_extreme_set(self):
        with pytest.raises(ValueError, match="empty extreme set"):
            eere(np.zeros(3), np.zeros(3), np.zeros(3, dtype=bool))

    def test_equals_subsequence_mse_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            y = np.where(rng.random(40) < 0.7, 0.0, rng.random(40) * 10)
            y_hat = np.abs(rng.normal(size=40))
            mask = extreme_mask(y)
            if not mask.any():
                continue
            assert eere(y_hat, y, mask) == pytest.approx(mse(y_hat[mask], y[mask]),
                                                         abs=1e-12)
            assert aeere(y_hat, y, mask) == pytest.approx(mae(y_hat[mask], y[mask]),
                                                          abs=1e-12)


class TestProtocolGrid:
    def test_default_cells(self):
        cells = ProtocolGrid().cells()
        assert cells == [(12, 2, 1), (12, 4, 1), (12, 6, 1),
                         (24, 2, 1), (24, 4, 1), (24, 6, 1),
                         (24, 3, 2), (24, 2, 3)]

    def test_resolution_cells_deduplicated(self):
        # the 1 h resolution cell (24, 6, 1) already exists in the scale grid
        cells = ProtocolGrid().cells()
        assert len(cells) == len(set(cells)) == 8

    def test_horizon_divisibility(self):
        with pytest.raises(ValueError, match="divisible"):
            ProtocolGrid(resolutions=(1, 4), horizon_hours=6)

    def test_grid_fit_validation(self):
        short = series_from_tp(np.zeros(25))
        with pytest.raises(ValueError, match="shortest station"):
            validate_grid_fits(ProtocolGrid(), [short])


FAST_MODELS = [{"name": "zero"}, {"name": "persistence"}, {"name": "moving_average"}]
TINY_GRID = ProtocolGrid(input_lengths=(12,), output_lengths=(2,), resolutions=(1, 2),
                         horizon_hours=6, seeds=(0, 1))


def tiny_station(seed=0, n=400):
    rng = np.random.default_rng(seed)
    tp = np.where(rng.random(n) < 0.7, 0.0, rng.random(n) * 8)
    return series_from_tp(tp)


class TestRunProtocol:
    def test_zero_baseline_on_all_dry_station(self):
        series = series_from_tp(np.zeros(300))
        report = run_protocol([series], [{"name": "zero"}], TINY_GRID)
        assert len(report.records) == 3 * 2  # 3 cells x 2 seeds
        for rec in report.records:
            assert rec["metrics"]["mse"] == 0.0
            assert rec["metrics"]["mae"] == 0.0
            assert not rec["metrics"]["extreme_defined"]

    def test_record_count_and_coordinates(self):
        report = run_protocol([tiny_station()], FAST_MODELS, TINY_GRID)
        assert len(report.records) == len(FAST_MODELS) * 3 * 2
        keys = {(r["model"], r["l_in"], r["l_out"], r["resolution"], r["seed"])
                for r in report.records}
        assert len(keys) == len(report.records)

    def test_byte_identical_reports(self):
        a = run_protocol([tiny_station()], FAST_MODELS, TINY_GRID).to_json_bytes()
        b = run_protocol([tiny_station()], FAST_MODELS, TINY_GRID).to_json_bytes()
        assert a == b

    def test_minimal_run_has_exactly_one_record(self):
        grid = ProtocolGrid(input_lengths=(12,), output_lengths=(6,), resolutions=(1,),
                            horizon_hours=6, seeds=(0,))
        report = run_protocol([tiny_station()], [{"name": "zero"}], grid)
        assert len(report.records) == 1
        assert report.records[0]["model"] == "zero"

    def test_trainable_deterministic(self):
        grid = ProtocolGrid(input_lengths=(12,), output_lengths=(2,), resolutions=(1,),
                            horizon_hours=6, seeds=(0,))
        tc = TrainConfig(max_epochs=2, patience=2)
        a = run_protocol([tiny_station()], [{"name": "linear"}], grid, tc).to_json_bytes()
        b = run_protocol([tiny_station()], [{"name": "linear"}], grid, tc).to_json_bytes()
        assert a == b

    def test_failures_recorded_run_continues(self):
        models = FAST_MODELS + [{"name": "boom", "type": "not_a_model"}]
        report = run_protocol([tiny_station()], models, TINY_GRID)
        assert len(report.records) == len(FAST_MODELS) * 3 * 2
        assert len(report.failures) == 3 * 2
        assert all("unknown model type" in f["reason"] for f in report.failures)

    def test_unusable_cell_fails_whole_cell_not_run(self):
        raw = series_from_tp(np.where(np.random.default_rng(0).random(400) < 0.7,
                                      0.0, 1.0), qc=False)
        report = run_protocol([raw], FAST_MODELS, TINY_GRID)
        assert report.records == []
        assert len(report.failures) == len(FAST_MODELS) * 3 * 2
        assert all("qc_applied" in f["reason"] for f in report.failures)

    def test_duplicate_model_names_rejected(self):
        with pytest.raises(ValueError, match="unique"):
            run_protocol([tiny_station()], [{"name": "zero"}, {"name": "zero"}],
                         TINY_GRID)

    def test_grid_must_fit(self):
        with pytest.raises(ValueError, match="shortest station"):
            run_protocol([series_from_tp(np.zeros(15))], FAST_MODELS, TINY_GRID)


class TestAggregation:
    def _report(self):
        dry = series_from_tp(np.zeros(400))
        dry.meta = make_series(np.ones((1, 6)), station_id="DRY").meta
        return run_protocol([tiny_station(0), dry], FAST_MODELS, TINY_GRID)

    def test_averages_recomputed_from_records(self):
        report = self._report()
        per_cell = report.per_cell_means()
        for entry in per_cell:
            records = [r["metrics"]["mse"] for r in report.records
                       if (r["station"], r["model"], r["l_in"], r["l_out"],
                           r["resolution"]) == (entry["station"], entry["model"],
                                                entry["l_in"], entry["l_out"],
                                                entry["resolution"])]
            assert entry["mse"] == pytest.approx(np.mean(records), abs=1e-12)

    def test_dry_station_excluded_from_extreme_averages_only(self):
        report = self._report()
        averages = report.per_model_averages()
        for stats in averages.values():
            assert stats["n_cells"] == 6      # both stations count toward mse/mae
            assert stats["n_extreme_cells"] <= 3  # dry station never does

    def test_rank_single_model(self):
        report = run_protocol([tiny_station()], [{"name": "zero"}], TINY_GRID)
        ranks = rank_models(report)
        assert ranks["by_mse"][0]["model"] == "zero"
        assert len(ranks["by_mse"]) == 1

    def test_rank_order_and_alphabetical_ties(self):
        grid = ProtocolGrid(input_lengths=(12,), output_lengths=(2,),
                            resolutions=(1,), horizon_hours=6, seeds=(0,))
        report = EvaluationReport(grid, ["bbb", "aaa", "ccc"])
        for name, value in (("bbb", 1.0), ("aaa", 1.0), ("ccc", 0.5)):
            report.add_record("S", name, (12, 2, 1), 0,
                              MetricSet(mse=value, mae=1.0 - value / 10, eere=None,
                                        aeere=None, n_points=4, n_extreme=0,
                                        extreme_defined=False))
        ranks = report.rankings()
        assert [e["model"] for e in ranks["by_mse"]] == ["ccc", "aaa", "bbb"]

    def test_mse_and_mae_ranked_independently(self):
        grid = ProtocolGrid(input_lengths=(12,), output_lengths=(2,),
                            resolutions=(1,), horizon_hours=6, seeds=(0,))
        report = EvaluationReport(grid, ["a", "b"])
        report.add_record("S", "a", (12, 2, 1), 0,
                          MetricSet(1.0, 0.9, None, None, 4, 0, False))
        report.add_record("S", "b", (12, 2, 1), 0,
                          MetricSet(2.0, 0.1, None, None, 4, 0, False))
        ranks = report.rankings()
        assert [e["model"] for e in ranks["by_mse"]] == ["a", "b"]
        assert [e["model"] for e in ranks["by_mae"]] == ["b", "a"]

    def test_empty_report_rejected(self):
        report = EvaluationReport(TINY_GRID, ["zero"])
        with pytest.raises(ValueError, match="empty report"):
            rank_models(report)


class TestRendering:
    def _report(self):
        return run_protocol([tiny_station()], FAST_MODELS, TINY_GRID)

    def test_markdown_structure(self):
        md = render_markdown(self._report())
        assert "## Station TST1" in md
        assert "**" in md  # best-per-column highlighting
        assert "Ranking by mean MSE:" in md
        assert "| zero |" in md or "| zero " in md

    def test_long_csv(self):
        csv_text = render_long_csv(self._report())
        lines = csv_text.strip().split("\n")
        assert lines[0] == "station,model,l_in,l_out,resolution,seed,metric,value"
        # 18 records x at least mse+mae rows
        assert len(lines) - 1 >= 36

    def test_payload_roundtrip(self):
        report = self._report()
        payload = json.loads(report.to_json_bytes())
        again = EvaluationReport.from_payload(payload)
        assert again.to_json_bytes() == report.to_json_bytes()
