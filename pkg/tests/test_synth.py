import numpy as np
import pytest

from nowcastbench import ingest
from nowcastbench.stats import zero_inflation_ratio
from nowcastbench.synth import SyntheticSpec, generate_station


class TestGenerator:
    def test_dry_fraction_tracks_target(self):
        for seed in (0, 1, 2, 3):
            series = generate_station(SyntheticSpec(duration_hours=17520, seed=seed))
            assert zero_inflation_ratio(series.tp) == pytest.approx(0.82, abs=0.03)

    def test_alternate_target(self):
        series = generate_station(SyntheticSpec(duration_hours=17520,
                                                zero_fraction=0.6, seed=5))
        assert zero_inflation_ratio(series.tp) == pytest.approx(0.6, abs=0.03)

    def test_all_dry_station(self):
        series = generate_station(SyntheticSpec(duration_hours=8760,
                                                zero_fraction=1.0, seed=1))
        assert (series.tp == 0.0).all()

    def test_complete_and_physical(self):
        series = generate_station(SyntheticSpec(duration_hours=8760, seed=2))
        assert series.qc_applied
        assert np.isfinite(series.data).all()
        assert (series.tp >= 0).all()
        rh = series.column("rh")
        assert (rh >= 0).all() and (rh <= 100).all()
        assert (series.column("wind_speed") >= 0).all()

    def test_extremes_present(self):
        series = generate_station(SyntheticSpec(duration_hours=17520, seed=3))
        assert (series.tp > 4.0).sum() > 20

    def test_wet_spells_are_persistent(self):
        series = generate_station(SyntheticSpec(duration_hours=17520, seed=4))
        wet = series.tp > 0
        runs = np.diff(np.flatnonzero(np.diff(np.concatenate([[0], wet.view(np.int8), [0]]))))
        spell_lengths = runs[::2]
        assert spell_lengths.mean() > 2.0  # rain arrives in spells, not salt-and-pepper

    def test_pwv_leads_rain(self):
        series = generate_station(SyntheticSpec(duration_hours=17520, seed=6))
        pwv = series.column("pwv")
        wet = series.tp > 0
        assert pwv[wet].mean() > pwv[~wet].mean() + 1.0

    def test_deterministic_per_seed(self):
        a = generate_station(SyntheticSpec(duration_hours=2000, seed=9))
        b = generate_station(SyntheticSpec(duration_hours=2000, seed=9))
        np.testing.assert_array_equal(a.data, b.data)
        c = generate_station(SyntheticSpec(duration_hours=2000, seed=10))
        assert not np.array_equal(a.data, c.data)

    def test_identical_file_bytes(self, tmp_path):
        series = generate_station(SyntheticSpec(duration_hours=500, seed=0))
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        ingest.write_station_csv(series, p1)
        ingest.write_station_csv(generate_station(SyntheticSpec(duration_hours=500,
                                                                seed=0)), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SyntheticSpec(duration_hours=3)
        with pytest.raises(ValueError):
            SyntheticSpec(zero_fraction=1.2)
        with pytest.raises(ValueError):
            SyntheticSpec(mean_wet_hours=0.2)
