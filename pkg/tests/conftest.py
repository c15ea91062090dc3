import numpy as np
import pytest

from nowcastbench import synth
from nowcastbench.core import Continent, StationMeta, StationSeries


@pytest.fixture(scope="session")
def station_2yr() -> StationSeries:
    return synth.generate_station(synth.SyntheticSpec(duration_hours=17520, seed=7))


@pytest.fixture(scope="session")
def station_1yr() -> StationSeries:
    return synth.generate_station(synth.SyntheticSpec(duration_hours=8760, seed=11,
                                                      station_id="SYN1"))


def make_series(data: np.ndarray, qc: bool = True, start: int = 0,
                station_id: str = "TST1") -> StationSeries:
    meta = StationMeta(station_id=station_id, latitude=10.0, longitude=20.0,
                       elevation=5.0, continent=Continent.EUROPE)
    return StationSeries(meta=meta, start_time=start, data=data, qc_applied=qc)


def series_from_tp(tp: np.ndarray, qc: bool = True) -> StationSeries:
    """6-variable series with mildly varying predictors and the given tp."""
    n = len(tp)
    t = np.arange(n, dtype=np.float64)
    data = np.column_stack([
        280.0 + np.sin(t / 7.0),
        101000.0 + np.cos(t / 11.0),
        50.0 + 10 * np.sin(t / 5.0),
        3.0 + np.cos(t / 3.0) ** 2,
        30.0 + 5 * np.sin(t / 13.0),
        np.asarray(tp, dtype=np.float64),
    ])
    return make_series(data, qc=qc)
