from datetime import datetime

import numpy as np
import pytest

from batterypool.series import KWH, HourlySeries
from batterypool.tariff import pge_etou_b

START = datetime(2021, 1, 1)


@pytest.fixture(scope="session")
def etou():
    return pge_etou_b()


@pytest.fixture
def start():
    return START


def make_series(values, unit=KWH, start=START):
    return HourlySeries(start, np.asarray(values, dtype=float), unit)


@pytest.fixture
def series_factory():
    return make_series
