import numpy as np
import pytest

from rxonset.events import PrescriptionEvent, Regime, build_trajectories
from rxonset.population import ParamEntry, RegimeParamTable
from rxonset.renewal import WeibullParams


def rx(pid, drug, day, chronic=False, renewable=False):
    return PrescriptionEvent(
        patient_id=pid,
        drug_code=drug,
        date=day,
        chronic_label=chronic,
        renewable=renewable,
    )


def traj_from_days(days, pid="p1", drug="D1", chronic=True, renewable=False):
    events = [rx(pid, drug, d, chronic=chronic, renewable=renewable) for d in days]
    (traj,) = build_trajectories(events)
    return traj


def table_for(drug, shape_nr, scale_nr, shape_r=None, scale_r=None, n=1000):
    entries = {
        (drug, Regime.NON_RENEWABLE): ParamEntry(
            WeibullParams(shape_nr, scale_nr), n, False
        ),
        (drug, Regime.RENEWABLE): ParamEntry(
            WeibullParams(shape_r or shape_nr, scale_r or scale_nr), n, False
        ),
    }
    return RegimeParamTable(entries=entries)


def random_trajectory(rng, pid="p1", drug="D1", max_len=50):
    """Mixed sporadic/regular trajectory with random regime flags."""
    n_events = int(rng.integers(6, max_len + 1))
    split = int(rng.integers(0, n_events))
    day = int(rng.integers(0, 1000))
    days, renews = [], []
    for i in range(n_events):
        days.append(day)
        renews.append(bool(rng.random() < 0.3))
        if i < split:
            day += max(1, int(rng.exponential(150)))
        else:
            day += max(1, int(rng.normal(100, 20)))
    events = [
        rx(pid, drug, d, chronic=bool(rng.random() < 0.7), renewable=r)
        for d, r in zip(days, renews)
    ]
    (traj,) = build_trajectories(events)
    return traj


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
