import numpy as np
import pytest

from rxonset.batch import (
    DataFormatError,
    detect_frame,
    frame_from_events,
    load_prescriptions_frame,
    onsets_frame_to_records,
)
from rxonset.changepoint import DetectionConfig, detect_all
from rxonset.events import build_trajectories

from conftest import random_trajectory, rx, table_for


def scatter_events(trajs, rng):
    events = [ev for t in trajs for ev in t.events]
    order = rng.permutation(len(events))
    return [events[i] for i in order]


class TestLoader:
    def test_loads_and_parses(self, tmp_path):
        path = tmp_path / "rx.csv"
        path.write_text(
            "patient_id,drug_atc,date,chronic,renewable\n"
            "p1,A,1970-01-11,1,0\n"
            "p2,B,2017-03-02,0,1\n"
        )
        frame = load_prescriptions_frame(path)
        assert frame["day"].to_list() == [10, 17227]
        assert frame["chronic"].to_list() == [True, False]

    def test_malformed_rows_abort(self, tmp_path):
        path = tmp_path / "rx.csv"
        path.write_text(
            "patient_id,drug_atc,date,chronic,renewable\n"
            "p1,A,1970-01-11,1,0\n"
            "p2,B,not-a-date,0,1\n"
            "p3,C,2017-01-01,7,0\n"
        )
        with pytest.raises(DataFormatError, match="2 malformed"):
            load_prescriptions_frame(path)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "rx.csv"
        path.write_text("patient_id,drug_atc,date,chronic\np1,A,1970-01-11,1\n")
        with pytest.raises(DataFormatError, match="renewable"):
            load_prescriptions_frame(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_prescriptions_frame(tmp_path / "no.csv")


class TestEngineAgreement:
    def test_matches_reference_on_random_cohort(self, rng):
        table = table_for("D1", 3.0, 100.0, shape_r=2.0, scale_r=300.0)
        trajs = [random_trajectory(rng, pid=f"p{i:04d}") for i in range(400)]
        config = DetectionConfig()
        reference = detect_all(trajs, table, config)
        frame = frame_from_events(scatter_events(trajs, rng))
        onsets, stats = detect_frame(frame, table, config)
        got = onsets_frame_to_records(onsets)

        assert stats.n_accepted == len(reference.records)
        assert [(r.patient_id, r.drug_code) for r in got] == [
            (r.patient_id, r.drug_code) for r in reference.records
        ]
        for a, b in zip(got, reference.records):
            assert a.onset_date == b.onset_date
            assert a.margin == pytest.approx(b.margin, abs=1e-9)
        assert stats.n_skipped_short == reference.n_skipped_short

    def test_same_day_collapse_matches(self, rng):
        events = []
        for i in range(40):
            pid = f"p{i:02d}"
            day = 0
            for j in range(10):
                events.append(rx(pid, "D1", day, chronic=bool(j % 2)))
                if j % 3 == 0:  # duplicate same-day row with different flags
                    events.append(rx(pid, "D1", day, renewable=True))
                day += int(rng.integers(1, 200))
        table = table_for("D1", 2.5, 90.0)
        reference = detect_all(build_trajectories(events), table, DetectionConfig())
        onsets, stats = detect_frame(frame_from_events(events), table, DetectionConfig())
        got = onsets_frame_to_records(onsets)
        assert [(r.patient_id, r.onset_date) for r in got] == [
            (r.patient_id, r.onset_date) for r in reference.records
        ]

    def test_missing_params_counted_not_fatal(self, rng):
        table = table_for("D1", 3.0, 100.0)
        good = random_trajectory(rng, pid="p1", drug="D1")
        bad = random_trajectory(rng, pid="p2", drug="ZZZ")
        frame = frame_from_events(scatter_events([good, bad], rng))
        onsets, stats = detect_frame(frame, table, DetectionConfig())
        assert stats.n_missing_params == 1
        assert any(key.startswith("ZZZ|") for key in stats.missing_keys)
        assert all(pid == "p1" for pid in onsets["patient_id"].to_list())

    def test_empty_frame(self):
        table = table_for("D1", 3.0, 100.0)
        onsets, stats = detect_frame(
            frame_from_events([]), table, DetectionConfig()
        )
        assert onsets.height == 0 and stats.n_pairs == 0

    def test_epsilon_monotonicity(self, rng):
        table = table_for("D1", 3.0, 100.0)
        trajs = [random_trajectory(rng, pid=f"p{i:04d}") for i in range(300)]
        frame = frame_from_events(scatter_events(trajs, rng))
        loose, _ = detect_frame(frame, table, DetectionConfig(epsilon=0.05))
        tight, _ = detect_frame(frame, table, DetectionConfig(epsilon=0.5))
        loose_keys = set(zip(loose["patient_id"], loose["drug_atc"]))
        tight_keys = set(zip(tight["patient_id"], tight["drug_atc"]))
        assert tight_keys <= loose_keys
