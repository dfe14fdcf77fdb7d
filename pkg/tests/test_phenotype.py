import logging

import pytest

from rxonset.changepoint import OnsetRecord
from rxonset.events import DiagnosisEvent, build_trajectories
from rxonset.phenotype import (
    DictEntry,
    DictionaryConfig,
    PhenotypeDictionary,
    SchemaVersionError,
    build_dictionary,
    infer_disease_onsets,
    load_dictionary,
    naive_baseline,
    naive_onset_records,
    read_disease_onsets_csv,
    save_dictionary,
    write_disease_onsets_csv,
)

from conftest import rx


def onset(pid, drug, day, method="changepoint"):
    return OnsetRecord(patient_id=pid, drug_code=drug, onset_date=day, margin=1.0, method=method)


def dx(pid, icd, day):
    return DiagnosisEvent(patient_id=pid, icd_code=icd, date=day)


def synthetic_inputs(n_onsets=100, n_matched=30, drug="DRUGA", icd="E11", extra_drugs=11):
    """One drug with n_onsets onsets, n_matched of them diagnosed in
    window, plus `extra_drugs` well-supported drugs to satisfy the
    per-ICD minimum drug count."""
    onsets, diagnoses = [], []
    for i in range(n_onsets):
        pid = f"p{i:04d}"
        onsets.append(onset(pid, drug, 1000))
        if i < n_matched:
            diagnoses.append(dx(pid, icd, 1030))
    for d in range(extra_drugs):
        for i in range(40):
            pid = f"x{d:02d}{i:03d}"
            onsets.append(onset(pid, f"FILLER{d:02d}", 2000))
            diagnoses.append(dx(pid, icd, 2001))
    return onsets, diagnoses


class TestBuildDictionary:
    def test_alignment_rate_formula(self):
        onsets, diagnoses = synthetic_inputs(n_onsets=100, n_matched=30)
        d = build_dictionary(onsets, diagnoses)
        entry = next(e for e in d.drugs_for("E11") if e.drug_code == "DRUGA")
        assert entry.support == 30
        assert entry.alignment_rate == pytest.approx(0.30)

    def test_support_boundary_is_strict(self):
        onsets25, diagnoses25 = synthetic_inputs(n_onsets=100, n_matched=25)
        d25 = build_dictionary(onsets25, diagnoses25)
        assert all(e.drug_code != "DRUGA" for e in d25.drugs_for("E11"))
        onsets26, diagnoses26 = synthetic_inputs(n_onsets=100, n_matched=26)
        d26 = build_dictionary(onsets26, diagnoses26)
        assert any(e.drug_code == "DRUGA" for e in d26.drugs_for("E11"))

    def test_alignment_boundary_is_strict(self):
        # 26 matched of 600 onsets: support passes, rate 0.0433 <= 0.05 fails
        onsets, diagnoses = synthetic_inputs(n_onsets=600, n_matched=26)
        d = build_dictionary(onsets, diagnoses)
        assert all(e.drug_code != "DRUGA" for e in d.drugs_for("E11"))

    def test_min_drugs_boundary(self):
        # 9 qualifying drugs -> ICD absent; 10 -> present
        onsets9, diagnoses9 = synthetic_inputs(n_matched=0, extra_drugs=9)
        assert "E11" not in build_dictionary(onsets9, diagnoses9).entries
        onsets10, diagnoses10 = synthetic_inputs(n_matched=0, extra_drugs=10)
        assert "E11" in build_dictionary(onsets10, diagnoses10).entries

    def test_max_drugs_cap_keeps_top_ranked(self):
        onsets, diagnoses = [], []
        for d in range(35):
            matched = 26 + d  # increasing support and rate
            for i in range(100):
                pid = f"d{d:02d}p{i:03d}"
                onsets.append(onset(pid, f"DRUG{d:02d}", 500))
                if i < matched:
                    diagnoses.append(dx(pid, "I10", 540))
        built = build_dictionary(onsets, diagnoses)
        drugs = built.drugs_for("I10")
        assert len(drugs) == 30
        # the five lowest-rate drugs were cut
        assert {e.drug_code for e in drugs} == {f"DRUG{d:02d}" for d in range(5, 35)}
        rates = [e.alignment_rate for e in drugs]
        assert rates == sorted(rates, reverse=True)

    def test_window_edges_inclusive(self):
        cfg = DictionaryConfig(min_support=0, min_alignment=0.0, min_drugs=1)
        onsets = [onset(f"p{i}", "D", 1000) for i in range(3)]
        diagnoses = [
            dx("p0", "A00", 1000 - 90),  # exactly window_before: in
            dx("p1", "A00", 1000 + 365),  # exactly window_after: in
            dx("p2", "A00", 1000 - 91),  # one day out
        ]
        d = build_dictionary(onsets, diagnoses, cfg)
        entry = next(e for e in d.drugs_for("A00"))
        assert entry.support == 2

    def test_dedup_flag(self):
        cfg = DictionaryConfig(min_support=0, min_alignment=0.0, min_drugs=1)
        onsets = [onset("p0", "D", 1000)]
        diagnoses = [dx("p0", "A00", 1010), dx("p0", "A00", 1020), dx("p0", "A00", 1030)]
        dup = build_dictionary(onsets, diagnoses, cfg)
        assert dup.drugs_for("A00")[0].support == 3
        dedup = build_dictionary(
            onsets, diagnoses, DictionaryConfig(min_support=0, min_alignment=0.0, min_drugs=1, dedup_per_onset=True)
        )
        assert dedup.drugs_for("A00")[0].support == 1

    def test_empty_inputs_warn(self, caplog):
        with caplog.at_level(logging.WARNING):
            d = build_dictionary([], [dx("p", "E11", 5)])
        assert d.entries == {}
        assert any("empty dictionary" in r.message for r in caplog.records)

    def test_rebuild_is_identical(self, tmp_path):
        onsets, diagnoses = synthetic_inputs()
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_dictionary(build_dictionary(onsets, diagnoses), p1)
        save_dictionary(build_dictionary(list(onsets), list(diagnoses)), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_audit_clean_build(self):
        onsets, diagnoses = synthetic_inputs()
        assert build_dictionary(onsets, diagnoses).audit() == []

    def test_audit_flags_violations(self):
        bad = PhenotypeDictionary(
            entries={"E11": [DictEntry("A", 0.5, 10)]},  # support too low, 1 drug
        )
        problems = bad.audit()
        assert any("support" in p for p in problems)
        assert any("drugs outside" in p for p in problems)


def listed_dictionary():
    return PhenotypeDictionary(
        entries={
            "E11": [DictEntry("DRUGA", 0.4, 100), DictEntry("DRUGB", 0.2, 50)],
            "I10": [DictEntry("DRUGC", 0.3, 60)],
        }
    )


class TestInferDiseaseOnsets:
    def test_min_rule(self):
        d = listed_dictionary()
        out = infer_disease_onsets(
            [onset("p1", "DRUGA", 500), onset("p1", "DRUGB", 300)], d
        )
        (rec,) = out
        assert rec.onset_date == 300 and rec.source_drug == "DRUGB"
        assert rec.icd_code == "E11" and rec.method == "changepoint"

    def test_no_listed_drug_onsets(self):
        out = infer_disease_onsets([onset("p1", "UNLISTED", 100)], listed_dictionary())
        assert out == []

    def test_tie_breaks_to_higher_alignment(self):
        out = infer_disease_onsets(
            [onset("p1", "DRUGB", 300), onset("p1", "DRUGA", 300)], listed_dictionary()
        )
        assert out[0].source_drug == "DRUGA"  # rate 0.4 beats 0.2

    def test_multi_icd_fanout(self):
        out = infer_disease_onsets(
            [onset("p1", "DRUGA", 100), onset("p1", "DRUGC", 90)], listed_dictionary()
        )
        assert [(r.icd_code, r.onset_date) for r in out] == [("E11", 100), ("I10", 90)]


class TestNaiveBaseline:
    def test_first_chronic_event(self):
        events = [
            rx("p1", "DRUGA", 10, chronic=False),
            rx("p1", "DRUGA", 42, chronic=True),
            rx("p1", "DRUGA", 99, chronic=True),
        ]
        out = naive_baseline(build_trajectories(events), listed_dictionary())
        (rec,) = out
        assert rec.onset_date == 42 and rec.method == "naive"

    def test_all_acute_no_record(self):
        events = [rx("p1", "DRUGA", d, chronic=False) for d in (10, 50, 90)]
        assert naive_baseline(build_trajectories(events), listed_dictionary()) == []

    def test_naive_no_later_than_any_listed_first_chronic(self, rng):
        d = listed_dictionary()
        events = []
        for i in range(50):
            pid = f"p{i:03d}"
            for drug in ("DRUGA", "DRUGB"):
                day = 0
                for _ in range(6):
                    day += int(rng.integers(1, 200))
                    events.append(rx(pid, drug, day, chronic=bool(rng.random() < 0.5)))
        trajs = build_trajectories(events)
        out = {(r.patient_id, r.icd_code): r.onset_date for r in naive_baseline(trajs, d)}
        for traj in trajs:
            chron = [ev.date for ev in traj.events if ev.chronic_label]
            if not chron:
                continue
            key = (traj.patient_id, "E11")
            assert out[key] <= chron[0]

    def test_drug_level_records(self):
        events = [
            rx("p1", "DRUGA", 10, chronic=True),
            rx("p2", "DRUGA", 20, chronic=False),
        ]
        recs = naive_onset_records(build_trajectories(events))
        assert [(r.patient_id, r.onset_date) for r in recs] == [("p1", 10)]


class TestPersistence:
    def test_round_trip(self, tmp_path):
        onsets, diagnoses = synthetic_inputs()
        d = build_dictionary(onsets, diagnoses, train_patients=["p1", "p0"])
        path = tmp_path / "dict.json"
        save_dictionary(d, path)
        loaded = load_dictionary(path)
        assert loaded.entries == d.entries
        assert loaded.config == d.config
        assert loaded.train_patients == ("p0", "p1")

    def test_schema_version(self, tmp_path):
        path = tmp_path / "dict.json"
        path.write_text('{"schema_version": 9, "entries": {}, "config": {}}')
        with pytest.raises(SchemaVersionError):
            load_dictionary(path)

    def test_disease_onsets_csv_round_trip(self, tmp_path):
        d = listed_dictionary()
        recs = infer_disease_onsets(
            [onset("p1", "DRUGA", 500), onset("p2", "DRUGC", 300)], d
        )
        path = tmp_path / "disease.csv"
        write_disease_onsets_csv(path, recs)
        assert read_disease_onsets_csv(path) == recs
        assert path.read_text().splitlines()[0] == "patient_id,icd,onset_date,source_drug,method"
