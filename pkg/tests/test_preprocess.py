import json

import pytest

from dischargekit.corpus import DischargeRecord
from dischargekit.errors import InsufficientDataError
from dischargekit.preprocess import (
    FilterReport,
    TrainingConfigStub,
    export_jsonl,
    iqr_bounds,
    reference_target,
    select_training,
    target_format_ok,
    word_count,
)
from dischargekit.prompts import GenerationTask, PromptVariant
from dischargekit.sections import SectionName

from conftest import (
    GOOD_BHC,
    GOOD_DI,
    eight_record_rows,
    fixture_admission_text,
    padded_record as build_record,
    read_golden,
)

BHC, DI = GenerationTask.BHC, GenerationTask.DI


def test_iqr_bounds_linear_interpolation():
    assert iqr_bounds([1, 2, 3, 4, 5, 6, 7, 8]) == (2.75, 6.25)


def test_iqr_bounds_constant():
    assert iqr_bounds([5, 5, 5, 5]) == (5, 5)


def test_iqr_bounds_too_few():
    with pytest.raises(InsufficientDataError):
        iqr_bounds([1, 2, 3])


def test_iqr_bounds_unsorted_input():
    assert iqr_bounds([8, 1, 6, 3, 2, 7, 4, 5]) == (2.75, 6.25)


def test_select_training_accounting():
    records = eight_record_rows()
    kept, report = select_training(records, BHC)
    assert report.total_in == 8
    assert report.kept == 4
    assert report.rejected_by == {"length_iqr": 2, "missing_sections": 1, "target_format": 1}
    assert report.reconciles()
    assert sorted(r.hadm_id for r in kept) == ["r1", "r3", "r4", "r6"]


def test_select_training_all_identical_kept():
    records = [build_record(f"i{i}", 140) for i in range(6)]
    kept, report = select_training(records, BHC)
    assert len(kept) == 6
    assert report.rejected_by == {"length_iqr": 0, "missing_sections": 0, "target_format": 0}


def test_select_training_empty_input():
    kept, report = select_training([], BHC)
    assert kept == []
    assert report == FilterReport(total_in=0)


def test_kept_lengths_stay_within_original_bounds():
    records = eight_record_rows()
    lengths = [word_count(r.text) for r in records]
    q1, q3 = iqr_bounds(lengths)
    kept, _ = select_training(records, BHC)
    assert all(q1 <= word_count(r.text) <= q3 for r in kept)


def test_required_sections_configurable_down():
    records = eight_record_rows()
    relaxed = set(SectionName) - {
        SectionName.SOCIAL_HISTORY,
        SectionName.BRIEF_HOSPITAL_COURSE,
        SectionName.DISCHARGE_INSTRUCTIONS,
    }
    kept, report = select_training(records, BHC, required_sections=relaxed)
    assert report.rejected_by["missing_sections"] == 0
    assert report.kept == 5


def test_di_format_predicate():
    assert target_format_ok(DI, "Dear Ms. ___, you were admitted...")
    assert not target_format_ok(DI, "Take your pills.")
    assert not target_format_ok(DI, None)
    assert not target_format_ok(DI, "   ")
    assert target_format_ok(BHC, GOOD_BHC)
    assert not target_format_ok(BHC, "too few words")


def test_reference_target_prefers_explicit_column():
    record = DischargeRecord(
        hadm_id="x",
        text=fixture_admission_text(),
        reference_bhc="explicit course",
    )
    assert reference_target(record, BHC) == "explicit course"
    carved = reference_target(DischargeRecord(hadm_id="y", text=fixture_admission_text()), BHC)
    assert carved is not None and carved.startswith("Ms. ___ was admitted")


def test_export_jsonl_round_trip(tmp_path):
    records = [build_record(f"e{i}", 140) for i in range(3)]
    out = tmp_path / "train.jsonl"
    result = export_jsonl(records, BHC, PromptVariant.COT, out)
    assert result.written == 3 and result.skipped == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 3
    for line in lines:
        obj = json.loads(line)
        assert set(obj) == {"id", "prompt", "completion"}
        assert obj["completion"] == GOOD_BHC
    assert (tmp_path / "train.config.txt").exists()


def test_export_skips_records_without_target(tmp_path):
    with_di = build_record("d1", 140)
    without_di = build_record("d2", 140, skip={SectionName.DISCHARGE_INSTRUCTIONS})
    out = tmp_path / "di.jsonl"
    result = export_jsonl([with_di, without_di], DI, PromptVariant.BASE, out)
    assert result.written == 1 and result.skipped == 1
    (line,) = out.read_text(encoding="utf-8").splitlines()
    assert json.loads(line)["id"] == "d1"


def test_di_export_uses_reference_bhc_as_prior(tmp_path):
    record = build_record("tf1", 140)
    out = tmp_path / "di.jsonl"
    export_jsonl([record], DI, PromptVariant.COT, out)
    obj = json.loads(out.read_text(encoding="utf-8"))
    assert GOOD_BHC in obj["prompt"]  # teacher forcing
    assert obj["completion"] == GOOD_DI
    assert GOOD_DI not in obj["prompt"]  # no leakage


def test_export_golden_line(tmp_path):
    record = DischargeRecord(hadm_id="F1", text=fixture_admission_text())
    out = tmp_path / "golden.jsonl"
    export_jsonl([record], BHC, PromptVariant.BASE, out)
    assert out.read_text(encoding="utf-8") == read_golden("export_bhc_base.jsonl")


def test_training_config_stub(tmp_path):
    path = tmp_path / "train.config.txt"
    TrainingConfigStub(base_model_name="local-llm").write(path)
    lines = dict(
        line.split("=", 1) for line in path.read_text(encoding="utf-8").splitlines()
    )
    assert lines["lora_rank"] == "128"
    assert lines["lora_alpha"] == "64"
    assert lines["learning_rate"] == "0.0002"
    assert lines["per_device_batch"] == "1"
    assert lines["base_model_name"] == "local-llm"
    assert "2e10-4" in lines["comment"]
