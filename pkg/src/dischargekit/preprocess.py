"""Training-sample selection and instruction-tuning dataset export.

Records are kept when their summary length sits inside the corpus
interquartile range, their parse contains every required section, and their
reference target follows the expected format.  Kept records are exported as
``{id, prompt, completion}`` JSONL together with a training-config stub; the
fine-tuning itself happens elsewhere.
"""

from __future__ import annotations

import json
import re
import statistics
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import DischargeRecord
from .errors import InsufficientDataError
from .prompts import GenerationTask, PromptTemplates, PromptVariant, build_prompt
from .radiology import SelectionConfig, select_reports, substitute_pertinent_results
from .sections import INPUT_SECTIONS, ParsedSummary, SectionName, extract_section, input_bundle, parse_summary

REJECT_RULES = ("length_iqr", "missing_sections", "target_format")

_DI_SALUTATION = re.compile(r"^Dear\b")
MIN_BHC_WORDS = 20


@dataclass
class FilterReport:
    """Exact accounting of a selection pass: kept + rejected == total_in."""

    total_in: int = 0
    kept: int = 0
    rejected_by: dict[str, int] = field(
        default_factory=lambda: {rule: 0 for rule in REJECT_RULES}
    )

    def reconciles(self) -> bool:
        return self.kept + sum(self.rejected_by.values()) == self.total_in


@dataclass(frozen=True)
class TrainingConfigStub:
    """Hyperparameters recorded for the downstream fine-tuning run.

    The stub is emitted next to the exported dataset and never executed here.
    """

    lora_rank: int = 128
    lora_alpha: int = 64
    learning_rate: float = 2e-4
    per_device_batch: int = 1
    base_model_name: str = "mistral-7b-instruct"
    comment: str = (
        "learning_rate normalized to 2e-4; the source recipe prints the"
        " ambiguous value 2e10-4"
    )

    def write(self, path: str | Path) -> None:
        lines = [
            f"lora_rank={self.lora_rank}",
            f"lora_alpha={self.lora_alpha}",
            f"learning_rate={self.learning_rate}",
            f"per_device_batch={self.per_device_batch}",
            f"base_model_name={self.base_model_name}",
            f"comment={self.comment}",
        ]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def iqr_bounds(lengths: list[int] | list[float]) -> tuple[float, float]:
    """First and third quartiles by linear interpolation on sorted data.

    Uses the common type-7 convention (interpolation between order statistics).
    Needs at least 4 values.
    """
    if len(lengths) < 4:
        raise InsufficientDataError(
            f"iqr_bounds needs at least 4 values, got {len(lengths)}"
        )
    q1, _, q3 = statistics.quantiles(lengths, n=4, method="inclusive")
    return q1, q3


def word_count(text: str) -> int:
    return len(text.split())


def reference_target(
    record: DischargeRecord, task: GenerationTask, parsed: ParsedSummary | None = None
) -> str | None:
    """Reference text for a task: explicit column first, else carved from text."""
    explicit = record.reference_bhc if task is GenerationTask.BHC else record.reference_di
    if explicit:
        return explicit
    if parsed is None:
        parsed = parse_summary(record.text)
    return extract_section(parsed, task.section)


def target_format_ok(task: GenerationTask, target: str | None) -> bool:
    """Format predicate for reference targets.

    BHC must be nonempty with at least MIN_BHC_WORDS words; DI must be nonempty
    and open with a 'Dear ...' salutation, the dominant format in this data.
    """
    if target is None or not target.strip():
        return False
    if task is GenerationTask.BHC:
        return word_count(target) >= MIN_BHC_WORDS
    return bool(_DI_SALUTATION.match(target.strip()))


def select_training(
    records: list[DischargeRecord],
    task: GenerationTask,
    required_sections: set[SectionName] | None = None,
) -> tuple[list[DischargeRecord], FilterReport]:
    """Filter records down to clean training samples for one task.

    A record survives when, in order: (a) its summary word count lies within
    the [q1, q3] bounds computed over this input set, (b) its parse contains
    every required section, and (c) its reference target for the task passes
    the format predicate.  Each rejection is attributed to the first failing
    rule, so the report always reconciles exactly.
    """
    if required_sections is None:
        required_sections = set(INPUT_SECTIONS)
    report = FilterReport(total_in=len(records))
    if not records:
        return [], report
    lengths = [word_count(r.text) for r in records]
    q1, q3 = iqr_bounds(lengths)

    kept = []
    for record, length in zip(records, lengths):
        if not q1 <= length <= q3:
            report.rejected_by["length_iqr"] += 1
            continue
        parsed = parse_summary(record.text)
        present = set(parsed.sections)
        if not required_sections <= present:
            report.rejected_by["missing_sections"] += 1
            continue
        if not target_format_ok(task, reference_target(record, task, parsed)):
            report.rejected_by["target_format"] += 1
            continue
        kept.append(record)
    report.kept = len(kept)
    return kept, report


@dataclass(frozen=True)
class ExportReport:
    written: int
    skipped: int


def export_jsonl(
    kept: list[DischargeRecord],
    task: GenerationTask,
    variant: PromptVariant,
    out: str | Path,
    reports_index: dict | None = None,
    selection: SelectionConfig = SelectionConfig(),
    templates: PromptTemplates | None = None,
    stub: TrainingConfigStub = TrainingConfigStub(),
    stub_path: str | Path | None = None,
) -> ExportReport:
    """Write an instruction-tuning dataset: one {id, prompt, completion} per line.

    Prompts are built exactly as at inference time, except DI prompts use the
    record's reference BHC (teacher forcing).  When a radiology index is given,
    Pertinent Results substitution is applied; otherwise sections serialize
    as-is.  Records without a reference target are skipped and counted.  A
    training-config stub lands next to the dataset.
    """
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    written = skipped = 0
    with out.open("w", encoding="utf-8") as fh:
        for record in sorted(kept, key=lambda r: r.hadm_id):
            parsed = parse_summary(record.text)
            completion = reference_target(record, task, parsed)
            if not completion:
                skipped += 1
                continue
            prior = None
            if task is GenerationTask.DI:
                prior = reference_target(record, GenerationTask.BHC, parsed)
                if prior is None and variant is not PromptVariant.BASE:
                    skipped += 1
                    continue
            blocks = []
            if reports_index is not None:
                matches = select_reports(
                    record, parsed, reports_index.get(record.hadm_id, ()), selection
                )
                blocks = substitute_pertinent_results(parsed, matches, selection)
            bundle = build_prompt(
                task,
                variant,
                input_bundle(parsed),
                radiology=blocks,
                prior_bhc=prior,
                templates=templates,
            )
            line = json.dumps(
                {"id": record.hadm_id, "prompt": bundle.rendered, "completion": completion},
                ensure_ascii=False,
            )
            fh.write(line + "\n")
            written += 1
    stub.write(stub_path or out.with_suffix(".config.txt"))
    return ExportReport(written=written, skipped=skipped)
