"""Prompt assembly for the two generation tasks.

Three variants are supported per task: ``base`` renders the serialized input
payload and nothing else, ``context`` prefixes it with context and task
definition, and ``cot`` additionally renders the expected output structure with
a curated questionnaire embedded under each subsection.  Rendering is pure and
deterministic; the same inputs always produce identical bytes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import ContractError
from .sections import SectionName

DEFAULT_TOKEN_BUDGET = 8192

PRIOR_BHC_LABEL = "Prior Brief Hospital Course"


class GenerationTask(Enum):
    BHC = "bhc"
    DI = "di"

    @property
    def section(self) -> SectionName:
        return (
            SectionName.BRIEF_HOSPITAL_COURSE
            if self is GenerationTask.BHC
            else SectionName.DISCHARGE_INSTRUCTIONS
        )


class PromptVariant(Enum):
    BASE = "base"
    CONTEXT = "context"
    COT = "cot"


@dataclass(frozen=True)
class QuestionGroup:
    """One expected output subsection and the questions that should shape it."""

    title: str
    questions: tuple[str, ...]


@dataclass(frozen=True)
class PromptBundle:
    """A fully rendered prompt plus the labeled segments it was built from."""

    task: GenerationTask
    variant: PromptVariant
    parts: tuple[tuple[str, str], ...]
    rendered: str
    token_estimate: int
    truncated: bool = False


_BHC_QUESTIONS = (
    QuestionGroup(
        "Patient Background and Presenting Complaint",
        (
            "What is the patient's background including pre-existing medical"
            " conditions, and what symptoms or events led to their current"
            " hospital admission?",
        ),
    ),
    QuestionGroup(
        "Key Diagnoses and Evaluations",
        (
            "What are the key diagnoses identified during the hospital stay?"
            " For each, how was the diagnosis reached, including any"
            " significant tests or evaluations conducted?",
        ),
    ),
    QuestionGroup(
        "Treatment and Management Strategies",
        (
            "What were the main treatment strategies employed for the patient's"
            " conditions during their stay? Include medications adjusted,"
            " procedures performed, and any therapeutic interventions.",
        ),
    ),
    QuestionGroup(
        "Complications and Additional Diagnoses",
        (
            "Were there any complications or additional diagnoses during the"
            " hospital stay? How were these addressed and managed?",
        ),
    ),
    QuestionGroup(
        "Progress and Monitoring",
        (
            "How did the patient's condition progress throughout the hospital"
            " stay, including any monitoring of symptoms, response to"
            " treatments, and adjustments made to the treatment plan?",
        ),
    ),
    QuestionGroup(
        "Support and Consultation Services",
        (
            "Which specialist services or support consultations were involved"
            " in the patient's care? How did these consultations impact the"
            " patient's treatment plan and recovery?",
        ),
    ),
    QuestionGroup(
        "Discharge Planning and Instructions",
        (
            "What were the conditions and considerations for the patient's"
            " discharge? Include the discharge medications, any changes from"
            " previous medication regimens, and follow-up care or lifestyle"
            " recommendations.",
        ),
    ),
    QuestionGroup(
        "Follow-Up and Post-Discharge Care",
        (
            "What are the specific follow-up care instructions and any"
            " scheduled tests or consultations? Highlight the importance of"
            " follow-up for managing ongoing conditions or monitoring"
            " recovery.",
        ),
    ),
)

_DI_QUESTIONS = (
    QuestionGroup(
        "Initial Assessment and Diagnosis",
        (
            "What led to the patient's admission to the hospital, and what were"
            " the initial symptoms? Based on the patient's symptoms, what"
            " diagnoses were considered and which was confirmed?",
        ),
    ),
    QuestionGroup(
        "Treatment and Hospital Stay",
        (
            "What treatments were provided to address the patient's symptoms or"
            " condition during the hospital stay? Were any surgeries"
            " recommended or performed? If a surgery was recommended but not"
            " performed, what were the reasons? What were the outcomes of the"
            " treatments or interventions provided?",
        ),
    ),
    QuestionGroup(
        "Patient's Decisions and Care Preferences",
        (
            "Did the patient make any specific requests regarding their care,"
            " such as refusing a treatment or requesting a transfer? How were"
            " these handled? How did the patient's decisions affect their"
            " treatment plan and discharge process?",
        ),
    ),
    QuestionGroup(
        "Comprehensive Post-Discharge Instructions",
        (
            "What are the general care instructions for the patient after"
            " discharge, including diet, activity level, and medication"
            " management? Are there any specific symptoms or signs that the"
            " patient should monitor for which would require immediate medical"
            " attention? How should the patient manage their regular home"
            " medications in addition to any new medications prescribed at"
            " discharge?",
        ),
    ),
    QuestionGroup(
        "Activity and Lifestyle Recommendations",
        (
            "What specific activity restrictions or recommendations are given"
            " to ensure a smooth recovery? (e.g., weight lifting limits,"
            " mobility advice) Are there any restrictions on driving or"
            " operating machinery, especially if the patient is taking new or"
            " continued pain medication?",
        ),
    ),
    QuestionGroup(
        "Follow-up Care and Monitoring",
        (
            "What follow-up appointments or tests are recommended for the"
            " patient? With whom should these appointments be made? How should"
            " the patient approach symptom management, especially if they"
            " experience pain, dehydration, or other concerning symptoms?",
        ),
    ),
    QuestionGroup(
        "Communication with Healthcare Providers",
        (
            "Under what circumstances should the patient immediately contact"
            " their healthcare provider or seek emergency care? What is the"
            " recommended way for the patient to communicate with their"
            " healthcare team (e.g., phone call, hospital return)?",
        ),
    ),
    QuestionGroup(
        "Encouragement and Support",
        (
            "How can we encourage the patient to adhere to their discharge"
            " instructions and reassure them about their recovery process?"
            " What resources or support systems can we recommend to the"
            " patient for additional help or information post-discharge?",
        ),
    ),
)

_SHARED_CONTEXT = (
    "You are a clinical documentation assistant working with a de-identified"
    " hospital discharge summary. Protected details are masked with ___"
    " placeholders. The input below lists the available sections of one"
    " admission's record; imaging findings may appear as radiology report"
    " impressions selected to stand in for the raw Pertinent Results section."
)

_DEFAULT_CONTEXT = {
    GenerationTask.BHC: _SHARED_CONTEXT,
    GenerationTask.DI: _SHARED_CONTEXT
    + " A previously written Brief Hospital Course for the same admission,"
    " when available, appears at the end of the input.",
}

_DEFAULT_TASK_DEFINITION = {
    GenerationTask.BHC: (
        "Write the Brief Hospital Course section for this admission. Address"
        " it to healthcare providers: summarize why the patient was admitted,"
        " the key findings and diagnoses, the treatments given and how the"
        " patient responded, and the plan in place at discharge. Use only"
        " information supported by the input."
    ),
    GenerationTask.DI: (
        "Write the Discharge Instructions section for this admission. Address"
        " the patient and their caregivers directly, in plain and reassuring"
        " language: explain why they were in the hospital, what was done for"
        " them, how they should take care of themselves after leaving, and"
        " when they should seek medical help. Use only information supported"
        " by the input."
    ),
}

_DEFAULT_STRUCTURE_INTRO = {
    GenerationTask.BHC: (
        "Structure the Brief Hospital Course as the following subsections, in"
        " order. Under each subsection, cover its guiding questions."
    ),
    GenerationTask.DI: (
        "Structure the Discharge Instructions around the following points, in"
        " order. Under each point, cover its guiding questions."
    ),
}

_PART_BANNERS = {
    "context": "CONTEXT",
    "task_definition": "TASK",
    "output_structure": "OUTPUT STRUCTURE",
    "input": "INPUT",
}


@dataclass(frozen=True)
class PromptTemplates:
    """Per-task prompt text sources; defaults are embedded in the package."""

    context: str
    task_definition: str
    structure_intro: str
    questions: tuple[QuestionGroup, ...]


def questionnaire(task: GenerationTask) -> list[QuestionGroup]:
    """The eight curated question groups for a task, in output order."""
    return list(_BHC_QUESTIONS if task is GenerationTask.BHC else _DI_QUESTIONS)


def default_templates(task: GenerationTask) -> PromptTemplates:
    return PromptTemplates(
        context=_DEFAULT_CONTEXT[task],
        task_definition=_DEFAULT_TASK_DEFINITION[task],
        structure_intro=_DEFAULT_STRUCTURE_INTRO[task],
        questions=tuple(questionnaire(task)),
    )


def _parse_question_file(text: str) -> tuple[QuestionGroup, ...]:
    groups = []
    for block in re.split(r"\n\s*\n", text.strip()):
        lines = [ln.strip() for ln in block.splitlines() if ln.strip()]
        if not lines:
            continue
        title, *questions = lines
        questions = [q[2:].strip() if q.startswith("- ") else q for q in questions]
        groups.append(QuestionGroup(title=title, questions=tuple(questions)))
    return tuple(groups)


def load_templates(directory: str | Path) -> dict[GenerationTask, PromptTemplates]:
    """Load template overrides from a directory of plain-text files.

    Recognized files are ``{bhc,di}_context.txt``, ``{bhc,di}_task.txt``,
    ``{bhc,di}_structure_intro.txt`` and ``{bhc,di}_questions.txt``; any file
    not present falls back to the embedded default for that part.  A questions
    file holds blank-line-separated groups: title line first, one question per
    following line (an optional leading ``- `` is stripped).
    """
    directory = Path(directory)

    def read(name: str) -> str | None:
        p = directory / name
        return p.read_text(encoding="utf-8").strip() if p.exists() else None

    out = {}
    for task in GenerationTask:
        base = default_templates(task)
        qtext = read(f"{task.value}_questions.txt")
        out[task] = PromptTemplates(
            context=read(f"{task.value}_context.txt") or base.context,
            task_definition=read(f"{task.value}_task.txt") or base.task_definition,
            structure_intro=read(f"{task.value}_structure_intro.txt") or base.structure_intro,
            questions=_parse_question_file(qtext) if qtext else base.questions,
        )
    return out


def _structure_block(templates: PromptTemplates) -> str:
    lines = [templates.structure_intro, ""]
    for i, group in enumerate(templates.questions, start=1):
        lines.append(f"{i}. {group.title}")
        for q in group.questions:
            lines.append(f"   - {q}")
    return "\n".join(lines)


def _keep_first_tokens(text: str, count: int) -> str:
    """Keep the first count whitespace tokens, preserving original layout."""
    if count <= 0:
        return ""
    for i, m in enumerate(re.finditer(r"\S+", text), start=1):
        if i == count:
            return text[: m.end()]
    return text


@dataclass
class _PayloadItem:
    label: str
    body: str
    order: int          # canonical position used for truncation priority
    truncatable: bool   # only canonical input sections may be cut


def _payload_items(
    sections: list[tuple[SectionName, str]],
    radiology: list[tuple[str, str]],
    prior_bhc: str | None,
) -> list[_PayloadItem]:
    pr_order = SectionName.PERTINENT_RESULTS.order
    items: list[_PayloadItem] = []
    radiology_placed = not radiology
    for name, body in sections:
        if name is SectionName.PERTINENT_RESULTS and radiology:
            for label, text in radiology:
                items.append(_PayloadItem(label, text, pr_order, False))
            radiology_placed = True
            continue
        if not radiology_placed and name.order > pr_order:
            for label, text in radiology:
                items.append(_PayloadItem(label, text, pr_order, False))
            radiology_placed = True
        items.append(_PayloadItem(name.value, body, name.order, True))
    if not radiology_placed:
        for label, text in radiology:
            items.append(_PayloadItem(label, text, pr_order, False))
    if prior_bhc is not None:
        items.append(_PayloadItem(PRIOR_BHC_LABEL, prior_bhc, len(SectionName), False))
    return items


def _serialize_payload(items: list[_PayloadItem]) -> str:
    return "\n\n".join(f"{item.label}:\n{item.body}" for item in items)


def _render(variant: PromptVariant, parts: list[tuple[str, str]]) -> str:
    if variant is PromptVariant.BASE:
        return parts[0][1]
    return "\n\n".join(f"### {_PART_BANNERS[label]}\n\n{text}" for label, text in parts)


def build_prompt(
    task: GenerationTask,
    variant: PromptVariant,
    sections: list[tuple[SectionName, str]],
    radiology: list[tuple[str, str]] | None = None,
    prior_bhc: str | None = None,
    templates: PromptTemplates | None = None,
    token_budget: int = DEFAULT_TOKEN_BUDGET,
) -> PromptBundle:
    """Render one prompt.

    Args:
        task: which target section is being generated.
        variant: base (payload only), context, or cot.
        sections: the input bundle from the section extractor, canonical order.
        radiology: labeled impression blocks substituting for Pertinent
            Results; when given, the raw Pertinent Results section is dropped
            and the blocks take its position.
        prior_bhc: the already-generated (or reference) Brief Hospital Course;
            required for non-base DI prompts, embedded as a labeled block at
            the end of the payload for any DI prompt that has one.
        templates: per-task text overrides; embedded defaults otherwise.
        token_budget: whitespace-token cap; oversized payload sections are cut
            tail-first in reverse canonical order and the bundle is flagged.

    Raises:
        ContractError: DI prompt above base variant without a prior BHC.
    """
    if task is GenerationTask.DI and variant is not PromptVariant.BASE and prior_bhc is None:
        raise ContractError("DI prompts above the base variant require a prior BHC")
    if task is GenerationTask.BHC and prior_bhc is not None:
        raise ContractError("BHC prompts must not reference a prior BHC")
    templates = templates or default_templates(task)
    items = _payload_items(sections, radiology or [], prior_bhc)

    def assemble(current: list[_PayloadItem]) -> tuple[list[tuple[str, str]], str]:
        payload = _serialize_payload(current)
        parts: list[tuple[str, str]] = []
        if variant is not PromptVariant.BASE:
            parts.append(("context", templates.context))
            parts.append(("task_definition", templates.task_definition))
            if variant is PromptVariant.COT:
                parts.append(("output_structure", _structure_block(templates)))
        parts.append(("input", payload))
        return parts, _render(variant, parts)

    parts, rendered = assemble(items)
    truncated = False
    while len(rendered.split()) > token_budget:
        victims = [it for it in items if it.truncatable and it.body]
        if not victims:
            break
        victim = max(victims, key=lambda it: it.order)
        excess = len(rendered.split()) - token_budget
        keep = len(victim.body.split()) - excess
        if keep > 0:
            victim.body = _keep_first_tokens(victim.body, keep)
        else:
            items.remove(victim)
        truncated = True
        parts, rendered = assemble(items)

    return PromptBundle(
        task=task,
        variant=variant,
        parts=tuple(parts),
        rendered=rendered,
        token_estimate=len(rendered.split()),
        truncated=truncated,
    )
