"""Deterministic segmentation of discharge summaries into named sections.

A section opens wherever one of the canonical headers (or a configured alias)
appears at the start of a line, followed by a colon, and runs to the next
recognized header or the end of the note.  Anything before the first header is
kept as ``unmatched_prefix``.  Only this closed set of headers splits the note;
pseudo-headers such as ``IMPRESSION:`` inside Pertinent Results are body text.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path

from .corpus import SPLITS, Corpus
from .errors import SchemaError


class SectionName(Enum):
    """The canonical discharge-summary sections, in document order."""

    ALLERGIES = "Allergies"
    CHIEF_COMPLAINT = "Chief Complaint"
    MAJOR_SURGICAL_OR_INVASIVE_PROCEDURE = "Major Surgical or Invasive Procedure"
    HISTORY_OF_PRESENT_ILLNESS = "History of Present Illness"
    PAST_MEDICAL_HISTORY = "Past Medical History"
    SOCIAL_HISTORY = "Social History"
    FAMILY_HISTORY = "Family History"
    PHYSICAL_EXAM = "Physical Exam"
    PERTINENT_RESULTS = "Pertinent Results"
    BRIEF_HOSPITAL_COURSE = "Brief Hospital Course"
    MEDICATIONS_ON_ADMISSION = "Medications on Admission"
    DISCHARGE_MEDICATIONS = "Discharge Medications"
    DISCHARGE_DISPOSITION = "Discharge Disposition"
    DISCHARGE_DIAGNOSIS = "Discharge Diagnosis"
    DISCHARGE_CONDITION = "Discharge Condition"
    DISCHARGE_INSTRUCTIONS = "Discharge Instructions"

    @property
    def is_target(self) -> bool:
        """True for the two sections the pipeline generates rather than reads."""
        return self in (SectionName.BRIEF_HOSPITAL_COURSE, SectionName.DISCHARGE_INSTRUCTIONS)

    @property
    def order(self) -> int:
        return _ORDER[self]


_ORDER = {name: i for i, name in enumerate(SectionName)}

INPUT_SECTIONS = tuple(s for s in SectionName if not s.is_target)

_BY_CANONICAL = {s.value.lower(): s for s in SectionName}


@dataclass(frozen=True)
class SectionEntry:
    """One occurrence of a section in a parsed summary.

    ``header_start:body_start`` spans the header text (name plus colon) in the
    source; ``body_start:body_end`` spans the untrimmed body.  ``body`` is the
    trimmed view used everywhere downstream.
    """

    name: SectionName
    occurrence: int
    body: str
    header_start: int
    body_start: int
    body_end: int


@dataclass(frozen=True)
class ParsedSummary:
    """Ordered section occurrences plus everything the grammar did not claim."""

    source: str
    unmatched_prefix: str
    entries: tuple[SectionEntry, ...]

    @property
    def sections(self) -> dict[SectionName, str]:
        """First-occurrence body per section, in document order."""
        out: dict[SectionName, str] = {}
        for e in self.entries:
            if e.name not in out:
                out[e.name] = e.body
        return out

    def bodies(self, name: SectionName) -> list[str]:
        """All occurrence bodies for a section, in document order."""
        return [e.body for e in self.entries if e.name == name]

    def __contains__(self, name: SectionName) -> bool:
        return any(e.name == name for e in self.entries)

    def reconstruct(self) -> str:
        """Reassemble the source from the prefix and the untrimmed spans."""
        parts = [self.unmatched_prefix]
        for e in self.entries:
            parts.append(self.source[e.header_start : e.body_start])
            parts.append(self.source[e.body_start : e.body_end])
        return "".join(parts)


def load_aliases(path: str | Path) -> dict[str, SectionName]:
    """Read an alias table of ``alias: Canonical Name`` lines.

    Blank lines and lines starting with ``#`` are ignored.  The canonical side
    must be one of the 16 known names.
    """
    aliases: dict[str, SectionName] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise SchemaError(f"{path}: line {lineno}: expected 'alias: Canonical Name'")
        alias, target = (part.strip() for part in line.split(":", 1))
        canonical = _BY_CANONICAL.get(target.lower())
        if canonical is None:
            raise SchemaError(f"{path}: line {lineno}: unknown section {target!r}")
        aliases[alias] = canonical
    return aliases


@lru_cache(maxsize=8)
def _header_pattern(alias_items: tuple[tuple[str, str], ...]) -> re.Pattern:
    names = [s.value for s in SectionName] + [alias for alias, _ in alias_items]
    # Longest alternative first so an alias can't shadow a longer canonical name.
    alternation = "|".join(re.escape(n) for n in sorted(names, key=len, reverse=True))
    return re.compile(
        rf"^[ \t]{{0,3}}(?P<name>{alternation})[ \t]*:",
        re.IGNORECASE | re.MULTILINE,
    )


def _trim(body: str) -> str:
    return body.strip()


def parse_summary(text: str, aliases: dict[str, SectionName] | None = None) -> ParsedSummary:
    """Segment a discharge summary into canonical sections.

    Args:
        text: the raw summary; must be nonempty.
        aliases: optional extra header spellings mapping to canonical names
            (loaded via :func:`load_aliases`); canonical names always match.

    Returns:
        A :class:`ParsedSummary` whose spans tile the source exactly: the
        unmatched prefix, then alternating header and body spans.  A note with
        no recognized headers comes back with all text in the prefix.
    """
    if not text:
        raise ValueError("parse_summary: text must be nonempty")
    aliases = aliases or {}
    lookup = dict(_BY_CANONICAL)
    for alias, target in aliases.items():
        lookup[alias.lower()] = target
    pattern = _header_pattern(tuple(sorted((a, t.value) for a, t in aliases.items())))

    matches = list(pattern.finditer(text))
    if not matches:
        return ParsedSummary(source=text, unmatched_prefix=text, entries=())

    entries: list[SectionEntry] = []
    occurrences: dict[SectionName, int] = {}
    for i, m in enumerate(matches):
        name = lookup[m.group("name").lower()]
        body_start = m.end()
        body_end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        occ = occurrences.get(name, 0)
        occurrences[name] = occ + 1
        entries.append(
            SectionEntry(
                name=name,
                occurrence=occ,
                body=_trim(text[body_start:body_end]),
                header_start=m.start(),
                body_start=body_start,
                body_end=body_end,
            )
        )
    return ParsedSummary(
        source=text,
        unmatched_prefix=text[: matches[0].start()],
        entries=tuple(entries),
    )


def extract_section(parsed: ParsedSummary, name: SectionName) -> str | None:
    """First-occurrence body of a section, or None when absent."""
    for e in parsed.entries:
        if e.name == name:
            return e.body
    return None


def input_bundle(parsed: ParsedSummary) -> list[tuple[SectionName, str]]:
    """The non-target sections present, first occurrences, in canonical order."""
    present = parsed.sections
    return [(name, present[name]) for name in INPUT_SECTIONS if name in present]


def coverage_stats(
    corpus: Corpus, aliases: dict[str, SectionName] | None = None
) -> dict[SectionName, dict[str, float]]:
    """Fraction of records per split whose parse contains each section.

    Splits with no records are omitted from the inner maps rather than
    reported as NaN.
    """
    if len(corpus) == 0:
        raise ValueError("coverage_stats: corpus is empty")
    totals = {s: 0 for s in SPLITS}
    hits = {name: {s: 0 for s in SPLITS} for name in SectionName}
    for record in corpus:
        totals[record.split] += 1
        parsed = parse_summary(record.text, aliases)
        for name in parsed.sections:
            hits[name][record.split] += 1
    return {
        name: {
            split: hits[name][split] / totals[split]
            for split in SPLITS
            if totals[split] > 0
        }
        for name in SectionName
    }


def coverage_csv(stats: dict[SectionName, dict[str, float]]) -> str:
    """Render coverage stats as CSV, sections as rows and splits as columns."""
    splits = [s for s in SPLITS if any(s in row for row in stats.values())]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["section"] + splits)
    for name in SectionName:
        row = stats.get(name, {})
        writer.writerow([name.value] + [f"{row[s]:.9f}" if s in row else "" for s in splits])
    return buf.getvalue()
