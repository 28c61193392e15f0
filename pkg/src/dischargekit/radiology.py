"""Selection of radiology-report impressions to stand in for Pertinent Results.

Pertinent Results sections are cluttered with raw lab and imaging output, while
the impressions of the admission's radiology reports state the same diagnoses
succinctly and are frequently copied into Pertinent Results wholesale.  This
module scores that duplication with an asymmetric n-gram containment measure
and picks the reports worth substituting.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .corpus import DischargeRecord, RadiologyReport
from .sections import ParsedSummary, SectionName, extract_section

_IMPRESSION_RE = re.compile(r"^[ \t]{0,3}IMPRESSION[ \t]*:", re.IGNORECASE | re.MULTILINE)
# An all-caps line ending in a colon ends the impression (e.g. FINDINGS:, COMPARISON:).
_CAPS_HEADER_RE = re.compile(r"^[ \t]{0,3}[A-Z][A-Z0-9 /()&+,.-]*:", re.MULTILINE)

_TOKEN_RE = re.compile(r"[a-z0-9]+")

FALLBACK_TOKEN_LIMIT = 2000


@dataclass(frozen=True)
class SelectionConfig:
    """Knobs for report selection; exposed as --rr-* CLI flags."""

    threshold: float = 0.5
    max_reports: int = 5
    ngram_order: int = 1

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0,1], got {self.threshold}")
        if self.max_reports < 1:
            raise ValueError(f"max_reports must be >= 1, got {self.max_reports}")
        if self.ngram_order < 1:
            raise ValueError(f"ngram_order must be >= 1, got {self.ngram_order}")


@dataclass(frozen=True)
class ImpressionMatch:
    """A scored radiology report: selected means it feeds the prompt payload."""

    note_id: str
    similarity: float
    impression: str
    selected: bool


def extract_impression(report_text: str) -> str | None:
    """Body of the first IMPRESSION: header, up to the next all-caps header.

    Returns None when the report has no IMPRESSION header; the body is trimmed
    of surrounding blank space.
    """
    m = _IMPRESSION_RE.search(report_text)
    if m is None:
        return None
    rest = report_text[m.end() :]
    boundary = _CAPS_HEADER_RE.search(rest)
    body = rest[: boundary.start()] if boundary else rest
    return body.strip()


def normalize_tokens(text: str) -> list[str]:
    """Lowercased alphanumeric tokens; punctuation and ___ placeholders drop out."""
    return _TOKEN_RE.findall(text.lower())


def _distinct_ngrams(tokens: list[str], n: int) -> set[tuple[str, ...]]:
    return {tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)}


def containment_similarity(impression: str, pertinent_results: str, ngram_order: int = 1) -> float:
    """Fraction of the impression's distinct n-grams found in Pertinent Results.

    Asymmetric on purpose: impressions get duplicated *inside* Pertinent
    Results, so containment of the impression is the right direction.  An
    impression with no n-grams scores 0.
    """
    if ngram_order < 1:
        raise ValueError(f"ngram_order must be >= 1, got {ngram_order}")
    imp = _distinct_ngrams(normalize_tokens(impression), ngram_order)
    if not imp:
        return 0.0
    ref = _distinct_ngrams(normalize_tokens(pertinent_results), ngram_order)
    return len(imp & ref) / len(imp)


def select_reports(
    record: DischargeRecord,
    parsed: ParsedSummary,
    reports: list[RadiologyReport] | tuple[RadiologyReport, ...],
    config: SelectionConfig = SelectionConfig(),
) -> list[ImpressionMatch]:
    """Score and rank an admission's radiology reports against Pertinent Results.

    All reports are scored; the result is sorted by similarity descending with
    ties broken by note_id ascending.  At most ``max_reports`` reports at or
    above the threshold are marked selected.  When the summary has no Pertinent
    Results section every similarity is 0 and the first ``max_reports`` by
    note_id are selected instead, so the pipeline never drops imaging context.
    """
    pertinent = extract_section(parsed, SectionName.PERTINENT_RESULTS)
    scored = []
    for report in reports:
        impression = extract_impression(report.text) or ""
        similarity = (
            containment_similarity(impression, pertinent, config.ngram_order)
            if pertinent is not None
            else 0.0
        )
        scored.append((report.note_id, similarity, impression))
    scored.sort(key=lambda t: (-t[1], t[0]))

    matches = []
    selected_count = 0
    for note_id, similarity, impression in scored:
        if pertinent is None:
            selected = selected_count < config.max_reports
        else:
            selected = similarity >= config.threshold and selected_count < config.max_reports
        if selected:
            selected_count += 1
        matches.append(
            ImpressionMatch(
                note_id=note_id,
                similarity=similarity,
                impression=impression,
                selected=selected,
            )
        )
    return matches


def _cut_at_token(text: str, limit: int) -> str:
    """Slice text at the end of its limit-th whitespace token, preserving layout."""
    for i, m in enumerate(re.finditer(r"\S+", text), start=1):
        if i == limit:
            return text[: m.end()]
    return text


def substitute_pertinent_results(
    parsed: ParsedSummary,
    matches: list[ImpressionMatch],
    config: SelectionConfig = SelectionConfig(),
) -> list[tuple[str, str]]:
    """Labeled payload blocks replacing the Pertinent Results section.

    Selected impressions are emitted one block per report, labeled with the
    report id.  When nothing was selected, the raw Pertinent Results section is
    kept, cut to its first ``FALLBACK_TOKEN_LIMIT`` whitespace tokens, so the
    prompt never silently loses lab context.  Labels are never canonical
    section names.
    """
    blocks = [
        (f"Radiology Impression (report {m.note_id})", m.impression)
        for m in matches
        if m.selected and m.impression
    ]
    if blocks:
        return blocks
    pertinent = extract_section(parsed, SectionName.PERTINENT_RESULTS)
    if pertinent is None:
        return []
    return [
        (
            f"Pertinent Results (first {FALLBACK_TOKEN_LIMIT} words)",
            _cut_at_token(pertinent, FALLBACK_TOKEN_LIMIT),
        )
    ]
