"""Batch generation against a chat-completion HTTP endpoint.

The wire format is the de-facto open-inference-server interface: POST
``{base_url}/chat/completions`` with ``{model, messages, temperature,
max_tokens}``, reply ``{choices: [{message: {content}}]}``.  Generation for an
admission is strictly two-stage: the Brief Hospital Course result feeds the
Discharge Instructions prompt.  Batches journal results incrementally and can
resume after a crash without re-requesting completed admissions.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import tempfile
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

import requests

from .corpus import Corpus, DischargeRecord, RadiologyReport
from .errors import EndpointError
from .preprocess import reference_target
from .prompts import (
    GenerationTask,
    PromptBundle,
    PromptTemplates,
    PromptVariant,
    build_prompt,
    DEFAULT_TOKEN_BUDGET,
)
from .radiology import SelectionConfig, select_reports, substitute_pertinent_results
from .sections import input_bundle, parse_summary

log = logging.getLogger(__name__)

API_KEY_ENV = "DISCHARGEKIT_API_KEY"

STATUS_OK = "ok"
STATUS_FAILED = "failed"
STATUS_TRUNCATED = "truncated"


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str = "mistral-7b-instruct"
    api_key: str | None = None
    max_new_tokens: int = 1024
    temperature: float = 0.0
    request_timeout: float = 120.0
    max_retries: int = 3
    max_concurrency: int = 4

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")

    def resolved_api_key(self) -> str | None:
        return self.api_key or os.environ.get(API_KEY_ENV)

    @property
    def completions_url(self) -> str:
        return self.base_url.rstrip("/") + "/chat/completions"


@dataclass(frozen=True)
class GenerationResult:
    hadm_id: str
    task: GenerationTask
    prompt_hash: str
    output_text: str
    latency_ms: float
    attempts: int
    status: str
    error: str | None = None

    def journal_entry(self) -> dict:
        # latency is wall-clock noise; keeping it out of the journal makes
        # batch output byte-identical across reruns and concurrency levels.
        return {
            "hadm_id": self.hadm_id,
            "task": self.task.value,
            "prompt_hash": self.prompt_hash,
            "status": self.status,
            "attempts": self.attempts,
            "output_text": self.output_text,
            "error": self.error,
        }


def prompt_digest(rendered: str) -> str:
    return hashlib.sha256(rendered.encode("utf-8")).hexdigest()


def probe_endpoint(config: EndpointConfig) -> None:
    """Cheap reachability check; any HTTP response counts as reachable."""
    url = config.base_url.rstrip("/") + "/models"
    try:
        requests.get(url, timeout=min(config.request_timeout, 10.0))
    except requests.RequestException as exc:
        raise EndpointError(f"endpoint unreachable at {config.base_url}: {exc}") from exc


def generate(
    prompt: PromptBundle,
    config: EndpointConfig,
    hadm_id: str = "",
) -> GenerationResult:
    """Send one single-turn chat request, retrying transient failures.

    Transport errors, HTTP 5xx and 429 are retried with exponential backoff
    (base 1s, factor 2, full jitter) up to max_retries; other 4xx fail fast.
    """
    body = {
        "model": config.model_name,
        "messages": [{"role": "user", "content": prompt.rendered}],
        "temperature": config.temperature,
        "max_tokens": config.max_new_tokens,
    }
    headers = {}
    key = config.resolved_api_key()
    if key:
        headers["Authorization"] = f"Bearer {key}"

    digest = prompt_digest(prompt.rendered)
    start = time.monotonic()

    def result(status: str, text: str = "", attempts: int = 1, error: str | None = None):
        return GenerationResult(
            hadm_id=hadm_id,
            task=prompt.task,
            prompt_hash=digest,
            output_text=text,
            latency_ms=(time.monotonic() - start) * 1000.0,
            attempts=attempts,
            status=status,
            error=error,
        )

    last_error = "no attempt made"
    attempts = 0
    for attempt in range(config.max_retries + 1):
        attempts += 1
        retryable = True
        try:
            resp = requests.post(
                config.completions_url, json=body, headers=headers, timeout=config.request_timeout
            )
        except requests.RequestException as exc:
            last_error = f"transport: {exc}"
        else:
            if 200 <= resp.status_code < 300:
                try:
                    data = resp.json()
                    choice = data["choices"][0]
                    text = choice["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    return result(STATUS_FAILED, attempts=attempts, error=f"malformed response: {exc}")
                if not text:
                    return result(STATUS_FAILED, attempts=attempts, error="empty completion")
                status = (
                    STATUS_TRUNCATED if choice.get("finish_reason") == "length" else STATUS_OK
                )
                return result(status, text=text, attempts=attempts)
            last_error = f"HTTP {resp.status_code}"
            retryable = resp.status_code >= 500 or resp.status_code == 429
        if not retryable:
            return result(STATUS_FAILED, attempts=attempts, error=last_error)
        if attempt < config.max_retries:
            time.sleep(random.uniform(0, 2**attempt))
    return result(STATUS_FAILED, attempts=attempts, error=last_error)


def run_pipeline(
    record: DischargeRecord,
    reports: list[RadiologyReport] | tuple[RadiologyReport, ...],
    variant: PromptVariant,
    config: EndpointConfig,
    selection: SelectionConfig = SelectionConfig(),
    templates: dict[GenerationTask, PromptTemplates] | None = None,
    token_budget: int = DEFAULT_TOKEN_BUDGET,
) -> tuple[GenerationResult, GenerationResult]:
    """Generate both target sections for one admission, BHC first.

    The generated BHC feeds the DI prompt.  If BHC generation fails, the DI
    prompt falls back to the record's reference BHC when one exists; otherwise
    DI is marked failed with the upstream cause.
    """
    parsed = parse_summary(record.text)
    matches = select_reports(record, parsed, reports, selection)
    blocks = substitute_pertinent_results(parsed, matches, selection)
    sections = input_bundle(parsed)
    templates = templates or {}

    bhc_bundle = build_prompt(
        GenerationTask.BHC,
        variant,
        sections,
        radiology=blocks,
        templates=templates.get(GenerationTask.BHC),
        token_budget=token_budget,
    )
    bhc = generate(bhc_bundle, config, hadm_id=record.hadm_id)

    prior = bhc.output_text if bhc.status != STATUS_FAILED and bhc.output_text else None
    if prior is None:
        prior = reference_target(record, GenerationTask.BHC, parsed)
    if prior is None:
        di = GenerationResult(
            hadm_id=record.hadm_id,
            task=GenerationTask.DI,
            prompt_hash="",
            output_text="",
            latency_ms=0.0,
            attempts=0,
            status=STATUS_FAILED,
            error="upstream",
        )
        return bhc, di

    di_bundle = build_prompt(
        GenerationTask.DI,
        variant,
        sections,
        radiology=blocks,
        prior_bhc=prior,
        templates=templates.get(GenerationTask.DI),
        token_budget=token_budget,
    )
    di = generate(di_bundle, config, hadm_id=record.hadm_id)
    return bhc, di


_TASK_FILE_ORDER = {GenerationTask.BHC.value: 0, GenerationTask.DI.value: 1}


def load_journal(path: str | Path) -> dict[tuple[str, str], dict]:
    """Read a results journal, tolerating a torn final line after a crash."""
    entries: dict[tuple[str, str], dict] = {}
    path = Path(path)
    if not path.exists():
        return entries
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
                key = (entry["hadm_id"], entry["task"])
            except (json.JSONDecodeError, KeyError, TypeError):
                log.warning("%s: skipping unreadable journal line %d", path, lineno)
                continue
            entries[key] = entry
    return entries


def completed_admissions(entries: dict[tuple[str, str], dict]) -> set[str]:
    """Admissions whose BHC and DI entries are both journaled as ok."""
    done = set()
    for hadm_id in {k[0] for k in entries}:
        statuses = {
            task: entries.get((hadm_id, task), {}).get("status")
            for task in _TASK_FILE_ORDER
        }
        if all(s == STATUS_OK for s in statuses.values()):
            done.add(hadm_id)
    return done


def _rewrite_sorted(path: Path, entries: dict[tuple[str, str], dict]) -> None:
    ordered = sorted(entries, key=lambda k: (k[0], _TASK_FILE_ORDER.get(k[1], 9)))
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        for key in ordered:
            fh.write(json.dumps(entries[key], ensure_ascii=False, sort_keys=True) + "\n")
    os.replace(tmp, path)


def run_batch(
    corpus: Corpus,
    variant: PromptVariant,
    config: EndpointConfig,
    out: str | Path,
    selection: SelectionConfig = SelectionConfig(),
    templates: dict[GenerationTask, PromptTemplates] | None = None,
    token_budget: int = DEFAULT_TOKEN_BUDGET,
) -> dict:
    """Run the two-stage pipeline over a corpus with bounded parallelism.

    Results append to the journal as admissions finish, so a killed run loses
    at most its in-flight work.  On rerun, admissions already journaled with
    both stages ok are skipped.  The journal is finally rewritten sorted by
    hadm_id (BHC line before DI) so output is independent of completion order.

    Returns summary counts: admissions, resumed, processed, and per-status
    result counts.
    """
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    existing = load_journal(out)
    done = completed_admissions(existing)
    pending = [r for r in corpus if r.hadm_id not in done]

    processed: dict[tuple[str, str], dict] = {}
    if pending:
        with out.open("a", encoding="utf-8") as journal:
            with ThreadPoolExecutor(max_workers=config.max_concurrency) as pool:
                futures = {
                    pool.submit(
                        run_pipeline,
                        record,
                        corpus.reports_for(record.hadm_id),
                        variant,
                        config,
                        selection,
                        templates,
                        token_budget,
                    ): record
                    for record in pending
                }
                for future in as_completed(futures):
                    record = futures[future]
                    try:
                        bhc, di = future.result()
                    except Exception as exc:  # record the failure, keep going
                        log.exception("admission %s failed", record.hadm_id)
                        bhc, di = (
                            GenerationResult(
                                hadm_id=record.hadm_id,
                                task=task,
                                prompt_hash="",
                                output_text="",
                                latency_ms=0.0,
                                attempts=0,
                                status=STATUS_FAILED,
                                error=f"pipeline: {exc}",
                            )
                            for task in (GenerationTask.BHC, GenerationTask.DI)
                        )
                    for res in (bhc, di):
                        entry = res.journal_entry()
                        processed[(res.hadm_id, res.task.value)] = entry
                        journal.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")
                    journal.flush()

    merged = dict(existing)
    merged.update(processed)
    _rewrite_sorted(out, merged)

    status_counts = Counter(
        f"{key[1]}_{entry['status']}" for key, entry in merged.items()
    )
    return {
        "admissions": len(corpus),
        "resumed": len(done),
        "processed": len(pending),
        **dict(sorted(status_counts.items())),
    }
