"""Corpus-level scoring: native lexical metrics, adapter-mediated model
metrics, the cross-task aggregate, and reference length statistics.

Model-based scorers (BERTScore, AlignScore, MEDCON) stay out of process: an
adapter is a subprocess or HTTP endpoint that receives
``{"metric", "pairs": [{"id", "candidate", "reference"}]}`` and replies
``{"scores": [{"id", "score"}]}``.  An adapter that cannot run leaves its
metric absent from the report; it is never faked.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import statistics
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import requests

from .errors import AdapterProtocolError
from .metrics import bleu4, meteor, rouge_l, rouge_n, tokenize
from .prompts import GenerationTask

log = logging.getLogger(__name__)

METRIC_KEYS = ("rouge1", "rouge2", "rougeL", "bleu", "bertscore", "meteor", "alignscore", "medcon")
LEXICAL_KEYS = ("rouge1", "rouge2", "rougeL", "bleu", "meteor")
ADAPTER_KEYS = ("bertscore", "alignscore", "medcon")

# Column headers used in report files, in the shared leaderboard layout.
METRIC_COLUMNS = {
    "rouge1": "R-1",
    "rouge2": "R-2",
    "rougeL": "R-L",
    "bleu": "BLEU",
    "bertscore": "BERTScore",
    "meteor": "Meteor",
    "alignscore": "AlignScore",
    "medcon": "MEDCON",
}


@dataclass(frozen=True)
class AdapterSpec:
    """How to reach one external scorer: a command line or an HTTP endpoint."""

    command: tuple[str, ...] | None = None
    url: str | None = None
    timeout: float = 300.0

    def __post_init__(self):
        if (self.command is None) == (self.url is None):
            raise ValueError("adapter spec needs exactly one of command or url")


def load_adapters(path) -> dict[str, AdapterSpec]:
    """Read an adapter config file: JSON mapping metric name to spec."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    adapters = {}
    for metric, spec in raw.items():
        if metric not in ADAPTER_KEYS:
            raise AdapterProtocolError(f"unknown adapter metric {metric!r}")
        adapters[metric] = AdapterSpec(
            command=tuple(spec["command"]) if "command" in spec else None,
            url=spec.get("url"),
            timeout=float(spec.get("timeout", 300.0)),
        )
    return adapters


@dataclass(frozen=True)
class EvalSample:
    hadm_id: str
    task: GenerationTask
    candidate: str
    reference: str


def _parse_adapter_reply(raw: str, expected_ids: list[str]) -> list[float]:
    excerpt = raw[:200]
    try:
        reply = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise AdapterProtocolError(f"adapter reply is not JSON: {excerpt!r}") from exc
    scores = reply.get("scores")
    if not isinstance(scores, list):
        raise AdapterProtocolError(f"adapter reply lacks a scores list: {excerpt!r}")
    if len(scores) != len(expected_ids):
        raise AdapterProtocolError(
            f"adapter returned {len(scores)} scores for {len(expected_ids)} pairs: {excerpt!r}"
        )
    by_id = {}
    for entry in scores:
        if not isinstance(entry, dict) or "id" not in entry or "score" not in entry:
            raise AdapterProtocolError(f"malformed score entry: {excerpt!r}")
        by_id[str(entry["id"])] = float(entry["score"])
    missing = [i for i in expected_ids if i not in by_id]
    if missing:
        raise AdapterProtocolError(f"adapter reply missing ids {missing[:5]}: {excerpt!r}")
    out = [by_id[i] for i in expected_ids]
    bad = [s for s in out if not 0.0 <= s <= 1.0]
    if bad:
        raise AdapterProtocolError(f"adapter scores outside [0,1]: {bad[:5]}")
    return out


def external_score(
    metric: str,
    pairs: list[tuple[str, str, str]],
    spec: AdapterSpec,
) -> list[float] | None:
    """Score (id, candidate, reference) pairs through one adapter.

    Returns None when the adapter is unavailable (missing command, nonzero
    exit, unreachable endpoint, HTTP >= 400); raises AdapterProtocolError when
    it answers but breaks the reply contract.
    """
    request = json.dumps(
        {
            "metric": metric,
            "pairs": [{"id": i, "candidate": c, "reference": r} for i, c, r in pairs],
        }
    )
    ids = [i for i, _, _ in pairs]
    if spec.command is not None:
        try:
            proc = subprocess.run(
                list(spec.command),
                input=request,
                capture_output=True,
                text=True,
                timeout=spec.timeout,
            )
        except (FileNotFoundError, subprocess.TimeoutExpired) as exc:
            log.warning("adapter %s unavailable: %s", metric, exc)
            return None
        if proc.returncode != 0:
            log.warning("adapter %s exited %d: %s", metric, proc.returncode, proc.stderr[:200])
            return None
        return _parse_adapter_reply(proc.stdout, ids)
    try:
        resp = requests.post(spec.url, data=request, timeout=spec.timeout)
    except requests.RequestException as exc:
        log.warning("adapter %s unreachable: %s", metric, exc)
        return None
    if resp.status_code >= 400:
        log.warning("adapter %s returned HTTP %d", metric, resp.status_code)
        return None
    return _parse_adapter_reply(resp.text, ids)


@dataclass
class MetricReport:
    """Per-sample scores and aggregates for up to the eight shared metrics."""

    per_sample: dict[str, dict[tuple[str, str], float]]
    task_means: dict[str, dict[str, float]]
    present_metrics: tuple[str, ...]
    missing_metrics: tuple[str, ...]

    def metric_means(self) -> dict[str, float]:
        """Per-metric value after averaging the metric across tasks."""
        out = {}
        for metric in self.present_metrics:
            values = [
                means[metric] for means in self.task_means.values() if metric in means
            ]
            if values:
                out[metric] = sum(values) / len(values)
        return out


def overall(report: MetricReport) -> float:
    """The leaderboard-style aggregate: mean of the per-metric cross-task means.

    Computed over whichever of the eight metrics are present; degraded
    coverage is visible via ``report.missing_metrics``.
    """
    means = report.metric_means()
    if not means:
        raise ValueError("overall: no metrics present in report")
    return sum(means.values()) / len(means)


def evaluate_samples(
    samples: list[EvalSample],
    adapters: dict[str, AdapterSpec] | None = None,
) -> MetricReport:
    """Score candidate/reference pairs with every available metric.

    Lexical metrics always run; adapter metrics run when configured and
    reachable.  ROUGE scores are reported as F1.
    """
    adapters = adapters or {}
    per_sample: dict[str, dict[tuple[str, str], float]] = {m: {} for m in METRIC_KEYS}
    for s in samples:
        key = (s.hadm_id, s.task.value)
        cand = tokenize(s.candidate)
        ref = tokenize(s.reference)
        per_sample["rouge1"][key] = rouge_n(cand, ref, 1)[2]
        per_sample["rouge2"][key] = rouge_n(cand, ref, 2)[2]
        per_sample["rougeL"][key] = rouge_l(cand, ref)[2]
        per_sample["bleu"][key] = bleu4(cand, [ref])
        per_sample["meteor"][key] = meteor(cand, ref)

    for metric in ADAPTER_KEYS:
        if metric not in adapters or not samples:
            continue
        pairs = [(f"{s.hadm_id}:{s.task.value}", s.candidate, s.reference) for s in samples]
        scores = external_score(metric, pairs, adapters[metric])
        if scores is None:
            continue
        for s, score in zip(samples, scores):
            per_sample[metric][(s.hadm_id, s.task.value)] = score

    task_means: dict[str, dict[str, float]] = {}
    for task in GenerationTask:
        keys = [(s.hadm_id, s.task.value) for s in samples if s.task is task]
        if not keys:
            continue
        means = {}
        for metric in METRIC_KEYS:
            values = [per_sample[metric][k] for k in keys if k in per_sample[metric]]
            if values:
                means[metric] = sum(values) / len(values)
        task_means[task.value] = means

    present = tuple(
        m for m in METRIC_KEYS if any(m in means for means in task_means.values())
    )
    missing = tuple(m for m in METRIC_KEYS if m not in present)
    return MetricReport(
        per_sample={m: per_sample[m] for m in METRIC_KEYS},
        task_means=task_means,
        present_metrics=present,
        missing_metrics=missing,
    )


def per_sample_csv(report: MetricReport) -> str:
    """Per-sample scores as CSV in the leaderboard column layout."""
    keys = sorted({k for scores in report.per_sample.values() for k in scores})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["hadm_id", "task"] + [METRIC_COLUMNS[m] for m in METRIC_KEYS])
    for key in keys:
        row = [key[0], key[1]]
        for metric in METRIC_KEYS:
            score = report.per_sample[metric].get(key)
            row.append("" if score is None else f"{score:.6f}")
        writer.writerow(row)
    return buf.getvalue()


def aggregate_json(report: MetricReport) -> str:
    """Aggregate scores plus a coverage note as a JSON document."""
    means = report.metric_means()
    doc = {
        "task_means": report.task_means,
        "metric_means": means,
        "overall": (sum(means.values()) / len(means)) if means else None,
        "metrics_present": list(report.present_metrics),
        "metrics_missing": list(report.missing_metrics),
        "coverage_note": (
            "overall averages all eight metrics"
            if not report.missing_metrics
            else "overall computed over present metrics only; missing: "
            + ", ".join(report.missing_metrics)
        ),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


class LengthStats(NamedTuple):
    min: int
    median: int
    mean: float
    max: int


def length_stats(texts: list[str]) -> LengthStats:
    """Whitespace word-count summary; the median is the lower order statistic."""
    if not texts:
        raise ValueError("length_stats: empty input")
    counts = sorted(len(t.split()) for t in texts)
    n = len(counts)
    return LengthStats(
        min=counts[0],
        median=counts[(n - 1) // 2],
        mean=statistics.fmean(counts),
        max=counts[-1],
    )


def length_histogram(texts: list[str], bin_width: int = 50) -> list[tuple[int, int]]:
    """Word-count histogram bins [lo, lo+bin_width) for distribution plots."""
    if bin_width < 1:
        raise ValueError("bin_width must be >= 1")
    counts: dict[int, int] = {}
    for t in texts:
        lo = (len(t.split()) // bin_width) * bin_width
        counts[lo] = counts.get(lo, 0) + 1
    return sorted(counts.items())
