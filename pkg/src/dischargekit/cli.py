"""Command-line entry point exposing the pipeline as composable subcommands.

Stages communicate through files so each can be rerun independently:
``parse`` and ``stats`` inspect a corpus, ``select-radiology`` scores report
impressions, ``prepare`` exports instruction-tuning data, ``generate`` drives
an endpoint, and ``evaluate`` scores outputs against references.

Exit codes: 0 ok, 2 input/schema error, 3 empty result, 4 endpoint
unreachable, 5 adapter protocol error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from .client import EndpointConfig, load_journal, probe_endpoint, run_batch
from .corpus import Corpus, load_discharge, load_radiology, index_reports
from .errors import AdapterProtocolError, DischargeKitError, EndpointError, SchemaError
from .preprocess import (
    TrainingConfigStub,
    export_jsonl,
    reference_target,
    select_training,
)
from .prompts import GenerationTask, PromptVariant, load_templates
from .radiology import SelectionConfig, select_reports
from .scoring import (
    EvalSample,
    aggregate_json,
    evaluate_samples,
    length_histogram,
    length_stats,
    load_adapters,
    per_sample_csv,
)
from .sections import SectionName, coverage_csv, coverage_stats, load_aliases, parse_summary

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_EMPTY = 3
EXIT_ENDPOINT = 4
EXIT_ADAPTER = 5

_SPLIT_FLAGS = (
    ("--train", "train"),
    ("--valid", "valid"),
    ("--test1", "test_phase1"),
    ("--test2", "test_phase2"),
)


def _atomic_write(path: Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(content)
    os.replace(tmp, path)


def _write_manifest(args: argparse.Namespace, inputs: list, outputs: list, started: float) -> None:
    snapshot = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in vars(args).items()
        if k != "func" and not callable(v)
    }
    doc = {
        "subcommand": args.subcommand,
        "inputs": [str(p) for p in inputs if p],
        "outputs": [str(p) for p in outputs],
        "config": snapshot,
        "version": __version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
        "ended": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    for out in outputs:
        _atomic_write(Path(str(out) + ".manifest.json"), json.dumps(doc, indent=2) + "\n")


def _selection_config(args: argparse.Namespace) -> SelectionConfig:
    return SelectionConfig(
        threshold=args.rr_threshold,
        max_reports=args.rr_max,
        ngram_order=args.rr_ngram,
    )


def _templates(args: argparse.Namespace):
    return load_templates(args.prompt_dir) if getattr(args, "prompt_dir", None) else None


def _load_corpus_single(args: argparse.Namespace) -> Corpus:
    records = load_discharge(args.input, args.split)
    reports = load_radiology(args.radiology) if getattr(args, "radiology", None) else []
    return Corpus.build(records, reports)


def cmd_parse(args: argparse.Namespace) -> int:
    started = time.time()
    aliases = load_aliases(args.aliases) if args.aliases else None
    records = load_discharge(args.input, args.split)
    lines = []
    for record in records:
        parsed = parse_summary(record.text, aliases)
        sections = {}
        for name in SectionName:
            bodies = parsed.bodies(name)
            if bodies:
                sections[name.value] = bodies
        lines.append(
            json.dumps(
                {
                    "hadm_id": record.hadm_id,
                    "unmatched_prefix": parsed.unmatched_prefix,
                    "sections": sections,
                },
                ensure_ascii=False,
            )
        )
    out = Path(args.out)
    _atomic_write(out, "".join(line + "\n" for line in lines))
    _write_manifest(args, [args.input], [out], started)
    print(f"parsed {len(records)} records -> {out}")
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    started = time.time()
    records = []
    inputs = []
    for flag, split in _SPLIT_FLAGS:
        path = getattr(args, split)
        if path:
            inputs.append(path)
            records.extend(load_discharge(path, split))
    corpus = Corpus.build(records)
    if len(corpus) == 0:
        print("stats: no records loaded", file=sys.stderr)
        return EXIT_EMPTY
    aliases = load_aliases(args.aliases) if args.aliases else None
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []

    coverage = coverage_stats(corpus, aliases)
    coverage_path = out_dir / "section_coverage.csv"
    _atomic_write(coverage_path, coverage_csv(coverage))
    outputs.append(coverage_path)

    rows = []
    for task in GenerationTask:
        refs = []
        for record in corpus:
            target = reference_target(record, task)
            if target:
                refs.append(target)
        if not refs:
            continue
        stats = length_stats(refs)
        rows.append([task.value, stats.min, stats.median, f"{stats.mean:.3f}", stats.max])
        hist_path = out_dir / f"{task.value}_length_histogram.csv"
        hist_lines = ["bin_start,count"] + [
            f"{lo},{n}" for lo, n in length_histogram(refs, args.bin_width)
        ]
        _atomic_write(hist_path, "\n".join(hist_lines) + "\n")
        outputs.append(hist_path)
    if rows:
        lengths_path = out_dir / "reference_lengths.csv"
        buf = ["task,min,median,mean,max"] + [",".join(str(c) for c in row) for row in rows]
        _atomic_write(lengths_path, "\n".join(buf) + "\n")
        outputs.append(lengths_path)

    _write_manifest(args, inputs, outputs, started)
    print(f"stats over {len(corpus)} records -> {out_dir}")
    return EXIT_OK


def cmd_select_radiology(args: argparse.Namespace) -> int:
    started = time.time()
    corpus = _load_corpus_single(args)
    config = _selection_config(args)
    lines = []
    for record in corpus:
        parsed = parse_summary(record.text)
        matches = select_reports(record, parsed, corpus.reports_for(record.hadm_id), config)
        lines.append(
            json.dumps(
                {
                    "hadm_id": record.hadm_id,
                    "matches": [
                        {
                            "note_id": m.note_id,
                            "similarity": round(m.similarity, 6),
                            "selected": m.selected,
                            "impression": m.impression,
                        }
                        for m in matches
                    ],
                },
                ensure_ascii=False,
            )
        )
    out = Path(args.out)
    _atomic_write(out, "".join(line + "\n" for line in lines))
    _write_manifest(args, [args.input, args.radiology], [out], started)
    print(f"scored radiology for {len(corpus)} admissions -> {out}")
    return EXIT_OK


def _parse_required_sections(raw: str | None) -> set[SectionName] | None:
    if not raw:
        return None
    by_name = {s.value.lower(): s for s in SectionName}
    sections = set()
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        name = by_name.get(part.lower())
        if name is None:
            raise SchemaError(f"unknown section name {part!r}")
        sections.add(name)
    return sections


def cmd_prepare(args: argparse.Namespace) -> int:
    started = time.time()
    records = load_discharge(args.input, args.split)
    task = GenerationTask(args.task)
    variant = PromptVariant(args.variant)
    required = _parse_required_sections(args.required_sections)
    kept, report = select_training(records, task, required)

    print(f"{'rule':<20}{'rejected':>10}")
    for rule, count in report.rejected_by.items():
        print(f"{rule:<20}{count:>10}")
    print(f"{'kept':<20}{report.kept:>10}")
    print(f"{'total':<20}{report.total_in:>10}")
    if not kept:
        print("prepare: no records kept", file=sys.stderr)
        return EXIT_EMPTY

    reports_index = None
    if args.radiology:
        reports_index = index_reports(load_radiology(args.radiology))
    stub = TrainingConfigStub(base_model_name=args.base_model)
    out = Path(args.out)
    result = export_jsonl(
        kept,
        task,
        variant,
        out,
        reports_index=reports_index,
        selection=_selection_config(args),
        templates=(_templates(args) or {}).get(task),
        stub=stub,
        stub_path=args.stub_out,
    )
    stub_path = Path(args.stub_out) if args.stub_out else out.with_suffix(".config.txt")
    _write_manifest(args, [args.input, args.radiology], [out, stub_path], started)
    print(f"exported {result.written} samples ({result.skipped} skipped) -> {out}")
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    started = time.time()
    corpus = _load_corpus_single(args)
    config = EndpointConfig(
        base_url=args.base_url,
        model_name=args.model,
        max_new_tokens=args.max_new_tokens,
        temperature=args.temperature,
        request_timeout=args.timeout,
        max_retries=args.max_retries,
        max_concurrency=args.concurrency,
    )
    probe_endpoint(config)
    summary = run_batch(
        corpus,
        PromptVariant(args.variant),
        config,
        args.out,
        selection=_selection_config(args),
        templates=_templates(args),
        token_budget=args.token_budget,
    )
    _write_manifest(args, [args.input, args.radiology], [args.out], started)
    for key, value in summary.items():
        print(f"{key:<20}{value:>10}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    started = time.time()
    entries = load_journal(args.generated)
    generated = {
        key: entry
        for key, entry in entries.items()
        if entry.get("output_text")
    }
    if not generated:
        print("evaluate: no generated outputs with text", file=sys.stderr)
        return EXIT_EMPTY

    references = {r.hadm_id: r for r in load_discharge(args.references, args.split)}
    samples = []
    mismatches = []
    for (hadm_id, task_value), entry in sorted(generated.items()):
        task = GenerationTask(task_value)
        record = references.get(hadm_id)
        target = reference_target(record, task) if record else None
        if not target:
            mismatches.append(f"{hadm_id}:{task_value}")
            continue
        samples.append(
            EvalSample(
                hadm_id=hadm_id,
                task=task,
                candidate=entry["output_text"],
                reference=target,
            )
        )
    if mismatches:
        print(
            f"evaluate: {len(mismatches)} generated ids lack references: "
            + ", ".join(mismatches[:10]),
            file=sys.stderr,
        )
        return EXIT_INPUT

    adapters = load_adapters(args.adapters) if args.adapters else None
    report = evaluate_samples(samples, adapters)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sample_path = out_dir / "per_sample.csv"
    agg_path = out_dir / "aggregates.json"
    _atomic_write(sample_path, per_sample_csv(report))
    _atomic_write(agg_path, aggregate_json(report))
    _write_manifest(args, [args.generated, args.references], [sample_path, agg_path], started)
    agg = json.loads(agg_path.read_text(encoding="utf-8"))
    print(f"scored {len(samples)} samples; overall={agg['overall']}")
    if report.missing_metrics:
        print(f"metrics absent: {', '.join(report.missing_metrics)}")
    return EXIT_OK


def _add_selection_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--rr-threshold", type=float, default=0.5, help="similarity threshold for report selection")
    sub.add_argument("--rr-max", type=int, default=5, help="max reports substituted per admission")
    sub.add_argument("--rr-ngram", type=int, default=1, help="n-gram order for containment similarity")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="dischargekit",
        description="Discharge-summary target-section pipeline",
    )
    parser.add_argument("--version", action="version", version=f"dischargekit {__version__}")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    registry: dict[str, argparse.ArgumentParser] = {}

    def new_sub(name: str, func, help_text: str) -> argparse.ArgumentParser:
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", default=None, help="key=value file of flag defaults; flags win")
        sub.set_defaults(func=func)
        registry[name] = sub
        return sub

    sub = new_sub("parse", cmd_parse, "segment summaries into canonical sections")
    sub.add_argument("--in", dest="input", required=True)
    sub.add_argument("--split", default="train")
    sub.add_argument("--aliases", default=None, help="optional header alias table")
    sub.add_argument("--out", required=True)

    sub = new_sub("stats", cmd_stats, "section coverage and reference length statistics")
    for flag, split in _SPLIT_FLAGS:
        sub.add_argument(flag, dest=split, default=None)
    sub.add_argument("--aliases", default=None)
    sub.add_argument("--bin-width", type=int, default=50)
    sub.add_argument("--out-dir", required=True)

    sub = new_sub("select-radiology", cmd_select_radiology, "score report impressions per admission")
    sub.add_argument("--in", dest="input", required=True)
    sub.add_argument("--radiology", required=True)
    sub.add_argument("--split", default="train")
    _add_selection_flags(sub)
    sub.add_argument("--out", required=True)

    sub = new_sub("prepare", cmd_prepare, "filter training samples and export tuning data")
    sub.add_argument("--in", dest="input", required=True)
    sub.add_argument("--split", default="train")
    sub.add_argument("--task", choices=[t.value for t in GenerationTask], required=True)
    sub.add_argument("--variant", choices=[v.value for v in PromptVariant], default="cot")
    sub.add_argument("--radiology", default=None)
    sub.add_argument("--required-sections", default=None, help="comma-separated canonical names")
    sub.add_argument("--base-model", default="mistral-7b-instruct")
    sub.add_argument("--prompt-dir", default=None)
    sub.add_argument("--stub-out", default=None)
    _add_selection_flags(sub)
    sub.add_argument("--out", required=True)

    sub = new_sub("generate", cmd_generate, "run two-stage generation via an endpoint")
    sub.add_argument("--in", dest="input", required=True)
    sub.add_argument("--split", default="test_phase2")
    sub.add_argument("--radiology", default=None)
    sub.add_argument("--variant", choices=[v.value for v in PromptVariant], default="cot")
    sub.add_argument("--base-url", required=True)
    sub.add_argument("--model", default="mistral-7b-instruct")
    sub.add_argument("--max-new-tokens", type=int, default=1024)
    sub.add_argument("--temperature", type=float, default=0.0)
    sub.add_argument("--timeout", type=float, default=120.0)
    sub.add_argument("--max-retries", type=int, default=3)
    sub.add_argument("--concurrency", type=int, default=4)
    sub.add_argument("--token-budget", type=int, default=8192)
    sub.add_argument("--prompt-dir", default=None)
    _add_selection_flags(sub)
    sub.add_argument("--out", required=True)

    sub = new_sub("evaluate", cmd_evaluate, "score generated sections against references")
    sub.add_argument("--generated", required=True, help="results journal from generate")
    sub.add_argument("--references", required=True, help="discharge file with reference targets")
    sub.add_argument("--split", default="test_phase2")
    sub.add_argument("--adapters", default=None, help="JSON adapter config for model-based metrics")
    sub.add_argument("--out-dir", required=True)

    return parser, registry


def _apply_config_file(argv: list[str], registry: dict[str, argparse.ArgumentParser]) -> None:
    """Install config-file values as subparser defaults; explicit flags win."""
    subcommand = next((a for a in argv if not a.startswith("-")), None)
    if subcommand not in registry:
        return
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(known.config).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SchemaError(f"{known.config}: line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()

    sub = registry[subcommand]
    by_key: dict[str, argparse.Action] = {}
    for action in sub._actions:
        by_key[action.dest] = action
        for opt in action.option_strings:
            by_key[opt.lstrip("-").replace("-", "_")] = action
    unknown = set(values) - set(by_key)
    if unknown:
        raise SchemaError(f"{known.config}: unknown keys for {subcommand}: {sorted(unknown)}")
    defaults = {}
    for key, raw in values.items():
        action = by_key[key]
        if action.type is not None:
            defaults[action.dest] = action.type(raw)
        elif isinstance(action.default, bool) or isinstance(action.const, bool):
            defaults[action.dest] = raw.lower() in ("1", "true", "yes")
        else:
            defaults[action.dest] = raw
        action.required = False  # the config file satisfied it
    sub.set_defaults(**defaults)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, registry = build_parser()
    try:
        _apply_config_file(argv, registry)
        args = parser.parse_args(argv)
        return args.func(args)
    except EndpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except AdapterProtocolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ADAPTER
    except (DischargeKitError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
