"""dischargekit: parse, prepare, generate, and score discharge-summary target sections."""

from .corpus import (
    Corpus,
    DischargeRecord,
    RadiologyReport,
    load_discharge,
    load_radiology,
    split_summary,
)
from .sections import (
    ParsedSummary,
    SectionName,
    coverage_stats,
    extract_section,
    input_bundle,
    parse_summary,
)
from .radiology import (
    ImpressionMatch,
    SelectionConfig,
    containment_similarity,
    extract_impression,
    select_reports,
)
from .prompts import (
    GenerationTask,
    PromptBundle,
    PromptVariant,
    QuestionGroup,
    build_prompt,
    questionnaire,
)
from .preprocess import (
    FilterReport,
    TrainingConfigStub,
    export_jsonl,
    iqr_bounds,
    select_training,
)
from .client import EndpointConfig, GenerationResult, generate, run_batch, run_pipeline
from .metrics import bleu4, bleu4_corpus, meteor, rouge_l, rouge_n, tokenize
from .scoring import MetricReport, evaluate_samples, external_score, length_stats, overall

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "DischargeRecord",
    "RadiologyReport",
    "load_discharge",
    "load_radiology",
    "split_summary",
    "ParsedSummary",
    "SectionName",
    "coverage_stats",
    "extract_section",
    "input_bundle",
    "parse_summary",
    "ImpressionMatch",
    "SelectionConfig",
    "containment_similarity",
    "extract_impression",
    "select_reports",
    "GenerationTask",
    "PromptBundle",
    "PromptVariant",
    "QuestionGroup",
    "build_prompt",
    "questionnaire",
    "FilterReport",
    "TrainingConfigStub",
    "export_jsonl",
    "iqr_bounds",
    "select_training",
    "EndpointConfig",
    "GenerationResult",
    "generate",
    "run_batch",
    "run_pipeline",
    "bleu4",
    "bleu4_corpus",
    "meteor",
    "rouge_l",
    "rouge_n",
    "tokenize",
    "MetricReport",
    "evaluate_samples",
    "external_score",
    "length_stats",
    "overall",
    "__version__",
]
