"""Shared test fixtures: synthetic corpora and a scriptable mock endpoint."""

from __future__ import annotations

import csv
import hashlib
import json
import random
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from dischargekit.sections import SectionName

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"


def build_summary(sections: list[tuple[SectionName, str]], prefix: str = "") -> str:
    """Compose a discharge summary from (section, body) pairs."""
    parts = [prefix]
    for name, body in sections:
        parts.append(f"{name.value}:\n{body}\n\n")
    return "".join(parts)


def full_summary(
    hadm_id: str = "10000001",
    overrides: dict[SectionName, str] | None = None,
    skip: set[SectionName] | None = None,
) -> str:
    """A summary containing all 16 sections with plausible bodies."""
    overrides = overrides or {}
    skip = skip or set()
    bodies = {
        SectionName.ALLERGIES: "Penicillins",
        SectionName.CHIEF_COMPLAINT: f"chest pain (case {hadm_id})",
        SectionName.MAJOR_SURGICAL_OR_INVASIVE_PROCEDURE: "None",
        SectionName.HISTORY_OF_PRESENT_ILLNESS: (
            "Ms. ___ presented with two days of intermittent chest pain"
            " radiating to the left arm, worse with exertion."
        ),
        SectionName.PAST_MEDICAL_HISTORY: "1. Hypertension\n2. Type 2 diabetes",
        SectionName.SOCIAL_HISTORY: "___",
        SectionName.FAMILY_HISTORY: "Father with myocardial infarction.",
        SectionName.PHYSICAL_EXAM: "VS: T 98.2 HR 88 BP 152/84\nGEN: no acute distress",
        SectionName.PERTINENT_RESULTS: (
            "___ 06:40AM BLOOD WBC-7.8 Hgb-12.9\n"
            "CHEST X-RAY: No acute cardiopulmonary process. Heart size is\n"
            "normal. Lungs are clear."
        ),
        SectionName.BRIEF_HOSPITAL_COURSE: (
            "Ms. ___ was admitted for evaluation of chest pain. Serial"
            " troponins were negative and a stress test showed no inducible"
            " ischemia. Home medications were continued and she was"
            " discharged in stable condition with follow-up arranged."
        ),
        SectionName.MEDICATIONS_ON_ADMISSION: "1. Lisinopril 20 mg PO DAILY",
        SectionName.DISCHARGE_MEDICATIONS: "1. Lisinopril 20 mg PO DAILY\n2. Aspirin 81 mg PO DAILY",
        SectionName.DISCHARGE_DISPOSITION: "Home",
        SectionName.DISCHARGE_DIAGNOSIS: "Atypical chest pain",
        SectionName.DISCHARGE_CONDITION: "Mental Status: Clear and coherent.",
        SectionName.DISCHARGE_INSTRUCTIONS: (
            "Dear Ms. ___,\n\nYou were admitted because of chest pain. Tests"
            " showed no evidence of a heart attack. Please continue your home"
            " medications and follow up with your doctor.\n\nYour ___ Care Team"
        ),
    }
    bodies.update(overrides)
    pairs = [(name, bodies[name]) for name in SectionName if name not in skip]
    return build_summary(pairs, prefix="Name:  ___        Unit No: ___\n\nService: MEDICINE\n\n")


RADIOLOGY_REPORT = (
    "EXAMINATION:  CHEST (PA AND LAT)\n\n"
    "INDICATION:  ___ with chest pain // eval for acute process\n\n"
    "TECHNIQUE:  Chest PA and lateral\n\n"
    "FINDINGS: \n\n"
    "Heart size is normal. Lungs are clear. No pneumothorax.\n\n"
    "IMPRESSION: \n\n"
    "No acute cardiopulmonary process. Heart size is normal. Lungs\n"
    "are clear.\n"
)


def write_discharge_csv(path: Path, rows: list[dict]) -> None:
    """Write a discharge CSV with quoted multiline text fields."""
    fields = ["hadm_id", "text"]
    for optional in ("brief_hospital_course", "discharge_instructions"):
        if any(optional in row for row in rows):
            fields.append(optional)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, quoting=csv.QUOTE_ALL)
        writer.writeheader()
        for row in rows:
            writer.writerow({f: row.get(f, "") for f in fields})


def write_radiology_csv(path: Path, rows: list[dict]) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["note_id", "hadm_id", "text"], quoting=csv.QUOTE_ALL)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def synthetic_batch_corpus(count: int, seed: int = 7) -> tuple[list[dict], list[dict]]:
    """(discharge rows, radiology rows) for batch tests; ids carry HADM markers."""
    rng = random.Random(seed)
    discharge = []
    radiology = []
    for i in range(count):
        hadm_id = f"2{i:07d}"
        text = full_summary(hadm_id=f"HADM-{hadm_id}")
        discharge.append({"hadm_id": hadm_id, "text": text})
        for rep in range(rng.randrange(0, 3)):
            radiology.append(
                {
                    "note_id": f"RR-{hadm_id}-{rep}",
                    "hadm_id": hadm_id,
                    "text": RADIOLOGY_REPORT,
                }
            )
    return discharge, radiology


class MockEndpoint:
    """Deterministic chat-completion server for tests.

    The reply to a prompt is a digest of the prompt, so output depends only on
    input.  A script of HTTP status codes can be queued to exercise retries;
    200 entries serve normally.  Every served prompt is recorded in order.
    """

    def __init__(self):
        self.lock = threading.Lock()
        self.requests: list[str] = []
        self.script: list[int] = []
        self.responder = self.digest_reply
        handler = self._make_handler()
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @staticmethod
    def digest_reply(content: str) -> str:
        return "OUT:" + hashlib.sha256(content.encode("utf-8")).hexdigest()[:16]

    @property
    def base_url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1"

    def _make_handler(self):
        endpoint = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _send_json(self, status: int, payload: dict):
                body = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                self._send_json(200, {"data": []})

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length))
                content = body["messages"][0]["content"]
                with endpoint.lock:
                    endpoint.requests.append(content)
                    status = endpoint.script.pop(0) if endpoint.script else 200
                if status != 200:
                    self._send_json(status, {"error": f"scripted {status}"})
                    return
                self._send_json(
                    200,
                    {
                        "choices": [
                            {
                                "message": {"content": endpoint.responder(content)},
                                "finish_reason": "stop",
                            }
                        ]
                    },
                )

        return Handler

    def start(self) -> "MockEndpoint":
        self.thread.start()
        return self

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def mock_endpoint():
    endpoint = MockEndpoint().start()
    yield endpoint
    endpoint.stop()


@pytest.fixture
def no_backoff(monkeypatch):
    """Suppress retry sleeps so failure-path tests stay fast."""
    import dischargekit.client as client_mod

    monkeypatch.setattr(client_mod.random, "uniform", lambda a, b: 0.0)
    monkeypatch.setattr(client_mod.time, "sleep", lambda s: None)


def fixture_admission_text() -> str:
    return (FIXTURES / "admission.txt").read_text(encoding="utf-8")


def read_golden(name: str) -> str:
    return (GOLDEN / name).read_text(encoding="utf-8")


FIXTURE_PRIOR_BHC = (
    "Ms. ___ was admitted with chest pain. Acute coronary syndrome was ruled"
    " out with serial troponins and a stress test, and she was discharged"
    " home in stable condition."
)

GOOD_BHC = (
    "Patient admitted evaluated treated and discharged in stable condition"
    " after an appropriate workup negative serial troponins overnight"
    " monitoring and cardiology follow up arranged before leaving"
)
GOOD_DI = "Dear ___, please rest at home and take your medications as prescribed."


def padded_record(
    hadm_id: str,
    target_words: int,
    skip: set[SectionName] = frozenset(),
    bhc: str = GOOD_BHC,
    di: str = GOOD_DI,
    split: str = "train",
):
    """A parseable record padded to an exact whitespace word count."""
    from dischargekit.corpus import DischargeRecord

    def compose(filler: str) -> str:
        sections = []
        for name in SectionName:
            if name in skip:
                continue
            if name is SectionName.BRIEF_HOSPITAL_COURSE:
                body = bhc
            elif name is SectionName.DISCHARGE_INSTRUCTIONS:
                body = di
            elif name is SectionName.HISTORY_OF_PRESENT_ILLNESS:
                body = filler
            else:
                body = "x"
            sections.append((name, body))
        return build_summary(sections)

    base = len(compose("F").split())
    need = target_words - base + 1
    assert need >= 1, f"target {target_words} too small (base {base})"
    text = compose(" ".join(["f"] * need))
    assert len(text.split()) == target_words
    return DischargeRecord(hadm_id=hadm_id, text=text, split=split)


def eight_record_rows() -> list:
    """Word counts (130,140,140,140,150,150,150,160): q1=140, q3=150, so the
    130 and 160 records are length outliers; one in-range record lacks Social
    History and one has a malformed target."""
    return [
        padded_record("r0", 130, skip={SectionName.SOCIAL_HISTORY}),
        padded_record("r1", 140),
        padded_record("r2", 140, skip={SectionName.SOCIAL_HISTORY}),
        padded_record("r3", 140),
        padded_record("r4", 150),
        padded_record("r5", 150, bhc="too short"),
        padded_record("r6", 150),
        padded_record("r7", 160),
    ]


def fixture_prompt_bundle(task, variant, token_budget: int = 8192):
    """Build the canonical fixture prompt used by the golden-file tests."""
    from dischargekit.corpus import DischargeRecord, RadiologyReport
    from dischargekit.prompts import GenerationTask, build_prompt
    from dischargekit.radiology import select_reports, substitute_pertinent_results
    from dischargekit.sections import input_bundle, parse_summary

    text = fixture_admission_text()
    parsed = parse_summary(text)
    record = DischargeRecord(hadm_id="F1", text=text)
    report = RadiologyReport(
        note_id="RR1",
        hadm_id="F1",
        text=(FIXTURES / "radiology_report.txt").read_text(encoding="utf-8"),
    )
    matches = select_reports(record, parsed, [report])
    blocks = substitute_pertinent_results(parsed, matches)
    prior = FIXTURE_PRIOR_BHC if task is GenerationTask.DI else None
    return build_prompt(
        task,
        variant,
        input_bundle(parsed),
        radiology=blocks,
        prior_bhc=prior,
        token_budget=token_budget,
    )


class DocBuilder:
    """Builds a synthetic summary while recording the spans the parser must find.

    The expected entries come from construction bookkeeping, independent of the
    parser implementation.
    """

    def __init__(self, prefix: str = ""):
        self.chunks = [prefix]
        self.pos = len(prefix)
        self.prefix = prefix
        self.expected: list[dict] = []
        self._occurrences: dict[SectionName, int] = {}

    def add(
        self,
        name: SectionName,
        body_core: str,
        lead: str = "",
        casing: str = "exact",
        precolon: str = "",
        same_line: bool = False,
        last: bool = False,
    ) -> None:
        label = {"exact": name.value, "upper": name.value.upper(), "lower": name.value.lower()}[casing]
        header = f"{lead}{label}{precolon}:"
        header_start = self.pos
        self.chunks.append(header)
        self.pos += len(header)
        if same_line:
            body_block = f" {body_core}\n" if not last else f" {body_core}"
        else:
            body_block = f"\n{body_core}\n\n" if not last else f"\n{body_core}"
        self.chunks.append(body_block)
        body_start = header_start + len(header)
        self.pos += len(body_block)
        occurrence = self._occurrences.get(name, 0)
        self._occurrences[name] = occurrence + 1
        self.expected.append(
            {
                "name": name,
                "occurrence": occurrence,
                "header_start": header_start,
                "body_start": body_start,
            }
        )

    def finish(self) -> dict:
        text = "".join(self.chunks)
        for i, entry in enumerate(self.expected):
            entry["body_end"] = (
                self.expected[i + 1]["header_start"] if i + 1 < len(self.expected) else len(text)
            )
            entry["body"] = text[entry["body_start"] : entry["body_end"]].strip()
        return {"text": text, "prefix": self.prefix, "entries": self.expected}


# Body content that must never split a section: pseudo-headers, placeholders,
# lists, and canon-like words away from line starts.
_BODY_POOL = (
    "patient remained stable overnight",
    "IMPRESSION: no acute process seen on imaging",
    "___ 06:40AM BLOOD WBC-7.8 Hgb-12.9",
    "1. Lisinopril 20 mg PO DAILY\n2. Metformin 500 mg PO BID",
    "plan was made for Discharge Diagnosis review on rounds",
    "___",
    "None",
    "TROPONIN: negative x3\nEKG: sinus rhythm",
    "  - indented finding one\n  - indented finding two",
    "Dear Ms. ___,\n\nYou came to us with chest pain.",
    "",
)


def synthetic_parser_corpus(count: int = 50, seed: int = 20240501) -> list[dict]:
    """Deterministic documents covering all 16 headers, duplicates, missing
    sections, odd header layouts, and a no-header degenerate note."""
    rng = random.Random(seed)
    names = list(SectionName)
    docs: list[dict] = []

    builder = DocBuilder(prefix="Name:  ___   Unit No: ___\n\nService: MEDICINE\n\n")
    for name in names:
        builder.add(name, f"body of {name.value.lower()}", last=name is names[-1])
    docs.append(builder.finish())

    docs.append(
        {
            "text": "free text transfer note without recognized headers\nsecond line\n",
            "prefix": "free text transfer note without recognized headers\nsecond line\n",
            "entries": [],
        }
    )

    builder = DocBuilder()
    for name in names:
        builder.add(name, f"first body {name.value.lower()}")
        if name in (SectionName.PHYSICAL_EXAM, SectionName.PERTINENT_RESULTS):
            builder.add(name, f"repeat body {name.value.lower()}")
    docs.append(builder.finish())

    builder = DocBuilder()
    builder.add(SectionName.BRIEF_HOSPITAL_COURSE, "course only")
    builder.add(SectionName.DISCHARGE_INSTRUCTIONS, "Dear ___,\nrest well.", last=True)
    docs.append(builder.finish())

    while len(docs) < count:
        prefix = "ED triage note ___\n\n" if rng.random() < 0.5 else ""
        builder = DocBuilder(prefix=prefix)
        chosen = [n for n in names if rng.random() < 0.8]
        if not chosen:
            chosen = [SectionName.CHIEF_COMPLAINT]
        for name in chosen:
            builder.add(
                name,
                rng.choice(_BODY_POOL),
                lead=" " * rng.randrange(4) if rng.random() < 0.2 else "",
                casing=rng.choice(("exact", "exact", "exact", "upper", "lower")),
                precolon=" " if rng.random() < 0.15 else "",
                same_line=rng.random() < 0.2,
            )
        if rng.random() < 0.3:
            builder.add(rng.choice(chosen), rng.choice(_BODY_POOL), last=True)
        docs.append(builder.finish())
    return docs
