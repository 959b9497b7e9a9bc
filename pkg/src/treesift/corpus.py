"""Canonical corpus schema, ingestion, and multiple-choice reformulation.

A corpus file is UTF-8 JSONL, one record per line with fields ``id``,
``image``, ``prompt``, ``answer``, ``source``, ``qa_format`` and, for
multiple-choice items, ``choices`` (a list of ``{"label", "text"}``
objects). These field names are a wire contract shared with every
downstream stage.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence


class Source(str, Enum):
    GEOMETRY3K = "Geometry3K"
    GEOQA = "GeoQA"
    GEOS = "Geos"
    FIGUREQA = "FigureQA"
    SCIENCEQA = "ScienceQA"
    OKVQA = "OKVQA"
    ICONQA = "IconQA"
    TABMWP = "TabMWP"
    OTHER = "Other"


class QAFormat(str, Enum):
    OPEN_ENDED = "open_ended"
    MULTI_CHOICE = "multi_choice"


class CorpusError(Exception):
    """Base class for corpus schema and ingestion failures."""


class MalformedRecordError(CorpusError):
    def __init__(self, path: str, line_number: int, reason: str):
        self.path = path
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"{path}:{line_number}: {reason}")


class DuplicateIdError(CorpusError):
    pass


class AnswerLabelNotFoundError(CorpusError):
    """The answer label of a multiple-choice item is not among its choices."""


class ChoiceBlockNotFoundError(CorpusError):
    """The rendered choice block could not be located in the prompt.

    Raised as a distinct type so callers can route the sample to manual
    review instead of treating it like a schema violation.
    """


@dataclass(frozen=True)
class Choice:
    label: str
    text: str


@dataclass(frozen=True)
class Sample:
    id: str
    image_ref: str
    prompt: str
    answer: str
    source: Source
    qa_format: QAFormat
    choices: Optional[tuple[Choice, ...]] = None

    def __post_init__(self):
        if not self.id:
            raise CorpusError("sample id must be non-empty")
        if self.qa_format is QAFormat.MULTI_CHOICE:
            if not self.choices:
                raise CorpusError(f"{self.id}: multi_choice sample requires choices")
            if self.answer not in {c.label for c in self.choices}:
                raise CorpusError(
                    f"{self.id}: answer {self.answer!r} is not a choice label"
                )
        elif self.choices is not None:
            raise CorpusError(f"{self.id}: open_ended sample must not carry choices")

    def to_record(self) -> dict:
        record = {
            "id": self.id,
            "image": self.image_ref,
            "prompt": self.prompt,
            "answer": self.answer,
            "source": self.source.value,
            "qa_format": self.qa_format.value,
        }
        if self.choices is not None:
            record["choices"] = [{"label": c.label, "text": c.text} for c in self.choices]
        return record

    @classmethod
    def from_record(cls, record: Mapping) -> "Sample":
        required = ("id", "image", "prompt", "answer", "source", "qa_format")
        missing = [key for key in required if key not in record]
        if missing:
            raise CorpusError(f"record missing required field(s): {', '.join(missing)}")
        try:
            source = Source(record["source"])
        except ValueError:
            raise CorpusError(f"unknown source {record['source']!r}") from None
        try:
            qa_format = QAFormat(record["qa_format"])
        except ValueError:
            raise CorpusError(f"unknown qa_format {record['qa_format']!r}") from None
        choices = None
        if "choices" in record and record["choices"] is not None:
            choices = tuple(Choice(str(c["label"]), str(c["text"])) for c in record["choices"])
        return cls(
            id=str(record["id"]),
            image_ref=str(record["image"]),
            prompt=str(record["prompt"]),
            answer=str(record["answer"]),
            source=source,
            qa_format=qa_format,
            choices=choices,
        )


@dataclass
class Corpus:
    samples: list[Sample] = field(default_factory=list)
    provenance: dict[Source, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.provenance:
            self.provenance = _tally_sources(self.samples)
        if sum(self.provenance.values()) != len(self.samples):
            raise CorpusError("provenance counts do not sum to sample count")

    def __len__(self) -> int:
        return len(self.samples)

    def sample_ids(self) -> set[str]:
        return {s.id for s in self.samples}

    def by_id(self) -> dict[str, Sample]:
        return {s.id: s for s in self.samples}

    @classmethod
    def from_samples(cls, samples: Iterable[Sample]) -> "Corpus":
        return cls(samples=list(samples))


def _tally_sources(samples: Sequence[Sample]) -> dict[Source, int]:
    counts: dict[Source, int] = {}
    for s in samples:
        counts[s.source] = counts.get(s.source, 0) + 1
    return counts


def render_choice_block(choices: Sequence[Choice]) -> str:
    """Canonical textual form of a choice list, as embedded in prompts."""
    lines = ["Choices:"]
    lines.extend(f"({c.label}) {c.text}" for c in choices)
    return "\n".join(lines)


def ingest_dataset(
    path: str | Path,
    source: Source,
    limit: Optional[int] = None,
    seed: int = 0,
    skip_malformed: bool = False,
    report: Optional[list] = None,
) -> Corpus:
    """Load one source file into the canonical schema.

    Record ids are namespaced as ``<source>/<raw id>`` so corpora from
    different sources can be merged without collisions. When ``limit`` is
    set and the file holds more records, a uniform random subset is drawn
    without replacement using ``seed``; the survivors keep file order.
    Malformed records raise unless ``skip_malformed`` is set, in which
    case they are appended to ``report`` as ``(line_number, reason)``.
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"unreadable corpus file: {path}")
    samples: list[Sample] = []
    seen_raw_ids: set[str] = set()
    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                if not isinstance(record, dict):
                    raise CorpusError("record is not a JSON object")
                raw_id = str(record.get("id", ""))
                if raw_id in seen_raw_ids:
                    raise DuplicateIdError(f"duplicate id {raw_id!r}")
                parsed = Sample.from_record(record)
                if parsed.source is not source:
                    raise CorpusError(
                        f"record source {parsed.source.value!r} does not match "
                        f"ingest source {source.value!r}"
                    )
            except CorpusError as exc:
                if skip_malformed:
                    if report is not None:
                        report.append((line_number, str(exc)))
                    continue
                raise MalformedRecordError(str(path), line_number, str(exc)) from exc
            seen_raw_ids.add(raw_id)
            samples.append(replace(parsed, id=f"{source.value}/{parsed.id}"))
    if limit is not None and limit < len(samples):
        rng = random.Random(seed)
        keep = sorted(rng.sample(range(len(samples)), limit))
        samples = [samples[i] for i in keep]
    return Corpus.from_samples(samples)


def to_open_ended(sample: Sample) -> Sample:
    """Reformulate a multiple-choice sample to open-ended form.

    The rendered choice block (plus any whitespace immediately before it)
    is excised from the prompt, the choice list is dropped, and the answer
    becomes the text of the previously correct choice. The output prompt
    is always the input prompt with one contiguous substring removed.
    """
    if sample.qa_format is not QAFormat.MULTI_CHOICE or not sample.choices:
        raise CorpusError(f"{sample.id}: to_open_ended requires a multi_choice sample")
    by_label = {c.label: c for c in sample.choices}
    if sample.answer not in by_label:
        raise AnswerLabelNotFoundError(
            f"{sample.id}: answer label {sample.answer!r} not among choices"
        )
    block = render_choice_block(sample.choices)
    start = sample.prompt.find(block)
    if start < 0:
        raise ChoiceBlockNotFoundError(
            f"{sample.id}: rendered choice block not found in prompt"
        )
    cut = start
    while cut > 0 and sample.prompt[cut - 1] in " \t\n\r":
        cut -= 1
    stripped_prompt = sample.prompt[:cut] + sample.prompt[start + len(block):]
    return replace(
        sample,
        prompt=stripped_prompt,
        answer=by_label[sample.answer].text,
        qa_format=QAFormat.OPEN_ENDED,
        choices=None,
    )


FormatPolicy = Mapping[Source, str]

# Default policy: geometry, icon, figure, table and open-domain VQA sources
# are forced to open-ended form; the remaining sources stay multiple-choice.
DEFAULT_FORMAT_POLICY: dict[Source, str] = {
    Source.GEOMETRY3K: "convert",
    Source.GEOQA: "keep",
    Source.GEOS: "keep",
    Source.FIGUREQA: "convert",
    Source.SCIENCEQA: "keep",
    Source.OKVQA: "convert",
    Source.ICONQA: "convert",
    Source.TABMWP: "convert",
    Source.OTHER: "keep",
}


@dataclass(frozen=True)
class ConversionFailure:
    sample_id: str
    reason: str


def apply_format_policy(
    corpus: Corpus, policy: FormatPolicy
) -> tuple[Corpus, list[ConversionFailure]]:
    """Convert the sources marked ``convert``; pass the rest through.

    Samples in a convert source that are already open-ended pass through
    unchanged (there is nothing to reformulate). Conversion errors do not
    abort the pass: the failing sample is dropped from the output and
    reported, so the output size is input size minus reported failures.
    """
    present = {s.source for s in corpus.samples}
    uncovered = sorted(src.value for src in present if src not in policy)
    if uncovered:
        raise CorpusError(f"format policy does not cover source(s): {', '.join(uncovered)}")
    for src, action in policy.items():
        if action not in ("convert", "keep"):
            raise CorpusError(f"unknown policy action {action!r} for {src.value}")
    out: list[Sample] = []
    failures: list[ConversionFailure] = []
    for sample in corpus.samples:
        if policy[sample.source] == "keep" or sample.qa_format is QAFormat.OPEN_ENDED:
            out.append(sample)
            continue
        try:
            out.append(to_open_ended(sample))
        except CorpusError as exc:
            failures.append(ConversionFailure(sample.id, str(exc)))
    return Corpus.from_samples(out), failures


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for sample in corpus.samples:
            handle.write(json.dumps(sample.to_record()) + "\n")


def read_corpus(path: str | Path) -> Corpus:
    """Read a canonical corpus file (ids are taken as already namespaced)."""
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"unreadable corpus file: {path}")
    samples = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                sample = Sample.from_record(json.loads(line))
            except (json.JSONDecodeError, CorpusError) as exc:
                raise MalformedRecordError(str(path), line_number, str(exc)) from exc
            if sample.id in seen:
                raise DuplicateIdError(f"{path}:{line_number}: duplicate id {sample.id!r}")
            seen.add(sample.id)
            samples.append(sample)
    return Corpus.from_samples(samples)
