from __future__ import annotations

import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treesift.corpus import (
    DEFAULT_FORMAT_POLICY,
    AnswerLabelNotFoundError,
    Choice,
    ChoiceBlockNotFoundError,
    Corpus,
    CorpusError,
    MalformedRecordError,
    QAFormat,
    Sample,
    Source,
    apply_format_policy,
    ingest_dataset,
    read_corpus,
    render_choice_block,
    to_open_ended,
    write_corpus,
)

from conftest import FIXTURES_DIR


def _write_jsonl(path: Path, records: list[dict]) -> Path:
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")
    return path


def _mc_record(i: int, source: str = "Geos") -> dict:
    choices = [{"label": "A", "text": "1"}, {"label": "B", "text": "2"}]
    return {
        "id": f"q{i}",
        "image": f"img/{i}.png",
        "prompt": f"Question {i}?\n" + render_choice_block([Choice("A", "1"), Choice("B", "2")]),
        "answer": "B",
        "source": source,
        "qa_format": "multi_choice",
        "choices": choices,
    }


class TestIngest:
    def test_fixture_file_full_ingest(self):
        corpus = ingest_dataset(FIXTURES_DIR / "corpus" / "geos.jsonl", Source.GEOS)
        assert len(corpus) == 25
        assert corpus.provenance == {Source.GEOS: 25}
        assert all(s.id.startswith("Geos/") for s in corpus.samples)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        corpus = ingest_dataset(path, Source.OTHER)
        assert len(corpus) == 0
        assert corpus.provenance == {}

    def test_limit_draws_exactly_n(self, tmp_path):
        path = _write_jsonl(tmp_path / "src.jsonl", [_mc_record(i) for i in range(40)])
        corpus = ingest_dataset(path, Source.GEOS, limit=10, seed=3)
        assert len(corpus) == 10

    def test_limit_is_seed_reproducible(self, tmp_path):
        path = _write_jsonl(tmp_path / "src.jsonl", [_mc_record(i) for i in range(40)])
        first = ingest_dataset(path, Source.GEOS, limit=10, seed=3)
        second = ingest_dataset(path, Source.GEOS, limit=10, seed=3)
        assert [s.id for s in first.samples] == [s.id for s in second.samples]
        different = ingest_dataset(path, Source.GEOS, limit=10, seed=4)
        assert {s.id for s in first.samples} != {s.id for s in different.samples}

    def test_limit_at_least_size_returns_all(self, tmp_path):
        path = _write_jsonl(tmp_path / "src.jsonl", [_mc_record(i) for i in range(5)])
        corpus = ingest_dataset(path, Source.GEOS, limit=99, seed=0)
        assert len(corpus) == 5

    def test_missing_field_raises(self, tmp_path):
        record = _mc_record(0)
        del record["answer"]
        path = _write_jsonl(tmp_path / "src.jsonl", [record])
        with pytest.raises(MalformedRecordError, match="answer"):
            ingest_dataset(path, Source.GEOS)

    def test_duplicate_id_raises(self, tmp_path):
        path = _write_jsonl(tmp_path / "src.jsonl", [_mc_record(1), _mc_record(1)])
        with pytest.raises(MalformedRecordError, match="duplicate"):
            ingest_dataset(path, Source.GEOS)

    def test_skip_flag_reports_instead_of_raising(self, tmp_path):
        bad = _mc_record(1)
        del bad["prompt"]
        path = _write_jsonl(tmp_path / "src.jsonl", [_mc_record(0), bad, _mc_record(2)])
        report = []
        corpus = ingest_dataset(path, Source.GEOS, skip_malformed=True, report=report)
        assert len(corpus) == 2
        assert len(report) == 1 and report[0][0] == 2

    def test_unreadable_path_raises(self, tmp_path):
        with pytest.raises(CorpusError, match="unreadable"):
            ingest_dataset(tmp_path / "absent.jsonl", Source.GEOS)

    def test_source_mismatch_raises(self, tmp_path):
        path = _write_jsonl(tmp_path / "src.jsonl", [_mc_record(0, source="GeoQA")])
        with pytest.raises(MalformedRecordError, match="does not match"):
            ingest_dataset(path, Source.GEOS)


GEOS_CHOICES = (
    Choice("A", "75"), Choice("B", "105"), Choice("C", "150"),
    Choice("D", "180"), Choice("E", "None"),
)


def geos_fixture_sample() -> Sample:
    question = (
        "In the diagram at the right, lines f and g are parallel, and lines a and b "
        "are parallel. x = 75. What is the value of y + z?"
    )
    return Sample(
        id="Geos/geos_0000",
        image_ref="images/geos/0000.png",
        prompt=f"{question}\n{render_choice_block(GEOS_CHOICES)}",
        answer="D",
        source=Source.GEOS,
        qa_format=QAFormat.MULTI_CHOICE,
        choices=GEOS_CHOICES,
    )


class TestToOpenEnded:
    def test_geos_answer_d_becomes_180(self):
        converted = to_open_ended(geos_fixture_sample())
        assert converted.answer == "180"
        assert converted.qa_format is QAFormat.OPEN_ENDED
        assert converted.choices is None
        assert "Choices:" not in converted.prompt
        assert converted.prompt.endswith("What is the value of y + z?")

    def test_two_choice_item_takes_choice_text(self):
        choices = (Choice("A", "Solution B"), Choice("B", "Solution A"))
        sample = Sample(
            id="ScienceQA/x", image_ref="i.png",
            prompt="Which solution is more concentrated?\n" + render_choice_block(choices),
            answer="B", source=Source.SCIENCEQA,
            qa_format=QAFormat.MULTI_CHOICE, choices=choices,
        )
        assert to_open_ended(sample).answer == "Solution A"

    def test_already_open_ended_rejected(self):
        sample = Sample(
            id="OKVQA/x", image_ref="i.png", prompt="What food group is this?",
            answer="fruit", source=Source.OKVQA, qa_format=QAFormat.OPEN_ENDED,
        )
        with pytest.raises(CorpusError):
            to_open_ended(sample)

    def test_unknown_answer_label_is_distinct_error(self):
        # Bypass constructor validation to hit the conversion-time check.
        sample = geos_fixture_sample()
        object.__setattr__(sample, "answer", "Z")
        with pytest.raises(AnswerLabelNotFoundError):
            to_open_ended(sample)

    def test_missing_choice_block_is_distinct_error(self):
        sample = geos_fixture_sample()
        object.__setattr__(sample, "prompt", "A prompt that never rendered its choices.")
        with pytest.raises(ChoiceBlockNotFoundError):
            to_open_ended(sample)

    @given(
        question=st.text(
            alphabet=st.characters(whitelist_categories=("Lu", "Ll", "Nd"), whitelist_characters=" ?"),
            min_size=1, max_size=60,
        ),
        texts=st.lists(
            st.text(alphabet="abcdefghij0123456789", min_size=1, max_size=8),
            min_size=2, max_size=5, unique=True,
        ),
        answer_index=st.integers(min_value=0, max_value=4),
    )
    @settings(max_examples=100)
    def test_conversion_is_substring_removal(self, question, texts, answer_index):
        from hypothesis import assume

        question = question.strip()
        assume(question)
        choices = tuple(Choice("ABCDE"[i], t) for i, t in enumerate(texts))
        answer = choices[answer_index % len(choices)].label
        prompt = f"{question}\n{render_choice_block(choices)}"
        sample = Sample(
            id="Other/p", image_ref="img.png", prompt=prompt, answer=answer,
            source=Source.OTHER, qa_format=QAFormat.MULTI_CHOICE, choices=choices,
        )
        converted = to_open_ended(sample)
        assert (converted.id, converted.image_ref, converted.source) == (
            sample.id, sample.image_ref, sample.source
        )
        assert converted.answer == choices[answer_index % len(choices)].text
        # Prefix removal only: output plus the excised span reassembles the input.
        assert converted.prompt == question
        assert prompt == converted.prompt + prompt[len(converted.prompt):]


class TestFormatPolicy:
    def test_convert_and_keep_sources(self):
        tab_choices = (Choice("A", "36"), Choice("B", "48"))
        tab = Sample(
            id="TabMWP/t1", image_ref="i.png",
            prompt="How much will she spend?\n" + render_choice_block(tab_choices),
            answer="A", source=Source.TABMWP,
            qa_format=QAFormat.MULTI_CHOICE, choices=tab_choices,
        )
        geo_choices = (Choice("A", "30 degrees"), Choice("B", "60 degrees"))
        geo = Sample(
            id="GeoQA/g1", image_ref="i.png",
            prompt="Find the angle.\n" + render_choice_block(geo_choices),
            answer="B", source=Source.GEOQA,
            qa_format=QAFormat.MULTI_CHOICE, choices=geo_choices,
        )
        out, failures = apply_format_policy(Corpus.from_samples([tab, geo]), DEFAULT_FORMAT_POLICY)
        assert not failures
        by_id = out.by_id()
        assert by_id["TabMWP/t1"].qa_format is QAFormat.OPEN_ENDED
        assert by_id["TabMWP/t1"].answer == "36"
        assert by_id["GeoQA/g1"] == geo

    def test_empty_policy_on_empty_corpus(self):
        out, failures = apply_format_policy(Corpus.from_samples([]), {})
        assert len(out) == 0 and not failures

    def test_all_keep_policy_is_identity(self, tmp_path):
        corpus = read_corpus(FIXTURES_DIR / "corpus" / "scienceqa.jsonl")
        policy = {src: "keep" for src in Source}
        out, failures = apply_format_policy(corpus, policy)
        assert not failures
        before, after = tmp_path / "before.jsonl", tmp_path / "after.jsonl"
        write_corpus(corpus, before)
        write_corpus(out, after)
        assert before.read_bytes() == after.read_bytes()

    def test_uncovered_source_raises(self):
        corpus = Corpus.from_samples([geos_fixture_sample()])
        with pytest.raises(CorpusError, match="Geos"):
            apply_format_policy(corpus, {Source.GEOQA: "keep"})

    def test_failures_are_reported_and_dropped(self):
        broken = geos_fixture_sample()
        object.__setattr__(broken, "prompt", "No rendered block in sight.")
        ok = geos_fixture_sample()
        object.__setattr__(ok, "id", "Geos/geos_0001")
        corpus = Corpus.from_samples([broken, ok])
        out, failures = apply_format_policy(corpus, {Source.GEOS: "convert"})
        assert len(out) == len(corpus) - len(failures) == 1
        assert failures[0].sample_id == "Geos/geos_0000"

    def test_open_ended_sample_in_convert_source_passes_through(self):
        sample = Sample(
            id="OKVQA/open", image_ref="i.png", prompt="What season is it?",
            answer="winter", source=Source.OKVQA, qa_format=QAFormat.OPEN_ENDED,
        )
        out, failures = apply_format_policy(
            Corpus.from_samples([sample]), {Source.OKVQA: "convert"}
        )
        assert not failures and out.samples == [sample]


class TestSchema:
    def test_multi_choice_requires_choices(self):
        with pytest.raises(CorpusError):
            Sample(
                id="x", image_ref="i", prompt="p", answer="A",
                source=Source.GEOS, qa_format=QAFormat.MULTI_CHOICE,
            )

    def test_open_ended_forbids_choices(self):
        with pytest.raises(CorpusError):
            Sample(
                id="x", image_ref="i", prompt="p", answer="1",
                source=Source.GEOS, qa_format=QAFormat.OPEN_ENDED,
                choices=(Choice("A", "1"),),
            )

    def test_provenance_must_sum(self):
        with pytest.raises(CorpusError):
            Corpus(samples=[geos_fixture_sample()], provenance={Source.GEOS: 2})

    def test_round_trip_through_file(self, tmp_path):
        corpus = read_corpus(FIXTURES_DIR / "corpus" / "okvqa.jsonl")
        path = tmp_path / "copy.jsonl"
        write_corpus(corpus, path)
        again = read_corpus(path)
        assert again.samples == corpus.samples
        assert again.provenance == corpus.provenance
