#!/usr/bin/env python3
"""Regenerate the checked-in fixture corpora, mock spec, and export golden.

The fixtures are small schema-conformant stand-ins for the public source
datasets (25 samples per source, 200 total). Multiple-choice sources embed
their choice block in the prompt through render_choice_block, so the
reformulation pass can strip it exactly. Output is deterministic; rerun
only when the schema or the templates change, and review the diff.

Usage: python scripts/make_fixtures.py
"""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO_ROOT / "src"))

from treesift.corpus import Choice, Corpus, Sample, QAFormat, Source, read_corpus, render_choice_block
from treesift.grpo import export_rft_dataset

FIXTURES = REPO_ROOT / "fixtures"
PER_SOURCE = 25

LETTERS = "ABCDE"

COLORS = [
    "Medium Blue", "Dark Orchid", "Dodger Blue", "Dark Slate", "Violet Red",
    "Forest Green", "Light Coral", "Steel Blue", "Dark Khaki", "Pale Teal",
]

SCIENCE_ITEMS = [
    ("Think about the magnetic force between the magnets in each pair. Which of the following statements is true?",
     ["The magnitude of the magnetic force is greater in Pair 2.",
      "The magnitude of the magnetic force is greater in Pair 1.",
      "The magnitude of the magnetic force is the same in both pairs."]),
    ("Which solution has a higher concentration of purple particles?",
     ["neither; their concentrations are the same", "Solution A", "Solution B"]),
    ("What is the direction of this push?",
     ["away from the hockey stick", "toward the hockey stick"]),
    ("Which property do these objects have in common?",
     ["hard", "stretchy", "fragile"]),
    ("Which month has the highest average precipitation in this city?",
     ["April", "September", "December"]),
]

OKVQA_ITEMS = [
    ("What food group is pictured here?", "fruit"),
    ("What is this guy's profession?", "security"),
    ("What is the length of the surfboard the man in the black shorts is holding?", "7 feet"),
    ("What utensil is resting on the plate?", "fork"),
    ("What season does this scene take place in?", "winter"),
    ("What kind of animal is grazing in the field?", "sheep"),
]

TABMWP_ITEMS = [
    ("Adriana wants to buy {n} pounds of silver confetti. How much will she spend?", lambda n: 12 * n),
    ("A game show viewer monitors how often a wheel numbered 1 through 5 stops at each number. "
     "If the wheel stopped {n} times on odd numbers and twice as often on even numbers, how many spins are there in all?",
     lambda n: 3 * n),
    ("The employee at the department store counted the number of ties on each of {n} racks, "
     "finding 15 ties per rack. How many ties are there in total?", lambda n: 15 * n),
]


def _mc_prompt(question: str, choices: list[Choice]) -> str:
    return f"{question}\n{render_choice_block(choices)}"


def geometry3k(rng: random.Random) -> list[Sample]:
    samples = []
    stems = [
        "Find y so that the quadrilateral is a parallelogram.",
        "Use parallelogram M N P R to find y.",
        "Find the area of the parallelogram. Round to the nearest tenth if necessary.",
        "Find x in the triangle shown at the right.",
        "Find the perimeter of the polygon in the figure.",
    ]
    for i in range(PER_SOURCE):
        stem = stems[i % len(stems)]
        base = rng.randrange(3, 40)
        values = sorted({base, base + rng.randrange(1, 9), base + rng.randrange(9, 20), base * 2})
        while len(values) < 4:
            values.append(values[-1] + rng.randrange(1, 7))
        choices = [Choice(LETTERS[j], str(v)) for j, v in enumerate(values[:4])]
        answer = rng.choice(choices).label
        samples.append(Sample(
            id=f"geometry3k_{i:04d}",
            image_ref=f"images/geometry3k/{i:04d}.png",
            prompt=_mc_prompt(stem, choices),
            answer=answer,
            source=Source.GEOMETRY3K,
            qa_format=QAFormat.MULTI_CHOICE,
            choices=tuple(choices),
        ))
    return samples


def geoqa(rng: random.Random) -> list[Sample]:
    samples = []
    for i in range(PER_SOURCE):
        angle = rng.choice([30, 40, 45, 50, 60, 70, 90, 100, 120])
        stem = (f"In the figure, O is the center of the circle and the inscribed angle "
                f"subtends the same arc as a central angle of {2 * angle} degrees. Find the inscribed angle.")
        distractors = sorted({angle, angle + 10, max(5, angle - 10), 2 * angle})
        choices = [Choice(LETTERS[j], f"{v} degrees") for j, v in enumerate(distractors[:4])]
        answer = next(c.label for c in choices if c.text == f"{angle} degrees")
        samples.append(Sample(
            id=f"geoqa_{i:04d}",
            image_ref=f"images/geoqa/{i:04d}.png",
            prompt=_mc_prompt(stem, choices),
            answer=answer,
            source=Source.GEOQA,
            qa_format=QAFormat.MULTI_CHOICE,
            choices=tuple(choices),
        ))
    return samples


def geos(rng: random.Random) -> list[Sample]:
    samples = []
    # First item mirrors the parallel-lines fixture used by the reformulation tests.
    fixed = Sample(
        id="geos_0000",
        image_ref="images/geos/0000.png",
        prompt=_mc_prompt(
            "In the diagram at the right, lines f and g are parallel, and lines a and b "
            "are parallel. x = 75. What is the value of y + z?",
            [Choice("A", "75"), Choice("B", "105"), Choice("C", "150"),
             Choice("D", "180"), Choice("E", "None")],
        ),
        answer="D",
        source=Source.GEOS,
        qa_format=QAFormat.MULTI_CHOICE,
        choices=(Choice("A", "75"), Choice("B", "105"), Choice("C", "150"),
                 Choice("D", "180"), Choice("E", "None")),
    )
    samples.append(fixed)
    for i in range(1, PER_SOURCE):
        side = rng.randrange(2, 12)
        stem = (f"What is the area of the following square, if the length of BD is "
                f"{side}*sqrt(2)?")
        values = [side * side, side * side + side, 2 * side, side * side - 1]
        choices = [Choice(LETTERS[j], str(v)) for j, v in enumerate(dict.fromkeys(values))]
        choices.append(Choice(LETTERS[len(choices)], "None"))
        samples.append(Sample(
            id=f"geos_{i:04d}",
            image_ref=f"images/geos/{i:04d}.png",
            prompt=_mc_prompt(stem, choices),
            answer="A",
            source=Source.GEOS,
            qa_format=QAFormat.MULTI_CHOICE,
            choices=tuple(choices),
        ))
    return samples


def figureqa(rng: random.Random) -> list[Sample]:
    samples = []
    stems = [
        "Is {a} less than {b}?",
        "Does {a} intersect {b}?",
        "Does {a} have the maximum area under the curve?",
        "Is {a} the roughest?",
        "Does {a} have the lowest value?",
    ]
    yn = [Choice("A", "Yes"), Choice("B", "No")]
    for i in range(PER_SOURCE):
        a, b = rng.sample(COLORS, 2)
        stem = stems[i % len(stems)].format(a=a, b=b)
        answer = rng.choice(["A", "B"])
        samples.append(Sample(
            id=f"figureqa_{i:04d}",
            image_ref=f"images/figureqa/{i:04d}.png",
            prompt=_mc_prompt(stem, yn),
            answer=answer,
            source=Source.FIGUREQA,
            qa_format=QAFormat.MULTI_CHOICE,
            choices=tuple(yn),
        ))
    return samples


def scienceqa(rng: random.Random) -> list[Sample]:
    samples = []
    for i in range(PER_SOURCE):
        question, options = SCIENCE_ITEMS[i % len(SCIENCE_ITEMS)]
        choices = [Choice(LETTERS[j], text) for j, text in enumerate(options)]
        answer = rng.choice(choices).label
        samples.append(Sample(
            id=f"scienceqa_{i:04d}",
            image_ref=f"images/scienceqa/{i:04d}.png",
            prompt=_mc_prompt(question, choices),
            answer=answer,
            source=Source.SCIENCEQA,
            qa_format=QAFormat.MULTI_CHOICE,
            choices=tuple(choices),
        ))
    return samples


def okvqa(rng: random.Random) -> list[Sample]:
    samples = []
    for i in range(PER_SOURCE):
        question, answer = OKVQA_ITEMS[i % len(OKVQA_ITEMS)]
        if i % 5 == 4:
            # A handful arrive in multiple-choice form and go through conversion.
            wrong = rng.sample([a for _, a in OKVQA_ITEMS if a != answer], 2)
            options = [answer] + wrong
            rng.shuffle(options)
            choices = [Choice(LETTERS[j], text) for j, text in enumerate(options)]
            label = next(c.label for c in choices if c.text == answer)
            samples.append(Sample(
                id=f"okvqa_{i:04d}",
                image_ref=f"images/okvqa/{i:04d}.png",
                prompt=_mc_prompt(question, choices),
                answer=label,
                source=Source.OKVQA,
                qa_format=QAFormat.MULTI_CHOICE,
                choices=tuple(choices),
            ))
        else:
            samples.append(Sample(
                id=f"okvqa_{i:04d}",
                image_ref=f"images/okvqa/{i:04d}.png",
                prompt=question,
                answer=answer,
                source=Source.OKVQA,
                qa_format=QAFormat.OPEN_ENDED,
            ))
    return samples


def iconqa(rng: random.Random) -> list[Sample]:
    samples = []
    things = ["flowers", "dots", "stars", "squares", "hearts"]
    for i in range(PER_SOURCE):
        noun = things[i % len(things)]
        count = rng.randrange(5, 60)
        values = sorted({count, count + 1, max(1, count - 2), count + 10})
        choices = [Choice(LETTERS[j], str(v)) for j, v in enumerate(values)]
        answer = next(c.label for c in choices if c.text == str(count))
        samples.append(Sample(
            id=f"iconqa_{i:04d}",
            image_ref=f"images/iconqa/{i:04d}.png",
            prompt=_mc_prompt(f"How many {noun} are there?", choices),
            answer=answer,
            source=Source.ICONQA,
            qa_format=QAFormat.MULTI_CHOICE,
            choices=tuple(choices),
        ))
    return samples


def tabmwp(rng: random.Random) -> list[Sample]:
    samples = []
    for i in range(PER_SOURCE):
        template, solve = TABMWP_ITEMS[i % len(TABMWP_ITEMS)]
        n = rng.randrange(2, 9)
        value = solve(n)
        stem = template.format(n=n)
        values = sorted({value, value + n, max(1, value - n), value * 2})
        choices = [Choice(LETTERS[j], str(v)) for j, v in enumerate(values)]
        answer = next(c.label for c in choices if c.text == str(value))
        samples.append(Sample(
            id=f"tabmwp_{i:04d}",
            image_ref=f"images/tabmwp/{i:04d}.png",
            prompt=_mc_prompt(stem, choices),
            answer=answer,
            source=Source.TABMWP,
            qa_format=QAFormat.MULTI_CHOICE,
            choices=tuple(choices),
        ))
    return samples


BUILDERS = {
    "geometry3k": geometry3k,
    "geoqa": geoqa,
    "geos": geos,
    "figureqa": figureqa,
    "scienceqa": scienceqa,
    "okvqa": okvqa,
    "iconqa": iconqa,
    "tabmwp": tabmwp,
}

# Solve probabilities cycle through difficulty tiers so end-to-end runs see
# a mixed K distribution, including unsolved samples.
TIER_PROBS = [0.95, 0.7, 0.45, 0.25, 0.1, 0.0]


def write_source_files() -> list[Sample]:
    out_dir = FIXTURES / "corpus"
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = random.Random(1234)
    all_samples: list[Sample] = []
    for name, builder in BUILDERS.items():
        samples = builder(rng)
        path = out_dir / f"{name}.jsonl"
        with path.open("w", encoding="utf-8") as handle:
            for sample in samples:
                handle.write(json.dumps(sample.to_record()) + "\n")
        all_samples.extend(samples)
        print(f"wrote {len(samples):3d} samples -> {path.relative_to(REPO_ROOT)}")
    return all_samples


def write_mock_spec(samples: list[Sample]) -> None:
    probs = {}
    for i, sample in enumerate(samples):
        namespaced = f"{sample.source.value}/{sample.id}"
        probs[namespaced] = TIER_PROBS[i % len(TIER_PROBS)]
    spec = {
        "seed": 97,
        "steps_per_rollout": 3,
        "default_solve_probability": 0.0,
        "per_sample_solve_probability": probs,
    }
    path = FIXTURES / "mock" / "mock_policy.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(spec, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote mock spec for {len(probs)} samples -> {path.relative_to(REPO_ROOT)}")


def write_export_golden() -> None:
    golden_dir = FIXTURES / "golden"
    golden_dir.mkdir(parents=True, exist_ok=True)
    curated = Corpus.from_samples([
        Sample(id="Geos/geos_0000", image_ref="images/geos/0000.png",
               prompt="In the diagram at the right, lines f and g are parallel, and lines a "
                      "and b are parallel. x = 75. What is the value of y + z?",
               answer="180", source=Source.GEOS, qa_format=QAFormat.OPEN_ENDED),
        Sample(id="FigureQA/figureqa_0000", image_ref="images/figureqa/0000.png",
               prompt="Is Medium Blue less than Dark Orchid?", answer="Yes",
               source=Source.FIGUREQA, qa_format=QAFormat.OPEN_ENDED),
        Sample(id="TabMWP/tabmwp_0000", image_ref="images/tabmwp/0000.png",
               prompt="Adriana wants to buy 3 pounds of silver confetti. How much will she spend?",
               answer="36", source=Source.TABMWP, qa_format=QAFormat.OPEN_ENDED),
    ])
    curated_path = golden_dir / "curated_3.jsonl"
    with curated_path.open("w", encoding="utf-8") as handle:
        for sample in curated.samples:
            handle.write(json.dumps(sample.to_record()) + "\n")
    export_rft_dataset(curated, golden_dir / "rft_export_3.jsonl")
    print(f"wrote export golden -> {golden_dir.relative_to(REPO_ROOT)}")


def main() -> None:
    samples = write_source_files()
    write_mock_spec(samples)
    write_export_golden()


if __name__ == "__main__":
    main()
