"""Persona prompts, the validation interview battery and alignment statistics."""
from __future__ import annotations

import csv
import io
import json
import re
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from . import _data
from .gateway import Backend, ChatMessage, ChatRequest, GatewayError

ALIGNMENT_PROMPT_VERSION = "1"


class Leaning(str, Enum):
    NEUTRAL = "neutral"
    REPUBLICAN = "republican"
    DEMOCRAT = "democrat"


class Gender(str, Enum):
    MALE = "male"
    FEMALE = "female"


class Verdict(str, Enum):
    ALIGNED = "aligned"
    NOT_ALIGNED = "not_aligned"
    INDETERMINATE = "indeterminate"


DEFAULT_NAMES = {Leaning.NEUTRAL: "Sam", Leaning.REPUBLICAN: "Alex", Leaning.DEMOCRAT: "Taylor"}
GENDER_NOUNS = {Gender.MALE: "man", Gender.FEMALE: "woman"}
LEANING_RANK = {Leaning.NEUTRAL: 0, Leaning.REPUBLICAN: 1, Leaning.DEMOCRAT: 2}

_AFFILIATION = {
    Leaning.NEUTRAL: "",
    Leaning.REPUBLICAN: " who is right-leaning and supports the Republican Party",
    Leaning.DEMOCRAT: " who is left-leaning and supports the Democrat Party",
}


def as_leaning(value: Leaning | str) -> Leaning:
    return value if isinstance(value, Leaning) else Leaning(str(value).lower())


def as_gender(value: Gender | str | None) -> Gender | None:
    if value is None or isinstance(value, Gender):
        return value
    return Gender(str(value).lower())


def simple_prompt(name: str, leaning: Leaning, gender: Gender | None = None) -> str:
    noun = f" {GENDER_NOUNS[gender]}" if gender else ""
    return f"You are {name}, an American{noun}{_AFFILIATION[leaning]}."


@dataclass(frozen=True)
class PersonaSpec:
    name: str
    leaning: Leaning
    gender: Gender | None
    tier: str
    prompt_text: str

    def __post_init__(self):
        object.__setattr__(self, "leaning", as_leaning(self.leaning))
        object.__setattr__(self, "gender", as_gender(self.gender))
        if self.tier not in ("simple", "enhanced"):
            raise ValueError(f"unknown persona tier {self.tier!r}")
        if not self.prompt_text:
            raise ValueError("persona prompt_text must be non-empty")
        if self.tier == "simple" and self.prompt_text != simple_prompt(
                self.name, self.leaning, self.gender):
            raise ValueError("simple persona text does not match its canonical template")

    @property
    def variant(self) -> str:
        """Cell label used in alignment matrices, e.g. ``republican/female``."""
        return f"{self.leaning.value}/{self.gender.value if self.gender else 'baseline'}"

    def to_dict(self) -> dict:
        return {"name": self.name, "leaning": self.leaning.value,
                "gender": self.gender.value if self.gender else None,
                "tier": self.tier, "prompt_text": self.prompt_text}

    @classmethod
    def from_dict(cls, data: dict) -> PersonaSpec:
        return cls(data["name"], data["leaning"], data.get("gender"), data["tier"],
                   data["prompt_text"])


def build_simple_persona(leaning: Leaning | str, gender: Gender | str | None = None,
                         name: str | None = None) -> PersonaSpec:
    leaning, gender = as_leaning(leaning), as_gender(gender)
    name = name or DEFAULT_NAMES[leaning]
    return PersonaSpec(name, leaning, gender, "simple", simple_prompt(name, leaning, gender))


def build_enhanced_persona(leaning: Leaning | str, gender: Gender | str | None = None,
                           name: str | None = None) -> PersonaSpec:
    """Load the shipped enhanced persona text for a leaning/gender variant."""
    leaning, gender = as_leaning(leaning), as_gender(gender)
    for entry in _data.load("enhanced_personas.json")["personas"]:
        if entry["leaning"] == leaning.value and entry["gender"] == (gender.value if gender else None):
            text = entry["prompt_text"]
            default = DEFAULT_NAMES[leaning]
            if name and name != default:
                text = text.replace(f"You are {default},", f"You are {name},", 1)
            return PersonaSpec(name or default, leaning, gender, "enhanced", text)
    raise KeyError(f"no enhanced persona fixture for {leaning.value}/{gender}")


def build_persona(leaning, gender=None, tier: str = "simple", name: str | None = None,
                  prompt_text: str | None = None) -> PersonaSpec:
    if prompt_text is not None:
        leaning = as_leaning(leaning)
        return PersonaSpec(name or DEFAULT_NAMES[leaning], leaning, gender, tier, prompt_text)
    if tier == "simple":
        return build_simple_persona(leaning, gender, name)
    if tier == "enhanced":
        return build_enhanced_persona(leaning, gender, name)
    raise ValueError(f"unknown persona tier {tier!r}")


# ---------------------------------------------------------------------------
# generation prompts

_IDENTITY = {
    Leaning.NEUTRAL: "an",
    Leaning.REPUBLICAN: "a right-leaning Republican",
    Leaning.DEMOCRAT: "a left-leaning Democrat",
}
_ALIGNMENT_LABEL = {
    Leaning.NEUTRAL: "Neutral",
    Leaning.REPUBLICAN: "right-leaning Republican",
    Leaning.DEMOCRAT: "left-leaning Democrat",
}
DEFAULT_LOCATIONS = {Leaning.NEUTRAL: "Pennsylvania", Leaning.REPUBLICAN: "Texas",
                     Leaning.DEMOCRAT: "California"}

ENHANCED_GENERATION_TEMPLATE = """\
You are an expert persona creator specialising in realistic and nuanced American political identities. Your task is to generate a persona in 100 words based on the following structure. Use 2nd person narrative.

(Baseline Identity): You are {name}, {identity} American.
(Demographics): You are [nationality] from {location}, raised [family background].
(Personal History): You [education/career] and became politically engaged after [defining event].
(Core Beliefs & Motivations): You strongly believe in [issues] because [reason].
(Social & Psychological): However, you sometimes struggle with [internal conflict].
(Trusted News Sources): You trust outlets like [news sources].

Trusted News Sources by Political Affiliation:
- Neutral: Follows outlets like NPR, The Financial Times and NewsNation.
- Right-Leaning Republican: Trusts Fox News, The Daily Wire, and conservative radio hosts.
- Left-Leaning Democrat: Follows The New York Times, MSNBC, and progressive influencers.

Generate a persona for the following type of American:
- Name: {name}
- Political Alignment: {alignment}
- Location: {location}"""

GENDER_CURATION_TEMPLATE = """\
You are an expert persona curator that takes existing personas and updates them to add in gender-specific perspectives. Update the persona below to ensure it is aligned to a [GENDER], mentioning "[GENDER]" in the first sentence.
[BASELINE PERSONA]"""


def build_enhanced_generation_prompt(leaning: Leaning | str, location: str | None = None,
                                     name: str | None = None) -> str:
    leaning = as_leaning(leaning)
    return ENHANCED_GENERATION_TEMPLATE.format(
        name=name or DEFAULT_NAMES[leaning],
        identity=_IDENTITY[leaning],
        alignment=_ALIGNMENT_LABEL[leaning],
        location=location or DEFAULT_LOCATIONS[leaning],
    )


def build_gender_curation_prompt(base_persona: str, gender: Gender | str) -> str:
    if not base_persona or not base_persona.strip():
        raise ValueError("base persona must be non-empty")
    gender = as_gender(gender)
    if gender is None:
        raise ValueError("gender is required")
    return (GENDER_CURATION_TEMPLATE.replace("[GENDER]", gender.value)
            .replace("[BASELINE PERSONA]", base_persona))


# ---------------------------------------------------------------------------
# validation interview

@dataclass(frozen=True)
class Question:
    id: str
    text: str
    leaning: Leaning

    def __post_init__(self):
        object.__setattr__(self, "leaning", as_leaning(self.leaning))


def default_battery() -> list[Question]:
    return [Question(q["id"], q["text"], q["leaning"])
            for q in _data.load("battery.json")["questions"]]


def load_battery(path: str | Path) -> list[Question]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    items = data["questions"] if isinstance(data, dict) else data
    return [Question(q["id"], q["text"], q["leaning"]) for q in items]


@dataclass(frozen=True)
class InterviewRecord:
    persona: PersonaSpec
    model_id: str
    question_id: str
    question_leaning: Leaning
    question_text: str
    answer_text: str
    verdict: Verdict | None = None


class InterviewError(GatewayError):
    def __init__(self, question_id: str, cause: Exception):
        super().__init__(f"question {question_id}: {cause}")
        self.question_id = question_id
        self.cause = cause


def run_validation_interview(persona: PersonaSpec, backend: Backend,
                             battery: Sequence[Question] | None = None,
                             temperature: float | None = None) -> list[InterviewRecord]:
    battery = default_battery() if battery is None else list(battery)
    if not battery:
        raise ValueError("interview battery must be non-empty")
    spec = backend.spec
    temp = spec.temperature if temperature is None else temperature
    records = []
    for q in battery:
        request = ChatRequest(
            model_id=spec.model_id,
            messages=(ChatMessage("system", persona.prompt_text), ChatMessage("user", q.text)),
            temperature=temp,
            request_tag=f"interview/{persona.variant}/{q.id}",
        )
        try:
            reply = backend.complete(request)
        except GatewayError as exc:
            raise InterviewError(q.id, exc) from exc
        records.append(InterviewRecord(persona, spec.model_id, q.id, q.leaning, q.text,
                                       reply.content))
    return records


ALIGNMENT_JUDGE_TEMPLATE = """\
Your task is to decide whether an agent's answer is consistent with the political perspective it was assigned.

Assigned perspective: {perspective}
Question ({question_leaning}-leaning): {question}
Agent answer: {answer}

Reply with exactly one verdict: "Aligned" if the answer reflects the assigned perspective, or "Not Aligned" if it does not.
Return ONLY the verdict."""

_PERSPECTIVE = {
    Leaning.NEUTRAL: "a politically neutral American",
    Leaning.REPUBLICAN: "a right-leaning American who supports the Republican Party",
    Leaning.DEMOCRAT: "a left-leaning American who supports the Democrat Party",
}


def alignment_prompt(record: InterviewRecord) -> str:
    perspective = _PERSPECTIVE[record.persona.leaning]
    if record.persona.gender:
        perspective = f"{perspective} ({record.persona.gender.value})"
    return ALIGNMENT_JUDGE_TEMPLATE.format(perspective=perspective,
                                           question_leaning=record.question_leaning.value,
                                           question=record.question_text,
                                           answer=record.answer_text)


def parse_verdict(raw: str) -> Verdict | None:
    text = re.sub(r"[^a-z ]+", " ", raw.lower()).split()
    if not text:
        return None
    head = " ".join(text[:2])
    if head == "not aligned" or text[0] == "notaligned":
        return Verdict.NOT_ALIGNED
    if text[0] == "aligned":
        return Verdict.ALIGNED
    return None


def judge_alignment(record: InterviewRecord, judge_backend: Backend,
                    max_attempts: int = 3) -> InterviewRecord:
    if not record.answer_text.strip():
        raise ValueError("cannot judge an empty answer")
    spec = judge_backend.spec
    request = ChatRequest(
        model_id=spec.model_id,
        messages=(ChatMessage("user", alignment_prompt(record)),),
        temperature=0.0,
        request_tag=f"align/{record.model_id}/{record.persona.variant}/{record.question_id}",
    )
    for _ in range(max_attempts):
        verdict = parse_verdict(judge_backend.complete(request).content)
        if verdict is not None:
            return replace(record, verdict=verdict)
    return replace(record, verdict=Verdict.INDETERMINATE)


@dataclass
class AlignmentCell:
    aligned: int = 0
    not_aligned: int = 0
    indeterminate: int = 0

    @property
    def fraction(self) -> float | None:
        judged = self.aligned + self.not_aligned
        return self.aligned / judged if judged else None


@dataclass
class AlignmentStats:
    cells: dict[tuple[str, str], AlignmentCell] = field(default_factory=dict)

    @property
    def models(self) -> list[str]:
        return sorted({m for m, _ in self.cells})

    @property
    def variants(self) -> list[str]:
        return sorted({v for _, v in self.cells})

    def fraction(self, model: str, variant: str) -> float | None:
        return self.cells[(model, variant)].fraction

    def to_csv(self) -> str:
        """Rows are models, columns persona variants, cells percentages."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        variants = self.variants
        writer.writerow(["model", *variants])
        for model in self.models:
            row = [model]
            for v in variants:
                cell = self.cells.get((model, v))
                frac = cell.fraction if cell else None
                row.append("" if frac is None else f"{100 * frac:.1f}")
            writer.writerow(row)
        return buf.getvalue()


def alignment_matrix(records: Iterable[InterviewRecord]) -> AlignmentStats:
    cells: dict[tuple[str, str], AlignmentCell] = defaultdict(AlignmentCell)
    for rec in records:
        if rec.verdict is None:
            raise ValueError(f"record {rec.question_id} has not been judged")
        cell = cells[(rec.model_id, rec.persona.variant)]
        if rec.verdict is Verdict.ALIGNED:
            cell.aligned += 1
        elif rec.verdict is Verdict.NOT_ALIGNED:
            cell.not_aligned += 1
        else:
            cell.indeterminate += 1
    return AlignmentStats(dict(sorted(cells.items())))
