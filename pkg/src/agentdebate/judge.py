"""LLM-as-a-judge attitude scoring on a 1-7 Likert scale."""
from __future__ import annotations

import csv
import io
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import _data
from .debate import Statement, Transcript, phase_tag
from .gateway import Backend, ChatMessage, ChatRequest, GatewayError
from .scenario import Scenario

LIKERT_MIN, LIKERT_MAX = 1, 7
JUDGE_ATTEMPTS = 3

JUDGE_HEADER = """\
Your task is to evaluate the attitude expressed by an agent in a debate
to see how STRONGLY they AGREE that {eval_prompt}

Assign a Likert score from 1 to 7, where:
1 = Strongly Disagree, 2 = Moderately Disagree,
3 = Slightly Disagree, 4 = Neutral,
5 = Slightly Agree, 6 = Moderately Agree, 7 = Strongly Agree.

Return ONLY the NUMERIC SCORE.
Do not provide any explanation or additional text."""


class LikertParseError(ValueError):
    pass


class UnparseableScore(LikertParseError):
    pass


class OutOfRangeScore(LikertParseError):
    pass


@dataclass(frozen=True)
class FewShot:
    response: str
    score: int

    def __post_init__(self):
        if not LIKERT_MIN <= self.score <= LIKERT_MAX:
            raise ValueError(f"few-shot score {self.score} outside 1..7")
        if not self.response.strip():
            raise ValueError("few-shot response must be non-empty")


def default_few_shots(topic: str) -> list[FewShot]:
    table = _data.load("few_shots.json")["few_shots"]
    if topic not in table:
        raise KeyError(f"no shipped few-shot examples for topic {topic!r}")
    return [FewShot(e["response"], e["score"]) for e in table[topic]]


def render_judge_prompt(eval_prompt: str, few_shots: Sequence[FewShot], target: str) -> str:
    if not target.strip():
        raise ValueError("target response must be non-empty")
    # the evaluation prompts are phrased as questions; the header wants a clause
    clause = eval_prompt.strip()
    m = re.match(r"how strongly do they agree that (.*)$", clause, re.IGNORECASE)
    if m:
        clause = m.group(1).rstrip("?").strip() + "."
    parts = [JUDGE_HEADER.format(eval_prompt=clause), f"Evaluation prompt: {eval_prompt.strip()}"]
    for i, shot in enumerate(few_shots, start=1):
        parts.append(f"### Example {i} ###\nDebate Response: {shot.response}\n"
                     f"Score on Likert scale: {shot.score}")
    parts.append("### Now evaluate the following response. ###\n"
                 f"Debate Response: {target.strip()}\nScore on Likert scale:")
    return "\n\n".join(parts)


def build_judge_prompt(scenario: Scenario, target: Statement,
                       few_shots: Sequence[FewShot] | None = None,
                       model_id: str = "judge", temperature: float | None = 0.0) -> ChatRequest:
    shots = default_few_shots(scenario.topic) if few_shots is None else list(few_shots)
    if not shots:
        raise ValueError("at least one few-shot example is required")
    content = render_judge_prompt(scenario.evaluation_prompt, shots, target.text)
    return ChatRequest(
        model_id=model_id,
        messages=(ChatMessage("user", content),),
        temperature=temperature,
        request_tag=f"judge/run{target.run_id:02d}/{target.agent_id}/{target.phase_tag}",
    )


_NUMBER = re.compile(r"(?<![\w.])[-+]?\d+(?:\.\d+)?(?!\w)")


def parse_likert(raw: str) -> int:
    """Extract a single 1-7 score from a judge reply.

    A bare integer is taken as is. Otherwise exactly one number in [1, 7]
    must appear in the text; two or more is ambiguous.
    """
    text = raw.strip()
    if re.fullmatch(r"[-+]?\d+", text):
        value = int(text)
        if not LIKERT_MIN <= value <= LIKERT_MAX:
            raise OutOfRangeScore(f"score {value} outside 1..7")
        return value
    numbers = _NUMBER.findall(text)
    if not numbers:
        raise UnparseableScore(f"no score in reply {raw!r}")
    in_range = [n for n in numbers if LIKERT_MIN <= float(n) <= LIKERT_MAX]
    if not in_range:
        raise OutOfRangeScore(f"no number within 1..7 in reply {raw!r}")
    if len(in_range) > 1:
        raise UnparseableScore(f"ambiguous reply {raw!r}: candidates {in_range}")
    token = in_range[0]
    if not re.fullmatch(r"[-+]?\d+", token):
        raise UnparseableScore(f"non-integer score {token!r} in reply {raw!r}")
    return int(token)


@dataclass(frozen=True)
class AttitudeScore:
    """Judge outcome for one statement; ``score`` is None for an explicit gap."""

    run_id: int
    phase: str
    round: int
    agent_id: str
    score: int | None
    attempts: int
    error: str | None = None

    def __post_init__(self):
        if self.score is not None and not LIKERT_MIN <= self.score <= LIKERT_MAX:
            raise ValueError(f"attitude score {self.score} outside 1..7")

    @property
    def is_gap(self) -> bool:
        return self.score is None

    def to_dict(self) -> dict:
        return {"run_id": self.run_id, "phase": self.phase, "round": self.round,
                "agent_id": self.agent_id, "score": self.score, "attempts": self.attempts,
                "error": self.error}

    @classmethod
    def from_dict(cls, data: dict) -> AttitudeScore:
        return cls(int(data["run_id"]), data["phase"], int(data["round"]), data["agent_id"],
                   data["score"], int(data["attempts"]), data.get("error"))


@dataclass
class AttitudeSeries:
    """All scores of an experiment, in transcript order."""

    rounds: int
    agents: list[dict]
    scores: list[AttitudeScore] = field(default_factory=list)

    @property
    def agent_ids(self) -> list[str]:
        return [a["agent_id"] for a in self.agents]

    @property
    def run_ids(self) -> list[int]:
        return sorted({s.run_id for s in self.scores})

    @property
    def gaps(self) -> list[AttitudeScore]:
        return [s for s in self.scores if s.is_gap]

    def leaning(self, agent_id: str) -> str:
        for a in self.agents:
            if a["agent_id"] == agent_id:
                return a["leaning"]
        raise KeyError(agent_id)

    def per_run(self, agent_id: str) -> dict[int, list[int | None]]:
        """Map run id to that agent's scores indexed by position 0..rounds+1."""
        out: dict[int, list[int | None]] = {}
        for s in self.scores:
            if s.agent_id != agent_id:
                continue
            row = out.setdefault(s.run_id, [None] * (self.rounds + 2))
            row[s.round] = s.score
        return dict(sorted(out.items()))

    def run_scores(self, run_id: int) -> list[AttitudeScore]:
        return [s for s in self.scores if s.run_id == run_id]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["run", "phase", "agent", "score"])
        for s in self.scores:
            writer.writerow([s.run_id, phase_tag(s.phase, s.round), s.agent_id,
                             "" if s.score is None else s.score])
        return buf.getvalue()


def score_statement(stmt: Statement, scenario: Scenario, judge_backend: Backend,
                    few_shots: Sequence[FewShot] | None = None,
                    max_attempts: int = JUDGE_ATTEMPTS) -> AttitudeScore:
    spec = judge_backend.spec
    request = build_judge_prompt(scenario, stmt, few_shots, spec.model_id,
                                 0.0 if spec.temperature is not None else None)
    error = None
    for attempt in range(1, max_attempts + 1):
        try:
            reply = judge_backend.complete(request)
            value = parse_likert(reply.content)
        except (LikertParseError, GatewayError) as exc:
            error = f"{type(exc).__name__}: {exc}"
            continue
        return AttitudeScore(stmt.run_id, stmt.phase, stmt.round, stmt.agent_id, value, attempt)
    return AttitudeScore(stmt.run_id, stmt.phase, stmt.round, stmt.agent_id, None,
                         max_attempts, error)


def score_transcript(transcripts: Transcript | Iterable[Transcript], scenario: Scenario,
                     judge_backend: Backend, few_shots: Sequence[FewShot] | None = None,
                     rounds: int | None = None, parallelism: int = 1,
                     max_attempts: int = JUDGE_ATTEMPTS) -> AttitudeSeries:
    """Judge every statement independently; failures become gaps, never defaults."""
    if isinstance(transcripts, Transcript):
        transcripts = [transcripts]
    transcripts = list(transcripts)
    if not transcripts:
        raise ValueError("no transcripts to score")
    statements = [s for t in transcripts for s in t.statements]
    if rounds is None:
        rounds = max((s.round for s in statements if s.phase == "closing"), default=1) - 1
        rounds = max(rounds, max((s.round for s in statements if s.phase == "round"), default=1))

    def one(stmt: Statement) -> AttitudeScore:
        return score_statement(stmt, scenario, judge_backend, few_shots, max_attempts)

    if parallelism <= 1:
        scores = [one(s) for s in statements]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            # map preserves input order regardless of completion order
            scores = list(pool.map(one, statements))
    return AttitudeSeries(rounds, transcripts[0].agents, scores)
