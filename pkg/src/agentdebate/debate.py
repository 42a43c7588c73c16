"""Round-robin debate protocol: opening statements, discussion rounds, closing statements."""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .gateway import (Backend, BackendSpec, ChatMessage, ChatRequest, GatewayError,
                      RequestObserver, open_backend)
from .persona import LEANING_RANK, Leaning, PersonaSpec
from .scenario import Scenario

log = logging.getLogger(__name__)

TEMPLATE_VERSION = "1"

NEUTRAL_LISTENER = "neutral_listener"
PERSUADER = "persuader"

GOAL_INSTRUCTIONS = {
    NEUTRAL_LISTENER: (
        "You are taking part in a structured debate as the neutral participant. "
        "Listen to the arguments from both sides, weigh them carefully, and say "
        "honestly how your own view develops."
    ),
    PERSUADER: (
        "You are taking part in a structured debate. Argue for your position and "
        "try to persuade the neutral participant to adopt your perspective."
    ),
}

OPENING_INSTRUCTION = (
    "Give your opening statement, outlining your position on the debate question "
    "in light of the scenario."
)
ROUND_INSTRUCTION = (
    "It is your turn to speak. Respond to the other participants, rebut any points "
    "you disagree with, and continue the discussion."
)
CLOSING_INSTRUCTION = (
    "The debate has now finished. Give your closing statement: summarise your "
    "arguments and reflect on any shift in your opinion. These are your concluding remarks."
)
EMPTY_HISTORY = "The debate is starting. No statements have been made yet."


class ContextOverflow(Exception):
    pass


class RunFailed(Exception):
    def __init__(self, run_id: int, phase: str, agent_id: str, cause: Exception):
        super().__init__(f"run {run_id} failed at {phase} ({agent_id}): {cause}")
        self.run_id = run_id
        self.phase = phase
        self.agent_id = agent_id
        self.cause = cause


@dataclass(frozen=True)
class AgentSlot:
    agent_id: str
    persona: PersonaSpec
    backend: BackendSpec
    debate_goal: str = ""

    def __post_init__(self):
        expected = NEUTRAL_LISTENER if self.persona.leaning is Leaning.NEUTRAL else PERSUADER
        if not self.debate_goal:
            object.__setattr__(self, "debate_goal", expected)
        elif self.debate_goal != expected:
            raise ValueError(f"{self.agent_id}: {self.persona.leaning.value} agents must be "
                             f"{expected}, got {self.debate_goal}")

    def describe(self) -> dict:
        return {"agent_id": self.agent_id, "name": self.persona.name,
                "leaning": self.persona.leaning.value,
                "gender": self.persona.gender.value if self.persona.gender else None}


@dataclass(frozen=True)
class DebateConfig:
    scenario: Scenario
    roster: tuple[AgentSlot, ...]
    rounds: int = 10
    runs: int = 10
    announce_closing: bool = True
    gender_awareness: bool = False
    seed: int = 0
    context_budget: int | None = None
    max_tokens: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "roster", tuple(self.roster))
        if len(self.roster) < 2:
            raise ValueError("a debate needs at least two agents")
        ids = [s.agent_id for s in self.roster]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate agent ids in roster: {ids}")
        if self.rounds < 1 or self.runs < 1:
            raise ValueError("rounds and runs must be positive")

    def canonical(self) -> dict:
        """Plain-data snapshot; the fingerprint is computed over this."""
        return {
            "scenario": self.scenario.to_dict(),
            "roster": [
                {"agent_id": s.agent_id, "persona": s.persona.to_dict(),
                 "debate_goal": s.debate_goal,
                 "backend": {"name": s.backend.name, "kind": s.backend.kind,
                             "model_id": s.backend.model_id,
                             "endpoint": s.backend.endpoint,
                             "temperature": s.backend.temperature}}
                for s in self.roster
            ],
            "rounds": self.rounds,
            "runs": self.runs,
            "announce_closing": self.announce_closing,
            "gender_awareness": self.gender_awareness,
            "seed": self.seed,
            "context_budget": self.context_budget,
            "max_tokens": self.max_tokens,
            "template_version": TEMPLATE_VERSION,
        }

    def fingerprint(self) -> str:
        return fingerprint(self.canonical())


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def fingerprint(data) -> str:
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Statement:
    """One agent turn. ``round`` is 0 for opening, 1..R for rounds, R+1 for closing."""

    run_id: int
    phase: str
    round: int
    agent_id: str
    text: str
    timestamp: float | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.phase not in ("opening", "round", "closing"):
            raise ValueError(f"unknown phase {self.phase!r}")
        if not self.text:
            raise ValueError("statement text must be non-empty")

    @property
    def phase_tag(self) -> str:
        return phase_tag(self.phase, self.round)

    def to_dict(self) -> dict:
        return {"run_id": self.run_id, "phase": self.phase, "round": self.round,
                "agent_id": self.agent_id, "text": self.text}

    @classmethod
    def from_dict(cls, data: dict) -> Statement:
        return cls(int(data["run_id"]), data["phase"], int(data["round"]),
                   data["agent_id"], data["text"])


def phase_tag(phase: str, round_index: int) -> str:
    return f"round{round_index:02d}" if phase == "round" else phase


@dataclass
class Transcript:
    fingerprint: str
    run_id: int
    agents: list[dict]
    statements: list[Statement] = field(default_factory=list)
    failure: RunFailed | None = None

    @property
    def complete(self) -> bool:
        return self.failure is None


def phase_schedule(rounds: int) -> list[tuple[str, int]]:
    return [("opening", 0), *(("round", k) for k in range(1, rounds + 1)),
            ("closing", rounds + 1)]


def speaking_orders(roster: Sequence[AgentSlot]) -> list[tuple[AgentSlot, ...]]:
    if not roster:
        raise ValueError("roster must be non-empty")
    return sorted(itertools.permutations(roster), key=lambda p: [s.agent_id for s in p])


def default_order(roster: Sequence[AgentSlot]) -> list[AgentSlot]:
    """Neutral first, then Republican, then Democrat; ties keep their given order."""
    return sorted(roster, key=lambda s: LEANING_RANK[s.persona.leaning])


def estimate_tokens(text: str) -> int:
    # coarse proxy, roughly four characters per token for English text
    return math.ceil(len(text) / 4)


def _history_label(stmt: Statement, names: Mapping[str, str], config: DebateConfig) -> str:
    if stmt.phase == "opening":
        label = "opening"
    elif stmt.phase == "round" or not config.announce_closing:
        label = f"round {stmt.round}"
    else:
        label = "closing"
    return f"{names[stmt.agent_id]} ({label}): {stmt.text}"


def _truncate(history: list[Statement], config: DebateConfig) -> list[Statement]:
    """Drop the oldest round statements, keeping openings and the latest full round."""
    n_agents = len(config.roster)
    counts: dict[int, int] = {}
    for s in history:
        if s.phase != "opening":
            counts[s.round] = counts.get(s.round, 0) + 1
    full = [k for k, c in counts.items() if c >= n_agents]
    keep_from = max(full) if full else min(counts, default=0)
    return [s for s in history if s.phase == "opening" or s.round >= keep_from]


def build_agent_prompt(slot: AgentSlot, config: DebateConfig, history: Sequence[Statement],
                       phase: str, round_index: int, run_id: int = 1) -> ChatRequest:
    parts = [slot.persona.prompt_text, GOAL_INSTRUCTIONS[slot.debate_goal],
             f"Scenario: {config.scenario.scenario_text}",
             f"Debate question: {config.scenario.debate_question}"]
    if config.gender_awareness:
        people = []
        for s in config.roster:
            gender = s.persona.gender.value if s.persona.gender else "gender not stated"
            people.append(f"{s.persona.name} ({gender})")
        parts.append("The debate participants are: " + ", ".join(people) + ".")
    system = "\n\n".join(parts)

    if phase == "opening":
        instruction = OPENING_INSTRUCTION
    elif phase == "closing" and config.announce_closing:
        instruction = CLOSING_INSTRUCTION
    else:
        instruction = ROUND_INSTRUCTION

    names = {s.agent_id: s.persona.name for s in config.roster}

    def render(items: Sequence[Statement]) -> str:
        if not items:
            body = EMPTY_HISTORY
        else:
            body = "Debate so far:\n" + "\n".join(_history_label(s, names, config) for s in items)
        return f"{body}\n\nYou are {slot.persona.name}. {instruction}"

    user = render(history)
    if config.context_budget is not None:
        budget = config.context_budget
        if estimate_tokens(system) + estimate_tokens(user) > budget:
            kept = list(history)
            droppable = _truncate_candidates(kept, config)
            while droppable and estimate_tokens(system) + estimate_tokens(user) > budget:
                kept.remove(droppable.pop(0))
                user = render(kept)
            if estimate_tokens(system) + estimate_tokens(user) > budget:
                raise ContextOverflow(
                    f"{slot.agent_id} run {run_id} {phase_tag(phase, round_index)}: prompt "
                    f"needs {estimate_tokens(system) + estimate_tokens(user)} tokens, "
                    f"budget is {budget}")

    return ChatRequest(
        model_id=slot.backend.model_id,
        messages=(ChatMessage("system", system), ChatMessage("user", user)),
        temperature=slot.backend.temperature,
        max_tokens=config.max_tokens,
        request_tag=f"run{run_id:02d}/{slot.agent_id}/{phase_tag(phase, round_index)}",
    )


def _truncate_candidates(history: list[Statement], config: DebateConfig) -> list[Statement]:
    protected = {id(s) for s in _truncate(history, config)}
    return [s for s in history if id(s) not in protected]


StatementSink = Callable[[Statement], None]


def open_backends(config: DebateConfig,
                  observer: RequestObserver | None = None) -> dict[str, Backend]:
    backends: dict[str, Backend] = {}
    for slot in config.roster:
        if slot.backend.name not in backends:
            backends[slot.backend.name] = open_backend(slot.backend, observer)
    return backends


def run_single(config: DebateConfig, run_id: int, backends: Mapping[str, Backend],
               on_statement: StatementSink | None = None) -> Transcript:
    """Run one debate; raises :class:`RunFailed` if any turn cannot be completed."""
    transcript = Transcript(config.fingerprint(), run_id, [s.describe() for s in config.roster])
    for phase, k in phase_schedule(config.rounds):
        for slot in config.roster:
            try:
                request = build_agent_prompt(slot, config, transcript.statements, phase, k, run_id)
                reply = backends[slot.backend.name].complete(request)
            except (GatewayError, ContextOverflow) as exc:
                raise RunFailed(run_id, phase_tag(phase, k), slot.agent_id, exc) from exc
            stmt = Statement(run_id, phase, k, slot.agent_id, reply.content.strip(), time.time())
            if on_statement is not None:
                on_statement(stmt)
            transcript.statements.append(stmt)
    return transcript


def run_debate(config: DebateConfig, backends: Mapping[str, Backend] | None = None,
               on_statement: StatementSink | None = None,
               on_run_start: Callable[[int], None] | None = None,
               on_run_end: Callable[[Transcript], None] | None = None,
               parallelism: int = 1, run_ids: Iterable[int] | None = None) -> list[Transcript]:
    """Execute every run of ``config``; failed runs come back with ``failure`` set."""
    if backends is None:
        backends = open_backends(config)
    fp = config.fingerprint()
    ids = list(run_ids) if run_ids is not None else list(range(1, config.runs + 1))

    def one(run_id: int) -> Transcript:
        if on_run_start is not None:
            on_run_start(run_id)
        collected: list[Statement] = []

        def sink(stmt: Statement) -> None:
            if on_statement is not None:
                on_statement(stmt)
            collected.append(stmt)

        try:
            result = run_single(config, run_id, backends, sink)
        except RunFailed as exc:
            log.error("%s", exc)
            result = Transcript(fp, run_id, [s.describe() for s in config.roster],
                                collected, exc)
        if on_run_end is not None:
            on_run_end(result)
        return result

    if parallelism <= 1:
        return [one(r) for r in ids]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(one, ids))
