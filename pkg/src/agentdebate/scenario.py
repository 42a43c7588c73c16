"""Debate topic catalog and deterministic scenario composition."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from . import _data

TOPICS = ("abortion", "gun_violence", "illegal_immigration", "climate_change")


class UnknownTopic(KeyError):
    pass


@dataclass(frozen=True)
class Scenario:
    topic: str
    scenario_text: str
    debate_question: str
    evaluation_prompt: str

    def __post_init__(self):
        for name in ("topic", "scenario_text", "debate_question", "evaluation_prompt"):
            if not getattr(self, name):
                raise ValueError(f"scenario field {name!r} must be non-empty")

    def to_dict(self) -> dict[str, str]:
        return {"topic": self.topic, "scenario_text": self.scenario_text,
                "debate_question": self.debate_question,
                "evaluation_prompt": self.evaluation_prompt}


@dataclass(frozen=True)
class ArgumentPair:
    """For/against arguments plus manual refinements.

    ``refinements`` holds one edit per line. ``old => new`` replaces text in
    the assembled framing; any other non-blank line is appended verbatim.
    """

    for_argument: str
    against_argument: str
    refinements: str = ""

    def __post_init__(self):
        if not self.for_argument.strip() or not self.against_argument.strip():
            raise ValueError("both for and against arguments are required")


def _catalog(extra: str | Path | None = None) -> dict[str, Scenario]:
    entries = list(_data.load("scenarios.json")["scenarios"])
    if extra is not None:
        with open(extra, encoding="utf-8") as fh:
            data = json.load(fh)
        entries.extend(data["scenarios"] if isinstance(data, dict) else data)
    return {e["topic"]: Scenario(**e) for e in entries}


def list_topics(extra: str | Path | None = None) -> list[str]:
    return list(_catalog(extra))


def get_scenario(topic: str, extra: str | Path | None = None) -> Scenario:
    key = topic.strip().lower().replace(" ", "_").replace("-", "_")
    catalog = _catalog(extra)
    if key not in catalog:
        raise UnknownTopic(f"unknown topic {topic!r}; known: {', '.join(catalog)}")
    return catalog[key]


def _sentence(text: str) -> str:
    text = text.strip()
    return text if text.endswith((".", "!", "?")) else text + "."


def compose_scenario(args: ArgumentPair, question: str, topic: str = "custom",
                     evaluation_prompt: str | None = None) -> Scenario:
    """Assemble a scenario draft from argument texts; no model is called."""
    if not question.strip():
        raise ValueError("debate question must be non-empty")
    framing = (f"Supporters argue that {_sentence(args.for_argument)} "
               f"Opponents counter that {_sentence(args.against_argument)}")
    extras = []
    for line in args.refinements.splitlines():
        if not line.strip():
            continue
        if "=>" in line:
            old, new = (part.strip() for part in line.split("=>", 1))
            if old:
                framing = framing.replace(old, new)
        else:
            extras.append(_sentence(line))
    text = " ".join([framing, *extras, f"The question under debate is: {question.strip()}"])
    text = re.sub(r"\s+", " ", text).strip()
    if evaluation_prompt is None:
        evaluation_prompt = f"How strongly do they agree with the following: {question.strip()}"
    return Scenario(topic, text, question.strip(), evaluation_prompt)
