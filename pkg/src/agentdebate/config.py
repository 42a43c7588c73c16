"""Experiment configuration file (YAML or JSON) and its translation into debate configs."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from .debate import AgentSlot, DebateConfig, default_order, speaking_orders
from .gateway import DEFAULT_TEMPERATURE, BackendSpec, load_script
from .judge import FewShot, default_few_shots
from .persona import DEFAULT_NAMES, Gender, Leaning, build_persona
from .scenario import Scenario, UnknownTopic, get_scenario

ORDER_MODES = ("default", "explicit", "sweep")
GROUPINGS = {"pooled": "pooled", "round-means": "by_round_means",
             "by_round_means": "by_round_means", "round_means": "by_round_means"}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class AnalysisSettings:
    tau: float = 0.05
    grouping: str = "pooled"
    regression_domain: str = "all"
    levene_center: str = "mean"


@dataclass
class ExperimentConfig:
    path: Path | None
    backends: dict[str, BackendSpec]
    roster: list[AgentSlot]
    scenario: Scenario
    rounds: int = 10
    runs: int = 10
    order: str | int = "default"
    announce_closing: bool = True
    gender_awareness: bool = False
    seed: int = 0
    context_budget: int | None = None
    max_tokens: int | None = None
    judge_backend: str | None = None
    few_shots: list[FewShot] | None = None
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    validation: dict[str, Any] = field(default_factory=dict)
    output: Path = Path("experiments")

    def debate_configs(self) -> list[tuple[str, DebateConfig]]:
        """One (label, config) per experiment; a sweep yields every speaking order."""
        base = dict(scenario=self.scenario, rounds=self.rounds, runs=self.runs,
                    announce_closing=self.announce_closing,
                    gender_awareness=self.gender_awareness, seed=self.seed,
                    context_budget=self.context_budget, max_tokens=self.max_tokens)
        if self.order == "sweep":
            orders = speaking_orders(self.roster)
            return [(f"order{i}-" + "-".join(s.agent_id for s in o), DebateConfig(roster=o, **base))
                    for i, o in enumerate(orders)]
        if self.order == "default":
            roster = default_order(self.roster)
        elif self.order == "explicit":
            roster = list(self.roster)
        else:
            roster = list(speaking_orders(self.roster)[self.order])
        return [("", DebateConfig(roster=roster, **base))]


def _get(section: dict, key: str, path: str, kind, default=None, required=False):
    if key not in section or section[key] is None:
        if required:
            raise ConfigError(f"{path}.{key}" if path else key, "is required")
        return default
    value = section[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        name = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise ConfigError(f"{path}.{key}" if path else key, f"expected {name}, got {value!r}")
    return value


def _section(data: dict, key: str) -> dict:
    value = data.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(key, "must be a mapping")
    return value


def _parse_backend(name: str, raw: Any, base_dir: Path) -> BackendSpec:
    path = f"backends.{name}"
    if not isinstance(raw, dict):
        raise ConfigError(path, "must be a mapping")
    kind = _get(raw, "kind", path, str, required=True)
    if kind not in ("http", "scripted"):
        raise ConfigError(f"{path}.kind", f"must be 'http' or 'scripted', got {kind!r}")
    temperature: Any = raw.get("temperature", DEFAULT_TEMPERATURE)
    if temperature in ("server-default", "default", None):
        temperature = None
    elif not isinstance(temperature, (int, float)) or not 0 <= temperature <= 2:
        raise ConfigError(f"{path}.temperature", "must be a number in [0, 2] or 'server-default'")
    script = None
    if kind == "scripted":
        raw_script = raw.get("script")
        if isinstance(raw_script, str):
            script_path = (base_dir / raw_script) if not os.path.isabs(raw_script) else Path(raw_script)
            try:
                script = load_script(script_path)
            except (OSError, ValueError, yaml.YAMLError) as exc:
                raise ConfigError(f"{path}.script", f"cannot load fixture: {exc}") from exc
        elif isinstance(raw_script, dict):
            script = raw_script
        else:
            raise ConfigError(f"{path}.script", "scripted backends need a script file or mapping")
    endpoint = _get(raw, "endpoint", path, str)
    if kind == "http" and not endpoint:
        raise ConfigError(f"{path}.endpoint", "is required for http backends")
    api_key = None
    key_env = _get(raw, "api_key_env", path, str)
    if key_env:
        api_key = os.environ.get(key_env)
    try:
        return BackendSpec(
            name=name, kind=kind,
            model_id=_get(raw, "model", path, str, default="scripted" if kind == "scripted" else None,
                          required=kind == "http"),
            endpoint=endpoint, script=script,
            timeout=_get(raw, "timeout", path, float, default=120.0),
            retry_budget=_get(raw, "retry_budget", path, int, default=2),
            temperature=temperature, api_key=api_key,
            delay=_get(raw, "delay", path, float, default=0.0),
        )
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from exc


def _parse_personas(items: Any, backends: dict[str, BackendSpec], base_dir: Path) -> list[AgentSlot]:
    if not isinstance(items, list) or len(items) < 2:
        raise ConfigError("personas", "must list at least two agents")
    slots, seen_ids, name_counts = [], set(), {}
    for i, raw in enumerate(items):
        path = f"personas[{i}]"
        if not isinstance(raw, dict):
            raise ConfigError(path, "must be a mapping")
        leaning_raw = _get(raw, "leaning", path, str, required=True)
        try:
            leaning = Leaning(leaning_raw.lower())
        except ValueError:
            raise ConfigError(f"{path}.leaning", f"unknown leaning {leaning_raw!r}") from None
        gender_raw = _get(raw, "gender", path, str)
        try:
            gender = Gender(gender_raw.lower()) if gender_raw and gender_raw.lower() != "none" else None
        except ValueError:
            raise ConfigError(f"{path}.gender", f"unknown gender {gender_raw!r}") from None
        tier = _get(raw, "tier", path, str, default="simple")
        if tier not in ("simple", "enhanced"):
            raise ConfigError(f"{path}.tier", f"must be 'simple' or 'enhanced', got {tier!r}")
        backend = _get(raw, "backend", path, str, required=True)
        if backend not in backends:
            raise ConfigError(f"{path}.backend", f"unknown backend {backend!r}")
        agent_id = _get(raw, "id", path, str)
        if agent_id is None:
            agent_id = leaning.value
            n = 2
            while agent_id in seen_ids:
                agent_id = f"{leaning.value}{n}"
                n += 1
        if agent_id in seen_ids:
            raise ConfigError(f"{path}.id", f"duplicate agent id {agent_id!r}")
        seen_ids.add(agent_id)
        name = _get(raw, "name", path, str)
        if name is None:
            default = DEFAULT_NAMES[leaning]
            name_counts[default] = name_counts.get(default, 0) + 1
            name = default if name_counts[default] == 1 else f"{default} {name_counts[default]}"
        prompt_text = _get(raw, "prompt_text", path, str)
        if prompt_text is None and raw.get("prompt_file"):
            try:
                prompt_text = (base_dir / raw["prompt_file"]).read_text(encoding="utf-8").strip()
            except OSError as exc:
                raise ConfigError(f"{path}.prompt_file", str(exc)) from exc
        try:
            persona = build_persona(leaning, gender, tier, name, prompt_text)
        except (KeyError, ValueError) as exc:
            raise ConfigError(path, str(exc)) from exc
        slots.append(AgentSlot(agent_id, persona, backends[backend]))
    return slots


def parse_config(data: dict, path: Path | None = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    base_dir = path.parent if path else Path.cwd()

    raw_backends = _section(data, "backends")
    if not raw_backends:
        raise ConfigError("backends", "at least one backend is required")
    backends = {name: _parse_backend(name, raw, base_dir) for name, raw in raw_backends.items()}

    scen_raw = data.get("scenario")
    if isinstance(scen_raw, str):
        try:
            scenario = get_scenario(scen_raw)
        except UnknownTopic as exc:
            raise ConfigError("scenario", str(exc.args[0])) from None
    elif isinstance(scen_raw, dict):
        try:
            scenario = Scenario(**{k: scen_raw.get(k, "") for k in
                                   ("topic", "scenario_text", "debate_question", "evaluation_prompt")})
        except ValueError as exc:
            raise ConfigError("scenario", str(exc)) from None
    else:
        raise ConfigError("scenario", "is required (a topic name or a scenario mapping)")

    roster = _parse_personas(data.get("personas"), backends, base_dir)

    proto = _section(data, "protocol")
    rounds = _get(proto, "rounds", "protocol", int, default=10)
    runs = _get(proto, "runs", "protocol", int, default=10)
    if rounds < 1:
        raise ConfigError("protocol.rounds", "must be at least 1")
    if runs < 1:
        raise ConfigError("protocol.runs", "must be at least 1")
    order = proto.get("order", "default")
    if isinstance(order, bool) or not (order in ORDER_MODES or isinstance(order, int)):
        raise ConfigError("protocol.order", f"must be one of {ORDER_MODES} or a permutation index")
    if isinstance(order, int):
        if not 0 <= order < math.factorial(len(roster)):
            raise ConfigError("protocol.order", f"permutation index {order} out of range")

    judge = _section(data, "judge")
    judge_backend = _get(judge, "backend", "judge", str)
    if judge_backend is not None and judge_backend not in backends:
        raise ConfigError("judge.backend", f"unknown backend {judge_backend!r}")
    few_shots = None
    shots_raw = judge.get("few_shots", "default")
    if isinstance(shots_raw, list):
        try:
            few_shots = [FewShot(str(s["response"]), int(s["score"])) for s in shots_raw]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("judge.few_shots", f"invalid few-shot entry: {exc}") from None
    elif shots_raw != "default":
        raise ConfigError("judge.few_shots", "must be 'default' or a list of {response, score}")
    else:
        try:
            default_few_shots(scenario.topic)
        except KeyError:
            raise ConfigError("judge.few_shots",
                              f"no shipped examples for topic {scenario.topic!r}; list them") from None

    an = _section(data, "analysis")
    grouping = _get(an, "grouping", "analysis", str, default="pooled")
    if grouping not in GROUPINGS:
        raise ConfigError("analysis.grouping", f"unknown grouping {grouping!r}")
    domain = _get(an, "regression_domain", "analysis", str, default="all")
    if domain not in ("all", "rounds"):
        raise ConfigError("analysis.regression_domain", "must be 'all' or 'rounds'")
    center = _get(an, "levene_center", "analysis", str, default="mean")
    if center not in ("mean", "median"):
        raise ConfigError("analysis.levene_center", "must be 'mean' or 'median'")
    analysis = AnalysisSettings(_get(an, "tau", "analysis", float, default=0.05),
                                GROUPINGS[grouping], domain, center)

    validation = _section(data, "validation")
    for i, model in enumerate(validation.get("models", []) or []):
        if model not in backends:
            raise ConfigError(f"validation.models[{i}]", f"unknown backend {model!r}")
    if validation.get("judge") is not None and validation["judge"] not in backends:
        raise ConfigError("validation.judge", f"unknown backend {validation['judge']!r}")

    output = data.get("output", "experiments")
    if not isinstance(output, str):
        raise ConfigError("output", "must be a path")
    output_path = Path(output) if os.path.isabs(output) else base_dir / output

    return ExperimentConfig(
        path=path, backends=backends, roster=roster, scenario=scenario,
        rounds=rounds, runs=runs, order=order,
        announce_closing=_get(proto, "announce_closing", "protocol", bool, default=True),
        gender_awareness=_get(proto, "gender_awareness", "protocol", bool, default=False),
        seed=_get(proto, "seed", "protocol", int, default=0),
        context_budget=_get(proto, "context_budget", "protocol", int),
        max_tokens=_get(proto, "max_tokens", "protocol", int),
        judge_backend=judge_backend, few_shots=few_shots, analysis=analysis,
        validation=validation, output=output_path,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML in {path}: {exc}") from exc
    return parse_config(data, path)


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in changes.items() if v is not None})
