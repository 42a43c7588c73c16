from __future__ import annotations

from pathlib import Path

import pytest
import yaml

from agentdebate.debate import AgentSlot, DebateConfig
from agentdebate.gateway import BackendSpec
from agentdebate.persona import build_simple_persona
from agentdebate.scenario import get_scenario

AGENT_SCRIPT = {
    "*/neutral/*": "I am still weighing both sides ({tag}).",
    "*/republican/*": "Jobs and energy prices matter most ({tag}).",
    "*/democrat/*": "We have to act on the climate now ({tag}).",
}

# judge replies per agent, one per phase for rounds=3 (opening, 3 rounds, closing)
JUDGE_SCRIPT = {
    "judge/*/neutral/opening": "4",
    "judge/*/neutral/round01": "Score: 4",
    "judge/*/neutral/round02": "5",
    "judge/*/neutral/round03": " 5\n",
    "judge/*/neutral/closing": "4",
    "judge/*/republican/opening": "2",
    "judge/*/republican/round*": "3",
    "judge/*/republican/closing": "2",
    "judge/*/democrat/opening": "6",
    "judge/*/democrat/round01": "6",
    "judge/*/democrat/round02": "7",
    "judge/*/democrat/round03": "7",
    "judge/*/democrat/closing": "7",
}


def scripted_spec(name: str = "agents", script=None, **kw) -> BackendSpec:
    return BackendSpec(name=name, kind="scripted", script=AGENT_SCRIPT if script is None else script,
                       **kw)


def roster(genders=(None, None, None), spec: BackendSpec | None = None) -> list[AgentSlot]:
    spec = spec or scripted_spec()
    leanings = ("neutral", "republican", "democrat")
    return [AgentSlot(lean, build_simple_persona(lean, g), spec) for lean, g in zip(leanings, genders)]


def debate_config(rounds=3, runs=2, genders=(None, None, None), spec=None, **kw) -> DebateConfig:
    return DebateConfig(get_scenario("climate_change"), tuple(roster(genders, spec)),
                        rounds=rounds, runs=runs, **kw)


def write_config(directory: Path, *, rounds=3, runs=2, genders=(None, None, None),
                 protocol=None, extra=None, agent_script=None, judge_script=None) -> Path:
    """Write a scripted experiment config (plus fixture files) and return its path."""
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "agents.yaml").write_text(yaml.safe_dump(agent_script or AGENT_SCRIPT))
    (directory / "judge.yaml").write_text(yaml.safe_dump(judge_script or JUDGE_SCRIPT))
    data = {
        "backends": {
            "agents": {"kind": "scripted", "script": "agents.yaml"},
            "judge": {"kind": "scripted", "script": "judge.yaml", "model": "judge-model"},
        },
        "personas": [
            {"leaning": lean, "gender": g, "backend": "agents"}
            for lean, g in zip(("neutral", "republican", "democrat"), genders)
        ],
        "scenario": "climate_change",
        "protocol": {"rounds": rounds, "runs": runs, **(protocol or {})},
        "judge": {"backend": "judge"},
        "output": "experiments",
    }
    data.update(extra or {})
    path = directory / "experiment.yaml"
    path.write_text(yaml.safe_dump(data, sort_keys=False))
    return path


# ---------------------------------------------------------------------------
# one PASS/FAIL line per acceptance criterion

def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): test backs acceptance criterion n")
    config._acceptance = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    store = item.config._acceptance
    n = marker.args[0]
    entry = store.setdefault(n, {"passed": 0, "failed": 0, "skipped": 0})
    if call.when == "call":
        outcome = "passed" if call.excinfo is None else (
            "skipped" if call.excinfo.errisinstance(pytest.skip.Exception) else "failed")
        entry[outcome] += 1
    elif call.excinfo is not None:
        entry["skipped" if call.excinfo.errisinstance(pytest.skip.Exception) else "failed"] += 1


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = getattr(config, "_acceptance", {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(store):
        e = store[n]
        if e["failed"]:
            status = "FAIL"
        elif e["passed"]:
            status = "PASS"
        else:
            status = "SKIP"
        terminalreporter.write_line(
            f"criterion {n:>2}: {status} ({e['passed']} passed, {e['failed']} failed, "
            f"{e['skipped']} skipped)")
