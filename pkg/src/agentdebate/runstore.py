"""On-disk experiment records: manifest, per-run JSON-lines transcripts and scores, reports.

Layout under an experiment directory::

    manifest.json
    runs/NN.jsonl       one statement per line, append-only
    scores/NN.jsonl     one attitude score per line
    reports/analysis.json
    exports/*.csv
    charts/*.svg
"""
from __future__ import annotations

import json
import os
import re
import tempfile
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .debate import DebateConfig, Statement, Transcript, canonical_json, fingerprint
from .judge import AttitudeScore, AttitudeSeries

MANIFEST = "manifest.json"
SUBDIRS = ("runs", "scores", "reports", "exports", "charts")


class StoreError(Exception):
    pass


class StorageUnavailable(StoreError):
    pass


class SealedExperiment(StoreError):
    pass


class NotFound(StoreError):
    pass


class CorruptArtifact(StoreError):
    def __init__(self, path: Path, line: int, reason: str):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line


@dataclass
class RunManifest:
    experiment_id: str
    fingerprint: str
    config: dict
    directory: Path
    runs: dict[str, dict] = field(default_factory=dict)
    artifacts: dict[str, list[str]] = field(default_factory=dict)
    created_at: str = ""
    tool_version: str = __version__
    sealed: bool = False
    label: str = ""

    def to_dict(self) -> dict:
        return {"experiment_id": self.experiment_id, "fingerprint": self.fingerprint,
                "config": self.config, "runs": self.runs, "artifacts": self.artifacts,
                "created_at": self.created_at, "tool_version": self.tool_version,
                "sealed": self.sealed, "label": self.label}

    @classmethod
    def from_dict(cls, data: dict, directory: Path) -> RunManifest:
        return cls(data["experiment_id"], data["fingerprint"], data["config"], directory,
                   data.get("runs", {}), data.get("artifacts", {}), data.get("created_at", ""),
                   data.get("tool_version", ""), data.get("sealed", False), data.get("label", ""))

    @property
    def roster_order(self) -> list[str]:
        return [a["agent_id"] for a in self.config.get("roster", [])]

    def run_path(self, run_id: int) -> Path:
        return self.directory / "runs" / f"{run_id:02d}.jsonl"

    def score_path(self, run_id: int) -> Path:
        return self.directory / "scores" / f"{run_id:02d}.jsonl"


_lock = threading.Lock()


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_manifest(manifest: RunManifest) -> None:
    with _lock:
        try:
            _atomic_write(manifest.directory / MANIFEST,
                          json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
        except OSError as exc:
            raise StorageUnavailable(str(exc)) from exc


def _next_id(root: Path, fp: str) -> str:
    prefix = fp[:12]
    taken = [int(m.group(1)) for p in root.iterdir()
             if (m := re.fullmatch(re.escape(prefix) + r"-(\d+)", p.name))]
    return f"{prefix}-{max(taken, default=0) + 1:03d}"


def open_experiment(config: DebateConfig | dict, root: str | Path, label: str = "") -> RunManifest:
    """Create the experiment directory and persist its manifest before any debate starts."""
    snapshot = config.canonical() if isinstance(config, DebateConfig) else config
    fp = fingerprint(snapshot)
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
        with _lock:
            exp_id = _next_id(root, fp)
            directory = root / exp_id
            directory.mkdir()
        for sub in SUBDIRS:
            (directory / sub).mkdir()
    except OSError as exc:
        raise StorageUnavailable(f"cannot create experiment under {root}: {exc}") from exc
    manifest = RunManifest(exp_id, fp, json.loads(canonical_json(snapshot)), directory,
                           created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
                           label=label)
    save_manifest(manifest)
    return manifest


def _add_artifact(manifest: RunManifest, kind: str, path: Path) -> None:
    rel = path.relative_to(manifest.directory).as_posix()
    items = manifest.artifacts.setdefault(kind, [])
    if rel not in items:
        items.append(rel)
        items.sort()


def start_run(manifest: RunManifest, run_id: int) -> None:
    if manifest.sealed:
        raise SealedExperiment(manifest.experiment_id)
    manifest.runs[str(run_id)] = {"status": "running"}
    manifest.run_path(run_id).touch()
    _add_artifact(manifest, "transcripts", manifest.run_path(run_id))
    save_manifest(manifest)


def finish_run(manifest: RunManifest, transcript: Transcript) -> None:
    entry = {"status": "complete", "statements": len(transcript.statements)}
    if transcript.failure is not None:
        entry = {"status": "failed", "statements": len(transcript.statements),
                 "cause": str(transcript.failure), "phase": transcript.failure.phase}
    manifest.runs[str(transcript.run_id)] = entry
    save_manifest(manifest)


def append_statement(manifest: RunManifest, statement: Statement) -> None:
    """Durably append one statement line before returning."""
    if manifest.sealed:
        raise SealedExperiment(f"experiment {manifest.experiment_id} is sealed")
    line = json.dumps(statement.to_dict(), ensure_ascii=False, sort_keys=True) + "\n"
    path = manifest.run_path(statement.run_id)
    try:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())
    except OSError as exc:
        raise StorageUnavailable(str(exc)) from exc


def seal_experiment(manifest: RunManifest) -> None:
    manifest.sealed = True
    save_manifest(manifest)


def write_scores(manifest: RunManifest, series: AttitudeSeries) -> None:
    for path in (manifest.directory / "scores").glob("*.jsonl"):
        path.unlink()
    manifest.artifacts["scores"] = []
    by_run: dict[int, list[AttitudeScore]] = {}
    for s in series.scores:
        by_run.setdefault(s.run_id, []).append(s)
    for run_id, scores in sorted(by_run.items()):
        path = manifest.score_path(run_id)
        text = "".join(json.dumps(s.to_dict(), sort_keys=True) + "\n" for s in scores)
        _atomic_write(path, text)
        _add_artifact(manifest, "scores", path)
    save_manifest(manifest)


def write_report(manifest: RunManifest, name: str, payload: dict) -> Path:
    path = manifest.directory / "reports" / name
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _add_artifact(manifest, "reports", path)
    save_manifest(manifest)
    return path


def write_export(manifest: RunManifest, subdir: str, name: str, text: str) -> Path:
    path = manifest.directory / subdir / name
    _atomic_write(path, text)
    _add_artifact(manifest, subdir, path)
    save_manifest(manifest)
    return path


def register_artifact(manifest: RunManifest, kind: str, path: Path) -> None:
    _add_artifact(manifest, kind, path)
    save_manifest(manifest)


# ---------------------------------------------------------------------------
# loading

def _read_jsonl(path: Path, tolerate_torn_tail: bool) -> tuple[list[dict], bool]:
    """Parse a JSON-lines file; returns (records, torn_tail_dropped)."""
    data = path.read_bytes()
    if not data:
        return [], False
    lines = data.split(b"\n")
    torn = False
    if lines[-1] == b"":
        lines.pop()
    elif tolerate_torn_tail:
        # a final line without newline is a write interrupted by a crash
        lines.pop()
        torn = True
    else:
        raise CorruptArtifact(path, len(lines), "truncated final line")
    records = []
    for lineno, raw in enumerate(lines, start=1):
        try:
            records.append(json.loads(raw.decode("utf-8")))
        except (ValueError, UnicodeDecodeError) as exc:
            raise CorruptArtifact(path, lineno, f"invalid JSON: {exc}") from exc
    return records, torn


@dataclass
class LoadedExperiment:
    manifest: RunManifest
    transcripts: list[Transcript]
    series: AttitudeSeries | None
    reports: dict[str, dict]
    torn_runs: list[int] = field(default_factory=list)

    @property
    def incomplete_runs(self) -> list[int]:
        return sorted(int(k) for k, v in self.manifest.runs.items() if v["status"] != "complete")

    @property
    def resumable(self) -> bool:
        if self.manifest.sealed:
            return False
        planned = int(self.manifest.config.get("runs", 0))
        return bool(self.incomplete_runs) or len(self.manifest.runs) < planned


def load_manifest(directory: str | Path) -> RunManifest:
    directory = Path(directory)
    path = directory / MANIFEST
    if not path.is_file():
        raise NotFound(f"no experiment at {directory}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise CorruptArtifact(path, 1, f"invalid manifest: {exc}") from exc
    return RunManifest.from_dict(data, directory)


def load_experiment(root: str | Path, experiment_id: str | None = None) -> LoadedExperiment:
    """Load everything persisted for an experiment.

    ``root`` may be the experiment directory itself, or its parent together
    with ``experiment_id``.
    """
    directory = Path(root) if experiment_id is None else Path(root) / experiment_id
    manifest = load_manifest(directory)
    rounds = int(manifest.config.get("rounds", 0))
    agents = [{"agent_id": a["agent_id"], "name": a["persona"]["name"],
               "leaning": a["persona"]["leaning"], "gender": a["persona"]["gender"]}
              for a in manifest.config.get("roster", [])]

    transcripts, torn_runs = [], []
    for run_key in sorted(manifest.runs, key=int):
        run_id = int(run_key)
        status = manifest.runs[run_key]["status"]
        path = manifest.run_path(run_id)
        if not path.is_file():
            raise CorruptArtifact(path, 0, "transcript listed in manifest is missing")
        records, torn = _read_jsonl(path, tolerate_torn_tail=status != "complete")
        if torn:
            torn_runs.append(run_id)
        try:
            statements = [Statement.from_dict(r) for r in records]
        except (KeyError, ValueError, TypeError) as exc:
            raise CorruptArtifact(path, 0, f"bad statement record: {exc}") from exc
        transcripts.append(Transcript(manifest.fingerprint, run_id, agents, statements))

    series = None
    score_files = sorted((directory / "scores").glob("*.jsonl"))
    if score_files:
        scores = []
        for path in score_files:
            records, _ = _read_jsonl(path, tolerate_torn_tail=False)
            for lineno, r in enumerate(records, start=1):
                try:
                    scores.append(AttitudeScore.from_dict(r))
                except (KeyError, ValueError, TypeError) as exc:
                    raise CorruptArtifact(path, lineno, f"bad score record: {exc}") from exc
        series = AttitudeSeries(rounds, agents, scores)

    reports = {}
    for path in sorted((directory / "reports").glob("*.json")):
        try:
            reports[path.name] = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise CorruptArtifact(path, 1, f"invalid report JSON: {exc}") from exc
    return LoadedExperiment(manifest, transcripts, series, reports, torn_runs)
