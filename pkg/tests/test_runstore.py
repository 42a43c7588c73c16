import json
import os

import pytest

from agentdebate import runstore
from agentdebate.debate import Statement, run_debate
from agentdebate.gateway import BackendSpec, open_backend
from agentdebate.judge import score_transcript

from conftest import JUDGE_SCRIPT, debate_config


def record_experiment(root, cfg=None):
    cfg = cfg or debate_config(rounds=3, runs=2)
    manifest = runstore.open_experiment(cfg, root)
    transcripts = run_debate(
        cfg, on_statement=lambda s: runstore.append_statement(manifest, s),
        on_run_start=lambda r: runstore.start_run(manifest, r),
        on_run_end=lambda t: runstore.finish_run(manifest, t))
    return manifest, transcripts


def test_layout_and_manifest(tmp_path):
    cfg = debate_config()
    manifest = runstore.open_experiment(cfg, tmp_path)
    d = manifest.directory
    assert d.name == f"{cfg.fingerprint()[:12]}-001"
    for sub in runstore.SUBDIRS:
        assert (d / sub).is_dir()
    data = json.loads((d / "manifest.json").read_text())
    assert data["fingerprint"] == cfg.fingerprint()
    assert data["config"] == cfg.canonical()
    assert data["sealed"] is False
    assert manifest.roster_order == ["neutral", "republican", "democrat"]


def test_same_config_gets_distinct_ids(tmp_path):
    cfg = debate_config()
    a = runstore.open_experiment(cfg, tmp_path)
    b = runstore.open_experiment(cfg, tmp_path)
    assert a.fingerprint == b.fingerprint
    assert a.experiment_id != b.experiment_id
    assert b.experiment_id.endswith("-002")


def test_round_trip(tmp_path):
    manifest, transcripts = record_experiment(tmp_path)
    series = score_transcript(transcripts, manifest_scenario(), open_backend(
        BackendSpec("j", "scripted", script=JUDGE_SCRIPT)))
    runstore.write_scores(manifest, series)
    runstore.write_report(manifest, "analysis.json", {"ok": True})
    runstore.write_export(manifest, "exports", "x.csv", "a,b\n")
    runstore.seal_experiment(manifest)

    loaded = runstore.load_experiment(tmp_path, manifest.experiment_id)
    assert [t.statements for t in loaded.transcripts] == [t.statements for t in transcripts]
    assert loaded.series.scores == series.scores
    assert loaded.series.rounds == 3
    assert loaded.reports == {"analysis.json": {"ok": True}}
    assert loaded.manifest.runs == {"1": {"status": "complete", "statements": 15},
                                    "2": {"status": "complete", "statements": 15}}
    assert loaded.manifest.artifacts["exports"] == ["exports/x.csv"]
    assert loaded.manifest.artifacts["transcripts"] == ["runs/01.jsonl", "runs/02.jsonl"]
    assert not loaded.resumable and not loaded.incomplete_runs
    assert loaded.transcripts[0].agents[1]["name"] == "Alex"


def manifest_scenario():
    return debate_config().scenario


def test_rescoring_replaces_scores(tmp_path):
    manifest, transcripts = record_experiment(tmp_path)
    judge = open_backend(BackendSpec("j", "scripted", script={"*": "4"}))
    runstore.write_scores(manifest, score_transcript(transcripts, manifest_scenario(), judge))
    runstore.write_scores(manifest, score_transcript(transcripts[:1], manifest_scenario(), judge))
    assert sorted(p.name for p in (manifest.directory / "scores").iterdir()) == ["01.jsonl"]


def test_sealed_experiment_rejects_appends(tmp_path):
    manifest, _ = record_experiment(tmp_path)
    runstore.seal_experiment(manifest)
    with pytest.raises(runstore.SealedExperiment):
        runstore.append_statement(manifest, Statement(1, "round", 1, "neutral", "late"))
    with pytest.raises(runstore.SealedExperiment):
        runstore.start_run(manifest, 3)


def test_not_found(tmp_path):
    with pytest.raises(runstore.NotFound):
        runstore.load_experiment(tmp_path / "nothing")


def test_corrupt_line_reports_line_number(tmp_path):
    manifest, _ = record_experiment(tmp_path)
    path = manifest.run_path(1)
    lines = path.read_text().splitlines(keepends=True)
    lines[4] = "{not json}\n"
    path.write_text("".join(lines))
    with pytest.raises(runstore.CorruptArtifact) as info:
        runstore.load_experiment(manifest.directory)
    assert info.value.line == 5
    assert "01.jsonl:5" in str(info.value)


def test_truncated_tail_of_complete_run_is_corruption(tmp_path):
    manifest, _ = record_experiment(tmp_path)
    path = manifest.run_path(2)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(runstore.CorruptArtifact):
        runstore.load_experiment(manifest.directory)


def test_torn_tail_of_running_run_is_tolerated(tmp_path):
    cfg = debate_config(rounds=3, runs=3)
    manifest = runstore.open_experiment(cfg, tmp_path)
    runstore.start_run(manifest, 1)
    for i, agent in enumerate(["neutral", "republican"]):
        runstore.append_statement(manifest, Statement(1, "opening", 0, agent, f"s{i}"))
    with open(manifest.run_path(1), "a") as fh:
        fh.write('{"agent_id": "democ')
    loaded = runstore.load_experiment(manifest.directory)
    assert loaded.torn_runs == [1]
    assert len(loaded.transcripts[0].statements) == 2
    assert loaded.resumable
    assert loaded.incomplete_runs == [1]
    assert loaded.manifest.runs["1"]["status"] == "running"


def test_failed_run_status(tmp_path):
    spec = BackendSpec("agents", "scripted", script={"run01/*": "fine"})
    manifest, _ = record_experiment(tmp_path, debate_config(rounds=1, runs=2, spec=spec))
    loaded = runstore.load_experiment(manifest.directory)
    assert loaded.manifest.runs["1"]["status"] == "complete"
    failed = loaded.manifest.runs["2"]
    assert failed["status"] == "failed" and failed["phase"] == "opening"
    assert failed["statements"] == 0
    assert loaded.resumable


def test_missing_transcript_file(tmp_path):
    manifest, _ = record_experiment(tmp_path)
    manifest.run_path(2).unlink()
    with pytest.raises(runstore.CorruptArtifact):
        runstore.load_experiment(manifest.directory)


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_storage_unavailable(tmp_path):
    root = tmp_path / "ro"
    root.mkdir()
    root.chmod(0o500)
    try:
        with pytest.raises(runstore.StorageUnavailable):
            runstore.open_experiment(debate_config(), root)
    finally:
        root.chmod(0o700)


def test_storage_unavailable_when_root_is_a_file(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(runstore.StorageUnavailable):
        runstore.open_experiment(debate_config(), blocker)


def test_corrupt_manifest(tmp_path):
    manifest = runstore.open_experiment(debate_config(), tmp_path)
    (manifest.directory / "manifest.json").write_text("{")
    with pytest.raises(runstore.CorruptArtifact):
        runstore.load_experiment(manifest.directory)
