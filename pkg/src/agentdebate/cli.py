"""Command-line entry point: validate-personas, run, score, analyze."""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import sys
import threading
from pathlib import Path
from typing import Sequence

from . import analytics, charts, runstore
from .config import GROUPINGS, ConfigError, ExperimentConfig, load_config
from .debate import run_debate
from .gateway import ChatRequest, GatewayError, open_backend
from .judge import score_transcript
from .persona import (Leaning, alignment_matrix, build_persona, judge_alignment,
                      run_validation_interview)
from .scenario import Scenario

log = logging.getLogger("agentdebate")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2

_print_lock = threading.Lock()


def say(*parts) -> None:
    with _print_lock:
        print(*parts, flush=True)


class RequestLog:
    """Append every outbound chat request to a JSON-lines file."""

    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("", encoding="utf-8")

    def __call__(self, request: ChatRequest) -> None:
        line = json.dumps({"tag": request.request_tag, "model": request.model_id,
                           "messages": [m.to_dict() for m in request.messages]},
                          ensure_ascii=False)
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")


def _load(path: str, args) -> ExperimentConfig:
    cfg = load_config(path)
    if getattr(args, "permutation_sweep", False):
        cfg.order = "sweep"
    if getattr(args, "no_announce_closing", False):
        cfg.announce_closing = False
    if getattr(args, "gender_awareness", False):
        cfg.gender_awareness = True
    if getattr(args, "out", None) and args.command == "run":
        cfg.output = Path(args.out)
    return cfg


# ---------------------------------------------------------------------------

def cmd_validate_personas(args) -> int:
    cfg = _load(args.config, args)
    val = cfg.validation
    models = val.get("models") or sorted({s.backend.name for s in cfg.roster})
    judge_name = val.get("judge") or cfg.judge_backend
    if judge_name is None:
        raise ConfigError("validation.judge", "a judge backend is required")
    tier = val.get("tier", "enhanced")
    variants = val.get("variants") or [
        {"leaning": l.value, "gender": g} for l in Leaning for g in (None, "male", "female")]
    out_dir = Path(args.out) if args.out else cfg.output / "validation"

    personas = []
    for i, v in enumerate(variants):
        try:
            personas.append(build_persona(v["leaning"], v.get("gender"), tier))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"validation.variants[{i}]", str(exc)) from None

    judge = open_backend(cfg.backends[judge_name])
    records = []
    try:
        for model in models:
            backend = open_backend(cfg.backends[model])
            for persona in personas:
                for rec in run_validation_interview(persona, backend):
                    records.append(judge_alignment(rec, judge))
    except GatewayError as exc:
        say(f"error: {exc}")
        return EXIT_FAILURE

    stats = alignment_matrix(records)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "alignment.csv").write_text(stats.to_csv(), encoding="utf-8")
    (out_dir / "interviews.jsonl").write_text("".join(
        json.dumps({"model": r.model_id, "variant": r.persona.variant,
                    "question_id": r.question_id, "answer": r.answer_text,
                    "verdict": r.verdict.value}, ensure_ascii=False) + "\n" for r in records),
        encoding="utf-8")
    charts.alignment_heatmap(stats, out_dir / "alignment.svg")
    for (model, variant), cell in stats.cells.items():
        frac = cell.fraction
        pct = "n/a" if frac is None else f"{100 * frac:.1f}%"
        say(f"{model:<20} {variant:<22} aligned {pct:>7}  "
            f"({cell.aligned}/{cell.not_aligned}/{cell.indeterminate} a/n/i)")
    say(f"alignment matrix written to {out_dir / 'alignment.csv'}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args.config, args)
    # every config is built before anything touches the filesystem
    experiments = cfg.debate_configs()
    request_log = RequestLog(Path(args.request_log)) if args.request_log else None

    for spec in cfg.backends.values():
        if spec.kind == "http" and any(s.backend.name == spec.name for s in cfg.roster):
            report = open_backend(spec).healthcheck()
            if not report["reachable"]:
                say(f"warning: backend {spec.name} unreachable: {report['error']}")
            elif not report["model_available"]:
                say(f"warning: model {spec.model_id} not listed by backend {spec.name}")

    total = failed = 0
    for label, dcfg in experiments:
        manifest = runstore.open_experiment(dcfg, cfg.output, label=label)
        say(f"experiment {manifest.experiment_id} {label}".rstrip()
            + f" order={'/'.join(s.agent_id for s in dcfg.roster)} -> {manifest.directory}")
        backends = {}
        for slot in dcfg.roster:
            backends.setdefault(slot.backend.name, open_backend(slot.backend, request_log))

        def on_end(t, manifest=manifest):
            runstore.finish_run(manifest, t)
            status = "complete" if t.failure is None else f"FAILED ({t.failure})"
            say(f"  run {t.run_id:02d}: {status}, {len(t.statements)} statements")

        results = run_debate(
            dcfg, backends,
            on_statement=lambda s, manifest=manifest: runstore.append_statement(manifest, s),
            on_run_start=lambda r, manifest=manifest: runstore.start_run(manifest, r),
            on_run_end=on_end,
            parallelism=args.parallelism,
        )
        runstore.seal_experiment(manifest)
        total += len(results)
        failed += sum(1 for t in results if t.failure is not None)
    say(f"{total - failed}/{total} runs complete")
    return EXIT_OK if failed == 0 else EXIT_FAILURE


def cmd_score(args) -> int:
    cfg = _load(args.config, args)
    if cfg.judge_backend is None:
        raise ConfigError("judge.backend", "is required for scoring")
    status = EXIT_OK
    for directory in args.experiments:
        try:
            loaded = runstore.load_experiment(directory)
        except runstore.NotFound as exc:
            say(f"error: {exc}")
            status = EXIT_FAILURE
            continue
        statements = sum(len(t.statements) for t in loaded.transcripts)
        if not statements:
            say(f"error: {directory}: no transcripts to score")
            status = EXIT_FAILURE
            continue
        scenario = Scenario(**loaded.manifest.config["scenario"])
        judge = open_backend(cfg.backends[cfg.judge_backend])
        series = score_transcript(loaded.transcripts, scenario, judge, cfg.few_shots,
                                  rounds=int(loaded.manifest.config["rounds"]),
                                  parallelism=args.parallelism)
        runstore.write_scores(loaded.manifest, series)
        runstore.write_export(loaded.manifest, "exports", "scores.csv", series.to_csv())
        scored = len(series.scores) - len(series.gaps)
        say(f"{loaded.manifest.experiment_id}: {scored}/{len(series.scores)} statements scored, "
            f"{len(series.gaps)} gaps")
        if scored == 0:
            status = EXIT_FAILURE
    return status


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{x:.6g}" if isinstance(x, float) else str(x)


def _trajectory_csv(report: analytics.AnalysisReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["agent", "phase", "n", "mean", "q1", "median", "q3", "min", "max"])
    for aid, traj in report.trajectories.items():
        for p in traj.phases:
            w.writerow([aid, p.label, p.n, *(_fmt(v) for v in
                                             (p.mean, p.q1, p.median, p.q3, p.min, p.max))])
    return buf.getvalue()


def _reversion_csv(report: analytics.AnalysisReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["agent", "run", "ratio"])
    for aid, entry in report.reversion.items():
        for run, r in entry["by_run"].items():
            w.writerow([aid, run, _fmt(r)])
        w.writerow([aid, "mean", _fmt(entry["mean"])])
    return buf.getvalue()


def _tests_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["experiment_a", "experiment_b", "grouping", "test", "statistic", "df1", "df2",
                "p_value", "significant"])
    for row in rows:
        for key in ("anova", "levene"):
            t = row[key]
            w.writerow([row["a"], row["b"], row["grouping"], t["test"], _fmt(t["statistic"]),
                        t["df"][0], t["df"][1], _fmt(t["p_value"]), t["significant"]])
    return buf.getvalue()


def cmd_analyze(args) -> int:
    settings = load_config(args.config).analysis if args.config else None
    tau = args.tau if args.tau is not None else (settings.tau if settings else analytics.DEFAULT_TAU)
    domain = args.regression_domain or (settings.regression_domain if settings else "all")
    grouping = GROUPINGS[args.grouping] if args.grouping else (
        settings.grouping if settings else "pooled")
    center = args.levene_center or (settings.levene_center if settings else "mean")

    loaded_all = []
    for directory in args.experiments:
        try:
            loaded = runstore.load_experiment(directory)
        except runstore.StoreError as exc:
            say(f"error: {exc}")
            return EXIT_FAILURE
        if loaded.series is None:
            say(f"error: {directory}: no scores; run `agentdebate score` first")
            return EXIT_FAILURE
        loaded_all.append(loaded)

    for loaded in loaded_all:
        m = loaded.manifest
        report = analytics.analyze(loaded.series, m.fingerprint, tau, domain)
        payload = report.to_dict()
        runstore.write_report(m, "analysis.json", payload)
        runstore.write_export(m, "exports", "trajectories.csv", _trajectory_csv(report))
        runstore.write_export(m, "exports", "reversion.csv", _reversion_csv(report))
        chart = charts.trajectory_chart(report.trajectories, report.agents,
                                        m.directory / "charts" / "trajectories.svg",
                                        title=m.config["scenario"]["topic"].replace("_", " "))
        runstore.register_artifact(m, "charts", chart)
        verdict = report.echo_chamber
        echo = "n/a" if verdict is None else ("formed" if verdict.chamber_formed else "not formed")
        say(f"{m.experiment_id}: {len(report.trajectories)} trajectories, {report.gaps} gaps, "
            f"echo chamber {echo} (tau={tau})")
        for aid, entry in report.reversion.items():
            say(f"  {aid:<14} R_mean={_fmt(entry['mean']) or 'n/a'}")

    if len(loaded_all) > 1:
        rows = []
        for a, b in itertools.combinations(loaded_all, 2):
            anova, levene = analytics.compare_experiments(a.series, b.series, grouping, center)
            rows.append({"a": a.manifest.experiment_id, "b": b.manifest.experiment_id,
                         "grouping": grouping, "anova": anova.to_dict(),
                         "levene": levene.to_dict()})
            say(f"{a.manifest.experiment_id} vs {b.manifest.experiment_id}: "
                f"ANOVA F={_fmt(anova.statistic)} p={_fmt(anova.p_value)}; "
                f"Levene W={_fmt(levene.statistic)} p={_fmt(levene.p_value)}")
        out = Path(args.out) if args.out else loaded_all[0].manifest.directory / "reports"
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.json").write_text(
            json.dumps({"grouping": grouping, "levene_center": center, "comparisons": rows},
                       indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out / "comparison.csv").write_text(_tests_csv(rows), encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agentdebate", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-personas", help="interview personas and judge their alignment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="directory for alignment.csv and the heatmap")
    p.set_defaults(func=cmd_validate_personas)

    p = sub.add_parser("run", help="run debate experiments")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="experiment root (overrides the config's output)")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--permutation-sweep", action="store_true",
                   help="run every speaking order as its own experiment")
    p.add_argument("--no-announce-closing", action="store_true")
    p.add_argument("--gender-awareness", action="store_true")
    p.add_argument("--request-log", help="write every outbound request to this JSON-lines file")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("score", help="judge every statement of stored transcripts")
    p.add_argument("experiments", nargs="+")
    p.add_argument("--config", required=True)
    p.add_argument("--parallelism", type=int, default=1)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("analyze", help="write reports, CSV tables and charts")
    p.add_argument("experiments", nargs="+")
    p.add_argument("--config")
    p.add_argument("--out", help="directory for the cross-experiment comparison")
    p.add_argument("--tau", type=float)
    p.add_argument("--grouping", choices=["pooled", "round-means"])
    p.add_argument("--levene-center", choices=["mean", "median"])
    p.add_argument("--regression-domain", choices=["all", "rounds"])
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        say(f"config error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
