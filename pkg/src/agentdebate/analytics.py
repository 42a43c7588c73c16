"""Attitude analysis: trajectories, reversion ratios, echo chambers, ANOVA and Levene."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

from .judge import AttitudeSeries
from .stats import f_sf

ALPHA = 0.05
NEUTRAL_BASELINE = 4.0
DEFAULT_TAU = 0.05
OPINIONATED = ("republican", "democrat")

REVERSION_DEFINITIONS = {
    "guard": "R = 0 when A_mean == A_first (the guard's reference attitude is taken to be A_mean)",
    "A_first": "score of the opening statement",
    "A_final": "score of the last scored statement of the run (normally the closing statement)",
    "A_mean": "mean of the round scores strictly between the opening and the final scored statement",
}


class NoData(ValueError):
    pass


class InsufficientPoints(ValueError):
    pass


class MissingTrajectory(KeyError):
    pass


class DegenerateInput(ValueError):
    pass


# ---------------------------------------------------------------------------
# reversion

@dataclass(frozen=True)
class ReversionInputs:
    a_first: float
    a_mean: float
    a_final: float

    def __post_init__(self):
        for name in ("a_first", "a_mean", "a_final"):
            value = getattr(self, name)
            if not 1.0 <= value <= 7.0:
                raise ValueError(f"{name}={value} outside the 1..7 attitude range")


def reversion_ratio(a_first, a_mean: float | None = None, a_final: float | None = None) -> float:
    """How far the final attitude returns toward the opening one, relative to the mid-debate mean.

    Accepts either a :class:`ReversionInputs` or the three attitudes positionally.
    """
    if isinstance(a_first, ReversionInputs):
        a_first, a_mean, a_final = a_first.a_first, a_first.a_mean, a_first.a_final
    if a_mean == a_first:
        return 0.0
    return (a_mean - a_final) / (a_mean - a_first)


def run_reversion_inputs(row: Sequence[float | None]) -> ReversionInputs | None:
    """Reversion inputs from one run's positional scores (opening, rounds..., closing).

    Returns None when the run lacks an opening score, a final score, or any
    middle-round score.
    """
    if not row or row[0] is None:
        return None
    final_idx = next((i for i in range(len(row) - 1, 0, -1) if row[i] is not None), None)
    if final_idx is None:
        return None
    middle = [v for v in row[1:final_idx] if v is not None]
    if not middle:
        return None
    return ReversionInputs(float(row[0]), math.fsum(middle) / len(middle), float(row[final_idx]))


def reversion_by_run(series: AttitudeSeries, agent_id: str) -> dict[int, float | None]:
    out = {}
    for run_id, row in series.per_run(agent_id).items():
        inputs = run_reversion_inputs(row)
        out[run_id] = None if inputs is None else reversion_ratio(inputs)
    return out


def mean_reversion(series: AttitudeSeries | Iterable[AttitudeSeries], agent_id: str) -> float:
    """Mean of per-run reversion ratios across runs (and across series, e.g. topics)."""
    pool = [series] if isinstance(series, AttitudeSeries) else list(series)
    values = [r for s in pool for r in reversion_by_run(s, agent_id).values() if r is not None]
    if not values:
        raise NoData(f"no complete runs to compute reversion for {agent_id}")
    return math.fsum(values) / len(values)


# ---------------------------------------------------------------------------
# trajectories

def quantile(values: Sequence[float], q: float) -> float:
    """Quantile by linear interpolation between closest ranks."""
    if not values:
        raise NoData("quantile of empty sample")
    xs = sorted(values)
    pos = q * (len(xs) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (pos - lo) * (xs[hi] - xs[lo])


@dataclass(frozen=True)
class PhaseStats:
    position: int
    label: str
    n: int
    mean: float | None
    q1: float | None = None
    median: float | None = None
    q3: float | None = None
    min: float | None = None
    max: float | None = None
    values: tuple[float, ...] = ()


def phase_label(position: int, rounds: int) -> str:
    if position == 0:
        return "opening"
    if position == rounds + 1:
        return "closing"
    return f"round {position}"


def summarize(position: int, label: str, values: Sequence[float]) -> PhaseStats:
    if not values:
        return PhaseStats(position, label, 0, None)
    return PhaseStats(position, label, len(values), math.fsum(values) / len(values),
                      quantile(values, 0.25), quantile(values, 0.5), quantile(values, 0.75),
                      min(values), max(values), tuple(values))


@dataclass(frozen=True)
class Trajectory:
    agent_id: str
    phases: tuple[PhaseStats, ...]

    @property
    def means(self) -> list[float | None]:
        return [p.mean for p in self.phases]

    @property
    def round_means(self) -> list[float | None]:
        return [p.mean for p in self.phases[1:-1]]

    @classmethod
    def from_means(cls, agent_id: str, means: Sequence[float]) -> Trajectory:
        rounds = len(means) - 2
        return cls(agent_id, tuple(summarize(i, phase_label(i, rounds), [m])
                                   for i, m in enumerate(means)))


def trajectory(series: AttitudeSeries, agent_id: str) -> Trajectory:
    runs = series.per_run(agent_id)
    if not runs or all(v is None for row in runs.values() for v in row):
        raise NoData(f"no scores for agent {agent_id}")
    phases = []
    for pos in range(series.rounds + 2):
        values = [float(row[pos]) for row in runs.values() if row[pos] is not None]
        phases.append(summarize(pos, phase_label(pos, series.rounds), values))
    return Trajectory(agent_id, tuple(phases))


def linear_gradient(means: Sequence[float | None]) -> float:
    """OLS slope of the values against their indices 0..n-1; None entries are skipped."""
    pts = [(float(i), float(y)) for i, y in enumerate(means) if y is not None]
    if len(pts) < 2:
        raise InsufficientPoints("a slope needs at least two points")
    n = len(pts)
    xbar = math.fsum(x for x, _ in pts) / n
    ybar = math.fsum(y for _, y in pts) / n
    sxx = math.fsum((x - xbar) ** 2 for x, _ in pts)
    sxy = math.fsum((x - xbar) * (y - ybar) for x, y in pts)
    return sxy / sxx


# ---------------------------------------------------------------------------
# echo chambers

@dataclass(frozen=True)
class AgentDrift:
    agent_id: str
    slope: float
    mean: float
    direction: str


@dataclass(frozen=True)
class EchoChamberVerdict:
    agents: tuple[AgentDrift, ...]
    chamber_formed: bool
    threshold: float
    domain: str

    def to_dict(self) -> dict:
        return {"agents": [asdict(a) for a in self.agents], "chamber_formed": self.chamber_formed,
                "threshold": self.threshold, "domain": self.domain}


def classify_drift(mean: float, slope: float, tau: float) -> str:
    if abs(slope) <= tau:
        return "flat"
    if (mean > NEUTRAL_BASELINE and slope > tau) or (mean < NEUTRAL_BASELINE and slope < -tau):
        return "intensifying"
    return "moderating"


def detect_echo_chamber(trajectories: Mapping[str, Trajectory], opinionated: Sequence[str],
                        tau: float = DEFAULT_TAU, domain: str = "all") -> EchoChamberVerdict:
    """A chamber forms when every opinionated agent drifts away from the neutral 4.

    ``domain="all"`` fits the slope over opening, rounds and closing;
    ``domain="rounds"`` over the discussion rounds only.
    """
    if domain not in ("all", "rounds"):
        raise ValueError(f"unknown regression domain {domain!r}")
    drifts = []
    for agent_id in opinionated:
        if agent_id not in trajectories:
            raise MissingTrajectory(agent_id)
        traj = trajectories[agent_id]
        means = traj.means if domain == "all" else traj.round_means
        present = [m for m in means if m is not None]
        if not present:
            raise MissingTrajectory(f"{agent_id} has no scored phases")
        slope = linear_gradient(means)
        mean = math.fsum(present) / len(present)
        drifts.append(AgentDrift(agent_id, slope, mean, classify_drift(mean, slope, tau)))
    formed = bool(drifts) and all(d.direction == "intensifying" for d in drifts)
    return EchoChamberVerdict(tuple(drifts), formed, tau, domain)


# ---------------------------------------------------------------------------
# significance tests

@dataclass(frozen=True)
class TestResult:
    test: str
    statistic: float
    df: tuple[int, int]
    p_value: float
    significant: bool
    center: str | None = None

    __test__ = False

    def to_dict(self) -> dict:
        out = {"test": self.test, "statistic": _finite(self.statistic),
               "df": list(self.df), "p_value": self.p_value, "significant": self.significant}
        if self.center is not None:
            out["center"] = self.center
        return out


def _finite(x: float) -> float | str:
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def _f_test(groups: Sequence[Sequence[float]], name: str, center: str | None = None) -> TestResult:
    k = len(groups)
    if k < 2:
        raise DegenerateInput("need at least two groups")
    if any(len(g) < 2 for g in groups):
        raise DegenerateInput("every group needs at least two samples")
    n_total = sum(len(g) for g in groups)
    df_between, df_within = k - 1, n_total - k
    means = [math.fsum(g) / len(g) for g in groups]
    grand = math.fsum(x for g in groups for x in g) / n_total
    ss_between = math.fsum(len(g) * (m - grand) ** 2 for g, m in zip(groups, means))
    ss_within = math.fsum((x - m) ** 2 for g, m in zip(groups, means) for x in g)
    if ss_within == 0.0:
        if ss_between == 0.0:
            raise DegenerateInput("zero within-group and between-group variance")
        stat, p = math.inf, 0.0
    else:
        stat = (ss_between / df_between) / (ss_within / df_within)
        p = f_sf(stat, df_between, df_within)
    return TestResult(name, stat, (df_between, df_within), p, p < ALPHA, center)


def one_way_anova(groups: Sequence[Sequence[float]]) -> TestResult:
    return _f_test([[float(x) for x in g] for g in groups], "anova")


def levene_test(groups: Sequence[Sequence[float]], center: str = "mean") -> TestResult:
    """Levene's test; ``center="median"`` gives the Brown-Forsythe variant."""
    if center not in ("mean", "median"):
        raise ValueError(f"center must be 'mean' or 'median', got {center!r}")
    deviations = []
    for g in groups:
        g = [float(x) for x in g]
        if not g:
            raise DegenerateInput("empty group")
        c = math.fsum(g) / len(g) if center == "mean" else quantile(g, 0.5)
        deviations.append([abs(x - c) for x in g])
    return _f_test(deviations, "levene", center)


def experiment_groups(series: AttitudeSeries, grouping: str,
                      agent_ids: Sequence[str] | None = None) -> list[float]:
    """Flatten one experiment's scores into a single test group."""
    agents = set(agent_ids) if agent_ids is not None else set(series.agent_ids)
    scored = [s for s in series.scores if s.agent_id in agents and s.score is not None]
    if grouping == "pooled":
        return [float(s.score) for s in scored]
    if grouping == "by_round_means":
        by_pos: dict[int, list[float]] = {}
        for s in scored:
            by_pos.setdefault(s.round, []).append(float(s.score))
        return [math.fsum(v) / len(v) for _, v in sorted(by_pos.items())]
    raise ValueError(f"unknown grouping {grouping!r}")


def compare_experiments(series_a: AttitudeSeries, series_b: AttitudeSeries,
                        grouping: str = "pooled", center: str = "mean",
                        agent_ids: Sequence[str] | None = None) -> tuple[TestResult, TestResult]:
    groups = [experiment_groups(series_a, grouping, agent_ids),
              experiment_groups(series_b, grouping, agent_ids)]
    if not groups[0] or not groups[1]:
        raise NoData("both experiments need scored statements")
    return one_way_anova(groups), levene_test(groups, center)


# ---------------------------------------------------------------------------
# report

@dataclass
class AnalysisReport:
    fingerprint: str
    rounds: int
    agents: list[dict]
    trajectories: dict[str, Trajectory]
    reversion: dict[str, dict]
    echo_chamber: EchoChamberVerdict | None
    gaps: int
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "rounds": self.rounds,
            "agents": self.agents,
            "trajectories": {
                aid: [{k: v for k, v in asdict(p).items() if k != "values"} for p in t.phases]
                for aid, t in self.trajectories.items()
            },
            "reversion": self.reversion,
            "echo_chamber": self.echo_chamber.to_dict() if self.echo_chamber else None,
            "gaps": self.gaps,
            "metadata": self.metadata,
        }


def analyze(series: AttitudeSeries, fingerprint: str = "", tau: float = DEFAULT_TAU,
            domain: str = "all") -> AnalysisReport:
    trajectories = {}
    for aid in series.agent_ids:
        try:
            trajectories[aid] = trajectory(series, aid)
        except NoData:
            continue
    reversion = {}
    for aid in series.agent_ids:
        by_run = reversion_by_run(series, aid)
        present = [r for r in by_run.values() if r is not None]
        reversion[aid] = {
            "by_run": {str(k): v for k, v in by_run.items()},
            "mean": math.fsum(present) / len(present) if present else None,
        }
    opinionated = [a["agent_id"] for a in series.agents
                   if a["leaning"] in OPINIONATED and a["agent_id"] in trajectories]
    verdict = detect_echo_chamber(trajectories, opinionated, tau, domain) if opinionated else None
    metadata = {
        "reversion": REVERSION_DEFINITIONS,
        "quartile_method": "linear interpolation between closest ranks",
        "regression_domain": domain,
        "echo_threshold": tau,
        "alpha": ALPHA,
    }
    return AnalysisReport(fingerprint, series.rounds, series.agents, trajectories, reversion,
                          verdict, len(series.gaps), metadata)
