"""Evaluation quantities computed from a feedback store snapshot.

Covers per-system win/loss/tie tallies and their Outcome ratio, click-through
rates, element-weighted rewards with their normalized pairwise form, query
statistics, plotting distributions, and the two significance tests used in
round reports (Wilcoxon signed-rank, Spearman rank correlation).
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from scipy.special import stdtr

from .interleave import JudgeResult, attribute_clicks, highest_exp_rank, judge
from .model import TaskType, TeamLabel
from .store import StoreSnapshot

WILCOXON_PAIRING_NOTE = (
    "wilcoxon pairs are per-impression (experimental clicks, baseline clicks) "
    "over clicked interleaved impressions"
)

DEFAULT_ELEMENT_WEIGHTS: dict[str, float] = {
    "Bookmark": 10.0,
    "Order": 10.0,
    "Fulltext": 8.0,
    "In Stock": 8.0,
    "More Links": 2.0,
    "Title": 1.0,
    "Details": 1.0,
}


@dataclass(frozen=True)
class RewardWeights:
    """Per-element click weights; unknown elements fall back to the default element."""

    weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_ELEMENT_WEIGHTS))
    default_element: str = "Details"

    def __post_init__(self) -> None:
        if not self.weights:
            raise ValueError("weights must be non-empty")
        for element, weight in self.weights.items():
            if not element:
                raise ValueError("empty element name in weights")
            if not math.isfinite(weight) or weight < 0:
                raise ValueError(f"weight for {element!r} must be finite and >= 0")
        if self.default_element not in self.weights:
            raise ValueError(f"default element {self.default_element!r} has no weight")

    def normalize(self, element: str) -> str:
        return element if element in self.weights else self.default_element

    def weight_for(self, element: str) -> float:
        return self.weights.get(element, self.weights[self.default_element])

    def elements(self) -> tuple[str, ...]:
        return tuple(sorted(self.weights))


def outcome(wins: int, losses: int) -> float | None:
    """Share of decided impressions won; ties stay out, None when undecided."""
    if wins < 0 or losses < 0:
        raise ValueError("win/loss counts must be non-negative")
    decided = wins + losses
    if decided == 0:
        return None
    return wins / decided


def ctr(clicks: int, impressions: int) -> float:
    if impressions < 0:
        raise ValueError("impressions must be non-negative")
    if impressions == 0:
        if clicks:
            raise ValueError("clicks without impressions")
        return 0.0
    return clicks / impressions


def reward(counts: Mapping[str, int], weights: RewardWeights) -> float:
    """Weighted click total: the sum of element weight times element count."""
    total = 0.0
    for element, count in counts.items():
        if count < 0:
            raise ValueError(f"count for {element!r} must be non-negative")
        total += weights.weight_for(element) * count
    return total


def nreward(reward_exp: float, reward_base: float) -> float | None:
    """Experimental share of the pair's combined reward; None when both are zero."""
    if reward_exp < 0 or reward_base < 0:
        raise ValueError("rewards must be non-negative")
    denom = reward_exp + reward_base
    if denom == 0:
        return None
    return reward_exp / denom


@dataclass(frozen=True)
class SystemRoundStats:
    system: str
    task: TaskType
    is_baseline: bool
    wins: int
    losses: int
    ties: int
    outcome: float | None
    sessions: int
    impressions: int
    clicks: int
    ctr: float


@dataclass(frozen=True)
class RewardBreakdown:
    system: str
    element_counts: dict[str, int]
    total_clicks: int
    reward: float
    nreward: float | None


@dataclass(frozen=True)
class RewardComparison:
    task: TaskType
    exp_system: str
    base_system: str
    exp: RewardBreakdown
    base: RewardBreakdown


@dataclass(frozen=True)
class TaskTotals:
    task: TaskType
    sessions: int
    impressions: int
    clicks: int
    ctr: float
    baseline_only_pages: int


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str  # "exact" | "normal-approximation"


@dataclass(frozen=True)
class CorrelationResult:
    rho: float
    p_value: float


@dataclass(frozen=True)
class RoundReport:
    systems: tuple[SystemRoundStats, ...]
    rewards: tuple[RewardComparison, ...]
    totals: tuple[TaskTotals, ...]
    significance: tuple[tuple[str, TestResult | None], ...]
    rank_correlation: tuple[tuple[str, CorrelationResult | None], ...]

    def to_dict(self) -> dict:
        return {
            "systems": [
                {
                    "system": row.system,
                    "task": row.task.value,
                    "baseline": row.is_baseline,
                    "win": row.wins,
                    "loss": row.losses,
                    "tie": row.ties,
                    "outcome": row.outcome,
                    "sessions": row.sessions,
                    "impressions": row.impressions,
                    "clicks": row.clicks,
                    "ctr": row.ctr,
                }
                for row in self.systems
            ],
            "rewards": [
                {
                    "task": cmp.task.value,
                    "exp_system": cmp.exp_system,
                    "base_system": cmp.base_system,
                    "exp": _breakdown_dict(cmp.exp),
                    "base": _breakdown_dict(cmp.base),
                }
                for cmp in self.rewards
            ],
            "totals": [
                {
                    "task": tot.task.value,
                    "sessions": tot.sessions,
                    "impressions": tot.impressions,
                    "clicks": tot.clicks,
                    "ctr": tot.ctr,
                    "baseline_only_pages": tot.baseline_only_pages,
                }
                for tot in self.totals
            ],
            "significance": [
                {
                    "system": system,
                    "result": None
                    if result is None
                    else {
                        "statistic": result.statistic,
                        "p_value": result.p_value,
                        "method": result.method,
                    },
                }
                for system, result in self.significance
            ],
            "rank_correlation": [
                {
                    "task": task,
                    "result": None if result is None else {"rho": result.rho, "p_value": result.p_value},
                }
                for task, result in self.rank_correlation
            ],
            "wilcoxon_pairing": WILCOXON_PAIRING_NOTE,
        }


def _breakdown_dict(b: RewardBreakdown) -> dict:
    return {
        "system": b.system,
        "element_counts": dict(sorted(b.element_counts.items())),
        "total_clicks": b.total_clicks,
        "reward": b.reward,
        "nreward": b.nreward,
    }


ALL_EXPERIMENTAL = "all-experimental"


class _RowAcc:
    __slots__ = ("wins", "losses", "ties", "impressions", "clicks", "sessions", "is_baseline")

    def __init__(self, is_baseline: bool) -> None:
        self.wins = 0
        self.losses = 0
        self.ties = 0
        self.impressions = 0
        self.clicks = 0
        self.sessions: set[str] = set()
        self.is_baseline = is_baseline


def aggregate_round(
    snapshot: StoreSnapshot, weights: RewardWeights = RewardWeights()
) -> RoundReport:
    """Tally every published round quantity from raw impressions and clicks.

    Each interleaved impression counts once for the experimental system on the
    page and once for the baseline, so task totals equal the column sums of
    the per-system rows. Clicks are credited to the drafting team. Reward
    pairs accumulate only over impressions where the two compared systems were
    actually interleaved.
    """
    rows: dict[tuple[str, str], _RowAcc] = {}
    pair_counts: dict[tuple[str, str, str], tuple[Counter, Counter]] = {}
    pairs_by_system: dict[str, list[tuple[int, int]]] = {}
    rank_pairs: dict[str, tuple[list[float], list[float]]] = {}

    def row(task: TaskType, name: str, is_baseline: bool) -> _RowAcc:
        acc = rows.get((task.value, name))
        if acc is None:
            acc = rows[(task.value, name)] = _RowAcc(is_baseline)
        return acc

    for imp in snapshot.impressions.values():
        interleaved = imp.interleaved
        exp_name = interleaved.exp_system
        base_name = interleaved.base_system
        clicks = snapshot.clicks.get(imp.impression_id, ())
        clicks_exp, clicks_base = attribute_clicks(interleaved, clicks)

        exp_row = row(imp.task, exp_name, False)
        base_row = row(imp.task, base_name, True)
        for acc, count in ((exp_row, clicks_exp), (base_row, clicks_base)):
            acc.impressions += 1
            acc.clicks += count
            acc.sessions.add(imp.session_id)

        verdict = judge(clicks_exp, clicks_base)
        if verdict is JudgeResult.WIN:
            exp_row.wins += 1
            base_row.losses += 1
        elif verdict is JudgeResult.LOSS:
            exp_row.losses += 1
            base_row.wins += 1
        elif verdict is JudgeResult.TIE:
            exp_row.ties += 1
            base_row.ties += 1

        counters = pair_counts.setdefault(
            (imp.task.value, exp_name, base_name), (Counter(), Counter())
        )
        for click in clicks:
            element = weights.normalize(click.serp_element)
            if interleaved.team_of(click.doc_id) is TeamLabel.EXP:
                counters[0][element] += 1
            else:
                counters[1][element] += 1

        if verdict is not JudgeResult.NO_CLICK:
            pairs_by_system.setdefault(exp_name, []).append((clicks_exp, clicks_base))
            first = highest_exp_rank(interleaved)
            if first is not None:
                xs, ys = rank_pairs.setdefault(imp.task.value, ([], []))
                xs.append({JudgeResult.WIN: 1.0, JudgeResult.LOSS: -1.0, JudgeResult.TIE: 0.0}[verdict])
                ys.append(float(first))

    system_rows = tuple(
        SystemRoundStats(
            system=name,
            task=TaskType(task),
            is_baseline=acc.is_baseline,
            wins=acc.wins,
            losses=acc.losses,
            ties=acc.ties,
            outcome=outcome(acc.wins, acc.losses),
            sessions=len(acc.sessions),
            impressions=acc.impressions,
            clicks=acc.clicks,
            ctr=ctr(acc.clicks, acc.impressions),
        )
        for (task, name), acc in sorted(
            rows.items(), key=lambda item: (item[0][0], not item[1].is_baseline, item[0][1])
        )
    )

    comparisons: list[RewardComparison] = []
    combined: dict[tuple[str, str], tuple[Counter, Counter]] = {}
    for (task, exp_name, base_name), (exp_counter, base_counter) in sorted(pair_counts.items()):
        comparisons.append(
            _comparison(TaskType(task), exp_name, base_name, exp_counter, base_counter, weights)
        )
        both = combined.setdefault((task, base_name), (Counter(), Counter()))
        both[0].update(exp_counter)
        both[1].update(base_counter)
    for (task, base_name), (exp_counter, base_counter) in sorted(combined.items()):
        comparisons.append(
            _comparison(TaskType(task), ALL_EXPERIMENTAL, base_name, exp_counter, base_counter, weights)
        )

    totals = []
    for task_value in sorted({task for task, _ in rows}):
        task_rows = [acc for (task, _), acc in rows.items() if task == task_value]
        sessions = sum(len(acc.sessions) for acc in task_rows)
        impressions = sum(acc.impressions for acc in task_rows)
        clicks = sum(acc.clicks for acc in task_rows)
        totals.append(
            TaskTotals(
                task=TaskType(task_value),
                sessions=sessions,
                impressions=impressions,
                clicks=clicks,
                ctr=ctr(clicks, impressions),
                baseline_only_pages=snapshot.traffic.get(task_value, 0),
            )
        )

    significance = []
    for name in sorted(pairs_by_system):
        try:
            significance.append((name, wilcoxon_signed_rank(pairs_by_system[name])))
        except ValueError:
            significance.append((name, None))

    correlation = []
    for task_value in sorted(rank_pairs):
        xs, ys = rank_pairs[task_value]
        try:
            correlation.append((task_value, spearman(xs, ys)))
        except ValueError:
            correlation.append((task_value, None))

    return RoundReport(
        systems=system_rows,
        rewards=tuple(comparisons),
        totals=tuple(totals),
        significance=tuple(significance),
        rank_correlation=tuple(correlation),
    )


def _comparison(
    task: TaskType,
    exp_name: str,
    base_name: str,
    exp_counter: Counter,
    base_counter: Counter,
    weights: RewardWeights,
) -> RewardComparison:
    reward_exp = reward(exp_counter, weights)
    reward_base = reward(base_counter, weights)
    return RewardComparison(
        task=task,
        exp_system=exp_name,
        base_system=base_name,
        exp=RewardBreakdown(
            system=exp_name,
            element_counts=dict(exp_counter),
            total_clicks=sum(exp_counter.values()),
            reward=reward_exp,
            nreward=nreward(reward_exp, reward_base),
        ),
        base=RewardBreakdown(
            system=base_name,
            element_counts=dict(base_counter),
            total_clicks=sum(base_counter.values()),
            reward=reward_base,
            nreward=nreward(reward_base, reward_exp),
        ),
    )


@dataclass(frozen=True)
class QueryStats:
    unique_queries: int
    avg_query_length_terms: float
    avg_queries_per_session: float
    avg_clicks_per_query: float

    def to_dict(self) -> dict:
        return {
            "unique_queries": self.unique_queries,
            "avg_query_length_terms": self.avg_query_length_terms,
            "avg_queries_per_session": self.avg_queries_per_session,
            "avg_clicks_per_query": self.avg_clicks_per_query,
        }


def query_stats(snapshot: StoreSnapshot, task: TaskType = TaskType.RANKING) -> QueryStats:
    """Query-log statistics over the given task's impressions.

    Terms are whitespace-split. Query length averages over unique query
    strings; queries per session averages occurrences over sessions with at
    least one; clicks per query averages over occurrences.
    """
    occurrences = [imp for imp in snapshot.impressions.values() if imp.task is task]
    if not occurrences:
        return QueryStats(0, 0.0, 0.0, 0.0)
    unique = {imp.query_or_item for imp in occurrences}
    sessions = {imp.session_id for imp in occurrences}
    clicks = sum(len(snapshot.clicks.get(imp.impression_id, ())) for imp in occurrences)
    return QueryStats(
        unique_queries=len(unique),
        avg_query_length_terms=sum(len(q.split()) for q in unique) / len(unique),
        avg_queries_per_session=len(occurrences) / len(sessions),
        avg_clicks_per_query=clicks / len(occurrences),
    )


@dataclass(frozen=True)
class Distributions:
    impressions_per_query: tuple[tuple[str, int], ...]
    ctr_per_rank: tuple[tuple[int, float], ...]
    clicks_per_element: tuple[tuple[str, int], ...]

    def to_dict(self) -> dict:
        return {
            "impressions_per_query": [list(pair) for pair in self.impressions_per_query],
            "ctr_per_rank": [list(pair) for pair in self.ctr_per_rank],
            "clicks_per_element": [list(pair) for pair in self.clicks_per_element],
        }


def distributions(snapshot: StoreSnapshot) -> Distributions:
    """Exact count tables for the three standard plots.

    Rank positions are absolute: page * rpp + position on the page, 1-based.
    The CTR at a rank divides clicks at that rank by the number of
    impressions that displayed it.
    """
    per_query: Counter = Counter()
    shown_at_rank: Counter = Counter()
    clicks_at_rank: Counter = Counter()
    per_element: Counter = Counter()

    for imp in snapshot.impressions.values():
        if imp.task is TaskType.RANKING:
            per_query[imp.query_or_item] += 1
        offset = imp.page * imp.rpp
        position_of = {}
        for position, entry in enumerate(imp.interleaved.entries, start=1):
            shown_at_rank[offset + position] += 1
            position_of[entry.doc_id] = offset + position
        for click in snapshot.clicks.get(imp.impression_id, ()):
            per_element[click.serp_element] += 1
            rank = position_of.get(click.doc_id)
            if rank is not None:
                clicks_at_rank[rank] += 1

    return Distributions(
        impressions_per_query=tuple(
            sorted(per_query.items(), key=lambda item: (-item[1], item[0]))
        ),
        ctr_per_rank=tuple(
            (rank, clicks_at_rank.get(rank, 0) / shown_at_rank[rank])
            for rank in sorted(shown_at_rank)
        ),
        clicks_per_element=tuple(
            sorted(per_element.items(), key=lambda item: (-item[1], item[0]))
        ),
    )


def per_impression_click_pairs(
    snapshot: StoreSnapshot, exp_system: str | None = None
) -> list[tuple[int, int]]:
    """(experimental, baseline) click counts per clicked impression."""
    pairs = []
    for imp in snapshot.impressions.values():
        if exp_system is not None and imp.interleaved.exp_system != exp_system:
            continue
        clicks = snapshot.clicks.get(imp.impression_id, ())
        if not clicks:
            continue
        pairs.append(attribute_clicks(imp.interleaved, clicks))
    return pairs


def rank_outcome_pairs(
    snapshot: StoreSnapshot, exp_system: str | None = None
) -> tuple[list[float], list[float]]:
    """Judged outcome (1 win, -1 loss, 0 tie) against the first experimental position."""
    xs: list[float] = []
    ys: list[float] = []
    for imp in snapshot.impressions.values():
        if exp_system is not None and imp.interleaved.exp_system != exp_system:
            continue
        clicks = snapshot.clicks.get(imp.impression_id, ())
        verdict = judge(*attribute_clicks(imp.interleaved, clicks))
        if verdict is JudgeResult.NO_CLICK:
            continue
        first = highest_exp_rank(imp.interleaved)
        if first is None:
            continue
        xs.append({JudgeResult.WIN: 1.0, JudgeResult.LOSS: -1.0, JudgeResult.TIE: 0.0}[verdict])
        ys.append(float(first))
    return xs, ys


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks; runs of equal values share the average of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def wilcoxon_signed_rank(pairs: Sequence[tuple[float, float]]) -> TestResult:
    """Two-sided paired test on the signed ranks of nonzero differences.

    With at most 25 effective pairs the p-value is exact: the signed-rank
    statistic is enumerated over every sign assignment (via a convolution on
    doubled ranks, which are integers even under tie averaging). Larger
    samples use the normal approximation with tie and continuity corrections.
    The reported statistic is the positive-rank sum.
    """
    diffs = [float(a) - float(b) for a, b in pairs]
    diffs = [d for d in diffs if d != 0.0]
    if not diffs:
        raise ValueError("degenerate sample: all differences are zero")
    n = len(diffs)
    ranks = average_ranks([abs(d) for d in diffs])
    w_plus = sum(rank for diff, rank in zip(diffs, ranks) if diff > 0)

    if n <= 25:
        doubled = [round(2 * rank) for rank in ranks]
        total = sum(doubled)
        # counts[s + total] = number of sign assignments with doubled statistic s
        counts = [0] * (2 * total + 1)
        counts[total] = 1
        for dr in doubled:
            nxt = [0] * len(counts)
            for idx, c in enumerate(counts):
                if c:
                    nxt[idx + dr] += c
                    nxt[idx - dr] += c
            counts = nxt
        observed = abs(round(2 * w_plus) - (total - round(2 * w_plus)))
        tail = sum(
            c for idx, c in enumerate(counts) if c and abs(idx - total) >= observed
        )
        return TestResult(statistic=w_plus, p_value=tail / (1 << n), method="exact")

    mean = n * (n + 1) / 4.0
    variance = n * (n + 1) * (2 * n + 1) / 24.0
    tie_sizes = Counter(abs(d) for d in diffs).values()
    variance -= sum(t**3 - t for t in tie_sizes) / 48.0
    numerator = w_plus - mean
    correction = 0.5 if numerator > 0 else -0.5 if numerator < 0 else 0.0
    z = (numerator - correction) / math.sqrt(variance)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    p = min(1.0, p)
    if p <= 0.0:
        p = 5e-324  # underflow guard: keeps p strictly positive
    return TestResult(statistic=w_plus, p_value=p, method="normal-approximation")


def spearman(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """Rank correlation: Pearson on tie-averaged ranks, p from the t approximation."""
    if len(x) != len(y):
        raise ValueError("inputs must have equal length")
    n = len(x)
    if n < 3:
        raise ValueError("need at least 3 pairs")
    rx = average_ranks(x)
    ry = average_ranks(y)
    mean_x = sum(rx) / n
    mean_y = sum(ry) / n
    cov = sum((a - mean_x) * (b - mean_y) for a, b in zip(rx, ry))
    var_x = sum((a - mean_x) ** 2 for a in rx)
    var_y = sum((b - mean_y) ** 2 for b in ry)
    if var_x == 0.0 or var_y == 0.0:
        raise ValueError("constant input")
    rho = cov / math.sqrt(var_x * var_y)
    rho = max(-1.0, min(1.0, rho))
    if abs(rho) == 1.0:
        return CorrelationResult(rho=rho, p_value=0.0)
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    p = 2.0 * float(stdtr(n - 2, -abs(t)))
    return CorrelationResult(rho=rho, p_value=min(1.0, p))


def round_report_csv(report: RoundReport) -> str:
    """Round table at the published precision: Outcome to 2 decimals, CTR to 4."""
    lines = ["Task,System,Win,Loss,Tie,Outcome,Sessions,Impressions,Clicks,CTR"]
    for row in report.systems:
        outcome_str = "" if row.outcome is None else f"{row.outcome:.2f}"
        lines.append(
            f"{row.task.value},{row.system},{row.wins},{row.losses},{row.ties},"
            f"{outcome_str},{row.sessions},{row.impressions},{row.clicks},{row.ctr:.4f}"
        )
    return "\n".join(lines) + "\n"


def reward_report_csv(report: RoundReport, weights: RewardWeights = RewardWeights()) -> str:
    elements = weights.elements()
    header = "Task,Pair,System," + ",".join(elements) + ",Total Clicks,nReward"
    lines = [header]
    for cmp in report.rewards:
        for breakdown in (cmp.exp, cmp.base):
            nreward_str = "" if breakdown.nreward is None else f"{breakdown.nreward:.4f}"
            counts = ",".join(str(breakdown.element_counts.get(el, 0)) for el in elements)
            lines.append(
                f"{cmp.task.value},{cmp.exp_system},{breakdown.system},{counts},"
                f"{breakdown.total_clicks},{nreward_str}"
            )
    return "\n".join(lines) + "\n"
