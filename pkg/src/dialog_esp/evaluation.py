"""Slot scoring, error taxonomy classification, timeline summaries, and the
accuracy/latency trade-off sweep.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from statistics import mean, pstdev
from typing import Iterable, Sequence, TextIO

from .aggregation import AnswerEvent, aggregate, config_for_policy, merge_worker_events
from .domain import DialogTask, GameConfig
from .matching import Gazetteer, edit_distance, soft_match

ERROR_CORRECT = "correct"
ERROR_DISTRACTOR_SLOT = "distractor_slot"
ERROR_FALSE_NEGATIVE = "false_negative"
ERROR_FALSE_POSITIVE = "false_positive"
ERROR_SOFT_MATCH = "soft_match"
ERROR_SUBSTRING = "substring"
ERROR_TYPO_SUSPECT = "typo_suspect"
ERROR_WRONG_ENTITY = "wrong_entity"

ERROR_TYPES = (
    ERROR_DISTRACTOR_SLOT,
    ERROR_FALSE_NEGATIVE,
    ERROR_FALSE_POSITIVE,
    ERROR_SOFT_MATCH,
    ERROR_SUBSTRING,
    ERROR_TYPO_SUSPECT,
    ERROR_WRONG_ENTITY,
)


@dataclass
class ScoreCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def add(self, other: "ScoreCounts") -> None:
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.tn += other.tn

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def score_outcome(pred: str | None, gold: str | None) -> ScoreCounts:
    """Slot-filling contribution of one (prediction, gold) pair.

    A wrong non-null prediction counts as both a false positive and a false
    negative; a correct "no entity" prediction is a true negative.
    """
    if pred is None and gold is None:
        return ScoreCounts(tn=1)
    if pred is None:
        return ScoreCounts(fn=1)
    if gold is None:
        return ScoreCounts(fp=1)
    if pred == gold:
        return ScoreCounts(tp=1)
    return ScoreCounts(fp=1, fn=1)


def compute_prf(counts: ScoreCounts) -> tuple[float, float, float]:
    """(precision, recall, f1), each 0 when its denominator is 0."""
    p = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    r = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def score_accuracy(counts: ScoreCounts, n_items: int | None = None) -> float:
    """Fraction of items scored correct; a correct empty prediction counts.

    A wrong non-null prediction contributes both fp and fn, so the item
    count (when known) is the honest denominator; without it the raw count
    total is used.
    """
    denominator = n_items if n_items is not None else counts.total
    return (counts.tp + counts.tn) / denominator if denominator else 0.0


def _token_subset(a: str, b: str) -> bool:
    ta, tb = set(a.split()), set(b.split())
    return bool(ta) and bool(tb) and (ta <= tb or tb <= ta)


def _contiguous_token_subspan(pred: str, gold: str) -> bool:
    pred_tokens, gold_tokens = pred.split(), gold.split()
    if not pred_tokens or len(pred_tokens) >= len(gold_tokens):
        return False
    span = len(pred_tokens)
    return any(
        gold_tokens[i : i + span] == pred_tokens
        for i in range(len(gold_tokens) - span + 1)
    )


def classify_error(
    pred: str | None,
    gold: str | None,
    task: DialogTask,
    gazetteer: Gazetteer | None = None,
) -> str:
    """Assign one error type (or "correct") to a scored prediction.

    The taxonomy overlaps (a distractor answer is also incorrect), so rules
    apply in a fixed precedence order and the first hit wins. The soft-match
    rule only fires when the gazetteer can vouch for the prediction; without
    that domain knowledge a sub-span answer is classified as a substring.
    """
    gazetteer = gazetteer or Gazetteer()
    counts = score_outcome(pred, gold)
    if counts.tp or counts.tn:
        return ERROR_CORRECT
    if pred is not None and pred in set(task.aux_gold.values()):
        return ERROR_DISTRACTOR_SLOT
    if pred is None:
        return ERROR_FALSE_NEGATIVE
    if gold is None:
        return ERROR_FALSE_POSITIVE
    if soft_match(pred, gazetteer) == gold or (
        gold in gazetteer.entries and _token_subset(pred, gold)
    ):
        return ERROR_SOFT_MATCH
    if _contiguous_token_subspan(pred, gold):
        return ERROR_SUBSTRING
    if edit_distance(pred, gold) <= 1:
        return ERROR_TYPO_SUSPECT
    return ERROR_WRONG_ENTITY


def perceived_latency(type_time_s: float, response_time_s: float) -> float:
    """Wait the user actually experiences: response time minus their own
    typing time, clamped at zero."""
    if type_time_s < 0 or response_time_s < 0:
        raise ValueError("times must be >= 0")
    return max(0.0, response_time_s - type_time_s)


# --------------------------------------------------------------------------
# Timeline summaries
# --------------------------------------------------------------------------

TIMELINE_FIELDS = ("first_worker_s", "first_answer_s", "first_match_s")


@dataclass(frozen=True)
class TrialTimeline:
    """Key offsets of one simulated or recorded trial; None when absent."""

    first_worker_s: float | None = None
    first_answer_s: float | None = None
    first_match_s: float | None = None


@dataclass
class TimelineStats:
    """(mean, population stdev) per timeline field, None when never observed,
    plus the fraction of trials where each field was absent."""

    first_worker_s: tuple[float, float] | None = None
    first_answer_s: tuple[float, float] | None = None
    first_match_s: tuple[float, float] | None = None
    absent_fraction: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_means(cls, first_worker: float, first_answer: float, first_match: float) -> "TimelineStats":
        return cls(
            first_worker_s=(first_worker, 0.0),
            first_answer_s=(first_answer, 0.0),
            first_match_s=(first_match, 0.0),
        )

    def means(self) -> tuple[float | None, float | None, float | None]:
        return tuple(
            getattr(self, name)[0] if getattr(self, name) else None
            for name in TIMELINE_FIELDS
        )


def summarize_timeline(timelines: Sequence[TrialTimeline]) -> TimelineStats:
    """Mean and population stdev per field, ignoring trials where the field
    is absent."""
    if not timelines:
        raise ValueError("at least one trial required")
    stats = TimelineStats()
    for name in TIMELINE_FIELDS:
        values = [getattr(t, name) for t in timelines if getattr(t, name) is not None]
        stats.absent_fraction[name] = 1.0 - len(values) / len(timelines)
        if values:
            setattr(stats, name, (mean(values), pstdev(values)))
    return stats


# --------------------------------------------------------------------------
# Trade-off sweep
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GameStreams:
    """Recorded per-worker answer streams for one task, with its gold label."""

    gold: str | None
    events_by_worker: dict[str, list[AnswerEvent]]


@dataclass(frozen=True)
class SweepRow:
    policy: str
    k: int
    mean_f1: float
    mean_p: float
    mean_r: float
    mean_accuracy: float
    mean_response_s: float


SWEEP_HEADER = ("policy", "k", "mean_f1", "mean_p", "mean_r", "mean_response_s")


def tradeoff_sweep(
    games: Sequence[GameStreams],
    k_range: Iterable[int],
    policies: Sequence[str],
    config: GameConfig,
    rounds: int = 20,
    seed: int = 0,
) -> list[SweepRow]:
    """Resample player subsets per (policy, k) cell and average over rounds.

    Every round samples k workers per game, pools score counts across the
    whole corpus, and computes corpus-level P/R/F1 and mean decision time;
    the reported cell is the mean over rounds. Pooling per round (rather
    than averaging per-game metrics) is what multi-round random-pick
    averaging over a query set means.

    Rounds are driven by one worker permutation per (round, game): the k
    players of a round are the permutation's first k entries. Each cell's
    marginal is still a uniform k-subset, but the shared draws cancel
    sampling noise between neighboring k so the trade-off curves are smooth.
    """
    games = list(games)
    k_values = list(k_range)
    if not games:
        raise ValueError("at least one game required")
    min_workers = min(len(g.events_by_worker) for g in games)
    if any(k < 1 or k > min_workers for k in k_values):
        raise ValueError(f"k_range must stay within [1, {min_workers}]")

    rng = random.Random(seed)
    permutations = []
    for _ in range(rounds):
        round_perms = []
        for game in games:
            workers = sorted(game.events_by_worker)
            rng.shuffle(workers)
            round_perms.append(workers)
        permutations.append(round_perms)

    rows = []
    for policy in policies:
        cfg = config_for_policy(config, policy)
        for k in k_values:
            round_stats = []
            for round_perms in permutations:
                counts = ScoreCounts()
                times = []
                for game, perm in zip(games, round_perms):
                    outcome = aggregate(merge_worker_events(game.events_by_worker, perm[:k]), cfg)
                    counts.add(score_outcome(outcome.label, game.gold))
                    times.append(outcome.decision_offset_s)
                p, r, f1 = compute_prf(counts)
                round_stats.append((f1, p, r, score_accuracy(counts, len(games)), mean(times)))
            rows.append(
                SweepRow(
                    policy=policy,
                    k=k,
                    mean_f1=mean(s[0] for s in round_stats),
                    mean_p=mean(s[1] for s in round_stats),
                    mean_r=mean(s[2] for s in round_stats),
                    mean_accuracy=mean(s[3] for s in round_stats),
                    mean_response_s=mean(s[4] for s in round_stats),
                )
            )
    return rows


def write_sweep_table(rows: Sequence[SweepRow], path_or_file: str | Path | TextIO) -> None:
    """Tab-separated sweep output, one row per (policy, k) cell."""
    if hasattr(path_or_file, "write"):
        fh = path_or_file
        fh.write("\t".join(SWEEP_HEADER) + "\n")
        for row in rows:
            fh.write(
                f"{row.policy}\t{row.k}\t{row.mean_f1:.6f}\t{row.mean_p:.6f}"
                f"\t{row.mean_r:.6f}\t{row.mean_response_s:.6f}\n"
            )
        return
    with open(path_or_file, "w", encoding="utf-8") as fh:
        write_sweep_table(rows, fh)


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    accuracy: float
    mean_response_s: float
    stdev_response_s: float
    error_histogram: dict[str, float] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "mean_response_s": self.mean_response_s,
            "stdev_response_s": self.stdev_response_s,
            "error_histogram": dict(self.error_histogram),
        }


def build_report(
    scored: Sequence[tuple[str | None, DialogTask, float]],
    gazetteer: Gazetteer | None = None,
) -> MetricsReport:
    """Aggregate (prediction, task, response_time) triples into one report.

    The error histogram is distributed over error cases only and sums to 1
    when any errors exist.
    """
    counts = ScoreCounts()
    times = []
    errors: dict[str, int] = {}
    for pred, task, response_s in scored:
        counts.add(score_outcome(pred, task.gold))
        times.append(response_s)
        kind = classify_error(pred, task.gold, task, gazetteer)
        if kind != ERROR_CORRECT:
            errors[kind] = errors.get(kind, 0) + 1
    p, r, f1 = compute_prf(counts)
    n_errors = sum(errors.values())
    histogram = {k: v / n_errors for k, v in sorted(errors.items())} if n_errors else {}
    return MetricsReport(
        precision=p,
        recall=r,
        f1=f1,
        accuracy=score_accuracy(counts, len(scored)),
        mean_response_s=mean(times) if times else 0.0,
        stdev_response_s=pstdev(times) if times else 0.0,
        error_histogram=histogram,
    )
