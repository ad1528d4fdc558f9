"""Deterministic answer aggregation over recorded answer streams.

Three policies are supported:

* ``esp_only`` returns the first agreement between two distinct workers, or
  an empty label at the time constraint.
* ``ith_only`` returns the i-th arriving answer at its own arrival time.
* ``esp_plus_ith`` returns the first agreement; if none occurs it falls back
  to the i-th answer at the full time constraint.

Fallback decisions are timestamped at the time constraint, not the i-th
answer's arrival: the fallback can only be known once the window closes,
which makes esp_only and esp_plus_ith decision times identical on every
stream.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from itertools import chain
from statistics import mean

from .domain import GameConfig
from .matching import normalize

KIND_MATCHED = "matched"
KIND_FALLBACK_ITH = "fallback_ith"
KIND_ITH_ONLY = "ith_only"
KIND_EMPTY_TIMEOUT = "empty_timeout"

OUTCOME_KINDS = (KIND_MATCHED, KIND_FALLBACK_ITH, KIND_ITH_ONLY, KIND_EMPTY_TIMEOUT)


class ContractViolation(ValueError):
    """Raised when aggregate() receives input breaking its preconditions."""


@dataclass(frozen=True)
class AnswerEvent:
    """One worker submission, timestamped relative to game start."""

    worker_id: str
    raw_text: str
    normalized_text: str
    offset_s: float
    seq: int

    @classmethod
    def create(cls, worker_id: str, raw_text: str, offset_s: float, seq: int) -> "AnswerEvent":
        return cls(
            worker_id=worker_id,
            raw_text=raw_text,
            normalized_text=normalize(raw_text),
            offset_s=offset_s,
            seq=seq,
        )


@dataclass(frozen=True)
class GameOutcome:
    """The aggregated label (possibly absent), when it was decided, and why."""

    label: str | None
    decision_offset_s: float
    kind: str
    matched_workers: tuple[str, str] | None = None

    def __post_init__(self) -> None:
        if self.kind not in OUTCOME_KINDS:
            raise ValueError(f"unknown outcome kind: {self.kind!r}")
        if self.kind == KIND_MATCHED and (self.label is None or self.matched_workers is None):
            raise ValueError("matched outcome needs a label and the matched worker pair")
        if self.kind == KIND_EMPTY_TIMEOUT and self.label is not None:
            raise ValueError("empty_timeout outcome cannot carry a label")

    def to_record(self) -> dict:
        return {
            "label": self.label,
            "decision_offset_s": self.decision_offset_s,
            "kind": self.kind,
            "matched_workers": list(self.matched_workers) if self.matched_workers else None,
        }


def first_match(events: list[AnswerEvent]) -> tuple[AnswerEvent, AnswerEvent] | None:
    """Earliest (partner, trigger) pair of agreeing events from distinct workers.

    The trigger is the first event whose normalized text was already
    submitted by a different worker; the partner is the earliest such earlier
    event. Empty answers never participate.
    """
    seen: dict[str, list[AnswerEvent]] = {}
    for event in events:
        text = event.normalized_text
        if not text:
            continue
        for earlier in seen.get(text, ()):
            if earlier.worker_id != event.worker_id:
                return earlier, event
        seen.setdefault(text, []).append(event)
    return None


def _check_sorted(events: list[AnswerEvent], config: GameConfig) -> None:
    for prev, cur in zip(events, events[1:]):
        if (cur.offset_s, cur.seq) < (prev.offset_s, prev.seq):
            raise ContractViolation("events must be sorted by (offset_s, seq)")
    for event in events:
        if not 0 <= event.offset_s <= config.time_constraint_s:
            raise ContractViolation(
                f"event offset {event.offset_s} outside [0, {config.time_constraint_s}]"
            )


def aggregate(events: list[AnswerEvent], config: GameConfig) -> GameOutcome:
    """Apply the configured aggregation policy to a time-ordered stream."""
    _check_sorted(events, config)
    timeout = config.time_constraint_s
    nonempty = [e for e in events if e.normalized_text]
    match = first_match(events)
    i = config.fallback_index_i
    ith = nonempty[i - 1] if len(nonempty) >= i else None

    if config.policy == "esp_only":
        if match:
            partner, trigger = match
            return GameOutcome(
                label=trigger.normalized_text,
                decision_offset_s=trigger.offset_s,
                kind=KIND_MATCHED,
                matched_workers=(partner.worker_id, trigger.worker_id),
            )
        return GameOutcome(None, timeout, KIND_EMPTY_TIMEOUT)

    if config.policy == "ith_only":
        if ith is not None:
            return GameOutcome(ith.normalized_text, ith.offset_s, KIND_ITH_ONLY)
        return GameOutcome(None, timeout, KIND_EMPTY_TIMEOUT)

    # esp_plus_ith
    if match:
        partner, trigger = match
        return GameOutcome(
            label=trigger.normalized_text,
            decision_offset_s=trigger.offset_s,
            kind=KIND_MATCHED,
            matched_workers=(partner.worker_id, trigger.worker_id),
        )
    if ith is not None:
        return GameOutcome(ith.normalized_text, timeout, KIND_FALLBACK_ITH)
    return GameOutcome(None, timeout, KIND_EMPTY_TIMEOUT)


@dataclass(frozen=True)
class ResamplePlan:
    """How to subsample recorded workers to simulate smaller player counts."""

    k_players: int
    rounds: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k_players < 1:
            raise ValueError("k_players must be >= 1")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")


@dataclass(frozen=True)
class ResampleMetrics:
    precision: float
    recall: float
    f1: float
    accuracy: float
    mean_decision_s: float


def merge_worker_events(
    events_by_worker: dict[str, list[AnswerEvent]], workers: list[str]
) -> list[AnswerEvent]:
    merged = sorted(
        chain.from_iterable(events_by_worker[w] for w in workers),
        key=lambda e: (e.offset_s, e.seq),
    )
    return merged


def resample_players(
    events_by_worker: dict[str, list[AnswerEvent]],
    plan: ResamplePlan,
    config: GameConfig,
    gold: str | None,
) -> ResampleMetrics:
    """Average per-round metrics over seeded random k-worker subsets.

    Each round samples ``plan.k_players`` workers without replacement, merges
    their events in arrival order, aggregates under ``config``, and scores
    the outcome against ``gold``. Deterministic for a fixed seed.
    """
    from .evaluation import compute_prf, score_accuracy, score_outcome

    workers = sorted(events_by_worker)
    if plan.k_players > len(workers):
        raise ValueError(
            f"k_players={plan.k_players} exceeds available workers ({len(workers)})"
        )
    rng = random.Random(plan.seed)
    per_round = []
    for _ in range(plan.rounds):
        chosen = rng.sample(workers, plan.k_players)
        outcome = aggregate(merge_worker_events(events_by_worker, chosen), config)
        counts = score_outcome(outcome.label, gold)
        p, r, f1 = compute_prf(counts)
        per_round.append((p, r, f1, score_accuracy(counts, 1), outcome.decision_offset_s))
    return ResampleMetrics(
        precision=mean(m[0] for m in per_round),
        recall=mean(m[1] for m in per_round),
        f1=mean(m[2] for m in per_round),
        accuracy=mean(m[3] for m in per_round),
        mean_decision_s=mean(m[4] for m in per_round),
    )


def config_for_policy(base: GameConfig, policy: str, i: int | None = None) -> GameConfig:
    """Copy of ``base`` with the policy (and optionally i) overridden."""
    return replace(
        base,
        policy=policy,
        fallback_index_i=base.fallback_index_i if i is None else i,
    )
