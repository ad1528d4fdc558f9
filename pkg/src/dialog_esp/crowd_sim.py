"""Discrete-event simulation of worker recruitment and answering behavior,
plus calibration of the model against observed timeline statistics.

Recruitment follows the fleeting-task practice: a burst of short-lifetime
postings goes out at game start, each becomes visible after a routing delay,
and claims arrive as a rate process over whatever is currently visible. A
posting whose routing delay exceeds the lifetime expires unseen.
"""

from __future__ import annotations

import math
import random
import string
from dataclasses import dataclass, field

from .aggregation import AnswerEvent, GameOutcome
from .domain import DialogTask, GameConfig, Utterance
from .evaluation import TIMELINE_FIELDS, TimelineStats, TrialTimeline, summarize_timeline
from .matching import normalize
from .session_engine import CLOSED, SessionEngine

OUTCOMES = ("correct", "distractor_slot", "wrong_entity", "substring", "typo", "no_answer")

RNG = random.Random | int | None


def _rng_of(seed: RNG) -> random.Random:
    return seed if isinstance(seed, random.Random) else random.Random(seed)


def _poisson(rng: random.Random, lam: float) -> int:
    if lam <= 0:
        return 0
    limit = math.exp(-lam)
    k, p = 0, 1.0
    while True:
        p *= rng.random()
        if p <= limit:
            return k
        k += 1


@dataclass(frozen=True)
class RecruitmentModel:
    """Fleeting-task posting burst plus a claim-rate process."""

    postings: int = 120
    lifetime_s: float = 60.0
    routing_delay_range_s: tuple[float, float] = (5.0, 40.0)
    claim_rate_per_s: float = 0.002

    def __post_init__(self) -> None:
        if self.postings < 0:
            raise ValueError("postings must be >= 0")
        if self.lifetime_s <= 0:
            raise ValueError("lifetime_s must be > 0")
        low, high = self.routing_delay_range_s
        if not 0 <= low <= high:
            raise ValueError("routing delay range must satisfy 0 <= low <= high")


@dataclass(frozen=True)
class WorkerBehavior:
    """Per-answer think time (log-normal) and an outcome mixture.

    ``distractor_pool`` widens wrong answers beyond the dialog's own words
    (workers guessing plausible but unmentioned entities); without it two
    wrong-leaning workers too often agree on the same dialog token.
    """

    latency_median_s: float = 6.0
    latency_sigma: float = 0.6
    outcome_mix: dict[str, float] = field(
        default_factory=lambda: {"correct": 0.8, "wrong_entity": 0.1, "no_answer": 0.1}
    )
    answers_per_game: float = 2.0
    distractor_pool: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.latency_median_s <= 0:
            raise ValueError("latency_median_s must be > 0")
        if self.latency_sigma < 0:
            raise ValueError("latency_sigma must be >= 0")
        if self.answers_per_game <= 0:
            raise ValueError("answers_per_game must be > 0")
        unknown = set(self.outcome_mix) - set(OUTCOMES)
        if unknown:
            raise ValueError(f"unknown outcomes in mix: {sorted(unknown)}")
        if any(not 0 <= p <= 1 for p in self.outcome_mix.values()):
            raise ValueError("outcome probabilities must be in [0, 1]")
        if abs(sum(self.outcome_mix.values()) - 1.0) > 1e-9:
            raise ValueError("outcome_mix must sum to 1")

    def draw_outcome(self, rng: random.Random) -> str:
        roll = rng.random()
        acc = 0.0
        for name in OUTCOMES:
            acc += self.outcome_mix.get(name, 0.0)
            if roll < acc:
                return name
        return OUTCOMES[-1]

    def draw_latency(self, rng: random.Random) -> float:
        return rng.lognormvariate(math.log(self.latency_median_s), self.latency_sigma)


# Error-mass profiles observed for destination-city and chat-food tasks;
# used to spread the non-correct probability over outcome types.
ATIS_ERROR_PROFILE = {
    "distractor_slot": 39.53,
    "no_answer": 18.60,
    "wrong_entity": 16.28 + 9.30,
    "substring": 16.28,
}
CHAT_ERROR_PROFILE = {
    "no_answer": 45.83,
    "substring": 12.50,
    "typo": 4.17,
}


def behavior_preset(
    correct: float = 0.7,
    error_profile: dict[str, float] | None = None,
    latency_median_s: float = 6.0,
    latency_sigma: float = 0.6,
    answers_per_game: float = 2.0,
) -> WorkerBehavior:
    """Behavior whose error mass follows a named profile, scaled to 1-correct."""
    profile = error_profile or CHAT_ERROR_PROFILE
    total = sum(profile.values())
    mix = {name: (1.0 - correct) * share / total for name, share in profile.items()}
    mix["correct"] = correct
    return WorkerBehavior(
        latency_median_s=latency_median_s,
        latency_sigma=latency_sigma,
        outcome_mix=mix,
        answers_per_game=answers_per_game,
    )


def retainer_preset(pool_size: int = 20) -> RecruitmentModel:
    """Pre-recruited waiting pool: most of the pool reacts within ~3 seconds."""
    return RecruitmentModel(
        postings=pool_size,
        lifetime_s=300.0,
        routing_delay_range_s=(0.0, 4.0),
        claim_rate_per_s=50.0,
    )


def simulate_recruitment(model: RecruitmentModel, horizon_s: float, seed: RNG = None) -> list[float]:
    """Worker arrival offsets for one posting burst, ascending.

    Each posting draws a routing delay uniformly from the model range and is
    claimable during [delay, lifetime). Claims occur at claim_rate_per_s per
    visible posting and each consumes one posting. Deterministic per seed.
    """
    if horizon_s <= 0:
        raise ValueError("horizon_s must be > 0")
    rng = _rng_of(seed)
    delays = [rng.uniform(*model.routing_delay_range_s) for _ in range(model.postings)]
    end = min(model.lifetime_s, horizon_s)
    visible_at = sorted(d for d in delays if d < end)
    if not visible_at or model.claim_rate_per_s <= 0:
        return []
    arrivals: list[float] = []
    t = 0.0
    idx = 0
    n_visible = 0
    while True:
        if n_visible == 0:
            if idx >= len(visible_at):
                break
            t = visible_at[idx]
            while idx < len(visible_at) and visible_at[idx] <= t:
                n_visible += 1
                idx += 1
            continue
        gap = rng.expovariate(model.claim_rate_per_s * n_visible)
        t_next = visible_at[idx] if idx < len(visible_at) else math.inf
        if t + gap < min(t_next, end):
            t += gap
            arrivals.append(t)
            n_visible -= 1
        elif t_next < end:
            t = t_next
            while idx < len(visible_at) and visible_at[idx] <= t:
                n_visible += 1
                idx += 1
        else:
            break
    return arrivals


_STOPWORDS = frozenset(
    "a an the i you we they he she it is are was were do does did to of in on "
    "at for with and or my your our this that these have has had not no yes "
    "what which where when how would could should will be been get got go "
    "went later tonight please yeah yep really just ever any some one".split()
)


def _dialog_candidates(task: DialogTask) -> list[str]:
    gold_tokens = set(task.gold.split()) if task.gold else set()
    seen: list[str] = []
    for utt in task.utterances:
        for token in normalize(utt.text).split():
            token = token.strip(string.punctuation)
            if (
                len(token) > 2
                and token not in _STOPWORDS
                and token not in gold_tokens
                and token not in seen
            ):
                seen.append(token)
    return seen


def _wrong_entity(task: DialogTask, rng: random.Random, pool: tuple[str, ...] = ()) -> str:
    candidates = _dialog_candidates(task)
    candidates += [normalize(p) for p in pool if normalize(p) != task.gold]
    if not candidates:
        candidates = sorted(v for v in task.aux_gold.values() if v != task.gold)
    if not candidates:
        candidates = ["something else"]
    return rng.choice(candidates)


def _substring(gold: str, rng: random.Random) -> str:
    tokens = gold.split()
    if len(tokens) < 2:
        return gold
    spans = [
        (i, j)
        for i in range(len(tokens))
        for j in range(i + 1, len(tokens) + 1)
        if j - i < len(tokens)
    ]
    i, j = rng.choice(spans)
    return " ".join(tokens[i:j])


def _typo(gold: str, rng: random.Random) -> str:
    letters = "abcdefghijklmnopqrstuvwxyz"
    for _ in range(100):
        ops = ("sub", "ins", "del") if len(gold) > 1 else ("sub", "ins")
        op = rng.choice(ops)
        pos = rng.randrange(len(gold))
        if op == "sub":
            candidate = gold[:pos] + rng.choice(letters) + gold[pos + 1 :]
        elif op == "ins":
            candidate = gold[:pos] + rng.choice(letters) + gold[pos:]
        else:
            candidate = gold[:pos] + gold[pos + 1 :]
        candidate = normalize(candidate)
        if candidate and candidate != gold:
            return candidate
    return gold + "x"


def generate_worker_answer(behavior: WorkerBehavior, task: DialogTask, rng: random.Random) -> str | None:
    """Draw one answer (or None for silence) from the behavior's outcome mix.

    When the task has no gold entity, the correct behavior is silence, and
    gold-anchored corruptions (substring, typo) degrade to silence too.
    """
    outcome = behavior.draw_outcome(rng)
    gold = task.gold
    if outcome == "no_answer":
        return None
    if outcome == "correct":
        return gold
    if outcome == "distractor_slot":
        values = sorted(v for v in task.aux_gold.values() if v != gold)
        if values:
            return rng.choice(values)
        return _wrong_entity(task, rng, behavior.distractor_pool)
    if outcome == "wrong_entity":
        return _wrong_entity(task, rng, behavior.distractor_pool)
    if outcome == "substring":
        return _substring(gold, rng) if gold else None
    # typo
    return _typo(gold, rng) if gold else None


@dataclass
class TrialResult:
    events: list[AnswerEvent]
    outcome: GameOutcome | None
    timeline: TrialTimeline
    arrivals: list[float]


CALIBRATION_TASK = DialogTask(
    task_id="calibration-000",
    utterances=[
        Utterance("agent", "Back from lunch! What did you order?"),
        Utterance("user", "I went with the bubble tea and a side of dumplings."),
    ],
    slot_name="food_name",
    slot_prompt="What is the food_name in this dialog?",
    slot_explanation="Food name. The full name of the food. Including any drinks or beverages.",
    gold="bubble tea",
    category="calibration",
)


@dataclass(frozen=True)
class TrialPlan:
    """Pre-drawn arrivals and answer submissions for one simulated game."""

    arrivals: list[float]
    submissions: list[tuple[float, str, str]]  # (offset_s, worker_id, text)


def plan_trial(
    task: DialogTask,
    config: GameConfig,
    recruitment: RecruitmentModel,
    behavior: WorkerBehavior,
    seed: RNG = None,
    drop_prob: float = 0.0,
) -> TrialPlan:
    """Draw one trial's full schedule without driving an engine.

    Each arrived worker answers at arrival plus cumulative think-time draws,
    for an attempt budget with the behavior's mean, stopping at the time
    constraint. ``drop_prob`` models infrastructure loss of otherwise
    submitted answers. Deterministic per seed.
    """
    rng = _rng_of(seed)
    arrivals = simulate_recruitment(recruitment, config.time_constraint_s, rng.getrandbits(48))
    schedule: list[tuple[float, str, str]] = []
    for w_idx, arrival in enumerate(arrivals):
        worker = f"sim-w{w_idx:03d}"
        wrng = random.Random(rng.getrandbits(48))
        attempts = max(1, _poisson(wrng, behavior.answers_per_game))
        t = arrival
        for _ in range(attempts):
            t += behavior.draw_latency(wrng)
            if t >= config.time_constraint_s:
                break
            text = generate_worker_answer(behavior, task, wrng)
            if text is None:
                continue
            if drop_prob and wrng.random() < drop_prob:
                continue
            schedule.append((t, worker, text))
    schedule.sort(key=lambda item: (item[0], item[1]))
    return TrialPlan(arrivals=arrivals, submissions=schedule)


def run_trial(
    task: DialogTask,
    config: GameConfig,
    recruitment: RecruitmentModel,
    behavior: WorkerBehavior,
    seed: RNG = None,
    drop_prob: float = 0.0,
) -> TrialResult:
    """Simulate one end-to-end game: recruit, answer, decide via the engine."""
    plan = plan_trial(task, config, recruitment, behavior, seed, drop_prob)
    engine = SessionEngine()
    session = engine.create_session(task, config, now=0.0)
    first_answer: float | None = None
    for t, worker, text in plan.submissions:
        result = engine.submit_answer(session.game_id, worker, text, now=t)
        if result.accepted and first_answer is None:
            first_answer = t
    if session.state != CLOSED:
        engine.expire(session.game_id, config.time_constraint_s)
    timeline = TrialTimeline(
        first_worker_s=plan.arrivals[0] if plan.arrivals else None,
        first_answer_s=first_answer,
        first_match_s=session.match_offset_s,
    )
    return TrialResult(
        events=list(session.events),
        outcome=session.outcome,
        timeline=timeline,
        arrivals=plan.arrivals,
    )


def simulate_answer_streams(
    task: DialogTask,
    n_workers: int,
    behavior: WorkerBehavior,
    config: GameConfig,
    seed: RNG = None,
) -> dict[str, list[AnswerEvent]]:
    """Collection-style streams: n workers all present from game start,
    answering freely until the time constraint. Workers who never answered
    still appear with empty streams so player resampling can draw them."""
    rng = _rng_of(seed)
    raw: list[tuple[float, int, str]] = []
    for w_idx in range(n_workers):
        wrng = random.Random(rng.getrandbits(48))
        t = 0.0
        while True:
            t += behavior.draw_latency(wrng)
            if t >= config.time_constraint_s:
                break
            text = generate_worker_answer(behavior, task, wrng)
            if text is not None:
                raw.append((t, w_idx, text))
    raw.sort(key=lambda item: (item[0], item[1]))
    streams: dict[str, list[AnswerEvent]] = {f"w{w:02d}": [] for w in range(n_workers)}
    for seq, (t, w_idx, text) in enumerate(raw):
        worker = f"w{w_idx:02d}"
        streams[worker].append(AnswerEvent.create(worker, text, t, seq))
    return streams


# --------------------------------------------------------------------------
# Calibration
# --------------------------------------------------------------------------


@dataclass
class CalibrationResult:
    recruitment: RecruitmentModel
    behavior: WorkerBehavior
    achieved: TimelineStats
    rel_error: float


def evaluate_timeline(
    recruitment: RecruitmentModel,
    behavior: WorkerBehavior,
    n_trials: int,
    seed: int,
    config: GameConfig | None = None,
    task: DialogTask | None = None,
) -> TimelineStats:
    """Timeline statistics of ``n_trials`` seeded simulated games."""
    config = config or GameConfig(time_constraint_s=60.0, policy="esp_plus_ith", mode="live")
    task = task or CALIBRATION_TASK
    timelines = [
        run_trial(task, config, recruitment, behavior, seed=seed + 7919 * i).timeline
        for i in range(n_trials)
    ]
    return summarize_timeline(timelines)


def timeline_rel_error(achieved: TimelineStats, targets: TimelineStats) -> float:
    """Max relative error of achieved vs target means; inf when a targeted
    field was never observed."""
    errors = []
    for name in TIMELINE_FIELDS:
        target = getattr(targets, name)
        if target is None:
            continue
        got = getattr(achieved, name)
        if got is None:
            return math.inf
        errors.append(abs(got[0] - target[0]) / target[0])
    return max(errors) if errors else math.inf


def _random_candidate(rng: random.Random) -> tuple[RecruitmentModel, WorkerBehavior]:
    low = rng.uniform(2.0, 30.0)
    recruitment = RecruitmentModel(
        postings=120,
        lifetime_s=60.0,
        routing_delay_range_s=(low, low + rng.uniform(4.0, 40.0)),
        claim_rate_per_s=math.exp(rng.uniform(math.log(2e-4), math.log(8e-2))),
    )
    correct = rng.uniform(0.5, 0.95)
    rest = 1.0 - correct
    behavior = WorkerBehavior(
        latency_median_s=rng.uniform(1.5, 12.0),
        latency_sigma=rng.uniform(0.2, 1.0),
        outcome_mix={
            "correct": correct,
            "wrong_entity": rest * 0.4,
            "substring": rest * 0.15,
            "typo": rest * 0.05,
            "no_answer": rest * 0.4,
        },
        answers_per_game=rng.uniform(1.0, 4.0),
    )
    return recruitment, behavior


def calibrate(
    targets: TimelineStats,
    search_budget: int = 60,
    seed: int = 0,
    trials_per_candidate: int = 250,
    initial: tuple[RecruitmentModel, WorkerBehavior] | None = None,
) -> CalibrationResult:
    """Randomized search for model parameters hitting the target timeline.

    Every candidate is scored with the same seeded trial protocol (common
    random numbers), so a candidate that generated the targets fits exactly.
    Returns the best candidate with its achieved stats and max relative
    error.
    """
    if search_budget < 1:
        raise ValueError("search_budget must be >= 1")
    means = targets.means()
    if any(m is None for m in means):
        raise ValueError("targets must provide all three timeline means")
    fw, fa, fm = means
    if fw <= 0 or fa <= 0 or fm <= 0:
        raise ValueError("target means must be positive")
    if not fw <= fa <= fm:
        raise ValueError("targets must satisfy first_worker <= first_answer <= first_match")

    rng = random.Random(seed)
    eval_seed = rng.getrandbits(32)
    candidates = [initial or (RecruitmentModel(), WorkerBehavior())]
    candidates += [_random_candidate(rng) for _ in range(search_budget - 1)]

    best: CalibrationResult | None = None
    for recruitment, behavior in candidates:
        achieved = evaluate_timeline(recruitment, behavior, trials_per_candidate, eval_seed)
        error = timeline_rel_error(achieved, targets)
        if best is None or error < best.rel_error:
            best = CalibrationResult(recruitment, behavior, achieved, error)
    return best
