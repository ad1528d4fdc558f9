"""Real-time crowd-powered entity extraction via timed multi-worker answer
games, with aggregation policies, a crowd simulator, and an evaluation
harness."""

from .aggregation import (
    AnswerEvent,
    GameOutcome,
    ResampleMetrics,
    ResamplePlan,
    aggregate,
    resample_players,
)
from .domain import (
    DialogTask,
    GameConfig,
    UserProfile,
    Utterance,
    generate_synthetic_corpus,
    load_corpus,
    validate_task,
    write_corpus,
)
from .evaluation import (
    GameStreams,
    MetricsReport,
    ScoreCounts,
    TimelineStats,
    TrialTimeline,
    classify_error,
    compute_prf,
    perceived_latency,
    score_outcome,
    summarize_timeline,
    tradeoff_sweep,
)
from .matching import Gazetteer, is_match, normalize, soft_match
from .session_engine import GameSession, Playlist, SessionEngine, SimClock

__all__ = [
    "AnswerEvent",
    "DialogTask",
    "GameConfig",
    "GameOutcome",
    "GameSession",
    "GameStreams",
    "Gazetteer",
    "MetricsReport",
    "Playlist",
    "ResampleMetrics",
    "ResamplePlan",
    "ScoreCounts",
    "SessionEngine",
    "SimClock",
    "TimelineStats",
    "TrialTimeline",
    "UserProfile",
    "Utterance",
    "aggregate",
    "classify_error",
    "compute_prf",
    "generate_synthetic_corpus",
    "is_match",
    "load_corpus",
    "normalize",
    "perceived_latency",
    "resample_players",
    "score_outcome",
    "soft_match",
    "summarize_timeline",
    "tradeoff_sweep",
    "validate_task",
    "write_corpus",
]
