"""The live game state machine: timed sessions, answer intake with match
detection and point awards, per-worker game playlists, and the append-only
event log.

The engine never reads wall time itself. Every mutation takes an explicit
``now`` timestamp supplied by the clock owner (the gateway in service mode, a
simulated clock in experiments), which is what makes sessions replayable
byte for byte.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Protocol

from .aggregation import AnswerEvent, GameOutcome, KIND_ITH_ONLY, KIND_MATCHED, aggregate
from .domain import DialogTask, GameConfig, task_to_record
from .matching import normalize

MATCH_POINTS = 1000

PENDING = "pending"
ACTIVE = "active"
DECIDED = "decided"
CLOSED = "closed"

EVENT_KINDS = (
    "user_typing_start",
    "user_typing_stop",
    "utterance_received",
    "task_posted",
    "worker_arrived",
    "answer_submitted",
    "match",
    "game_decided",
    "game_closed",
    "playlist_advanced",
)


class Clock(Protocol):
    def now(self) -> float: ...


class SystemClock:
    def now(self) -> float:
        import time

        return time.time()


class SimClock:
    """Manually advanced clock for deterministic tests and simulations."""

    def __init__(self, start: float = 0.0):
        self._now = start

    def now(self) -> float:
        return self._now

    def advance(self, dt: float) -> float:
        self._now += dt
        return self._now

    def set(self, t: float) -> None:
        self._now = t


def iso_ms(at: float) -> str:
    """ISO-8601 UTC with millisecond precision, Z-suffixed."""
    dt = datetime.fromtimestamp(at, tz=timezone.utc)
    return dt.isoformat(timespec="milliseconds").replace("+00:00", "Z")


def parse_iso_ms(text: str) -> float:
    return datetime.fromisoformat(text.replace("Z", "+00:00")).timestamp()


@dataclass(frozen=True)
class LogEvent:
    at: float
    kind: str
    game_id: str | None = None
    worker_id: str | None = None
    payload: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "at": iso_ms(self.at),
            "kind": self.kind,
            "game_id": self.game_id,
            "worker_id": self.worker_id,
            "payload": self.payload,
        }


def validate_log_records(records: list[dict]) -> list[str]:
    """Schema and per-game timestamp-monotonicity violations, empty if clean."""
    problems: list[str] = []
    last_at: dict[str, float] = {}
    for line_no, record in enumerate(records, start=1):
        missing = [f for f in ("at", "kind", "game_id", "worker_id", "payload") if f not in record]
        if missing:
            problems.append(f"line {line_no}: missing fields {missing}")
            continue
        if record["kind"] not in EVENT_KINDS:
            problems.append(f"line {line_no}: unknown kind {record['kind']!r}")
        try:
            at = parse_iso_ms(record["at"])
        except ValueError:
            problems.append(f"line {line_no}: bad timestamp {record['at']!r}")
            continue
        game_id = record["game_id"]
        if game_id is not None:
            if game_id in last_at and at < last_at[game_id]:
                problems.append(f"line {line_no}: timestamp regressed for game {game_id}")
            last_at[game_id] = at
    return problems


@dataclass
class SubmitResult:
    accepted: bool
    matched: bool = False
    points_awarded: int = 0
    reason: str | None = None


@dataclass
class GameSession:
    game_id: str
    task: DialogTask
    config: GameConfig
    state: str = PENDING
    started_at: float | None = None
    deadline: float | None = None
    events: list[AnswerEvent] = field(default_factory=list)
    outcome: GameOutcome | None = None
    scores: dict[str, int] = field(default_factory=dict)
    matched: bool = False
    match_offset_s: float | None = None

    def remaining_s(self, now: float) -> float:
        if self.deadline is None:
            return self.config.time_constraint_s
        return max(0.0, self.deadline - now)


@dataclass
class Playlist:
    """An ordered run of games for one worker session; games[0] is the
    scripted tutorial when tutorial_first is set."""

    worker_session_id: str
    games: list[str]
    cursor: int = 0
    tutorial_first: bool = True

    @property
    def done(self) -> bool:
        return self.cursor >= len(self.games)

    @property
    def current_game_id(self) -> str | None:
        return None if self.done else self.games[self.cursor]


class PlaylistError(RuntimeError):
    pass


class SessionEngine:
    """Owns sessions, playlists, and the ordered event log.

    Mutations on a single session are serialized behind one engine lock;
    reads see consistent snapshots. Safe to drive from concurrent request
    handlers.
    """

    def __init__(self, sink: Callable[[LogEvent], None] | None = None):
        self._lock = threading.RLock()
        self._sessions: dict[str, GameSession] = {}
        self._playlists: dict[str, Playlist] = {}
        self._log: list[LogEvent] = []
        self._sink = sink
        self._next_game = 0

    # -- log ---------------------------------------------------------------

    def _append(self, at: float, kind: str, game_id=None, worker_id=None, payload=None) -> LogEvent:
        event = LogEvent(at=at, kind=kind, game_id=game_id, worker_id=worker_id, payload=payload or {})
        self._log.append(event)
        if self._sink is not None:
            self._sink(event)
        return event

    def log_events(self, cursor: int = 0) -> list[tuple[int, LogEvent]]:
        """Snapshot of (cursor, event) pairs from a global sequence cursor."""
        with self._lock:
            return list(enumerate(self._log))[cursor:]

    def log_size(self) -> int:
        with self._lock:
            return len(self._log)

    def record_event(self, at: float, kind: str, game_id=None, worker_id=None, payload=None) -> LogEvent:
        """Append a non-session event (typing activity, task postings)."""
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind: {kind!r}")
        with self._lock:
            return self._append(at, kind, game_id, worker_id, payload)

    # -- sessions ------------------------------------------------------------

    def _new_game_id(self) -> str:
        self._next_game += 1
        return f"g{self._next_game:06d}"

    def get_session(self, game_id: str) -> GameSession:
        with self._lock:
            if game_id not in self._sessions:
                raise KeyError(game_id)
            return self._sessions[game_id]

    def sessions(self) -> list[GameSession]:
        with self._lock:
            return list(self._sessions.values())

    def create_session(
        self,
        task: DialogTask,
        config: GameConfig,
        now: float,
        game_id: str | None = None,
    ) -> GameSession:
        """Create and immediately start a session; the timer begins at ``now``."""
        session = self.post_task(task, config, now, game_id)
        self.start_session(session.game_id, now)
        return session

    def post_task(
        self, task: DialogTask, config: GameConfig, now: float, game_id: str | None = None
    ) -> GameSession:
        """Register a game whose timer may start later (playlist entries).

        The task_posted record carries the full task and config so an event
        log is self-contained for replay.
        """
        with self._lock:
            gid = game_id or self._new_game_id()
            if gid in self._sessions:
                raise ValueError(f"duplicate game_id {gid!r}")
            session = GameSession(game_id=gid, task=task, config=config)
            self._sessions[gid] = session
            self._append(
                now,
                "task_posted",
                game_id=gid,
                payload={
                    "task": task_to_record(task),
                    "config": {
                        "time_constraint_s": config.time_constraint_s,
                        "policy": config.policy,
                        "fallback_index_i": config.fallback_index_i,
                        "mode": config.mode,
                    },
                },
            )
            return session

    def start_session(self, game_id: str, now: float) -> GameSession:
        with self._lock:
            session = self.get_session(game_id)
            if session.state != PENDING:
                raise RuntimeError(f"session {game_id} already started")
            session.state = ACTIVE
            session.started_at = now
            session.deadline = now + session.config.time_constraint_s
            last_user = next(
                (u.text for u in reversed(session.task.utterances) if u.speaker == "user"),
                "",
            )
            self._append(
                now,
                "utterance_received",
                game_id=game_id,
                payload={
                    "task_id": session.task.task_id,
                    "text": last_user,
                    "time_constraint_s": session.config.time_constraint_s,
                    "started_at_s": now,
                },
            )
            return session

    def submit_answer(self, game_id: str, worker_id: str, raw_text: str, now: float) -> SubmitResult:
        """Record one worker answer; detects the first cross-worker match.

        Late or post-decision submissions are acknowledged but rejected and
        never recorded, so accepted events always have offsets inside the
        time window.
        """
        with self._lock:
            session = self.get_session(game_id)
            if session.state != ACTIVE or now >= session.deadline:
                return SubmitResult(accepted=False, reason="late")
            if now < session.started_at:
                return SubmitResult(accepted=False, reason="early")
            offset = now - session.started_at
            event = AnswerEvent(
                worker_id=worker_id,
                raw_text=raw_text,
                normalized_text=normalize(raw_text),
                offset_s=offset,
                seq=len(session.events),
            )
            session.events.append(event)
            self._append(
                now,
                "answer_submitted",
                game_id=game_id,
                worker_id=worker_id,
                payload={"raw_text": raw_text, "offset_s": offset, "seq": event.seq, "at_s": now},
            )
            matched_now = False
            points = 0
            if not session.matched and event.normalized_text:
                partner = next(
                    (
                        e
                        for e in session.events[:-1]
                        if e.normalized_text == event.normalized_text
                        and e.worker_id != event.worker_id
                    ),
                    None,
                )
                if partner is not None:
                    matched_now = True
                    points = MATCH_POINTS
                    session.matched = True
                    session.match_offset_s = offset
                    for w in (partner.worker_id, event.worker_id):
                        session.scores[w] = session.scores.get(w, 0) + MATCH_POINTS
                    self._append(
                        now,
                        "match",
                        game_id=game_id,
                        worker_id=worker_id,
                        payload={
                            "workers": [partner.worker_id, event.worker_id],
                            "label": event.normalized_text,
                            "offset_s": offset,
                        },
                    )
                    if session.config.mode == "live" and session.config.policy in (
                        "esp_only",
                        "esp_plus_ith",
                    ):
                        outcome = GameOutcome(
                            label=event.normalized_text,
                            decision_offset_s=offset,
                            kind=KIND_MATCHED,
                            matched_workers=(partner.worker_id, event.worker_id),
                        )
                        self._decide(session, outcome, now)
            if (
                session.state == ACTIVE
                and session.config.mode == "live"
                and session.config.policy == "ith_only"
                and event.normalized_text
            ):
                nonempty = [e for e in session.events if e.normalized_text]
                if len(nonempty) == session.config.fallback_index_i:
                    outcome = GameOutcome(
                        label=event.normalized_text,
                        decision_offset_s=offset,
                        kind=KIND_ITH_ONLY,
                    )
                    self._decide(session, outcome, now)
            return SubmitResult(accepted=True, matched=matched_now, points_awarded=points)

    def _decide(self, session: GameSession, outcome: GameOutcome, now: float) -> None:
        session.outcome = outcome
        session.state = DECIDED
        self._append(
            now,
            "game_decided",
            game_id=session.game_id,
            payload={"outcome": outcome.to_record()},
        )
        # Live games close on decision; collection games only close at timeout.
        if session.config.mode == "live":
            self._close(session, now)

    def _close(self, session: GameSession, now: float) -> None:
        session.state = CLOSED
        self._append(
            now,
            "game_closed",
            game_id=session.game_id,
            payload={"at_s": now, "outcome": session.outcome.to_record() if session.outcome else None},
        )

    def expire(self, game_id: str, now: float) -> GameOutcome | None:
        """Close a session whose deadline has passed; idempotent.

        If the session has not decided yet, the recorded stream is aggregated
        under the session's own policy (timeout, fallback, or i-th outcome).
        """
        with self._lock:
            session = self.get_session(game_id)
            if session.state == CLOSED:
                return session.outcome
            if session.state == DECIDED:
                self._close(session, now)
                return session.outcome
            if session.state == PENDING:
                raise RuntimeError(f"session {game_id} never started")
            if now < session.deadline:
                raise RuntimeError(f"session {game_id} deadline not reached")
            outcome = aggregate(session.events, session.config)
            self._decide(session, outcome, now)
            if session.state != CLOSED:
                self._close(session, now)
            return session.outcome

    # -- playlists -----------------------------------------------------------

    def create_playlist(
        self, worker_session_id: str, game_ids: list[str], tutorial_first: bool = True
    ) -> Playlist:
        with self._lock:
            if worker_session_id in self._playlists:
                raise ValueError(f"duplicate worker_session_id {worker_session_id!r}")
            for gid in game_ids:
                self.get_session(gid)
            playlist = Playlist(
                worker_session_id=worker_session_id,
                games=list(game_ids),
                tutorial_first=tutorial_first,
            )
            self._playlists[worker_session_id] = playlist
            return playlist

    def get_playlist(self, worker_session_id: str) -> Playlist:
        with self._lock:
            if worker_session_id not in self._playlists:
                raise KeyError(worker_session_id)
            return self._playlists[worker_session_id]

    def advance_playlist(self, worker_session_id: str, now: float) -> str | None:
        """Move to the next game, starting its timer at ``now``.

        Returns the next game_id, or None when the playlist is finished. The
        advance is announced with a playlist_advanced event (the worker UI
        renders it as an alert).
        """
        with self._lock:
            playlist = self.get_playlist(worker_session_id)
            if playlist.done:
                raise PlaylistError("playlist already finished")
            current = self.get_session(playlist.games[playlist.cursor])
            if current.state not in (DECIDED, CLOSED):
                raise PlaylistError("current game still active")
            playlist.cursor += 1
            next_id = playlist.current_game_id
            if next_id is not None and self.get_session(next_id).state == PENDING:
                self.start_session(next_id, now)
            self._append(
                now,
                "playlist_advanced",
                game_id=next_id,
                worker_id=worker_session_id,
                payload={
                    "worker_session_id": worker_session_id,
                    "cursor": playlist.cursor,
                    "next_game_id": next_id,
                    "done": next_id is None,
                },
            )
            return next_id


def session_log_records(engine: SessionEngine, game_id: str) -> list[dict]:
    return [e.to_record() for _, e in engine.log_events() if e.game_id == game_id]


def replay_session_records(records: list[dict]) -> tuple[GameSession, list[dict]]:
    """Re-drive one session's log records through a fresh engine.

    Only externally driven kinds are replayed (task_posted,
    utterance_received, answer_submitted, game_closed); match and decision
    events are regenerated by the engine, so the output records are
    byte-identical to the input for logs the engine wrote itself.
    """
    from .domain import task_from_record

    engine = SessionEngine()
    session: GameSession | None = None
    for line_no, record in enumerate(records, start=1):
        kind = record.get("kind")
        payload = record.get("payload", {})
        if kind == "task_posted":
            task = task_from_record(payload["task"], line_no)
            config = GameConfig(**payload["config"])
            session = engine.post_task(
                task, config, parse_iso_ms(record["at"]), game_id=record["game_id"]
            )
        elif kind == "utterance_received":
            if session is None:
                raise ValueError(f"line {line_no}: utterance_received before task_posted")
            engine.start_session(session.game_id, payload["started_at_s"])
        elif kind == "answer_submitted":
            if session is None or session.started_at is None:
                raise ValueError(f"line {line_no}: answer before session start")
            engine.submit_answer(
                session.game_id,
                record["worker_id"],
                payload["raw_text"],
                payload["at_s"],
            )
        elif kind == "game_closed":
            if session is None:
                raise ValueError(f"line {line_no}: close before session start")
            if engine.get_session(session.game_id).state != CLOSED:
                engine.expire(session.game_id, payload["at_s"])
        elif kind in ("worker_arrived", "user_typing_start", "user_typing_stop"):
            engine.record_event(
                parse_iso_ms(record["at"]), kind,
                game_id=record.get("game_id"), worker_id=record.get("worker_id"),
                payload=payload,
            )
    if session is None:
        raise ValueError("no session events in record stream")
    replayed = engine.get_session(session.game_id)
    return replayed, [e.to_record() for _, e in engine.log_events()]


__all__ = [
    "ACTIVE",
    "CLOSED",
    "DECIDED",
    "EVENT_KINDS",
    "GameSession",
    "LogEvent",
    "MATCH_POINTS",
    "PENDING",
    "Playlist",
    "PlaylistError",
    "SessionEngine",
    "SimClock",
    "SubmitResult",
    "SystemClock",
    "iso_ms",
    "parse_iso_ms",
    "replay_session_records",
    "session_log_records",
    "validate_log_records",
]
