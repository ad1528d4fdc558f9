"""Service layer: chat ingestion, worker task claiming and answering, result
retrieval with long-polling, a line-delimited event stream, event-log
persistence, and offline replay.

The HTTP surface (FastAPI) is a thin wrapper over GatewayService so every
behavior is testable without a socket. Recruitment is pluggable: in sim mode
an ingested utterance is answered by simulated workers driven synchronously
on virtual offsets anchored at the ingest wall time, so results are
available immediately and logs stay deterministic per seed; in live mode
real workers claim and answer through the API while a sweeper (or lazy
expiry on access) closes timed-out games.
"""

from __future__ import annotations

import json
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import StreamingResponse
from pydantic import BaseModel

from .aggregation import aggregate, config_for_policy
from .crowd_sim import RecruitmentModel, WorkerBehavior, plan_trial
from .domain import (
    FOOD_SLOT_EXPLANATION,
    FOOD_SLOT_PROMPT,
    DialogTask,
    GameConfig,
    Utterance,
    load_corpus,
)
from .evaluation import MetricsReport, build_report
from .matching import Gazetteer
from .session_engine import (
    ACTIVE,
    CLOSED,
    DECIDED,
    PENDING,
    GameSession,
    SessionEngine,
    SystemClock,
    parse_iso_ms,
    replay_session_records,
    validate_log_records,
)


class IngestRequest(BaseModel):
    conversation_id: str
    text: str
    slot_name: str
    idempotency_key: str | None = None


class AnswerRequest(BaseModel):
    worker_id: str
    text: str


@dataclass(frozen=True)
class SlotSpec:
    prompt: str
    explanation: str


DEFAULT_SLOT_REGISTRY = {
    "toloc.city_name": SlotSpec(
        prompt="What is the toloc.city_name in this dialog?",
        explanation="Destination city name. The city the traveler wants to fly to.",
    ),
    "food_name": SlotSpec(prompt=FOOD_SLOT_PROMPT, explanation=FOOD_SLOT_EXPLANATION),
}

# Snappy defaults for the built-in simulated crowd: workers arrive well inside
# a 20 s game, unlike the marketplace model whose arrivals straddle a minute.
DEFAULT_SIM_RECRUITMENT = RecruitmentModel(
    postings=40, lifetime_s=30.0, routing_delay_range_s=(1.0, 8.0), claim_rate_per_s=0.02
)
DEFAULT_SIM_BEHAVIOR = WorkerBehavior(
    latency_median_s=4.0,
    latency_sigma=0.6,
    outcome_mix={"correct": 0.7, "wrong_entity": 0.1, "substring": 0.05, "typo": 0.05, "no_answer": 0.1},
    answers_per_game=2.0,
)

TUTORIAL_GOLD = "bubble tea"
PLAYLIST_GAMES_PER_WORKER = 5
SCRIPT_BOT_ID = "script-bot"


def _tutorial_task(worker_id: str) -> DialogTask:
    return DialogTask(
        task_id=f"tutorial-{worker_id}",
        utterances=[
            Utterance("agent", "Welcome! Here is a practice round before the real games."),
            Utterance("user", "I could really go for a bubble tea right now."),
        ],
        slot_name="food_name",
        slot_prompt=FOOD_SLOT_PROMPT,
        slot_explanation=FOOD_SLOT_EXPLANATION,
        gold=TUTORIAL_GOLD,
        category="tutorial",
    )


class ReplayError(ValueError):
    """Raised when an event-log file cannot be replayed; names the line."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class GatewayService:
    def __init__(
        self,
        mode: str = "sim",
        seed: int = 0,
        clock=None,
        log_path: str | Path | None = None,
        slot_registry: dict[str, SlotSpec] | None = None,
        game_config: GameConfig | None = None,
        recruitment: RecruitmentModel | None = None,
        behavior: WorkerBehavior | None = None,
    ):
        if mode not in ("sim", "live"):
            raise ValueError(f"unknown mode: {mode!r}")
        self.mode = mode
        self.clock = clock or SystemClock()
        self.slot_registry = slot_registry or dict(DEFAULT_SLOT_REGISTRY)
        self.game_config = game_config or GameConfig()
        self.recruitment = recruitment or DEFAULT_SIM_RECRUITMENT
        self.behavior = behavior or DEFAULT_SIM_BEHAVIOR
        self._rng = random.Random(seed)
        self._lock = threading.RLock()
        self._log_path = Path(log_path) if log_path else None
        self._log_file = open(self._log_path, "a", encoding="utf-8") if self._log_path else None
        self.engine = SessionEngine(sink=self._write_log)
        self._conversations: dict[str, list[Utterance]] = {}
        self._idempotency: dict[str, str] = {}
        self._tutorial_bot_done: set[str] = set()
        self._sweeper: threading.Thread | None = None
        self._stop_sweeper = threading.Event()

    # -- plumbing -----------------------------------------------------------

    def _write_log(self, event) -> None:
        # Sink runs inside the engine lock, before any response is produced:
        # the write-ahead property comes for free.
        if self._log_file is not None:
            self._log_file.write(json.dumps(event.to_record(), ensure_ascii=False) + "\n")
            self._log_file.flush()

    def close(self) -> None:
        self.stop_sweeper()
        if self._log_file is not None:
            self._log_file.close()
            self._log_file = None

    def _expire_if_due(self, session: GameSession, now: float) -> None:
        if session.state == ACTIVE and session.deadline is not None and now >= session.deadline:
            self.engine.expire(session.game_id, now)

    def sweep(self) -> None:
        """Expire every session whose deadline has passed."""
        now = self.clock.now()
        for session in self.engine.sessions():
            self._expire_if_due(session, now)

    def start_sweeper(self, interval_s: float = 0.2) -> None:
        if self._sweeper is not None:
            return

        def loop():
            while not self._stop_sweeper.wait(interval_s):
                self.sweep()

        self._sweeper = threading.Thread(target=loop, daemon=True)
        self._sweeper.start()

    def stop_sweeper(self) -> None:
        if self._sweeper is not None:
            self._stop_sweeper.set()
            self._sweeper.join(timeout=2.0)
            self._sweeper = None
            self._stop_sweeper.clear()

    # -- operations ----------------------------------------------------------

    def ingest_utterance(self, req: IngestRequest) -> str:
        """Append the chat line to its conversation, start a game, recruit."""
        if not req.text.strip():
            raise ValueError("text must be non-empty")
        if req.slot_name not in self.slot_registry:
            raise ValueError(f"unknown slot_name: {req.slot_name!r}")
        with self._lock:
            if req.idempotency_key and req.idempotency_key in self._idempotency:
                return self._idempotency[req.idempotency_key]
            history = self._conversations.setdefault(req.conversation_id, [])
            history.append(Utterance("user", req.text))
            spec = self.slot_registry[req.slot_name]
            task = DialogTask(
                task_id=f"{req.conversation_id}:{len(history)}",
                utterances=list(history),
                slot_name=req.slot_name,
                slot_prompt=spec.prompt,
                slot_explanation=spec.explanation,
                category="live",
            )
            now = self.clock.now()
            session = self.engine.create_session(task, self.game_config, now)
            if self.mode == "sim":
                self._run_simulated_crowd(session, now)
            if req.idempotency_key:
                self._idempotency[req.idempotency_key] = session.game_id
            return session.game_id

    def _run_simulated_crowd(self, session: GameSession, t0: float) -> None:
        plan = plan_trial(
            session.task,
            session.config,
            self.recruitment,
            self.behavior,
            seed=self._rng.getrandbits(48),
        )
        queue: list[tuple[float, int, tuple]] = [
            (arrival, 0, ("arrive", f"sim-w{idx:03d}")) for idx, arrival in enumerate(plan.arrivals)
        ]
        queue += [
            (offset, 1, ("answer", worker, text)) for offset, worker, text in plan.submissions
        ]
        for offset, _, item in sorted(queue, key=lambda entry: (entry[0], entry[1])):
            if item[0] == "arrive":
                self.engine.record_event(
                    t0 + offset, "worker_arrived", game_id=session.game_id,
                    worker_id=item[1], payload={"arrival_offset_s": offset},
                )
            else:
                self.engine.submit_answer(session.game_id, item[1], item[2], now=t0 + offset)
        if session.state != CLOSED:
            self.engine.expire(session.game_id, t0 + session.config.time_constraint_s)

    def get_result(
        self,
        game_id: str,
        policy: str | None = None,
        i: int | None = None,
        wait_s: float | None = None,
    ) -> dict:
        """Outcome of a game, long-polling up to ``wait_s`` while pending.

        A policy override recomputes the outcome from the recorded events; it
        is only honored for collection-mode games, whose logs are complete.
        """
        deadline = time.monotonic() + (wait_s or 0.0)
        while True:
            session = self.engine.get_session(game_id)
            now = self.clock.now()
            self._expire_if_due(session, now)
            if session.state in (DECIDED, CLOSED):
                if policy is not None:
                    if session.config.mode != "collection":
                        raise ValueError("policy override requires a collection-mode game")
                    cfg = config_for_policy(session.config, policy, i)
                    outcome = aggregate(session.events, cfg)
                    record = outcome.to_record()
                    record["policy"] = policy
                    return record
                record = session.outcome.to_record()
                record["policy"] = session.config.policy
                return record
            if time.monotonic() >= deadline:
                return {"pending": True, "remaining_s": session.remaining_s(now)}
            time.sleep(0.02)

    def claim_task(self, worker_id: str) -> dict | None:
        """Current playlist head for the worker, assigning one if needed.

        New workers get a scripted tutorial followed by up to five open
        games. Returns None when no games are available, and a completion
        payload once the playlist is exhausted.
        """
        with self._lock:
            now = self.clock.now()
            ws_id = f"ws-{worker_id}"
            try:
                playlist = self.engine.get_playlist(ws_id)
            except KeyError:
                open_games = [
                    s
                    for s in self.engine.sessions()
                    if s.state == ACTIVE
                    and s.deadline is not None
                    and now < s.deadline
                    and s.task.category != "tutorial"
                ]
                if not open_games:
                    return None
                open_games.sort(key=lambda s: (s.started_at, s.game_id))
                tutorial = self.engine.post_task(_tutorial_task(worker_id), self.game_config, now)
                games = [tutorial.game_id] + [
                    s.game_id for s in open_games[:PLAYLIST_GAMES_PER_WORKER]
                ]
                playlist = self.engine.create_playlist(ws_id, games, tutorial_first=True)
                self.engine.record_event(
                    now, "worker_arrived", worker_id=worker_id,
                    payload={"worker_session_id": ws_id},
                )
                self.engine.start_session(tutorial.game_id, now)
                self._seed_tutorial_bot(tutorial.game_id, now)
            while not playlist.done:
                session = self.engine.get_session(playlist.current_game_id)
                self._expire_if_due(session, now)
                if session.state in (DECIDED, CLOSED):
                    self.engine.advance_playlist(ws_id, now)
                    continue
                break
            if playlist.done:
                total = self._playlist_points(playlist, worker_id)
                return {"done": True, "worker_session_id": ws_id, "total_points": total}
            session = self.engine.get_session(playlist.current_game_id)
            return {
                "worker_session_id": ws_id,
                "game_id": session.game_id,
                "dialog": [{"speaker": u.speaker, "text": u.text} for u in session.task.utterances],
                "prompt": session.task.slot_prompt,
                "explanation": session.task.slot_explanation,
                "remaining_s": session.remaining_s(now),
                "playlist_position": playlist.cursor + 1,
                "playlist_size": len(playlist.games),
                "tutorial": playlist.tutorial_first and playlist.cursor == 0,
                "points": self._playlist_points(playlist, worker_id),
            }

    def _seed_tutorial_bot(self, game_id: str, now: float) -> None:
        # The scripted partner answers first, so the worker's matching answer
        # triggers the feedback they are meant to experience.
        if game_id not in self._tutorial_bot_done:
            self._tutorial_bot_done.add(game_id)
            self.engine.submit_answer(game_id, SCRIPT_BOT_ID, TUTORIAL_GOLD, now)

    def _playlist_points(self, playlist, worker_id: str) -> int:
        total = 0
        for gid in playlist.games:
            total += self.engine.get_session(gid).scores.get(worker_id, 0)
        return total

    def post_answer(self, game_id: str, worker_id: str, text: str) -> dict:
        now = self.clock.now()
        session = self.engine.get_session(game_id)
        self._expire_if_due(session, now)
        result = self.engine.submit_answer(game_id, worker_id, text, now)
        return {
            "accepted": result.accepted,
            "matched": result.matched,
            "points_awarded": result.points_awarded,
            "game_state": session.state,
            "reason": result.reason,
        }

    def stream_events(
        self, target: str, cursor: int = 0, follow_s: float = 0.0
    ) -> Iterator[dict]:
        """Ordered event stream for a game or worker session, resumable.

        Each item carries its ``cursor``; resuming from a delivered cursor
        yields no duplicates and no gaps. The stream ends once the target
        finishes (game closed / playlist done) or ``follow_s`` of idle time
        passes.
        """
        game_ids: set[str] | None = None
        if target.startswith("ws-"):
            playlist = self.engine.get_playlist(target)
            game_ids = set(playlist.games)
        else:
            self.engine.get_session(target)

        def matches(event) -> bool:
            if game_ids is None:
                return event.game_id == target
            return (
                event.game_id in game_ids
                or event.worker_id == target
                or event.payload.get("worker_session_id") == target
            )

        idle_deadline = time.monotonic() + follow_s
        position = cursor
        finished = False
        while not finished:
            batch = self.engine.log_events(position)
            for idx, event in batch:
                position = idx + 1
                if not matches(event):
                    continue
                record = event.to_record()
                record["cursor"] = position
                yield record
                if game_ids is None and event.kind == "game_closed":
                    finished = True
                    break
                if game_ids is not None and event.kind == "playlist_advanced" and event.payload.get("done"):
                    finished = True
                    break
            if finished or time.monotonic() >= idle_deadline:
                break
            time.sleep(0.02)

    # -- offline -------------------------------------------------------------

    def replay_log(
        self,
        path: str | Path,
        corpus_path: str | Path | None = None,
        policy: str | None = None,
        i: int | None = None,
        gazetteer: Gazetteer | None = None,
        resample_k: int | None = None,
        resample_rounds: int = 20,
        resample_seed: int = 0,
    ) -> tuple[dict[str, GameSession], MetricsReport | None]:
        """Rebuild sessions from an event-log file and optionally score them.

        ``policy`` re-aggregates every replayed session's recorded events
        under a different aggregation method before scoring; ``resample_k``
        instead scores the average over random k-worker subsets of each
        session's answers.
        """
        sessions, _ = replay_log_file(path)
        report = None
        if corpus_path is not None:
            tasks = {t.task_id: t for t in load_corpus(corpus_path)}
            if resample_k is not None:
                report = self._resampled_report(
                    sessions, tasks, policy, i, resample_k, resample_rounds, resample_seed
                )
            else:
                scored = []
                for session in sessions.values():
                    task = tasks.get(session.task.task_id)
                    if task is None:
                        continue
                    outcome = session.outcome
                    if policy is not None:
                        outcome = aggregate(
                            session.events, config_for_policy(session.config, policy, i)
                        )
                    if outcome is None:
                        continue
                    scored.append((outcome.label, task, outcome.decision_offset_s))
                report = build_report(scored, gazetteer)
        return sessions, report

    @staticmethod
    def _resampled_report(sessions, tasks, policy, i, k, rounds, seed) -> MetricsReport:
        from statistics import mean

        from .aggregation import ResamplePlan, resample_players

        per_game = []
        for session in sessions.values():
            task = tasks.get(session.task.task_id)
            if task is None:
                continue
            by_worker: dict[str, list] = {}
            for event in session.events:
                by_worker.setdefault(event.worker_id, []).append(event)
            if len(by_worker) < k:
                continue
            config = session.config
            if policy is not None:
                config = config_for_policy(config, policy, i)
            per_game.append(
                resample_players(
                    by_worker, ResamplePlan(k_players=k, rounds=rounds, seed=seed), config, task.gold
                )
            )
        if not per_game:
            raise ValueError(f"no replayed session has {k} or more workers")
        return MetricsReport(
            precision=mean(m.precision for m in per_game),
            recall=mean(m.recall for m in per_game),
            f1=mean(m.f1 for m in per_game),
            accuracy=mean(m.accuracy for m in per_game),
            mean_response_s=mean(m.mean_decision_s for m in per_game),
            stdev_response_s=0.0,
            error_histogram={},
        )


def replay_log_file(path: str | Path) -> tuple[dict[str, GameSession], list[dict]]:
    """Parse and replay a whole event-log file, grouped per game.

    Returns sessions by game_id plus the replayed records. Raises
    ReplayError naming the offending line for corrupt or incomplete input.
    """
    records: list[dict] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ReplayError(line_no, f"malformed event: {exc}") from exc
            records.append(record)
    problems = validate_log_records(records)
    if problems:
        raise ReplayError(0, problems[0])

    per_game: dict[str, list[dict]] = {}
    first_line: dict[str, int] = {}
    for line_no, record in enumerate(records, start=1):
        gid = record.get("game_id")
        if gid is None:
            continue
        per_game.setdefault(gid, []).append(record)
        first_line.setdefault(gid, line_no)

    sessions: dict[str, GameSession] = {}
    replayed_records: list[dict] = []
    for gid, game_records in per_game.items():
        kinds = {r["kind"] for r in game_records}
        if "task_posted" not in kinds:
            raise ReplayError(first_line[gid], f"game {gid} has answers but no task_posted")
        try:
            session, new_records = replay_session_records(game_records)
        except (KeyError, ValueError) as exc:
            raise ReplayError(first_line[gid], f"game {gid}: {exc}") from exc
        sessions[gid] = session
        replayed_records.extend(new_records)
    return sessions, replayed_records


# --------------------------------------------------------------------------
# HTTP app
# --------------------------------------------------------------------------


def create_app(service: GatewayService) -> FastAPI:
    app = FastAPI(title="dialog-esp gateway")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.service = service

    @app.post("/v1/utterances")
    def ingest(req: IngestRequest):
        try:
            game_id = service.ingest_utterance(req)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"game_id": game_id}

    @app.get("/v1/games/{game_id}/result")
    def result(game_id: str, policy: str | None = None, i: int | None = None,
               wait_s: float | None = None):
        try:
            return service.get_result(game_id, policy=policy, i=i, wait_s=wait_s)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown game {game_id!r}")
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/v1/workers/{worker_id}/claim")
    def claim(worker_id: str):
        payload = service.claim_task(worker_id)
        return {"available": payload is not None, "task": payload}

    @app.post("/v1/games/{game_id}/answers")
    def answer(game_id: str, req: AnswerRequest):
        try:
            return service.post_answer(game_id, req.worker_id, req.text)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown game {game_id!r}")

    @app.get("/v1/games/{game_id}/events")
    def events(game_id: str, cursor: int = 0, follow_s: float = 0.0):
        try:
            stream = service.stream_events(game_id, cursor=cursor, follow_s=follow_s)
            first = next(stream, None)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown target {game_id!r}")

        def lines():
            if first is not None:
                yield json.dumps(first, ensure_ascii=False) + "\n"
                for record in stream:
                    yield json.dumps(record, ensure_ascii=False) + "\n"

        return StreamingResponse(lines(), media_type="application/x-ndjson")

    return app
