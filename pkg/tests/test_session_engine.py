import json
import random

import pytest

from dialog_esp.aggregation import aggregate
from dialog_esp.domain import DialogTask, GameConfig, Utterance
from dialog_esp.session_engine import (
    ACTIVE,
    CLOSED,
    DECIDED,
    PENDING,
    MATCH_POINTS,
    PlaylistError,
    SessionEngine,
    SimClock,
    iso_ms,
    parse_iso_ms,
    replay_session_records,
    session_log_records,
    validate_log_records,
)


def make_task(task_id="t1", gold="boston"):
    return DialogTask(
        task_id=task_id,
        utterances=[
            Utterance("agent", "Where to?"),
            Utterance("user", "I need a flight to Boston tomorrow."),
        ],
        slot_name="toloc.city_name",
        slot_prompt="What is the toloc.city_name in this dialog?",
        gold=gold,
    )


def live_cfg(policy="esp_plus_ith", t=20.0, i=1):
    return GameConfig(time_constraint_s=t, policy=policy, fallback_index_i=i, mode="live")


def collection_cfg(policy="esp_plus_ith", t=20.0, i=1):
    return GameConfig(time_constraint_s=t, policy=policy, fallback_index_i=i, mode="collection")


def test_create_session_active_with_deadline():
    engine = SessionEngine()
    session = engine.create_session(make_task(), live_cfg(t=20.0), now=100.0)
    assert session.state == ACTIVE
    assert session.started_at == 100.0
    assert session.deadline == 120.0
    kinds = [e.kind for _, e in engine.log_events()]
    assert kinds == ["task_posted", "utterance_received"]


def test_distinct_game_ids():
    engine = SessionEngine()
    a = engine.create_session(make_task("t1"), live_cfg(), now=0.0)
    b = engine.create_session(make_task("t2"), live_cfg(), now=0.0)
    assert a.game_id != b.game_id


def test_match_awards_points_and_decides_live():
    engine = SessionEngine()
    session = engine.create_session(make_task(), live_cfg(), now=0.0)
    r1 = engine.submit_answer(session.game_id, "w1", "Boston", now=3.0)
    assert r1.accepted and not r1.matched and r1.points_awarded == 0
    r2 = engine.submit_answer(session.game_id, "w2", "boston", now=5.0)
    assert r2.matched and r2.points_awarded == MATCH_POINTS
    assert session.scores == {"w1": MATCH_POINTS, "w2": MATCH_POINTS}
    assert session.state == CLOSED  # live games close on decision
    assert session.outcome.kind == "matched"
    assert session.outcome.decision_offset_s == 5.0


def test_no_self_match():
    engine = SessionEngine()
    session = engine.create_session(make_task(), live_cfg(), now=0.0)
    engine.submit_answer(session.game_id, "w1", "boston", now=2.0)
    result = engine.submit_answer(session.game_id, "w1", "boston", now=4.0)
    assert result.accepted and not result.matched
    assert session.scores == {}


def test_late_submission_rejected_not_recorded():
    engine = SessionEngine()
    session = engine.create_session(make_task(), live_cfg(t=20.0), now=0.0)
    result = engine.submit_answer(session.game_id, "w1", "boston", now=21.0)
    assert not result.accepted and result.reason == "late"
    assert session.events == []
    at_deadline = engine.submit_answer(session.game_id, "w1", "boston", now=20.0)
    assert not at_deadline.accepted


def test_accepted_offsets_inside_window():
    engine = SessionEngine()
    rng = random.Random(8)
    session = engine.create_session(make_task(), collection_cfg(), now=50.0)
    for idx in range(50):
        engine.submit_answer(session.game_id, f"w{idx % 5}", "x", now=50.0 + rng.uniform(-2, 24))
    assert all(0 <= e.offset_s < 20.0 for e in session.events)


def test_collection_mode_records_through_match():
    engine = SessionEngine()
    session = engine.create_session(make_task(), collection_cfg(), now=0.0)
    engine.submit_answer(session.game_id, "w1", "boston", now=2.0)
    result = engine.submit_answer(session.game_id, "w2", "boston", now=4.0)
    assert result.matched and session.state == ACTIVE
    engine.submit_answer(session.game_id, "w3", "denver", now=6.0)
    assert len(session.events) == 3
    outcome = engine.expire(session.game_id, now=20.0)
    assert outcome.kind == "matched"
    assert outcome.decision_offset_s == 4.0


def test_single_match_award_per_session():
    engine = SessionEngine()
    session = engine.create_session(make_task(), collection_cfg(), now=0.0)
    engine.submit_answer(session.game_id, "w1", "boston", now=1.0)
    engine.submit_answer(session.game_id, "w2", "boston", now=2.0)
    engine.submit_answer(session.game_id, "w3", "boston", now=3.0)
    matches = [e for _, e in engine.log_events() if e.kind == "match"]
    assert len(matches) == 1
    assert sum(session.scores.values()) == 2 * MATCH_POINTS


def test_expire_empty_timeout():
    engine = SessionEngine()
    session = engine.create_session(make_task(), live_cfg("esp_only"), now=0.0)
    outcome = engine.expire(session.game_id, now=20.0)
    assert outcome.kind == "empty_timeout"
    assert outcome.decision_offset_s == 20.0
    assert session.state == CLOSED


def test_expire_fallback_ith():
    engine = SessionEngine()
    session = engine.create_session(make_task(), live_cfg("esp_plus_ith", i=1), now=0.0)
    engine.submit_answer(session.game_id, "w1", "boston", now=5.0)
    engine.submit_answer(session.game_id, "w2", "denver", now=9.0)
    outcome = engine.expire(session.game_id, now=20.0)
    assert outcome.kind == "fallback_ith"
    assert outcome.label == "boston"
    assert outcome.decision_offset_s == 20.0


def test_expire_idempotent():
    engine = SessionEngine()
    session = engine.create_session(make_task(), live_cfg(), now=0.0)
    engine.submit_answer(session.game_id, "w1", "boston", now=1.0)
    engine.submit_answer(session.game_id, "w2", "boston", now=2.0)
    first = engine.expire(session.game_id, now=20.0)
    log_size = engine.log_size()
    second = engine.expire(session.game_id, now=25.0)
    assert first == second
    assert engine.log_size() == log_size


def test_expire_before_deadline_rejected():
    engine = SessionEngine()
    session = engine.create_session(make_task(), live_cfg(), now=0.0)
    with pytest.raises(RuntimeError):
        engine.expire(session.game_id, now=10.0)


def test_live_ith_only_decides_at_ith_answer():
    engine = SessionEngine()
    session = engine.create_session(make_task(), live_cfg("ith_only", i=2), now=0.0)
    engine.submit_answer(session.game_id, "w1", "boston", now=2.0)
    assert session.state == ACTIVE
    engine.submit_answer(session.game_id, "w2", "denver", now=4.0)
    assert session.state == CLOSED
    assert session.outcome.kind == "ith_only"
    assert session.outcome.label == "denver"
    assert session.outcome.decision_offset_s == 4.0


def test_engine_agrees_with_aggregate_on_random_schedules():
    rng = random.Random(2024)
    for trial in range(200):
        policy = rng.choice(("esp_only", "ith_only", "esp_plus_ith"))
        mode = rng.choice(("live", "collection"))
        i = rng.randrange(1, 3)
        config = GameConfig(time_constraint_s=20.0, policy=policy, fallback_index_i=i, mode=mode)
        engine = SessionEngine()
        session = engine.create_session(make_task(), config, now=0.0)
        t = 0.0
        for _ in range(rng.randrange(0, 10)):
            t += rng.uniform(0.1, 4.0)
            engine.submit_answer(
                session.game_id,
                f"w{rng.randrange(4)}",
                rng.choice(["boston", "denver", "austin", ""]),
                now=t,
            )
        engine.expire(session.game_id, now=20.0)
        assert session.outcome == aggregate(session.events, config), (trial, policy, mode)


def test_log_timestamps_monotone_and_schema_valid():
    engine = SessionEngine()
    session = engine.create_session(make_task(), collection_cfg(), now=1000.0)
    engine.submit_answer(session.game_id, "w1", "boston", now=1002.5)
    engine.submit_answer(session.game_id, "w2", "boston", now=1004.25)
    engine.expire(session.game_id, now=1020.0)
    records = [e.to_record() for _, e in engine.log_events()]
    assert validate_log_records(records) == []
    assert all(set(r) == {"at", "kind", "game_id", "worker_id", "payload"} for r in records)


def test_iso_ms_round_trip():
    assert iso_ms(0.0) == "1970-01-01T00:00:00.000Z"
    t = 1754720000.123456
    again = iso_ms(parse_iso_ms(iso_ms(t)))
    assert again == iso_ms(t)


def _drive_random_session(seed):
    rng = random.Random(seed)
    policy = rng.choice(("esp_only", "ith_only", "esp_plus_ith"))
    mode = rng.choice(("live", "collection"))
    config = GameConfig(
        time_constraint_s=rng.choice((15.0, 20.0)),
        policy=policy,
        fallback_index_i=rng.randrange(1, 3),
        mode=mode,
    )
    engine = SessionEngine()
    clock = SimClock(1_700_000_000.0 + rng.uniform(0, 1000))
    session = engine.create_session(make_task(), config, now=clock.now())
    for _ in range(rng.randrange(0, 12)):
        clock.advance(rng.uniform(0.05, 3.5))
        engine.submit_answer(
            session.game_id,
            f"w{rng.randrange(5)}",
            rng.choice(["boston", "Boston ", "denver", "bubble tea", ""]),
            now=clock.now(),
        )
    if session.state != CLOSED:
        engine.expire(session.game_id, session.deadline + rng.uniform(0, 0.5))
    return engine, session


def test_replay_determinism_byte_identical():
    for seed in range(40):
        engine, session = _drive_random_session(seed)
        original = session_log_records(engine, session.game_id)
        replayed_session, replayed_records = replay_session_records(original)
        assert json.dumps(replayed_records, sort_keys=True) == json.dumps(
            original, sort_keys=True
        ), seed
        if session.outcome is None:
            assert replayed_session.outcome is None
        else:
            assert replayed_session.outcome.to_record() == session.outcome.to_record()
        assert [e for e in replayed_session.events] == session.events


# -- playlists ---------------------------------------------------------------


def _engine_with_playlist():
    engine = SessionEngine()
    tutorial = engine.post_task(make_task("tutorial", gold="bubble tea"), live_cfg(), now=0.0)
    games = [tutorial.game_id]
    for idx in range(5):
        s = engine.post_task(make_task(f"g{idx}"), live_cfg(), now=0.0)
        games.append(s.game_id)
    engine.start_session(tutorial.game_id, now=0.0)
    playlist = engine.create_playlist("ws-alpha", games, tutorial_first=True)
    return engine, playlist


def _finish(engine, game_id, now):
    engine.submit_answer(game_id, "w1", "boston", now=now)
    engine.submit_answer(game_id, "w2", "boston", now=now + 0.5)


def test_playlist_tutorial_then_games():
    engine, playlist = _engine_with_playlist()
    _finish(engine, playlist.games[0], now=1.0)
    next_id = engine.advance_playlist("ws-alpha", now=2.0)
    assert next_id == playlist.games[1]
    assert engine.get_session(next_id).state == ACTIVE
    assert engine.get_session(next_id).started_at == 2.0
    alerts = [e for _, e in engine.log_events() if e.kind == "playlist_advanced"]
    assert len(alerts) == 1 and alerts[0].payload["next_game_id"] == next_id


def test_playlist_advance_while_active_fails():
    engine, playlist = _engine_with_playlist()
    with pytest.raises(PlaylistError):
        engine.advance_playlist("ws-alpha", now=1.0)


def test_playlist_done_after_all_games():
    engine, playlist = _engine_with_playlist()
    now = 1.0
    for position in range(6):
        _finish(engine, playlist.games[position], now=now)
        now += 2.0
        result = engine.advance_playlist("ws-alpha", now=now)
        if position < 5:
            assert result == playlist.games[position + 1]
    assert result is None
    assert playlist.done
    with pytest.raises(PlaylistError):
        engine.advance_playlist("ws-alpha", now=now + 1.0)


def test_playlist_pending_until_advanced():
    engine, playlist = _engine_with_playlist()
    assert engine.get_session(playlist.games[1]).state == PENDING
