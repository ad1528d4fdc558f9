import json

import pytest

from dialog_esp.domain import (
    CorpusError,
    DialogTask,
    GameConfig,
    UserProfile,
    Utterance,
    generate_synthetic_corpus,
    load_corpus,
    load_corpus_lines,
    sample_profiles,
    task_to_record,
    validate_task,
    write_corpus,
)
from dialog_esp.matching import normalize


def make_task(**overrides) -> DialogTask:
    params = dict(
        task_id="t1",
        utterances=[Utterance("user", "I want to fly to Denver")],
        slot_name="toloc.city_name",
        slot_prompt="What is the toloc.city_name in this dialog?",
        slot_explanation="Destination city name.",
        gold="denver",
        aux_gold={},
        category="A",
    )
    params.update(overrides)
    return DialogTask(**params)


def test_load_single_valid_line(tmp_path):
    path = tmp_path / "corpus.jsonl"
    write_corpus([make_task()], path)
    tasks = load_corpus(path)
    assert len(tasks) == 1
    assert tasks[0].gold == "denver"


def test_load_gold_absent():
    record = task_to_record(make_task(gold=None))
    tasks = load_corpus_lines([json.dumps(record)])
    assert tasks[0].gold is None


def test_load_normalizes_gold():
    record = task_to_record(make_task())
    record["gold"] = "  Denver "
    tasks = load_corpus_lines([json.dumps(record)])
    assert tasks[0].gold == "denver"


def test_load_missing_slot_name_reports_line():
    good = json.dumps(task_to_record(make_task()))
    bad = task_to_record(make_task(task_id="t2"))
    del bad["slot_name"]
    with pytest.raises(CorpusError) as err:
        load_corpus_lines([good, json.dumps(bad)])
    assert err.value.line_no == 2
    assert "slot_name" in str(err.value)


def test_load_malformed_json_reports_line():
    with pytest.raises(CorpusError) as err:
        load_corpus_lines(["{not json"])
    assert err.value.line_no == 1


def test_load_duplicate_task_id():
    line = json.dumps(task_to_record(make_task()))
    with pytest.raises(CorpusError) as err:
        load_corpus_lines([line, line])
    assert "duplicate" in str(err.value)


def test_round_trip(tmp_path):
    tasks = generate_synthetic_corpus(sample_profiles(3, seed=5), seed=5)
    path = tmp_path / "corpus.jsonl"
    write_corpus(tasks, path)
    assert load_corpus(path) == tasks


def test_corpus_field_names_exact(tmp_path):
    path = tmp_path / "corpus.jsonl"
    write_corpus([make_task()], path)
    record = json.loads(path.read_text().splitlines()[0])
    assert set(record) == {
        "task_id", "category", "utterances", "slot_name",
        "slot_prompt", "slot_explanation", "gold", "aux_gold",
    }
    assert set(record["utterances"][0]) == {"speaker", "text"}


def test_validate_task_ok():
    assert validate_task(make_task()) == []


def test_validate_task_unnormalized_gold():
    violations = validate_task(make_task(gold="Boston"))
    assert len(violations) == 1 and violations[0].startswith("gold")


def test_validate_task_no_utterances():
    violations = validate_task(make_task(utterances=[]))
    assert len(violations) == 1 and violations[0].startswith("utterances")


def test_validate_task_bad_speaker():
    violations = validate_task(
        make_task(utterances=[Utterance("narrator", "hello")])
    )
    assert any("speaker" in v for v in violations)


def test_game_config_validation():
    with pytest.raises(ValueError):
        GameConfig(time_constraint_s=0)
    with pytest.raises(ValueError):
        GameConfig(policy="majority")
    with pytest.raises(ValueError):
        GameConfig(fallback_index_i=0)
    with pytest.raises(ValueError):
        GameConfig(mode="batch")


def test_user_profile_lengths():
    with pytest.raises(ValueError):
        UserProfile(foods=["a"] * 8, drinks=["b"] * 3, countries=["c"] * 3)
    with pytest.raises(ValueError):
        UserProfile(foods=["a"] * 9, drinks=["b"] * 2, countries=["c"] * 3)
    UserProfile(foods=["a"] * 9, drinks=["b"] * 3, countries=["c"] * 3)


def test_synthetic_counts_and_empty_golds():
    tasks = generate_synthetic_corpus(sample_profiles(1, seed=7), seed=7)
    assert len(tasks) == 15
    assert sum(1 for t in tasks if t.gold is None) == 3
    assert {t.task_id for t in tasks} == {t.task_id for t in tasks}  # unique ids
    assert len({t.task_id for t in tasks}) == 15


def test_synthetic_no_food_mentions_country():
    profiles = sample_profiles(1, seed=11)
    tasks = generate_synthetic_corpus(profiles, seed=11)
    no_food = [t for t in tasks if "no_food" in t.category]
    assert len(no_food) == 3
    countries = {normalize(c) for c in profiles[0].countries}
    for task in no_food:
        assert task.gold is None
        assert task.aux_gold["country_name"] in countries
        final = normalize(task.utterances[-1].text)
        assert any(c in final for c in countries)


def test_synthetic_determinism():
    profiles = sample_profiles(2, seed=3)
    assert generate_synthetic_corpus(profiles, seed=9) == generate_synthetic_corpus(
        profiles, seed=9
    )


def test_synthetic_gold_in_final_user_utterance():
    for seed in (1, 2, 3):
        tasks = generate_synthetic_corpus(sample_profiles(4, seed=seed), seed=seed)
        for task in tasks:
            if task.gold is None:
                continue
            final_user = [u for u in task.utterances if u.speaker == "user"][-1]
            assert task.gold in normalize(final_user.text), task.task_id


def test_synthetic_tasks_are_valid():
    tasks = generate_synthetic_corpus(sample_profiles(2, seed=21), seed=21)
    for task in tasks:
        assert validate_task(task) == []


def test_synthetic_requires_profiles():
    with pytest.raises(ValueError):
        generate_synthetic_corpus([], seed=0)
