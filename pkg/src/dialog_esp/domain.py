"""Core domain types, the line-delimited corpus format, and a synthetic
corpus generator that mirrors a 10-user chat study grid (5 scenarios x 3
conversational acts per user).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

from .matching import normalize

SPEAKERS = ("user", "agent")
POLICIES = ("esp_only", "ith_only", "esp_plus_ith")
MODES = ("live", "collection")

CORPUS_FIELDS = (
    "task_id",
    "category",
    "utterances",
    "slot_name",
    "slot_prompt",
    "slot_explanation",
    "gold",
    "aux_gold",
)


class CorpusError(ValueError):
    """Raised for malformed or invalid corpus records; carries the line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class Utterance:
    speaker: str
    text: str


@dataclass
class DialogTask:
    """One utterance-with-history plus the slot it asks the crowd to fill.

    ``gold`` is the normalized expected slot value, or None when the dialog
    mentions no such entity. ``aux_gold`` holds normalized values of
    distractor slots (e.g. the departure city when the target is the
    destination), used by error classification.
    """

    task_id: str
    utterances: list[Utterance]
    slot_name: str
    slot_prompt: str = ""
    slot_explanation: str = ""
    gold: str | None = None
    aux_gold: dict[str, str] = field(default_factory=dict)
    category: str = ""


@dataclass(frozen=True)
class GameConfig:
    """Per-game timing and aggregation settings.

    ``mode`` controls the live engine only: live sessions decide as soon as
    the policy's outcome is known, collection sessions record every answer
    until timeout (enabling offline re-aggregation).
    """

    time_constraint_s: float = 20.0
    policy: str = "esp_plus_ith"
    fallback_index_i: int = 1
    mode: str = "live"

    def __post_init__(self) -> None:
        if self.time_constraint_s <= 0:
            raise ValueError("time_constraint_s must be > 0")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy: {self.policy!r}")
        if self.fallback_index_i < 1:
            raise ValueError("fallback_index_i must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode: {self.mode!r}")


@dataclass
class UserProfile:
    """A study participant's entity lists: exactly 9 foods, 3 drinks, 3 countries."""

    foods: list[str]
    drinks: list[str]
    countries: list[str]

    def __post_init__(self) -> None:
        if len(self.foods) != 9:
            raise ValueError("profile needs exactly 9 foods")
        if len(self.drinks) != 3:
            raise ValueError("profile needs exactly 3 drinks")
        if len(self.countries) != 3:
            raise ValueError("profile needs exactly 3 countries")


def validate_task(task: DialogTask) -> list[str]:
    """Return invariant violations as human-readable strings, empty if valid."""
    violations: list[str] = []
    if not task.task_id:
        violations.append("task_id: must be non-empty")
    if not task.utterances:
        violations.append("utterances: must be non-empty")
    for idx, utt in enumerate(task.utterances):
        if utt.speaker not in SPEAKERS:
            violations.append(f"utterances[{idx}].speaker: must be one of {SPEAKERS}")
        if not isinstance(utt.text, str):
            violations.append(f"utterances[{idx}].text: must be a string")
    if not task.slot_name:
        violations.append("slot_name: must be non-empty")
    if task.gold is not None:
        if not task.gold:
            violations.append("gold: must be non-empty when present")
        elif normalize(task.gold) != task.gold:
            violations.append("gold: must be in normalized form")
    for slot, value in task.aux_gold.items():
        if normalize(value) != value or not value:
            violations.append(f"aux_gold[{slot}]: must be in normalized form")
    return violations


def task_to_record(task: DialogTask) -> dict:
    return {
        "task_id": task.task_id,
        "category": task.category,
        "utterances": [{"speaker": u.speaker, "text": u.text} for u in task.utterances],
        "slot_name": task.slot_name,
        "slot_prompt": task.slot_prompt,
        "slot_explanation": task.slot_explanation,
        "gold": task.gold,
        "aux_gold": dict(task.aux_gold),
    }


def task_from_record(record: dict, line_no: int = 0) -> DialogTask:
    """Build a validated DialogTask from a parsed corpus record.

    Gold values are normalized here so downstream code can rely on a single
    canonical form.
    """
    for name in ("task_id", "utterances", "slot_name"):
        if name not in record:
            raise CorpusError(line_no, f"missing required field {name!r}")
    raw_utts = record["utterances"]
    if not isinstance(raw_utts, list):
        raise CorpusError(line_no, "utterances must be an array")
    utterances = []
    for idx, u in enumerate(raw_utts):
        if not isinstance(u, dict) or "speaker" not in u or "text" not in u:
            raise CorpusError(line_no, f"utterances[{idx}] needs speaker and text")
        utterances.append(Utterance(speaker=u["speaker"], text=u["text"]))
    gold = record.get("gold")
    if gold is not None:
        if not isinstance(gold, str):
            raise CorpusError(line_no, "gold must be a string or null")
        gold = normalize(gold)
        if not gold:
            raise CorpusError(line_no, "gold normalizes to empty; use null for no entity")
    aux_gold = record.get("aux_gold") or {}
    if not isinstance(aux_gold, dict):
        raise CorpusError(line_no, "aux_gold must be an object")
    aux_gold = {k: normalize(v) for k, v in aux_gold.items()}
    task = DialogTask(
        task_id=record["task_id"],
        utterances=utterances,
        slot_name=record["slot_name"],
        slot_prompt=record.get("slot_prompt", ""),
        slot_explanation=record.get("slot_explanation", ""),
        gold=gold,
        aux_gold=aux_gold,
        category=record.get("category", ""),
    )
    violations = validate_task(task)
    if violations:
        raise CorpusError(line_no, "; ".join(violations))
    return task


def load_corpus_lines(lines: Iterable[str]) -> list[DialogTask]:
    tasks: list[DialogTask] = []
    seen_ids: set[str] = set()
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(line_no, f"malformed record: {exc}") from exc
        if not isinstance(record, dict):
            raise CorpusError(line_no, "record must be an object")
        task = task_from_record(record, line_no)
        if task.task_id in seen_ids:
            raise CorpusError(line_no, f"duplicate task_id {task.task_id!r}")
        seen_ids.add(task.task_id)
        tasks.append(task)
    return tasks


def load_corpus(path: str | Path) -> list[DialogTask]:
    """Load a line-delimited corpus file; raises CorpusError with line numbers."""
    with open(path, encoding="utf-8") as fh:
        return load_corpus_lines(fh)


def write_corpus(tasks: Iterable[DialogTask], path_or_file: str | Path | TextIO) -> None:
    """Write tasks one record per line; inverse of load_corpus for valid tasks."""
    if hasattr(path_or_file, "write"):
        fh = path_or_file
        for task in tasks:
            fh.write(json.dumps(task_to_record(task), ensure_ascii=False) + "\n")
        return
    with open(path_or_file, "w", encoding="utf-8") as fh:
        write_corpus(tasks, fh)


# --------------------------------------------------------------------------
# Synthetic corpus generation
# --------------------------------------------------------------------------

SCENARIOS = ("eat", "drink", "cook", "chat", "no_food")
ACTS = ("question", "answer", "mentioning")

FOOD_SLOT_NAME = "food_name"
FOOD_SLOT_PROMPT = "What is the food_name in this dialog?"
FOOD_SLOT_EXPLANATION = (
    "Food name. The full name of the food. Including any drinks or beverages."
)

# (history lines..., final user line with {e} placeholder) per scenario/act.
_TEMPLATES: dict[tuple[str, str], list[tuple[tuple[tuple[str, str], ...], str]]] = {
    ("eat", "question"): [
        ((("agent", "I'm starving, any ideas?"),), "Should we get {e} for dinner tonight?"),
        ((), "Do you feel like having {e} later?"),
    ],
    ("eat", "answer"): [
        ((("agent", "What do you want to eat later?"),), "I was thinking {e}."),
        ((("agent", "Any preference for lunch?"),), "Let's go with {e}."),
    ],
    ("eat", "mentioning"): [
        ((), "I had {e} for lunch and I'm still full."),
        ((("agent", "How was your day?"),), "Pretty good, we ended up eating {e} downtown."),
    ],
    ("drink", "question"): [
        ((("agent", "Welcome in! What can I get started for you?"),), "Do you have {e} on the menu?"),
        ((), "Could I ask if the {e} here is any good?"),
    ],
    ("drink", "answer"): [
        ((("agent", "What would you like to drink?"),), "A {e}, please."),
        ((("agent", "Anything to drink with that?"),), "I'll take the {e}."),
    ],
    ("drink", "mentioning"): [
        ((), "That place makes a really good {e}."),
        ((("agent", "Long week?"),), "Yeah, I usually unwind with {e} on Fridays."),
    ],
    ("cook", "question"): [
        ((("agent", "Need a hand with dinner?"),), "Yes, how do I even start making {e}?"),
        ((), "How long should {e} stay in the oven?"),
    ],
    ("cook", "answer"): [
        ((("agent", "What are you cooking tonight?"),), "I'm making {e} tonight."),
        ((("agent", "Did you decide on the menu?"),), "Yep, {e}, if I can pull it off."),
    ],
    ("cook", "mentioning"): [
        ((), "I bought everything to make {e} this weekend."),
        ((("agent", "You sound busy."),), "A bit, I'm prepping {e} for tomorrow."),
    ],
    ("chat", "question"): [
        ((), "Have you ever tried {e}?"),
        ((("agent", "I went to that new market."),), "Nice! Did they sell {e} there?"),
    ],
    ("chat", "answer"): [
        ((("agent", "What did you end up eating at the fair?"),), "We got {e} and it was great."),
        ((("agent", "What's your comfort food?"),), "Honestly, {e} every time."),
    ],
    ("chat", "mentioning"): [
        ((), "My sister keeps talking about {e} lately."),
        ((("agent", "Anything new?"),), "Not much, just craving {e} all week."),
    ],
    ("no_food", "question"): [
        ((), "Have you ever been to {e}?"),
        ((("agent", "I need a vacation."),), "Same. Would you ever visit {e}?"),
    ],
    ("no_food", "answer"): [
        ((("agent", "Where did you go last summer?"),), "We went to {e} for two weeks."),
        ((("agent", "Where is your friend from?"),), "She grew up in {e}."),
    ],
    ("no_food", "mentioning"): [
        ((), "My cousin just moved to {e} for work."),
        ((("agent", "It's been ages!"),), "I know, I've been traveling around {e} a lot."),
    ],
}

# Entity pools for sampling synthetic user profiles. Food and drink entries
# follow the kind of lists study participants produce (generic categories,
# branded items, multi-token dishes); countries are plain names.
FOOD_POOL = (
    "spaghetti", "burger", "vindaloo lamb", "makhani chicken", "kimchee",
    "wheat bread pizza", "cornish pasty", "mushroom soup", "french fries",
    "scallion cake", "okonomiyaki", "oyakodon", "gyudon", "fried rice",
    "wings", "salad", "stinky tofu", "acai berry bowl", "tuna onigiri",
    "rice burger", "seared salmon", "milkfish soup", "mapo tofu", "beef pho",
    "scallion pancake", "pizza", "waffle", "chocolate pie", "cookie",
    "dimsum", "milk shake", "pho", "bbq", "thai food", "beef noodles",
    "steak", "tomato soup", "spicy hot pot", "soup dumplings", "ramen",
    "chocolate", "donut", "cheesecake", "pad thai", "seafood pancake",
    "fish fillets in hot chili", "hot pot", "bibimbap", "japchae",
    "pancakes", "strawberries", "fried fish", "fried chicken", "sausages",
    "gulaab jamun", "paneer tika", "samosa", "dumplings", "noodle",
    "stew pork over rice", "sandwich", "pasta",
    "potato slices with green peppers", "chinese bbq", "stinky tofu rice",
    "yakitori", "baked cinnamon apple", "apple pie",
    "stew pork with potato and apple", "teppanyaki", "crab hotpot",
    "cherry", "chinese cabbage", "pumpkin risotto", "tomato risotto",
    "boeuf bourguignon", "sausage muffin with egg", "eggplant with basil",
)
DRINK_POOL = (
    "tea", "coke", "latte", "green tea latte", "bubble tea", "root beer",
    "medium latte with non-fat milk", "soymilk", "water", "pepsi",
    "latte with nonfat milk", "magic hat #9", "old fashion", "vanilla latte",
    "strawberry smoothie", "iced tea", "coffee", "milk shake", "beer",
    "mocha coffee", "beers", "orange juice", "caramel frappuccino",
    "caramel macchiato", "coffee with coconut milk", "ice tea", "macha",
    "apple juice",
)
COUNTRY_POOL = (
    "japan", "taiwan", "france", "india", "brazil", "canada", "germany",
    "korea", "mexico", "italy", "spain", "portugal", "vietnam", "thailand",
    "norway", "iceland", "morocco", "peru",
)


def sample_profiles(n: int, seed: int) -> list[UserProfile]:
    """Draw n synthetic user profiles from the built-in entity pools."""
    rng = random.Random(seed)
    profiles = []
    for _ in range(n):
        profiles.append(
            UserProfile(
                foods=rng.sample(FOOD_POOL, 9),
                drinks=rng.sample(DRINK_POOL, 3),
                countries=rng.sample(COUNTRY_POOL, 3),
            )
        )
    return profiles


def generate_synthetic_corpus(profiles: list[UserProfile], seed: int) -> list[DialogTask]:
    """Produce 15 tasks per profile: 5 scenarios x 3 conversational acts.

    Eat/Cook/Chat tasks embed one of the profile's foods as gold, Drink tasks
    a drink; No-Food tasks mention a country instead and carry an empty gold.
    Pure function of (profiles, seed).
    """
    if not profiles:
        raise ValueError("profiles must be non-empty")
    rng = random.Random(seed)
    tasks: list[DialogTask] = []
    for pi, profile in enumerate(profiles):
        for scenario in SCENARIOS:
            for act in ACTS:
                if scenario == "drink":
                    entity = rng.choice(profile.drinks)
                elif scenario == "no_food":
                    entity = rng.choice(profile.countries)
                else:
                    entity = rng.choice(profile.foods)
                history, user_fmt = rng.choice(_TEMPLATES[(scenario, act)])
                utterances = [Utterance(speaker=s, text=t) for s, t in history]
                utterances.append(Utterance(speaker="user", text=user_fmt.format(e=entity)))
                gold = None if scenario == "no_food" else normalize(entity)
                aux_gold = {"country_name": normalize(entity)} if scenario == "no_food" else {}
                tasks.append(
                    DialogTask(
                        task_id=f"u{pi:02d}-{scenario}-{act}",
                        utterances=utterances,
                        slot_name=FOOD_SLOT_NAME,
                        slot_prompt=FOOD_SLOT_PROMPT,
                        slot_explanation=FOOD_SLOT_EXPLANATION,
                        gold=gold,
                        aux_gold=aux_gold,
                        category=f"scenario:{scenario}|act:{act}",
                    )
                )
    return tasks
