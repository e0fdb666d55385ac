"""Deterministic synthetic app environment.

Stands in for a real execution engine: pages with typed events, a
transition table keyed by input class, a hidden line-coverage model, a
crash table, and system events (rotate / volume / call). A seeded generator
produces corpora of apps whose labels, page depth, and coverage payoffs are
learnable regularities.

One mutable environment per agent; independent instances may run in
parallel.
"""

from __future__ import annotations

import json
import random
import string
from dataclasses import dataclass
from pathlib import Path

from .efg import RawPage

SCHEMA_KEY = "qxp_app"
SCHEMA_VERSION = 1

SYSTEM_EVENT_KINDS = ("rotate", "volume", "call")
LAUNCH_KEY = "launch"
INPUT_CLASSES = ("numeric", "alpha", "punct", "mixed", "any")

_INPUT_ALPHABET = string.ascii_letters + string.digits + string.punctuation

FUNCTIONAL_WORDS = ("ok", "save", "next", "open", "add", "delete")
DISMISSIVE_WORDS = ("cancel", "close", "exit")
NEUTRAL_WORDS = (
    "view",
    "list",
    "info",
    "help",
    "about",
    "search",
    "settings",
    "share",
    "copy",
    "sort",
    "filter",
    "refresh",
)
LABEL_SUFFIXES = ("item", "file", "entry", "note", "page", "record")


def classify_input(text: str) -> str:
    """Bucket a text input: numeric, punct, alpha, or mixed."""
    if text and all(c.isdigit() for c in text):
        return "numeric"
    if any(c in string.punctuation for c in text):
        return "punct"
    if text and all(c.isalpha() for c in text):
        return "alpha"
    return "mixed"


def random_input(rng: random.Random) -> str:
    """Random text for editable events: 1-12 chars over letters+digits+punctuation."""
    length = rng.randint(1, 12)
    return "".join(rng.choice(_INPUT_ALPHABET) for _ in range(length))


@dataclass(frozen=True)
class StepOutcome:
    page: RawPage
    coverage_increased: bool
    coverage: float
    crash_message: str | None


@dataclass(frozen=True)
class GenParams:
    page_count: int = 50
    events_min: int = 4
    events_max: int = 7
    depth: int = 10
    crash_count: int = 2
    functional_vocab_weight: float = 0.8
    seed: int = 0

    def validate(self):
        if self.page_count < 2:
            raise ValueError("page_count must be at least 2")
        if not (1 <= self.events_min <= self.events_max):
            raise ValueError("events range must satisfy 1 <= min <= max")
        if self.depth < 1 or self.depth > self.page_count - 1:
            raise ValueError("depth must be in 1..page_count-1")
        if self.crash_count < 0:
            raise ValueError("crash_count must be non-negative")
        if not (0.0 <= self.functional_vocab_weight <= 1.0):
            raise ValueError("functional_vocab_weight must be in [0,1]")


class AppSpecError(ValueError):
    """App definition file violates the schema."""


class SimApp:
    """App definition plus per-episode runtime state.

    back pops the navigation stack (home when empty); restart returns home
    and clears the stack but keeps covered lines; a crash relaunches to home
    with coverage retained. Coverage is monotone within an episode and
    resets only on launch().
    """

    def __init__(self, spec: dict):
        self._validate(spec)
        self.spec = spec
        self.name = spec.get("name", "app")
        self.pages: list[dict] = spec["pages"]
        self.home: int = spec["home"]
        self.total_lines: int = spec["total_lines"]
        self.transitions: dict[tuple[int, int, str], int] = {
            (t["page"], t["event"], t["input_class"]): t["to"] for t in spec.get("transitions", [])
        }
        self.cover: dict[tuple[int, int | str], frozenset[int]] = {
            (c["page"], c["event"]): frozenset(c["lines"]) for c in spec.get("cover", [])
        }
        self.crashes: dict[tuple[int, int | str], list[tuple[str | None, str]]] = {}
        for c in spec.get("crashes", []):
            self.crashes.setdefault((c["page"], c["event"]), []).append(
                (c.get("input_class"), c["message"])
            )
        # runtime
        self.current: int = self.home
        self.covered: set[int] = set()
        self.stack: list[int] = []
        self.launched = False

    @staticmethod
    def _validate(spec: dict):
        if spec.get(SCHEMA_KEY) != SCHEMA_VERSION:
            raise AppSpecError(f"missing or unsupported {SCHEMA_KEY} version")
        pages = spec.get("pages")
        if not pages:
            raise AppSpecError("app has no pages")
        n = len(pages)
        for i, page in enumerate(pages):
            if not page.get("events"):
                raise AppSpecError(f"page {i} has no events")
        if not (0 <= spec.get("home", -1) < n):
            raise AppSpecError("home page index out of range")
        if spec.get("total_lines", 0) < 1:
            raise AppSpecError("total_lines must be positive")
        for t in spec.get("transitions", []):
            if not (0 <= t["page"] < n and 0 <= t["to"] < n):
                raise AppSpecError(f"transition {t} references an unknown page")
            if t["input_class"] not in INPUT_CLASSES:
                raise AppSpecError(f"transition {t} has unknown input class")
        for c in spec.get("cover", []):
            if any(line < 0 or line >= spec["total_lines"] for line in c["lines"]):
                raise AppSpecError(f"cover entry {c} exceeds total_lines")

    # ------------------------------------------------------------------
    # persistence

    @classmethod
    def load(cls, path: str | Path) -> "SimApp":
        with open(path, encoding="utf-8") as fh:
            spec = json.load(fh)
        app = cls(spec)
        app.name = Path(path).stem
        return app

    def to_json(self) -> str:
        return json.dumps(self.spec, indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    # ------------------------------------------------------------------
    # environment

    def raw_page(self, index: int) -> RawPage:
        page = self.pages[index]
        return RawPage(page["activity"], tuple((e["text"], e["kind"]) for e in page["events"]))

    @property
    def coverage(self) -> float:
        return len(self.covered) / self.total_lines

    def launch(self) -> RawPage:
        """Start a new episode: home page, empty stack, launch lines covered."""
        self.current = self.home
        self.stack = []
        self.covered = set(self.cover.get((self.home, LAUNCH_KEY), frozenset()))
        self.launched = True
        return self.raw_page(self.home)

    def _crash_for(self, key: tuple[int, int | str], input_class: str) -> str | None:
        for wanted, message in self.crashes.get(key, ()):
            if wanted is None or wanted == "any" or wanted == input_class:
                return message
        return None

    def execute(self, event_index: int, input_text: str | None = None) -> StepOutcome:
        """Run one GUI event on the current page."""
        if not self.launched:
            raise ValueError("app not launched")
        events = self.pages[self.current]["events"]
        if not (0 <= event_index < len(events)):
            raise ValueError(f"event {event_index} not on current page {self.current}")
        kind = events[event_index]["kind"]
        if kind == "edit":
            if input_text is None:
                raise ValueError("edit event requires an input")
            input_class = classify_input(input_text)
        else:
            if input_text is not None:
                raise ValueError(f"{kind} event takes no input")
            input_class = "any"

        before = len(self.covered)
        self.covered |= self.cover.get((self.current, event_index), frozenset())
        crash = self._crash_for((self.current, event_index), input_class)
        if crash is not None:
            self.current = self.home
            self.stack = []
        elif kind == "back":
            self.current = self.stack.pop() if self.stack else self.home
        elif kind == "restart":
            self.current = self.home
            self.stack = []
        else:
            key = (self.current, event_index, input_class)
            target = self.transitions.get(key)
            if target is None:
                target = self.transitions.get((self.current, event_index, "any"), self.current)
            if target != self.current:
                self.stack.append(self.current)
                self.current = target
        return StepOutcome(
            self.raw_page(self.current),
            len(self.covered) > before,
            self.coverage,
            crash,
        )

    def system_event(self, rng: random.Random) -> tuple[str, StepOutcome]:
        """Dispatch one uniform-random system event; returns (kind, outcome)."""
        if not self.launched:
            raise ValueError("app not launched")
        kind = rng.choice(SYSTEM_EVENT_KINDS)
        before = len(self.covered)
        self.covered |= self.cover.get((self.current, kind), frozenset())
        crash = self._crash_for((self.current, kind), "any")
        if crash is not None:
            self.current = self.home
            self.stack = []
        return kind, StepOutcome(
            self.raw_page(self.current),
            len(self.covered) > before,
            self.coverage,
            crash,
        )


# ----------------------------------------------------------------------
# bundled fixture apps

_APPS_DIR = Path(__file__).parent / "apps"


def fixture_app_path(name: str) -> Path:
    path = _APPS_DIR / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(f"no bundled app named {name!r}")
    return path


def load_fixture(name: str) -> SimApp:
    return SimApp.load(fixture_app_path(name))


# ----------------------------------------------------------------------
# seeded generator


def _make_label(rng: random.Random, profile: str, weight: float) -> str:
    pools = {
        "rich": FUNCTIONAL_WORDS,
        "medium": NEUTRAL_WORDS,
        "poor": DISMISSIVE_WORDS,
    }
    if rng.random() < weight:
        word = rng.choice(pools[profile])
    else:
        word = rng.choice(FUNCTIONAL_WORDS + DISMISSIVE_WORDS + NEUTRAL_WORDS)
    roll = rng.random()
    if roll < 0.5:
        return word
    if roll < 0.85:
        return f"{word} {rng.choice(LABEL_SUFFIXES)}"
    return f"{word} new {rng.choice(LABEL_SUFFIXES)}"


def generate_app(params: GenParams) -> SimApp:
    """Build a deterministic app with learnable structure from a seed.

    Functional labels preferentially land on events that open deeper pages
    and cover many lines; dismissive labels on events that stall. Every
    non-home page is reachable through a parent at the previous depth
    level, so page depth matches graph distance from home.
    """
    params.validate()
    rng = random.Random(params.seed)

    levels = [0]
    for i in range(1, params.page_count):
        levels.append(i if i <= params.depth else rng.randint(1, params.depth))
    by_level: dict[int, list[int]] = {}
    for page, level in enumerate(levels):
        by_level.setdefault(level, []).append(page)

    activities = []
    for page, level in enumerate(levels):
        if rng.random() < 0.5:
            activities.append(f"act{level}")
        else:
            activities.append(f"act{level}p{page}")

    # each non-home page gets one parent at the previous level
    child_targets: dict[int, list[int]] = {p: [] for p in range(params.page_count)}
    for page in range(1, params.page_count):
        parent = rng.choice(by_level[levels[page] - 1])
        child_targets[parent].append(page)

    line_counter = 0

    def new_lines(count: int) -> list[int]:
        nonlocal line_counter
        lines = list(range(line_counter, line_counter + count))
        line_counter += count
        return lines

    pages = []
    transitions = []
    cover = []
    crashes = []
    crash_candidates: list[tuple[int, int]] = []

    cover.append({"page": 0, "event": LAUNCH_KEY, "lines": new_lines(3)})

    for page in range(params.page_count):
        level = levels[page]
        events = [
            {"text": "restart", "kind": "restart"},
            {"text": "back", "kind": "back"},
            {"text": "menu", "kind": "menu"},
        ]
        if rng.random() < 0.5 and len(by_level[level]) > 1:
            menu_target = rng.choice([p for p in by_level[level] if p != page])
            transitions.append({"page": page, "event": 2, "input_class": "any", "to": menu_target})

        deeper = [p for p in range(params.page_count) if levels[p] == level + 1]
        same = [p for p in by_level[level] if p != page]
        shallower = by_level.get(level - 1, [])

        n_content = max(rng.randint(params.events_min, params.events_max), len(child_targets[page]))
        specs = []
        for slot in range(n_content):
            if slot < len(child_targets[page]):
                specs.append(("rich", child_targets[page][slot]))
            else:
                profile = rng.choices(("rich", "medium", "poor"), weights=(0.45, 0.25, 0.30))[0]
                specs.append((profile, None))
        rng.shuffle(specs)

        for profile, forced_target in specs:
            index = len(events)
            if profile == "rich":
                kind = "edit" if rng.random() < 0.15 else "click"
                target = forced_target
                if target is None:
                    target = rng.choice(deeper) if deeper else (rng.choice(same) if same else page)
                lines = new_lines(rng.randint(4, 7))
            elif profile == "medium":
                kind = "long_click" if rng.random() < 0.2 else "click"
                pool = same + deeper
                target = rng.choice(pool) if pool and rng.random() < 0.7 else page
                lines = new_lines(rng.randint(2, 3))
            else:
                kind = "scroll" if rng.random() < 0.3 else "click"
                target = page
                if kind != "scroll" and shallower and rng.random() < 0.4:
                    target = rng.choice(shallower)
                lines = new_lines(0 if rng.random() < 0.6 else 1)

            events.append({"text": _make_label(rng, profile, params.functional_vocab_weight), "kind": kind})
            if kind == "scroll":
                target = page
            if target != page:
                input_class = "numeric" if kind == "edit" else "any"
                transitions.append(
                    {"page": page, "event": index, "input_class": input_class, "to": target}
                )
            if lines:
                cover.append({"page": page, "event": index, "lines": lines})
            if kind == "click" and level >= max(1, params.depth // 2):
                crash_candidates.append((page, index))

        if rng.random() < 0.2:
            cover.append({"page": page, "event": "rotate", "lines": new_lines(1)})

        pages.append({"activity": activities[page], "events": events})

    exceptions = (
        "NullPointerException",
        "IndexOutOfBoundsException",
        "IllegalStateException",
        "ClassCastException",
    )
    rng.shuffle(crash_candidates)
    for i in range(min(params.crash_count, len(crash_candidates))):
        page, index = crash_candidates[i]
        if i == 1:  # one system-event crash when two or more are requested
            crashes.append(
                {
                    "page": page,
                    "event": "rotate",
                    "message": f"E{i}: IllegalStateException on rotate in {activities[page]}",
                }
            )
        else:
            crashes.append(
                {
                    "page": page,
                    "event": index,
                    "message": f"E{i}: {rng.choice(exceptions)} in {activities[page]}.onClick",
                }
            )

    spec = {
        SCHEMA_KEY: SCHEMA_VERSION,
        "home": 0,
        "total_lines": line_counter,
        "pages": pages,
        "transitions": transitions,
        "cover": cover,
        "crashes": crashes,
    }
    return SimApp(spec)
