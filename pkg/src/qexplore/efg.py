"""Compacted event flow graph: vertex merging, execution counts, child generations.

The graph records one vertex per GUI event encountered during an exploration
run. Vertices that carry the same label on pages with the same activity tag
are merge-linked and share a single execution counter, so re-encountering a
near-identical page does not spawn fresh work. Edges run from an executed
vertex to every event of the page its execution produced.

A graph instance is single-writer: mutate it from one thread only. Read-only
queries (``children_generation``, ``debug_dump``) are safe to run
concurrently once mutation has stopped.
"""

from __future__ import annotations

from dataclasses import dataclass

EVENT_KINDS = (
    "click",
    "long_click",
    "edit",
    "scroll",
    "back",
    "menu",
    "restart",
    "system",
)


@dataclass(frozen=True)
class EventRecord:
    """One executable GUI event; the unit of action."""

    event_id: int
    page_id: int
    text: str
    kind: str
    activity: str


@dataclass(frozen=True)
class RawPage:
    """Page description as delivered by the execution environment.

    ``events`` is an ordered tuple of (text, kind) pairs; the order is part
    of the page's identity.
    """

    activity: str
    events: tuple[tuple[str, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(tuple(e) for e in self.events))


@dataclass(frozen=True)
class PageSnapshot:
    page_id: int
    activity: str
    events: tuple[EventRecord, ...]


class ExplorationGraph:
    """Event flow graph with event-level merging and shared counters."""

    def __init__(self):
        self._vertices: dict[int, EventRecord] = {}
        self._edges: dict[int, set[int]] = {}
        self._fcr: dict[int, int] = {}
        self._class_of: dict[int, int] = {}
        self._members: dict[int, list[int]] = {}
        # class -> classes reachable over one edge; maintained incrementally
        self._class_children: dict[int, set[int]] = {}
        # merge key -> class ids in creation order (see _merge_key)
        self._merge_index: dict[tuple, list[int]] = {}
        self._pages: dict[tuple, int] = {}
        self._page_events: dict[int, tuple[int, ...]] = {}
        self._page_activity: dict[int, str] = {}
        self._next_event_id = 0
        self._next_page_id = 0
        self._next_class_id = 0

    # ------------------------------------------------------------------
    # mutation

    def update_graph(self, executed: EventRecord | None, observed_page: RawPage) -> PageSnapshot:
        """Register an observed page and wire edges from the executed event.

        Every event of the page becomes a vertex; new vertices are
        merge-linked against same-activity vertices with identical text and
        kind and inherit the class's execution count. Re-observing a
        byte-identical page returns the existing page id and creates no
        vertices. Edges are added from ``executed`` (when present) to every
        event of the returned snapshot.
        """
        if not observed_page.events:
            raise ValueError("observed page has no events (driver defect)")
        if executed is not None:
            self._require(executed)

        key = (observed_page.activity, observed_page.events)
        page_id = self._pages.get(key)
        if page_id is None:
            page_id = self._create_page(observed_page, key)

        if executed is not None:
            src = executed.event_id
            out = self._edges.setdefault(src, set())
            src_class = self._class_of[src]
            kids = self._class_children.setdefault(src_class, set())
            for dst in self._page_events[page_id]:
                out.add(dst)
                kids.add(self._class_of[dst])

        return self.snapshot(page_id)

    def _create_page(self, raw: RawPage, key: tuple) -> int:
        page_id = self._next_page_id
        self._next_page_id += 1
        self._pages[key] = page_id
        self._page_activity[page_id] = raw.activity

        # occurrence index of (text, kind) within this page, for pairing
        # duplicates against merge classes in creation order
        seen_on_page: dict[tuple[str, str], int] = {}
        ids = []
        for position, (text, kind) in enumerate(raw.events):
            occurrence = seen_on_page.get((text, kind), 0)
            seen_on_page[(text, kind)] = occurrence + 1
            ids.append(self._create_vertex(page_id, position, occurrence, text, kind, raw.activity))
        self._page_events[page_id] = tuple(ids)
        return page_id

    def _merge_key(self, text: str, kind: str, activity: str, position: int) -> tuple:
        # Empty-text events (icons) only merge when they sit at the same
        # ordinal position; labelled events merge by label alone.
        if text:
            return ("t", activity, kind, text)
        return ("e", activity, kind, position)

    def _create_vertex(self, page_id, position, occurrence, text, kind, activity) -> int:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        event_id = self._next_event_id
        self._next_event_id += 1
        record = EventRecord(event_id, page_id, text, kind, activity)
        self._vertices[event_id] = record

        mkey = self._merge_key(text, kind, activity, position)
        classes = self._merge_index.setdefault(mkey, [])
        if occurrence < len(classes):
            class_id = classes[occurrence]
            self._fcr[event_id] = self._fcr[self._members[class_id][0]]
        else:
            class_id = self._next_class_id
            self._next_class_id += 1
            self._members[class_id] = []
            classes.append(class_id)
            self._fcr[event_id] = 0
        self._class_of[event_id] = class_id
        self._members[class_id].append(event_id)
        return event_id

    def record_execution(self, event: EventRecord) -> None:
        """Add one execution to ``event`` and every merge twin."""
        class_id = self._require(event)
        for member in self._members[class_id]:
            self._fcr[member] += 1

    # ------------------------------------------------------------------
    # queries

    def _require(self, event: EventRecord) -> int:
        class_id = self._class_of.get(event.event_id)
        if class_id is None or self._vertices.get(event.event_id) != event:
            raise ValueError(f"event {event!r} is not a vertex of this graph")
        return class_id

    def children_generation(self, event: EventRecord, m: int, k_limit: int = 3) -> frozenset[int]:
        """Merge classes at exactly distance ``m`` from ``event``.

        Breadth-first over the class-level edge relation; a class is counted
        in the first generation it appears in, once, however many vertices
        reach it.
        """
        if m < 1 or m > k_limit:
            raise ValueError(f"generation must be in 1..{k_limit}, got {m}")
        frontier = {self._require(event)}
        seen: set[int] = set()
        for _ in range(m):
            nxt: set[int] = set()
            for class_id in frontier:
                nxt |= self._class_children.get(class_id, set())
            nxt -= seen
            seen |= nxt
            frontier = nxt
        return frozenset(frontier)

    def fcr_of(self, event: EventRecord) -> int:
        self._require(event)
        return self._fcr[event.event_id]

    def class_fcr(self, class_id: int) -> int:
        return self._fcr[self._members[class_id][0]]

    def class_id_of(self, event: EventRecord) -> int:
        return self._require(event)

    def class_members(self, class_id: int) -> tuple[EventRecord, ...]:
        return tuple(self._vertices[v] for v in self._members[class_id])

    def snapshot(self, page_id: int) -> PageSnapshot:
        return PageSnapshot(
            page_id,
            self._page_activity[page_id],
            tuple(self._vertices[v] for v in self._page_events[page_id]),
        )

    def has_page(self, page_id: int) -> bool:
        return page_id in self._page_events

    @property
    def page_count(self) -> int:
        return self._next_page_id

    @property
    def vertex_count(self) -> int:
        return len(self._vertices)

    def vertices(self) -> tuple[EventRecord, ...]:
        return tuple(self._vertices[i] for i in sorted(self._vertices))

    def edges_of(self, event: EventRecord) -> frozenset[int]:
        self._require(event)
        return frozenset(self._edges.get(event.event_id, set()))

    def debug_dump(self) -> str:
        """Deterministic text rendering for golden tests.

        One vertex record per line (page, event, kind, text, fcr, merge
        links as pageId-eventId pairs), then one line per edge.
        """
        lines = []
        for record in sorted(self._vertices.values(), key=lambda r: (r.page_id, r.event_id)):
            twins = [
                self._vertices[m]
                for m in self._members[self._class_of[record.event_id]]
                if m != record.event_id
            ]
            links = " ".join(
                f"{t.page_id}-{t.event_id}" for t in sorted(twins, key=lambda r: (r.page_id, r.event_id))
            )
            lines.append(
                f"{record.page_id}\t{record.event_id}\t{record.kind}\t{record.text}"
                f"\t{self._fcr[record.event_id]}\t{links or '-'}"
            )
        for src in sorted(self._edges):
            for dst in sorted(self._edges[src]):
                lines.append(f"edge\t{src}\t{dst}")
        return "\n".join(lines) + "\n"
