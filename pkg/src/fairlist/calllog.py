"""Call-log parsing, interaction labelling, sessions and traffic estimation."""

from __future__ import annotations

import csv
import enum
import io
import sys
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np


class Source(str, enum.Enum):
    USER = "User"
    STUDIO = "Studio"
    REPORTER = "Reporter"


class Key(str, enum.Enum):
    NONE = "None"
    SKIP = "Skip"
    LIKE = "Like"
    FORWARD = "Forward"
    COMMENT = "Comment"
    RECORD = "Record"
    OTHER = "Other"


class InteractionLabel(str, enum.Enum):
    POSITIVE = "Positive"
    NEGATIVE = "Negative"
    NEUTRAL = "Neutral"


POSITIVE_KEYS = frozenset({Key.LIKE, Key.FORWARD, Key.COMMENT})

# Canonical column order used when serializing events.
FIELDS: tuple[str, ...] = (
    "call_id",
    "caller_id",
    "item_id",
    "contributor_id",
    "item_duration",
    "duration_heard",
    "source",
    "topic",
    "aspect",
    "rating",
    "key_pressed",
    "timestamp",
    "rank_position",
)
OPTIONAL_FIELDS = frozenset({"rank_position"})
ASPECT_SEP = "|"


@dataclass(frozen=True)
class ListenEvent:
    call_id: str
    caller_id: str
    item_id: str
    contributor_id: str
    item_duration: float
    duration_heard: float
    source: Source
    topic: str
    aspect: str
    rating: int
    key_pressed: Key
    timestamp: datetime
    rank_position: int | None = None

    @property
    def aspects(self) -> frozenset[str]:
        """Aspect labels; multi-aspect items join labels with ``|``."""
        return frozenset(a for a in self.aspect.split(ASPECT_SEP) if a)

    @property
    def heard_fraction(self) -> float:
        if self.item_duration <= 0:
            raise ValueError(f"item {self.item_id}: item_duration must be > 0")
        return self.duration_heard / self.item_duration


@dataclass(frozen=True)
class Diagnostic:
    row: int
    field: str
    reason: str

    def __str__(self) -> str:
        return f"row={self.row} field={self.field} reason={self.reason}"


@dataclass
class ParseResult:
    events: list[ListenEvent]
    diagnostics: list[Diagnostic]


@dataclass(frozen=True)
class Session:
    call_id: str
    caller_id: str
    events: tuple[ListenEvent, ...]

    @property
    def start(self) -> datetime:
        return self.events[0].timestamp

    @property
    def depth(self) -> int:
        return len(self.events)


@dataclass
class TrafficProfile:
    users_per_hour: np.ndarray
    rank_reach_prob: np.ndarray

    def __post_init__(self):
        self.users_per_hour = np.asarray(self.users_per_hour, dtype=float)
        self.rank_reach_prob = np.asarray(self.rank_reach_prob, dtype=float)
        if self.users_per_hour.shape != (24,):
            raise ValueError("users_per_hour must have 24 entries")
        if np.any(self.users_per_hour < 0):
            raise ValueError("users_per_hour must be non-negative")
        r = self.rank_reach_prob
        if r.ndim != 1 or np.any(r < 0) or np.any(r > 1):
            raise ValueError("rank_reach_prob values must lie in [0, 1]")
        if np.any(np.diff(r) > 1e-12):
            raise ValueError("rank_reach_prob must be non-increasing in rank")

    def to_dict(self) -> dict:
        return {
            "users_per_hour": [float(x) for x in self.users_per_hour],
            "rank_reach_prob": [float(x) for x in self.rank_reach_prob],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrafficProfile":
        return cls(np.array(data["users_per_hour"]), np.array(data["rank_reach_prob"]))


class _RowError(Exception):
    def __init__(self, field: str, reason: str):
        super().__init__(reason)
        self.field = field
        self.reason = reason


def _enum_lookup(enum_cls, fieldname):
    table = {m.value.lower(): m for m in enum_cls}
    table.update({m.name.lower(): m for m in enum_cls})

    def parse(raw: str):
        key = raw.strip().lower()
        if fieldname == "key_pressed" and key == "":
            return Key.NONE
        try:
            return table[key]
        except KeyError:
            raise _RowError(fieldname, f"unknown code {raw!r}") from None

    return parse


_parse_source = _enum_lookup(Source, "source")
_parse_key = _enum_lookup(Key, "key_pressed")


def _number(raw: str, name: str, kind=float):
    try:
        value = kind(raw.strip())
    except ValueError:
        raise _RowError(name, f"malformed number {raw!r}") from None
    if kind is float and not np.isfinite(value):
        raise _RowError(name, f"non-finite number {raw!r}")
    return value


def _row_to_event(rec: Mapping[str, str]) -> ListenEvent:
    def text(name: str) -> str:
        value = rec.get(name)
        if value is None or value.strip() == "":
            raise _RowError(name, "missing value")
        return value.strip()

    item_duration = _number(text("item_duration"), "item_duration")
    if item_duration <= 0:
        raise _RowError("item_duration", "must be > 0")
    heard = _number(text("duration_heard"), "duration_heard")
    if heard < 0:
        raise _RowError("duration_heard", "must be >= 0")
    if heard > item_duration:
        raise _RowError("duration_heard", "exceeds item_duration")
    rating = _number(text("rating"), "rating", int)
    if rating not in (1, 2, 3, 4, 5):
        raise _RowError("rating", f"out of range 1..5: {rating}")
    try:
        timestamp = datetime.fromisoformat(text("timestamp"))
    except ValueError:
        raise _RowError("timestamp", f"malformed datetime {rec.get('timestamp')!r}") from None
    rank_raw = (rec.get("rank_position") or "").strip()
    rank = None
    if rank_raw:
        rank = _number(rank_raw, "rank_position", int)
        if rank < 1:
            raise _RowError("rank_position", "must be >= 1")
    aspect = text("aspect")
    return ListenEvent(
        call_id=text("call_id"),
        caller_id=text("caller_id"),
        item_id=text("item_id"),
        contributor_id=text("contributor_id"),
        item_duration=item_duration,
        duration_heard=heard,
        source=_parse_source(text("source")),
        topic=text("topic"),
        aspect=aspect,
        rating=rating,
        key_pressed=_parse_key(rec.get("key_pressed") or ""),
        timestamp=timestamp,
        rank_position=rank,
    )


def parse_call_logs(
    rows: Iterable[str] | TextIO,
    schema: Mapping[str, str] | None = None,
    delimiter: str = ",",
) -> ParseResult:
    """Parse delimited call-log text into events.

    ``rows`` is any iterable of text lines whose first line is a header.
    ``schema`` maps event field names to header names; unmapped fields are
    looked up under their own name. Rejected rows produce a
    :class:`Diagnostic` with a 1-based data-row number.
    """
    schema = dict(schema or {})
    reader = csv.reader(rows, delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        return ParseResult([], [])
    position = {name: i for i, name in enumerate(header)}
    columns = {}
    for name in FIELDS:
        col = schema.get(name, name)
        if col in position:
            columns[name] = position[col]
        elif name not in OPTIONAL_FIELDS:
            raise ValueError(f"column {col!r} for field {name!r} not found in header")

    events: list[ListenEvent] = []
    diagnostics: list[Diagnostic] = []
    for rownum, raw in enumerate(reader, start=1):
        if not raw or all(not cell.strip() for cell in raw):
            continue
        rec = {name: (raw[i] if i < len(raw) else "") for name, i in columns.items()}
        try:
            events.append(_row_to_event(rec))
        except _RowError as err:
            diagnostics.append(Diagnostic(rownum, err.field, err.reason))
    return ParseResult(events, diagnostics)


def report_diagnostics(diagnostics: Iterable[Diagnostic], stream: TextIO | None = None) -> None:
    stream = stream or sys.stderr
    for d in diagnostics:
        print(d, file=stream)


def _fmt_number(x: float) -> str:
    return repr(float(x))


def write_events(events: Iterable[ListenEvent], stream: TextIO, delimiter: str = ",") -> None:
    """Serialize events in canonical column order; :func:`parse_call_logs` reads it back."""
    writer = csv.writer(stream, delimiter=delimiter, lineterminator="\n")
    writer.writerow(FIELDS)
    for e in events:
        writer.writerow(
            [
                e.call_id,
                e.caller_id,
                e.item_id,
                e.contributor_id,
                _fmt_number(e.item_duration),
                _fmt_number(e.duration_heard),
                e.source.value,
                e.topic,
                e.aspect,
                e.rating,
                e.key_pressed.value,
                e.timestamp.isoformat(),
                "" if e.rank_position is None else e.rank_position,
            ]
        )


def events_to_text(events: Iterable[ListenEvent]) -> str:
    buf = io.StringIO()
    write_events(events, buf)
    return buf.getvalue()


def label_interaction(
    event: ListenEvent, heard_threshold: float = 0.45, is_final: bool = False
) -> InteractionLabel:
    """Label one listen as a positive, negative or neutral signal.

    A positive key or hearing strictly more than ``heard_threshold`` of the
    item is positive. A skip is negative, as is a hang-up: the final event
    of a call that stopped at or before the threshold without a positive key.
    """
    if not 0 < heard_threshold < 1:
        raise ValueError("heard_threshold must lie in (0, 1)")
    fraction = event.heard_fraction
    if event.key_pressed in POSITIVE_KEYS or fraction > heard_threshold:
        return InteractionLabel.POSITIVE
    if event.key_pressed is Key.SKIP:
        return InteractionLabel.NEGATIVE
    if is_final:
        return InteractionLabel.NEGATIVE
    return InteractionLabel.NEUTRAL


def assemble_sessions(events: Iterable[ListenEvent]) -> list[Session]:
    """Group events by call id, time-ordered within each call.

    Sessions are returned ordered by (start time, call id).
    """
    grouped: dict[str, list[ListenEvent]] = defaultdict(list)
    for e in events:
        grouped[e.call_id].append(e)
    sessions = []
    for call_id, evs in grouped.items():
        # stable sort keeps input order for equal timestamps
        evs.sort(key=lambda e: (e.timestamp, e.rank_position or 0))
        sessions.append(Session(call_id, evs[0].caller_id, tuple(evs)))
    sessions.sort(key=lambda s: (s.start, s.call_id))
    return sessions


def label_session(
    session: Session, heard_threshold: float = 0.45
) -> list[tuple[ListenEvent, InteractionLabel]]:
    last = len(session.events) - 1
    return [
        (e, label_interaction(e, heard_threshold, is_final=(i == last)))
        for i, e in enumerate(session.events)
    ]


def label_sessions(
    sessions: Sequence[Session], heard_threshold: float = 0.45
) -> list[tuple[ListenEvent, InteractionLabel]]:
    out = []
    for s in sessions:
        out.extend(label_session(s, heard_threshold))
    return out


def estimate_traffic_profile(sessions: Sequence[Session], n_max: int | None = None) -> TrafficProfile:
    """Hourly caller means and per-rank reach probabilities.

    ``users_per_hour[h]`` is the number of distinct callers starting a call in
    hour-of-day ``h``, averaged over the days on which any call was observed.
    ``rank_reach_prob[r - 1]`` is the fraction of sessions with depth ``>= r``.
    """
    if not sessions:
        raise ValueError("cannot estimate a traffic profile from zero sessions")
    depths = np.array([s.depth for s in sessions])
    length = max(int(depths.max()), n_max or 10)
    reach = np.array([(depths >= r).mean() for r in range(1, length + 1)])
    if n_max is not None:
        reach = reach[:n_max]

    callers: dict[tuple, set] = defaultdict(set)
    days = set()
    for s in sessions:
        day = s.start.date()
        days.add(day)
        callers[(day, s.start.hour)].add(s.caller_id)
    per_hour = np.zeros(24)
    for (_, hour), who in callers.items():
        per_hour[hour] += len(who)
    per_hour /= len(days)
    return TrafficProfile(per_hour, reach)
