"""Token-grammar serialization of user stories, and its inverse.

One story serializes to one line of text:

    country=US device=tv <|begin_sessions|> <|session|> elapsed=0h day=6
    <|search|> hour=3 lan <|search|> hour=3 lantern <|watch|> hour=3
    <|surface=search|><|carousel()|><|id(SYN201|The Lantern at Exit 13)|> 87m ...

(line breaks here are for display; the serialized form is a single line with
single-space field separation and no trailing whitespace). The surface,
carousel, and item tokens of a watch are concatenated without spaces.

The grammar stores only relative time fields (session elapsed hours, day of
week, per-event hour), so `parse` reconstructs absolute timestamps relative
to a caller-supplied epoch; equality after a round trip is defined on the
serialized fields, which `story_signature` extracts.

See GRAMMAR.md for the full production list.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from .stories import (
    SESSION_GAP_SECONDS,
    SESSION_SPAN_SECONDS,
    AttributeHeader,
    CarouselRef,
    EMPTY_CAROUSEL,
    Event,
    ItemRef,
    SearchEvent,
    Session,
    Surface,
    UserStory,
    ValidationError,
    WatchEvent,
    day_of_week,
    hour_of_day,
    validate_story,
)

BEGIN_SESSIONS = "<|begin_sessions|>"
SESSION_MARKER = "<|session|>"
WATCH_MARKER = "<|watch|>"
SEARCH_MARKER = "<|search|>"

# Monday 1970-01-05 00:00 UTC; a Monday anchor makes day-of-week arithmetic plain.
DEFAULT_EPOCH = 4 * 86400

VIEWS = ("item", "carousel", "search")
ATTRIBUTE_SUBSETS = ("all", "profile", "location")

# Header keys understood as location context; any other key counts as a
# profile attribute. Used by strip_attributes(profile|location).
LOCATION_KEYS = frozenset({"country", "region", "city", "dma", "timezone", "locale"})


class ParseError(ValueError):
    def __init__(self, text: str, pos: int, expected: str):
        self.byte_offset = len(text[:pos].encode("utf-8"))
        self.expected = expected
        super().__init__(f"byte {self.byte_offset}: expected {expected}")


# --- serialization ----------------------------------------------------------

def watch_clause(hour: int, surface: Surface, carousel_id: str,
                 item: ItemRef | None = None,
                 duration_minutes: int | None = None) -> str:
    clause = (f"{WATCH_MARKER} hour={hour} "
              f"<|surface={surface.value}|><|carousel({carousel_id})|>")
    if item is not None:
        clause += f"<|id({item.item_id}|{item.title})|>"
    if duration_minutes is not None:
        clause += f" {duration_minutes}m"
    return clause


def search_clause(hour: int, query: str) -> str:
    return f"{SEARCH_MARKER} hour={hour} {query}"


def session_clause(elapsed_hours: int, dow: int) -> str:
    return f"{SESSION_MARKER} elapsed={elapsed_hours}h day={dow}"


def event_clause(event: Event) -> str:
    if isinstance(event, WatchEvent):
        return watch_clause(event.hour, event.surface, event.carousel.carousel_id,
                            event.item, event.duration_minutes)
    return search_clause(event.hour, event.query)


def header_clauses(attributes: AttributeHeader) -> list[str]:
    return [f"{k}={v}" for k, v in attributes.pairs]


def serialize(story: UserStory, *, validate: bool = True) -> str:
    """Render a story as one line of grammar text (deterministic, byte-exact)."""
    if validate:
        violations = validate_story(story, itemless_ok=True)
        if violations:
            raise ValidationError(
                "cannot serialize invalid story: "
                + "; ".join(str(v) for v in violations[:3]))
    clauses = header_clauses(story.attributes)
    clauses.append(BEGIN_SESSIONS)
    for sess in story.sessions:
        if not story.sessionless:
            clauses.append(session_clause(sess.elapsed_hours, sess.day_of_week))
        for event in sess.events:
            clauses.append(event_clause(event))
    return " ".join(clauses)


# --- parsing ----------------------------------------------------------------

@dataclass
class _WatchProto:
    hour: int
    surface: Surface
    carousel_id: str
    item_id: str | None
    title: str | None
    duration_minutes: int | None


@dataclass
class _SearchProto:
    hour: int
    query: str


@dataclass
class _SessionProto:
    elapsed_hours: int
    day_of_week: int
    events: list


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def eof(self) -> bool:
        return self.pos >= len(self.text)

    def fail(self, expected: str, pos: int | None = None):
        raise ParseError(self.text, self.pos if pos is None else pos, expected)

    def literal(self, lit: str, expected: str | None = None) -> None:
        if not self.text.startswith(lit, self.pos):
            self.fail(expected or repr(lit))
        self.pos += len(lit)

    def peek(self, lit: str) -> bool:
        return self.text.startswith(lit, self.pos)

    def integer(self, what: str, lo: int, hi: int) -> int:
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if self.pos == start:
            self.fail(f"integer ({what})", start)
        value = int(self.text[start:self.pos])
        if not lo <= value <= hi:
            self.fail(f"{what} in {lo}..{hi}, got {value}", start)
        return value

    def until(self, stop: str, what: str) -> str:
        end = self.text.find(stop, self.pos)
        if end < 0:
            self.fail(f"{stop!r} closing {what}")
        chunk = self.text[self.pos:end]
        self.pos = end + len(stop)
        return chunk


def _parse_header(sc: _Scanner) -> list[tuple[str, str]]:
    idx = sc.text.find(BEGIN_SESSIONS)
    if idx < 0:
        sc.fail(f"{BEGIN_SESSIONS} marker")
    header = sc.text[:idx]
    sc.pos = idx + len(BEGIN_SESSIONS)
    pairs: list[tuple[str, str]] = []
    if header == "":
        return pairs
    if not header.endswith(" ") or header.endswith("  "):
        sc.fail("single space between header and session marker", max(0, idx - 1))
    chunks = header[:-1].split(" ")
    for ci, chunk in enumerate(chunks):
        if chunk == "":
            sc.fail("attribute pair, found empty chunk", 0)
        if "=" in chunk:
            key, _, value = chunk.partition("=")
            if not key:
                sc.fail("attribute key before '='", 0)
            pairs.append((key, value))
        else:
            if not pairs:
                sc.fail("key=value attribute pair", 0)
            # continuation of a value that contains spaces
            pairs[-1] = (pairs[-1][0], pairs[-1][1] + " " + chunk)
    return pairs


def _parse_watch(sc: _Scanner, partial_ok: bool) -> _WatchProto:
    sc.literal(WATCH_MARKER + " hour=", "watch clause")
    hour = sc.integer("hour", 0, 23)
    if sc.eof() and partial_ok:
        return _WatchProto(hour, Surface.HOME, "", None, None, None)
    sc.literal(" <|surface=", "'<|surface=' after watch hour")
    surface_pos = sc.pos
    surface_name = sc.until("|>", "surface token")
    try:
        surface = Surface(surface_name)
    except ValueError:
        sc.fail(f"unknown surface {surface_name!r}", surface_pos)
    if sc.eof() and partial_ok:
        return _WatchProto(hour, surface, "", None, None, None)
    sc.literal("<|carousel(", "'<|carousel(' after surface token")
    carousel_id = sc.until(")|>", "carousel token")
    if "(" in carousel_id:
        sc.fail("carousel id without '('")
    if sc.eof() and partial_ok:
        return _WatchProto(hour, surface, carousel_id, None, None, None)
    if not sc.peek("<|id("):
        # itemless watch: the carousel-view grammar drops item and duration
        return _WatchProto(hour, surface, carousel_id, None, None, None)
    sc.literal("<|id(")
    item_pos = sc.pos
    item_id = sc.until("|", "item id")
    if ")" in item_id:
        sc.fail("item id without ')'", item_pos)
    title = sc.until(")|>", "item token")
    if sc.peek(" ") and sc.text[sc.pos + 1:sc.pos + 2].isdigit():
        sc.literal(" ")
        duration = sc.integer("duration", 0, 10**9)
        sc.literal("m", "'m' after watch duration")
        return _WatchProto(hour, surface, carousel_id, item_id, title, duration)
    if partial_ok:
        return _WatchProto(hour, surface, carousel_id, item_id, title, None)
    sc.fail("' {minutes}m' duration after item token")


def _parse_search(sc: _Scanner) -> _SearchProto:
    sc.literal(SEARCH_MARKER + " hour=", "search clause")
    hour = sc.integer("hour", 0, 23)
    sc.literal(" ", "space before query text")
    nxt = sc.text.find("<|", sc.pos)
    if nxt < 0:
        query = sc.text[sc.pos:]
        sc.pos = len(sc.text)
    else:
        if nxt == sc.pos or sc.text[nxt - 1] != " ":
            sc.fail("space-separated query before next clause", nxt)
        query = sc.text[sc.pos:nxt - 1]
        sc.pos = nxt - 1
    if not query:
        sc.fail("non-empty query text")
    return _SearchProto(hour, query)


def _scan(text: str, *, partial_ok: bool) -> tuple[list[tuple[str, str]], bool, list[_SessionProto]]:
    sc = _Scanner(text)
    pairs = _parse_header(sc)
    sessions: list[_SessionProto] = []
    sessionless = False
    while not sc.eof():
        sc.literal(" ", "single space between clauses")
        if sc.peek(SESSION_MARKER):
            if sessionless:
                sc.fail("no session clause in a flat (sessionless) story")
            sc.literal(SESSION_MARKER + " elapsed=", "session clause")
            elapsed = sc.integer("elapsed hours", 0, 10**9)
            sc.literal("h day=", "'h day=' in session clause")
            dow = sc.integer("day of week", 0, 6)
            sessions.append(_SessionProto(elapsed, dow, []))
        elif sc.peek(WATCH_MARKER) or sc.peek(SEARCH_MARKER):
            if not sessions:
                sessionless = True
                sessions.append(_SessionProto(0, 0, []))
            if sc.peek(WATCH_MARKER):
                sessions[-1].events.append(_parse_watch(sc, partial_ok))
            else:
                sessions[-1].events.append(_parse_search(sc))
        else:
            sc.fail("session, watch, or search clause")
    return pairs, sessionless, sessions


# --- timestamp reconstruction ----------------------------------------------
#
# Grammar text carries only (elapsed, day, hour) fields. Reconstruction picks
# canonical absolute timestamps consistent with those fields. Within a
# session, each event is placed as late as its hour window and the session
# rules allow; maximizing the running activity end keeps every gap that was
# feasible in the original story feasible here too. For text produced by
# `serialize` from a rule-abiding story this yields a rule-abiding story; for
# arbitrary hand-written text placement is best-effort and `validate_story`
# reports any residual inconsistency. The serialized fields themselves are
# preserved exactly either way.

def _hour_window(after: int, hour: int) -> tuple[int, int]:
    """Earliest [start, end] window with hour-of-day == hour and end >= after."""
    day = after // 86400
    start = day * 86400 + hour * 3600
    if start + 3599 < after:
        start += 86400
    return start, start + 3599


def _latest_dow_hour_in(lo: int, hi: int, hour: int | None, dow: int | None) -> int | None:
    """Latest t in [lo, hi] with the given hour-of-day and day-of-week, if any."""
    day = hi // 86400
    while day * 86400 + (0 if hour is None else hour * 3600) + 3599 >= lo - 86400:
        if dow is None or (day + 3) % 7 == dow:
            if hour is None:
                t = min(hi, (day + 1) * 86400 - 1)
                if t >= max(lo, day * 86400):
                    return t
            else:
                ws = day * 86400 + hour * 3600
                t = min(hi, ws + 3599)
                if t >= max(lo, ws):
                    return t
        day -= 1
        if day < 0:
            break
    return None


def _region_offsets(elapsed: int) -> tuple[int, int]:
    """Allowed (start - previous_activity_end) range for the stated elapsed
    field. elapsed == 1 excludes the exact 3600s boundary, which would
    re-segment as a single session."""
    lo = 3601 if elapsed == 1 else elapsed * 3600
    return lo, (elapsed + 1) * 3600 - 1


def _place_session_start(prev_end: int | None, elapsed: int, dow: int | None,
                         first_hour: int | None, epoch: int,
                         best_effort: bool) -> int | None:
    if prev_end is None:
        day = epoch // 86400
        if epoch % 86400:
            day += 1
        for _ in range(8):
            if dow is None or (day + 3) % 7 == dow:
                return day * 86400 + (first_hour or 0) * 3600 + 3599
            day += 1
        return day * 86400
    lo_off, hi_off = _region_offsets(elapsed)
    t = _latest_dow_hour_in(prev_end + lo_off, prev_end + hi_off, first_hour, dow)
    if t is not None or not best_effort:
        return t
    # Infeasible for the stated fields; walk forward to the first matching
    # (hour, dow) slot so the story still materializes.
    probe = prev_end + lo_off
    for _ in range(8 * 24):
        ws, we = _hour_window(probe, first_hour or 0)
        if dow is None or day_of_week(ws) == dow:
            return we
        probe = we + 1
    return prev_end + lo_off


def _build_session(proto: _SessionProto, start: int, span_cap: bool) -> Session:
    events: list[Event] = []
    t_prev: int | None = None
    act_end: int | None = None
    session_start = start
    for ev in proto.events:
        if t_prev is None:
            t = start
        else:
            ws, we = _hour_window(t_prev, ev.hour)
            upper = min(we, act_end + SESSION_GAP_SECONDS)
            if span_cap:
                upper = min(upper, session_start + SESSION_SPAN_SECONDS)
            lower = max(ws, t_prev)
            t = upper if upper >= lower else lower
        if isinstance(ev, _SearchProto):
            events.append(SearchEvent(t, ev.hour, ev.query))
        else:
            item = None if ev.item_id is None else ItemRef(ev.item_id, ev.title or "")
            events.append(WatchEvent(t, ev.hour, ev.surface,
                                     CarouselRef(ev.carousel_id), item,
                                     ev.duration_minutes))
        act_end = events[-1].end_time if act_end is None \
            else max(act_end, events[-1].end_time)
        t_prev = t
    return Session(start_time=session_start, elapsed_hours=proto.elapsed_hours,
                   day_of_week=proto.day_of_week, events=tuple(events))


def _session_slide_slack(sess: Session) -> int:
    """How far the session can shift earlier with every event staying inside
    its hour window (and an empty session staying inside its day)."""
    if not sess.events:
        return sess.start_time % 86400
    slack = 3599
    for e in sess.events:
        window_start = (e.timestamp // 86400) * 86400 + e.hour * 3600
        slack = min(slack, e.timestamp - window_start)
    return max(0, slack)


def _shift_session(sess: Session, shift: int) -> Session:
    events = tuple(
        replace(e, timestamp=e.timestamp - shift) for e in sess.events)
    return replace(sess, start_time=sess.start_time - shift, events=events)


def _find_slide(prev_end: int, lo_off: int, hi_off: int, hour: int | None,
                dow: int | None, slide_max: int) -> int | None:
    """Smallest earlier-shift of the previous block that lets the next
    session start land in an (hour, dow) window at the stated elapsed."""
    wlen = 3600 if hour is not None else 86400
    day = (prev_end - slide_max + lo_off) // 86400 - 1
    last_day = (prev_end + hi_off) // 86400 + 1
    while day <= last_day:
        w0 = day * 86400 + (hour or 0) * 3600
        if dow is None or day_of_week(w0) == dow:
            s_min = max(0, prev_end + lo_off - (w0 + wlen - 1))
            s_max = min(slide_max, prev_end + hi_off - w0)
            if s_min <= s_max:
                return s_min
        day += 1
    return None


def _available_slide(slacks: list[int], gaps: list[int | None]) -> int:
    """Largest uniform earlier-shift applicable to some suffix block of the
    placed sessions. A block bounded on the left by a non-sliding session is
    limited by that boundary gap staying at or above its elapsed region."""
    avail = 0
    for slack, gap in zip(slacks, gaps):
        avail = slack if gap is None else min(slack, max(gap, avail))
    return avail


def _execute_slide(sessions, slacks, gaps, shift: int) -> None:
    i = len(sessions) - 1
    while i >= 0:
        sessions[i] = _shift_session(sessions[i], shift)
        slacks[i] -= shift
        if gaps[i] is None:
            break
        if shift <= gaps[i]:
            gaps[i] -= shift
            break
        i -= 1  # gap to the left neighbour too tight: it slides too


def _reconstruct(pairs, sessionless, protos, epoch, user_id) -> UserStory:
    sessions: list[Session] = []
    slacks: list[int] = []
    gaps: list[int | None] = []
    prev_end = lambda: max(s.end_time for s in sessions)
    for proto in protos:
        first_hour = proto.events[0].hour if proto.events else None
        dow = None if sessionless else proto.day_of_week
        prev = prev_end() if sessions else None
        start = _place_session_start(prev, proto.elapsed_hours, dow,
                                     first_hour, epoch, best_effort=False)
        if start is None:
            # The greedy-late placement of earlier sessions left no room for
            # this session's (elapsed, hour, day) fields; slide a suffix of
            # the placed blocks earlier within their hour-window slack.
            lo_off, hi_off = _region_offsets(proto.elapsed_hours)
            shift = _find_slide(prev, lo_off, hi_off, first_hour, dow,
                                _available_slide(slacks, gaps))
            if shift:
                _execute_slide(sessions, slacks, gaps, shift)
                prev = prev_end()
                start = _place_session_start(prev, proto.elapsed_hours, dow,
                                             first_hour, epoch, best_effort=False)
        if start is None:
            start = _place_session_start(prev, proto.elapsed_hours, dow,
                                         first_hour, epoch, best_effort=True)
        sess = _build_session(proto, start, span_cap=not sessionless)
        if sessionless:
            sess = replace(sess, day_of_week=day_of_week(sess.start_time))
        gaps.append(None if prev is None else
                    sess.start_time - prev - _region_offsets(proto.elapsed_hours)[0])
        sessions.append(sess)
        slacks.append(_session_slide_slack(sess))
    return UserStory(user_id=user_id, attributes=AttributeHeader(tuple(pairs)),
                     sessions=tuple(sessions), sessionless=sessionless)


def parse(text: str, catalog=None, *, epoch: int = DEFAULT_EPOCH,
          user_id: str = "parsed") -> UserStory:
    """Parse grammar text back into a UserStory.

    The first grammar violation raises ParseError with a byte offset and a
    description of what was expected. When `catalog` (a vocab.CatalogIndex)
    is given, embedded item titles are checked against it; items absent from
    the catalog are tolerated as-is.
    """
    pairs, sessionless, protos = _scan(text, partial_ok=False)
    if catalog is not None:
        titles = {item.item_id: item.title for item in catalog.items}
        for proto in protos:
            for ev in proto.events:
                if isinstance(ev, _WatchProto) and ev.item_id is not None:
                    expected = titles.get(ev.item_id)
                    if expected is not None and expected != ev.title:
                        raise ValidationError(
                            f"title mismatch for item {ev.item_id!r}: "
                            f"story has {ev.title!r}, catalog has {expected!r}")
    return _reconstruct(pairs, sessionless, protos, epoch, user_id)


def parse_prompt(text: str, *, epoch: int = DEFAULT_EPOCH) -> UserStory:
    """Parse prompt-mode text: a trailing partial watch head and a missing
    duration are accepted. The returned story carries the completed clauses."""
    pairs, sessionless, protos = _scan(text, partial_ok=True)
    return _reconstruct(pairs, sessionless, protos, epoch, "prompt")


def story_signature(story: UserStory):
    """The serialized-field content of a story: what a grammar round trip preserves."""
    sig = [tuple(story.attributes.pairs), story.sessionless]
    for sess in story.sessions:
        events = []
        for e in sess.events:
            if isinstance(e, WatchEvent):
                events.append(("watch", e.hour, e.surface.value,
                               e.carousel.carousel_id,
                               None if e.item is None else e.item.item_id,
                               None if e.item is None else e.item.title,
                               e.duration_minutes))
            else:
                events.append(("search", e.hour, e.query))
        clause = (None, None) if story.sessionless \
            else (sess.elapsed_hours, sess.day_of_week)
        sig.append((clause, tuple(events)))
    return tuple(sig)


# --- task views and ablation transforms -------------------------------------

def _strip_view_story(story: UserStory, view: str) -> UserStory:
    sessions = []
    for sess in story.sessions:
        events: list[Event] = []
        for e in sess.events:
            if view == "item":
                if isinstance(e, WatchEvent):
                    events.append(replace(e, carousel=EMPTY_CAROUSEL))
            elif view == "carousel":
                if isinstance(e, WatchEvent):
                    events.append(replace(e, item=None, duration_minutes=None))
            elif view == "search":
                if isinstance(e, SearchEvent) or \
                        (isinstance(e, WatchEvent) and e.surface == Surface.SEARCH):
                    events.append(e)
        sessions.append(replace(sess, events=tuple(events)))
    return replace(story, sessions=tuple(sessions))


def strip_view(story_or_text, view: str):
    """Reduce a story to one task's conventional inputs.

    item: drop search events, blank carousels (surfaces kept).
    carousel: drop search events, drop item and duration fields.
    search: keep search events and search-surface watches only.
    Session structure and the attribute header are preserved in all views.
    """
    if view not in VIEWS:
        raise ValueError(f"unknown view {view!r}; expected one of {VIEWS}")
    if isinstance(story_or_text, str):
        return serialize(_strip_view_story(parse(story_or_text), view), validate=False)
    return _strip_view_story(story_or_text, view)


def strip_sessions(story_or_text):
    """Remove session clauses: a flat event stream (elapsed/day fields dropped)."""
    if isinstance(story_or_text, str):
        return serialize(strip_sessions(parse(story_or_text)), validate=False)
    story = story_or_text
    events = tuple(story.events())
    if events:
        container = Session(start_time=events[0].timestamp, elapsed_hours=0,
                            day_of_week=day_of_week(events[0].timestamp),
                            events=events)
        sessions: tuple[Session, ...] = (container,)
    else:
        sessions = ()
    return replace(story, sessions=sessions, sessionless=True)


def strip_attributes(story_or_text, which: str):
    """Remove an attribute subset from the header: all, profile, or location."""
    if which not in ATTRIBUTE_SUBSETS:
        raise ValueError(f"unknown attribute subset {which!r}; "
                         f"expected one of {ATTRIBUTE_SUBSETS}")
    if isinstance(story_or_text, str):
        return serialize(strip_attributes(parse(story_or_text), which), validate=False)
    story = story_or_text
    if which == "all":
        pairs: tuple[tuple[str, str], ...] = ()
    elif which == "location":
        pairs = tuple(p for p in story.attributes.pairs if p[0] not in LOCATION_KEYS)
    else:  # profile: keep only location keys
        pairs = tuple(p for p in story.attributes.pairs if p[0] in LOCATION_KEYS)
    return replace(story, attributes=AttributeHeader(pairs))


def apply_transform(story: UserStory, *, view: str | None = None,
                    drop_sessions: bool = False,
                    drop_attributes: str | None = None) -> UserStory:
    """Compose the ablation transforms in a fixed order (view, attrs, sessions)."""
    out = story
    if view:
        out = strip_view(out, view)
    if drop_attributes:
        out = strip_attributes(out, drop_attributes)
    if drop_sessions:
        out = strip_sessions(out)
    return out
