import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from storyrank.stories import (
    AttributeHeader,
    CarouselRef,
    EMPTY_CAROUSEL,
    ItemRef,
    SearchEvent,
    Session,
    Surface,
    UserStory,
    ValidationError,
    WatchEvent,
    day_of_week,
    hour_of_day,
    search,
    segment_sessions,
    story_from_dict,
    story_to_dict,
    validate_story,
    watch,
)

from conftest import SUNDAY, LANTERN, make_sample_story

T0 = SUNDAY + 9 * 3600  # Sunday 09:00


def test_day_of_week_anchor():
    assert day_of_week(0) == 3            # 1970-01-01 was a Thursday
    assert day_of_week(4 * 86400) == 0    # 1970-01-05 Monday
    assert day_of_week(SUNDAY) == 6


def test_two_events_half_hour_apart_share_a_session():
    sessions = segment_sessions([search(T0, "fog"), search(T0 + 1800, "foggy")])
    assert len(sessions) == 1
    assert len(sessions[0].events) == 2
    assert sessions[0].elapsed_hours == 0


def test_two_events_two_hours_apart_split_with_elapsed_two():
    sessions = segment_sessions([search(T0, "fog"), search(T0 + 2 * 3600, "fog")])
    assert len(sessions) == 2
    assert sessions[1].elapsed_hours == 2
    assert sessions[1].start_time == T0 + 2 * 3600


def test_gap_measured_from_end_of_watch_activity():
    # An 87-minute watch at hour 3 followed by a watch at hour 5 is one
    # session: the gap counts from the end of playback, not its start.
    events = [
        watch(SUNDAY + 3 * 3600, Surface.HOME, EMPTY_CAROUSEL, LANTERN, 87),
        watch(SUNDAY + 5 * 3600, Surface.HOME, EMPTY_CAROUSEL, LANTERN, 10),
    ]
    assert len(segment_sessions(events)) == 1


def _brute_force_boundaries(timestamps):
    """Independent simulation of the two session rules over search events
    (gap from previous event, 12h first-to-last span)."""
    boundaries = [0]
    start = timestamps[0]
    prev = timestamps[0]
    for i, t in enumerate(timestamps[1:], 1):
        if t - prev > 3600 or t - start > 12 * 3600:
            boundaries.append(i)
            start = t
        prev = t
    return boundaries


@pytest.mark.parametrize("n_events", [13, 14, 15, 16, 20])
def test_span_cap_splits_before_the_overflowing_event(n_events):
    timestamps = [T0 + 3300 * k for k in range(n_events)]  # 55 minutes apart
    sessions = segment_sessions([search(t, "fog") for t in timestamps])
    expected = _brute_force_boundaries(timestamps)
    got = []
    idx = 0
    for s in sessions:
        got.append(idx)
        idx += len(s.events)
    assert got == expected
    for s in sessions:
        assert s.events[-1].timestamp - s.start_time <= 12 * 3600


def test_unsorted_input_names_first_offending_index():
    events = [search(T0, "a"), search(T0 + 10, "b"), search(T0 + 5, "c")]
    with pytest.raises(ValidationError, match=r"events\[2\]"):
        segment_sessions(events)


def test_empty_input_rejected():
    with pytest.raises(ValidationError):
        segment_sessions([])


def test_sample_story_is_valid():
    assert validate_story(make_sample_story()) == []


def test_search_surface_watch_with_carousel_is_flagged():
    story = make_sample_story()
    sess = story.sessions[0]
    bad = dataclasses.replace(sess.events[2], carousel=CarouselRef("after_dark"))
    story = _swap_event(story, 0, 2, bad)
    violations = validate_story(story)
    assert len(violations) == 1
    assert "carousel" in violations[0].message
    assert violations[0].path == "sessions[0].events[2]"


def test_internal_ninety_minute_gap_is_flagged():
    events = [search(T0, "fog"), search(T0 + 90 * 60, "fog")]
    sessions = (Session(T0, 0, day_of_week(T0), tuple(events)),)
    story = UserStory("u", AttributeHeader(), sessions)
    violations = validate_story(story)
    assert len(violations) == 1
    assert "1 hour" in violations[0].message


def _swap_event(story, si, ei, new_event):
    sess = story.sessions[si]
    events = list(sess.events)
    events[ei] = new_event
    sessions = list(story.sessions)
    sessions[si] = dataclasses.replace(sess, events=tuple(events))
    return dataclasses.replace(story, sessions=tuple(sessions))


@pytest.mark.parametrize("mutate, fragment", [
    (lambda s: _swap_event(s, 0, 0, dataclasses.replace(s.sessions[0].events[0], hour=7)),
     "does not match timestamp"),
    (lambda s: _swap_event(s, 0, 0, dataclasses.replace(s.sessions[0].events[0], query="")),
     "query is empty"),
    (lambda s: _swap_event(s, 0, 2, dataclasses.replace(
        s.sessions[0].events[2], item=ItemRef("SYN|201", "x"))),
     "reserved"),
    (lambda s: dataclasses.replace(
        s, attributes=AttributeHeader((("country", "US"), ("country", "CA")))),
     "duplicate attribute key"),
    (lambda s: dataclasses.replace(s, sessions=(
        s.sessions[0],
        dataclasses.replace(s.sessions[1], elapsed_hours=3))),
     "elapsed_hours"),
])
def test_single_mutation_yields_exactly_that_violation(mutate, fragment):
    story = mutate(make_sample_story())
    violations = validate_story(story)
    assert len(violations) == 1, violations
    assert fragment in violations[0].message


event_stream = st.lists(
    st.tuples(st.booleans(), st.integers(0, 4 * 3600), st.integers(0, 90)),
    min_size=1, max_size=40,
).map(lambda raw: _materialize(raw))


def _materialize(raw):
    t = SUNDAY
    events = []
    for is_watch, gap, dur in raw:
        t += gap
        if is_watch:
            events.append(watch(t, Surface.BROWSE, EMPTY_CAROUSEL, LANTERN, dur))
        else:
            events.append(search(t, "fog"))
    return events


@given(event_stream)
@settings(max_examples=200, deadline=None)
def test_segmentation_is_a_partition(events):
    sessions = segment_sessions(events)
    flattened = [e for s in sessions for e in s.events]
    assert flattened == events  # identity and order


@given(event_stream)
@settings(max_examples=200, deadline=None)
def test_segmentation_is_idempotent(events):
    first = segment_sessions(events)
    again = segment_sessions([e for s in first for e in s.events])
    assert [s.start_time for s in again] == [s.start_time for s in first]
    assert [len(s.events) for s in again] == [len(s.events) for s in first]


@given(event_stream)
@settings(max_examples=100, deadline=None)
def test_segmented_streams_validate(events):
    story = UserStory("u", AttributeHeader((("country", "US"),)),
                      segment_sessions(events))
    assert validate_story(story) == []


def test_interchange_roundtrip():
    story = make_sample_story()
    assert story_from_dict(story_to_dict(story)) == story


def test_elapsed_hours_in_interchange_match_sample():
    d = story_to_dict(make_sample_story())
    assert [s["elapsed_hours"] for s in d["sessions"]] == [0, 16]
    assert [s["day_of_week"] for s in d["sessions"]] == [6, 6]
