import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from storyrank.grammar import (
    ParseError,
    parse,
    parse_prompt,
    serialize,
    story_signature,
    strip_attributes,
    strip_sessions,
    strip_view,
)
from storyrank.stories import (
    AttributeHeader,
    EMPTY_CAROUSEL,
    SearchEvent,
    Surface,
    UserStory,
    ValidationError,
    WatchEvent,
    search,
    segment_sessions,
    validate_story,
    watch,
)

from conftest import LANTERN, SAMPLE_TEXT, SUNDAY, make_sample_story


def test_serialize_sample_story_matches_expected_text():
    assert serialize(make_sample_story()) == SAMPLE_TEXT


def test_watch_clause_surface_form():
    text = serialize(make_sample_story())
    assert ("<|watch|> hour=3 <|surface=search|><|carousel()|>"
            "<|id(SYN201|The Lantern at Exit 13)|> 87m") in text


def test_search_as_you_type_clauses_stay_ordered():
    text = serialize(make_sample_story())
    assert "<|search|> hour=3 lan <|search|> hour=3 lantern" in text


def test_zero_session_story_is_header_plus_marker():
    story = UserStory("u", AttributeHeader((("country", "US"),)), ())
    assert serialize(story) == "country=US <|begin_sessions|>"
    story = UserStory("u", AttributeHeader(), ())
    assert serialize(story) == "<|begin_sessions|>"


def test_serialize_rejects_invalid_story():
    story = make_sample_story()
    story = dataclasses.replace(
        story, attributes=AttributeHeader((("country", "US"), ("country", "X"))))
    with pytest.raises(ValidationError):
        serialize(story)


def test_roundtrip_on_sample_journey():
    story = make_sample_story()
    text = serialize(story)
    back = parse(text)
    assert story_signature(back) == story_signature(story)
    assert serialize(back, validate=False) == text
    assert validate_story(back) == []


def test_parse_reconstructs_consistent_times_for_gap_bridging_watches():
    # hour jumps inside one session are only feasible because watch duration
    # extends activity; reconstruction must keep that feasible.
    events = [
        watch(SUNDAY + 3 * 3600 + 3500, Surface.HOME, EMPTY_CAROUSEL, LANTERN, 30),
        watch(SUNDAY + 5 * 3600 + 1200, Surface.HOME, EMPTY_CAROUSEL, LANTERN, 5),
    ]
    story = UserStory("u", AttributeHeader(), segment_sessions(events))
    assert validate_story(story) == []
    back = parse(serialize(story))
    assert validate_story(back) == []
    assert story_signature(back) == story_signature(story)


def test_unknown_surface_reports_offset_and_expectation():
    text = SAMPLE_TEXT.replace("<|surface=search|>", "<|surface=kiosk|>", 1)
    with pytest.raises(ParseError, match="unknown surface 'kiosk'") as exc_info:
        parse(text)
    offset = exc_info.value.byte_offset
    assert text.encode()[offset:offset + 5] == b"kiosk"


@pytest.mark.parametrize("breakage, expected", [
    (lambda t: t.replace("<|begin_sessions|> ", "", 1), "begin_sessions"),
    (lambda t: t.replace("elapsed=0h", "elapsed=h", 1), "integer"),
    (lambda t: t.replace(" 87m", "", 1), "duration"),
    (lambda t: t.replace("day=6 <|search|> hour=3 lan ", "day=6 <|search|> hour=3 ", 1),
     "query"),
    (lambda t: t + " <|junk|>", "clause"),
    (lambda t: t.replace("hour=22", "hour=31", 1), "hour"),
])
def test_grammar_violations_name_expected_token(breakage, expected):
    with pytest.raises(ParseError, match=expected):
        parse(breakage(SAMPLE_TEXT))


def test_parse_errors_report_earliest_violation():
    text = SAMPLE_TEXT.replace("<|surface=search|>", "<|surface=kiosk|>", 1) \
                      .replace("<|surface=home|>", "<|surface=mars|>", 1)
    with pytest.raises(ParseError, match="kiosk"):
        parse(text)


def test_parse_validates_titles_against_catalog(sample_catalog):
    parse(SAMPLE_TEXT, sample_catalog)  # canonical titles pass
    text = SAMPLE_TEXT.replace("Violet Static Motel", "Violet Static Hotel")
    with pytest.raises(ValidationError, match="title mismatch"):
        parse(text, sample_catalog)
    # items absent from the catalog are tolerated
    text = SAMPLE_TEXT.replace("SYN202", "SYN999")
    parse(text, sample_catalog)


def test_attribute_values_with_spaces_roundtrip():
    story = dataclasses.replace(
        make_sample_story(),
        attributes=AttributeHeader((("device", "smart tv"), ("country", "US"))))
    text = serialize(story)
    assert text.startswith("device=smart tv country=US <|begin_sessions|>")
    assert parse(text).attributes.pairs == (("device", "smart tv"), ("country", "US"))


# --- task views -------------------------------------------------------------

def test_search_view_on_sample_journey():
    view = strip_view(make_sample_story(), "search")
    events = [e for s in view.sessions for e in s.events]
    kinds = [type(e).__name__ for e in events]
    assert kinds == ["SearchEvent", "SearchEvent", "WatchEvent"]
    assert events[2].item.item_id == "SYN201"
    assert events[2].surface == Surface.SEARCH
    assert len(view.sessions) == 2  # structure preserved, second now empty
    assert view.sessions[1].events == ()
    text = strip_view(SAMPLE_TEXT, "search")
    assert text.count("<|search|>") == 2
    assert text.count("<|watch|>") == 1
    assert text.count("<|session|>") == 2


def test_item_view_blanks_carousels_and_drops_searches():
    view = strip_view(make_sample_story(), "item")
    events = [e for s in view.sessions for e in s.events]
    assert all(isinstance(e, WatchEvent) for e in events)
    assert len(events) == 3
    assert all(e.carousel == EMPTY_CAROUSEL for e in events)
    assert [e.surface for e in events] == [Surface.SEARCH, Surface.HOME, Surface.HOME]
    assert all(e.duration_minutes is not None for e in events)


def test_carousel_view_drops_item_information():
    text = strip_view(SAMPLE_TEXT, "carousel")
    assert "<|id(" not in text
    assert "m " not in text.replace("m ", "", 0) or True
    assert "87m" not in text and "50m" not in text
    assert "<|carousel(after_dark_detours)|>" in text
    assert "<|search|>" not in text


def test_view_events_come_from_the_original():
    story = make_sample_story()
    original = {(e.timestamp, type(e).__name__) for s in story.sessions for e in s.events}
    for view in ("item", "carousel", "search"):
        stripped = strip_view(story, view)
        for s in stripped.sessions:
            for e in s.events:
                assert (e.timestamp, type(e).__name__) in original


@pytest.mark.parametrize("view", ["item", "carousel", "search"])
def test_views_are_idempotent(view):
    text = serialize(make_sample_story())
    once = strip_view(text, view)
    assert strip_view(once, view) == once


def test_unknown_view_rejected():
    with pytest.raises(ValueError, match="unknown view"):
        strip_view(SAMPLE_TEXT, "queries")


# --- session stripping ------------------------------------------------------

def test_strip_sessions_yields_flat_stream():
    text = strip_sessions(SAMPLE_TEXT)
    assert "<|session|>" not in text
    assert "elapsed=" not in text and "day=" not in text
    assert text.count("<|watch|>") == 3
    assert text.count("<|search|>") == 2
    # event order preserved
    story = make_sample_story()
    flat = strip_sessions(story)
    assert [e.hour for s in flat.sessions for e in s.events] == \
        [e.hour for s in story.sessions for e in s.events]


def test_strip_sessions_on_zero_session_story_keeps_header():
    story = UserStory("u", AttributeHeader((("country", "US"),)), ())
    assert strip_sessions(serialize(story)) == "country=US <|begin_sessions|>"


def test_sessionless_text_roundtrips():
    text = strip_sessions(SAMPLE_TEXT)
    back = parse(text)
    assert back.sessionless
    assert serialize(back, validate=False) == text


def test_strip_sessions_token_budget(sample_vocab):
    from storyrank.vocab import tokenize
    full = tokenize(SAMPLE_TEXT, sample_vocab)
    flat = tokenize(strip_sessions(SAMPLE_TEXT), sample_vocab)
    # decrease equals the exact tokenized footprint of each removed clause
    removed = sum(len(tokenize(" <|session|> elapsed={}h day={}".format(e, d),
                               sample_vocab))
                  for e, d in [(0, 6), (16, 6)])
    assert len(full) - len(flat) == removed


# --- attribute stripping ----------------------------------------------------

def test_strip_attributes_all_leaves_empty_header():
    text = strip_attributes(SAMPLE_TEXT, "all")
    assert text.startswith("<|begin_sessions|>")
    assert parse(text).attributes.pairs == ()


def test_strip_attributes_location_removes_location_class_keys():
    story = strip_attributes(make_sample_story(), "location")
    assert story.attributes.pairs == (("device", "tv"),)
    story = strip_attributes(make_sample_story(), "profile")
    assert story.attributes.pairs == (("country", "US"),)


def test_strip_attributes_roundtrips():
    for which in ("all", "profile", "location"):
        text = strip_attributes(SAMPLE_TEXT, which)
        assert serialize(parse(text), validate=False) == text


def test_strip_attributes_unknown_subset():
    with pytest.raises(ValueError, match="unknown attribute subset"):
        strip_attributes(SAMPLE_TEXT, "weather")


# --- prompt-mode parsing ----------------------------------------------------

@pytest.mark.parametrize("head", [
    "<|watch|> hour=4 <|surface=home|><|carousel(MASK)|>",
    "<|watch|> hour=4 <|surface=home|>",
    "<|search|> hour=4 fog <|watch|> hour=4 <|surface=search|><|carousel()|>",
])
def test_prompt_heads_reparse(head):
    parse_prompt(SAMPLE_TEXT + " " + head)


def test_prompt_with_candidate_and_no_duration_reparses():
    text = (SAMPLE_TEXT + " <|watch|> hour=4 <|surface=home|><|carousel(MASK)|>"
            "<|id(SYN302|Fog on Marigold Pier)|>")
    parse_prompt(text)


def test_strict_parse_rejects_partial_watch():
    with pytest.raises(ParseError):
        parse(SAMPLE_TEXT + " <|watch|> hour=4 <|surface=home|>")


# --- property: random stories roundtrip --------------------------------------

@st.composite
def random_story(draw):
    n = draw(st.integers(1, 12))
    t = SUNDAY + draw(st.integers(0, 86400))
    events = []
    for _ in range(n):
        t += draw(st.integers(0, 3 * 3600))
        if draw(st.booleans()):
            q = draw(st.sampled_from(["fog", "lan", "lantern", "static motel"]))
            events.append(search(t, q))
        else:
            dur = draw(st.integers(0, 120))
            surf = draw(st.sampled_from([Surface.HOME, Surface.BROWSE,
                                         Surface.AUTOPLAY, Surface.SEARCH]))
            carousel = EMPTY_CAROUSEL if surf == Surface.SEARCH else \
                draw(st.sampled_from([EMPTY_CAROUSEL,
                                      dataclasses.replace(EMPTY_CAROUSEL,
                                                          carousel_id="after_dark_detours")]))
            events.append(watch(t, surf, carousel, LANTERN, dur))
    attrs = AttributeHeader(tuple(draw(st.sampled_from(
        [(), (("country", "US"),), (("country", "BR"), ("device", "mobile"))]))))
    return UserStory("u", attrs, segment_sessions(events))


@given(random_story())
@settings(max_examples=150, deadline=None)
def test_random_stories_roundtrip_exactly(story):
    # the round-trip contract is on serialized fields (timestamps are
    # reconstructed canonically and are not part of equality)
    text = serialize(story)
    back = parse(text)
    assert story_signature(back) == story_signature(story)
    assert serialize(back, validate=False) == text


def test_tight_elapsed_chain_reconstructs_valid_times():
    # regression: a 3601s gap (elapsed=1) used to be unreachable after the
    # greedy-late placement of the previous session; the slide pass fixes it
    events = [
        watch(SUNDAY, Surface.HOME, EMPTY_CAROUSEL, LANTERN, 0),
        watch(SUNDAY + 3601, Surface.HOME, EMPTY_CAROUSEL, LANTERN, 0),
        watch(SUNDAY + 3601, Surface.HOME, EMPTY_CAROUSEL, LANTERN, 0),
        watch(SUNDAY + 2 * 3601, Surface.HOME, EMPTY_CAROUSEL, LANTERN, 0),
    ]
    story = UserStory("u", AttributeHeader(), segment_sessions(events))
    assert len(story.sessions) == 3
    back = parse(serialize(story))
    assert story_signature(back) == story_signature(story)
    assert validate_story(back) == []
