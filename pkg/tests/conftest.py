import pytest

from storyrank.stories import (
    AttributeHeader,
    CarouselRef,
    EMPTY_CAROUSEL,
    ItemRef,
    Surface,
    UserStory,
    search,
    segment_sessions,
    watch,
)
from storyrank.vocab import CatalogIndex, build_vocabulary

# Sunday 1970-01-11 UTC (day index 10 -> weekday 6 with Monday == 0)
SUNDAY = 10 * 86400

LANTERN = ItemRef("SYN201", "The Lantern at Exit 13")
MOTEL = ItemRef("SYN202", "Violet Static Motel")
LIGHTHOUSE = ItemRef("SYN301", "The Lighthouse Keeps Breathing")
PIER = ItemRef("SYN302", "Fog on Marigold Pier")
LIFEGUARD = ItemRef("SYN303", "The Clockwork Lifeguard")
MOONPOOL = ItemRef("SYN304", "Mist Above Moonpool Road")

SAMPLE_ITEMS = (LANTERN, MOTEL, LIGHTHOUSE, PIER, LIFEGUARD, MOONPOOL)
SAMPLE_CAROUSELS = (
    CarouselRef(""),
    CarouselRef("after_dark_detours"),
    CarouselRef("campfire_curiosities"),
    CarouselRef("coastal_mysteries"),
    CarouselRef("late_night_legends"),
    CarouselRef("rainy_night_rewinds"),
)


def sample_journey_events():
    """A two-session journey: search-as-you-type into a watch, a browse watch,
    then a rewatch sixteen hours later."""
    t = SUNDAY + 3 * 3600 + 600  # 03:10
    return [
        search(t, "lan"),
        search(t + 60, "lantern"),
        watch(t + 120, Surface.SEARCH, EMPTY_CAROUSEL, LANTERN, 87),
        watch(SUNDAY + 5 * 3600 + 1800, Surface.HOME,
              CarouselRef("after_dark_detours"), MOTEL, 50),
        watch(SUNDAY + 22 * 3600 + 1800, Surface.HOME,
              CarouselRef("rainy_night_rewinds"), LANTERN, 27),
    ]


def make_sample_story(user_id="viewer-1"):
    return UserStory(
        user_id=user_id,
        attributes=AttributeHeader((("country", "US"), ("device", "tv"))),
        sessions=segment_sessions(sample_journey_events()),
    )


SAMPLE_TEXT = (
    "country=US device=tv <|begin_sessions|> "
    "<|session|> elapsed=0h day=6 "
    "<|search|> hour=3 lan "
    "<|search|> hour=3 lantern "
    "<|watch|> hour=3 <|surface=search|><|carousel()|>"
    "<|id(SYN201|The Lantern at Exit 13)|> 87m "
    "<|watch|> hour=5 <|surface=home|><|carousel(after_dark_detours)|>"
    "<|id(SYN202|Violet Static Motel)|> 50m "
    "<|session|> elapsed=16h day=6 "
    "<|watch|> hour=22 <|surface=home|><|carousel(rainy_night_rewinds)|>"
    "<|id(SYN201|The Lantern at Exit 13)|> 27m"
)


@pytest.fixture(scope="session")
def sample_catalog():
    return CatalogIndex(SAMPLE_ITEMS, SAMPLE_CAROUSELS)


@pytest.fixture(scope="session")
def sample_vocab(sample_catalog):
    return build_vocabulary(sample_catalog)


@pytest.fixture()
def sample_story():
    return make_sample_story()
