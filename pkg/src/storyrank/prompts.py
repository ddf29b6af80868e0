"""Task prompts over a live story and single-pass candidate ranking.

The three serving tasks share one model and one story prefix; only the
appended head differs:

  item (masked)    <|watch|> hour=H <|surface=home|><|carousel(MASK)|>
  item (contextual)<|watch|> hour=H <|surface=S|><|carousel(C)|>
  carousel         <|watch|> hour=H <|surface=S|>
  search           <|search|> hour=H QUERY <|watch|> hour=H <|surface=search|><|carousel()|>

The next-token logits at the head's final position score every candidate
token at once; ranking never decodes and never runs a second pass.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import grammar
from .stories import SESSION_GAP_SECONDS, SESSION_SPAN_SECONDS, Surface, \
    UserStory, day_of_week, hour_of_day
from .vocab import Vocabulary, tokenize


class PromptError(ValueError):
    pass


class TaskKind(str, Enum):
    ITEM_MASKED = "item_masked"
    ITEM_CONTEXTUAL = "item_contextual"
    CAROUSEL = "carousel"
    SEARCH = "search"


ITEM_KINDS = (TaskKind.ITEM_MASKED, TaskKind.ITEM_CONTEXTUAL, TaskKind.SEARCH)


@dataclass(frozen=True)
class TaskPrompt:
    token_ids: tuple[int, ...]
    target_slot: int  # position whose output logits score the next token
    candidate_set: tuple[int, ...]
    kind: TaskKind


@dataclass(frozen=True)
class RankedList:
    """Candidates in descending logit order; exact ties break by ascending
    token id, so the ordering is total and deterministic."""
    entries: tuple[tuple[int, float], ...]

    def top(self, k: int) -> tuple[tuple[int, float], ...]:
        return self.entries[:k]

    def rank_of(self, token_id: int) -> int | None:
        for pos, (tid, _) in enumerate(self.entries, 1):
            if tid == token_id:
                return pos
        return None


def extend_story_for_now(story: UserStory, now: int) -> str:
    """Serialize the story and open the prompt position for time `now`:
    continue the active session when the viewer is still active (within one
    hour of the last activity and under the 12h span), otherwise append a
    fresh session clause computed from `now`."""
    events = list(story.events())
    if events and now < events[-1].timestamp:
        raise PromptError(f"now={now} is before the last story event "
                          f"({events[-1].timestamp})")
    text = grammar.serialize(story, validate=False)
    if story.sessionless or not story.sessions:
        if not events and not story.sessionless:
            return text + " " + grammar.session_clause(0, day_of_week(now))
        return text
    last = story.sessions[-1]
    gap = now - last.end_time
    span = now - last.start_time
    if gap <= SESSION_GAP_SECONDS and span <= SESSION_SPAN_SECONDS:
        return text
    elapsed = max(0, gap // SESSION_GAP_SECONDS)
    return text + " " + grammar.session_clause(elapsed, day_of_week(now))


def head_text(kind: TaskKind, context: dict) -> str:
    """The task head appended after the story prefix. `context` carries hour
    plus the kind's required fields (query; surface/carousel)."""
    try:
        hour = context["hour"]
    except KeyError:
        raise PromptError("context requires 'hour'") from None
    if kind == TaskKind.ITEM_MASKED:
        return f"<|watch|> hour={hour} <|surface=home|><|carousel(MASK)|>"
    if kind == TaskKind.ITEM_CONTEXTUAL:
        missing = [k for k in ("surface", "carousel") if k not in context]
        if missing:
            raise PromptError(f"item_contextual context requires {missing}")
        surface = Surface(context["surface"])
        return (f"<|watch|> hour={hour} "
                f"<|surface={surface.value}|><|carousel({context['carousel']})|>")
    if kind == TaskKind.CAROUSEL:
        surface = Surface(context.get("surface", "home"))
        return f"<|watch|> hour={hour} <|surface={surface.value}|>"
    if kind == TaskKind.SEARCH:
        if "query" not in context or not context["query"]:
            raise PromptError("search context requires a non-empty 'query'")
        return (f"<|search|> hour={hour} {context['query']} "
                f"<|watch|> hour={hour} <|surface=search|><|carousel()|>")
    raise PromptError(f"unknown task kind {kind!r}")


def candidate_set(kind: TaskKind, vocabulary: Vocabulary) -> tuple[int, ...]:
    cands = vocabulary.item_token_ids if kind in ITEM_KINDS \
        else vocabulary.carousel_token_ids
    if not cands:
        raise PromptError(f"vocabulary has no candidates for task {kind.value}")
    return cands


def build_prompt(prefix_text: str, kind: TaskKind, context: dict,
                 vocabulary: Vocabulary) -> TaskPrompt:
    text = prefix_text + " " + head_text(kind, context)
    ids = tokenize(text, vocabulary)
    return TaskPrompt(token_ids=tuple(ids), target_slot=len(ids) - 1,
                      candidate_set=candidate_set(kind, vocabulary), kind=kind)


def trim_story_to_context(story: UserStory, now: int, kind: TaskKind,
                          context: dict, vocabulary: Vocabulary,
                          context_length: int) -> TaskPrompt:
    """Build a prompt that fits the model context, dropping whole oldest
    sessions (never splitting an event) until it does."""
    current = story
    while True:
        prompt = build_prompt(extend_story_for_now(current, now), kind,
                              context, vocabulary)
        if len(prompt.token_ids) <= context_length:
            return prompt
        if not current.sessions:
            raise PromptError(
                f"prompt head alone exceeds context length {context_length}")
        current = replace(current, sessions=current.sessions[1:])


def make_prompt(story: UserStory, now: int, kind: TaskKind, context: dict,
                vocabulary: Vocabulary, context_length: int) -> TaskPrompt:
    ctx = dict(context)
    ctx.setdefault("hour", hour_of_day(now))
    return trim_story_to_context(story, now, kind, ctx, vocabulary,
                                 context_length)


def rank_rows(logit_rows: np.ndarray, prompts: list[TaskPrompt]) -> list[RankedList]:
    """Order each prompt's candidates by its logit row (shared by the single
    and batched paths; conceptually non-candidates are masked to -inf)."""
    out = []
    for row, prompt in zip(logit_rows, prompts):
        cands = np.asarray(prompt.candidate_set)
        logits = row[cands]
        order = np.lexsort((cands, -logits))
        out.append(RankedList(tuple(
            (int(cands[i]), float(logits[i])) for i in order)))
    return out


def rank(prompt: TaskPrompt, model) -> RankedList:
    """Score all candidates from exactly one forward pass."""
    if max(prompt.candidate_set) >= model.config.vocab_size:
        raise PromptError("candidate token outside the model vocabulary; "
                          "map unknown items upstream")
    logits = model.forward(np.asarray(prompt.token_ids))
    return rank_rows(logits[prompt.target_slot][None, :], [prompt])[0]


def rank_batch(prompts: list[TaskPrompt], model) -> list[RankedList]:
    """Rank many prompts in one forward pass (right-padded to the context
    length; padding cannot alter any earlier position's logits)."""
    if not prompts:
        return []
    ctx = model.config.context_length
    ids = np.zeros((len(prompts), ctx), dtype=np.int64)
    for r, prompt in enumerate(prompts):
        if len(prompt.token_ids) > ctx:
            raise PromptError(f"prompt of {len(prompt.token_ids)} tokens "
                              f"exceeds context length {ctx}")
        ids[r, :len(prompt.token_ids)] = prompt.token_ids
    logits = model.forward(ids)
    rows = np.stack([logits[r, p.target_slot] for r, p in enumerate(prompts)])
    return rank_rows(rows, prompts)
