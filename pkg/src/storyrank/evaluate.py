"""Offline evaluation: user-level split, eligible prediction positions,
HR@K / NDCG@K, and the BM25 and popularity reference scorers.

Eligible positions are defined on the untouched eval story; a scorer's view
transform (task-specific variants, session ablation) strips only the input
it gets to see. Every method therefore ranks the same candidate universe at
the same positions, and the records flow through one aggregation path.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from . import grammar
from .prompts import TaskKind
from .stories import SearchEvent, Surface, UserStory, WatchEvent
from .vocab import CatalogIndex, Vocabulary, tokenize


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    cutoffs: tuple[int, ...] = (8, 50, 100)
    holdout_fraction: float = 0.1
    rng_seed: int = 0
    item_prompt: str = "masked"  # or "contextual"
    max_eval_users: int | None = None
    max_positions_per_user: int | None = None

    def __post_init__(self):
        if not self.cutoffs or list(self.cutoffs) != sorted(self.cutoffs) \
                or self.cutoffs[0] <= 0:
            raise EvalError("cutoffs must be positive and sorted")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise EvalError("holdout_fraction must be in (0, 1)")
        if self.item_prompt not in ("masked", "contextual"):
            raise EvalError("item_prompt must be masked or contextual")


@dataclass(frozen=True)
class EvalRecord:
    user_id: str
    kind: str
    position_index: int
    target_token: int
    rank: int


@dataclass(frozen=True)
class EligiblePosition:
    user_id: str
    position_index: int
    prefix_story: UserStory  # story cut immediately before the target token
    target_token: int
    context: dict


def split_users(stories, cfg: EvalConfig):
    """Deterministic hash split on user_id; returns (train, eval) lists."""
    train, held = [], []
    for story in stories:
        digest = hashlib.sha256(
            f"{cfg.rng_seed}:{story.user_id}".encode("utf-8")).digest()
        u = int.from_bytes(digest[:8], "little") / 2.0 ** 64
        (held if u < cfg.holdout_fraction else train).append(story)
    if not held:
        raise EvalError("eval split is empty; raise holdout_fraction")
    if not train:
        raise EvalError("train split is empty; lower holdout_fraction")
    return train, held


def check_split_hygiene(train, held) -> None:
    overlap = {s.user_id for s in train} & {s.user_id for s in held}
    if overlap:
        raise EvalError(f"users in both splits: {sorted(overlap)[:5]}")


def _prefix_story(story: UserStory, si: int, ei: int) -> UserStory:
    """The story up to (not including) event ei of session si; the current
    session clause and its earlier events stay in the prefix."""
    sessions = list(story.sessions[:si])
    current = story.sessions[si]
    sessions.append(replace(current, events=current.events[:ei]))
    return replace(story, sessions=tuple(sessions))


def eligible_positions(story: UserStory, kind: TaskKind,
                       vocabulary: Vocabulary) -> list[EligiblePosition]:
    """Scoreable positions for one task.

    item: every watch's item token. carousel: every watch's carousel token,
    skipping the empty carousel of search-surface watches. search: item
    tokens of search-surface watches preceded by at least one search event in
    the same session; the latest preceding query rides along for baselines.
    """
    out: list[EligiblePosition] = []
    index = 0
    for si, sess in enumerate(story.sessions):
        last_query: str | None = None
        for ei, event in enumerate(sess.events):
            if isinstance(event, SearchEvent):
                last_query = event.query
                index += 1
                continue
            if not isinstance(event, WatchEvent) or event.item is None:
                index += 1
                continue
            token = vocabulary.item_token_to_id.get(event.item.item_id)
            carousel_token = vocabulary.carousel_token_of_id.get(
                event.carousel.carousel_id)
            context = {
                "hour": event.hour,
                "surface": event.surface.value,
                "carousel": event.carousel.carousel_id,
            }
            if kind in (TaskKind.ITEM_MASKED, TaskKind.ITEM_CONTEXTUAL):
                if token is not None:
                    out.append(EligiblePosition(story.user_id, index,
                                                _prefix_story(story, si, ei),
                                                token, context))
            elif kind == TaskKind.CAROUSEL:
                if event.carousel.carousel_id and carousel_token is not None:
                    out.append(EligiblePosition(story.user_id, index,
                                                _prefix_story(story, si, ei),
                                                carousel_token, context))
            elif kind == TaskKind.SEARCH:
                if event.surface == Surface.SEARCH and last_query is not None \
                        and token is not None:
                    out.append(EligiblePosition(
                        story.user_id, index, _prefix_story(story, si, ei),
                        token, dict(context, query=last_query)))
            index += 1
    return out


# --- metrics -----------------------------------------------------------------

def hit_rate_at_k(records, k: int) -> float:
    if not records:
        raise EvalError("hit_rate_at_k over empty records")
    return sum(1 for r in records if r.rank <= k) / len(records)


def ndcg_at_k(records, k: int) -> float:
    """Single relevant target per record, so ideal DCG is 1 and the record's
    credit is 1/log2(rank+1) inside the cutoff."""
    if not records:
        raise EvalError("ndcg_at_k over empty records")
    total = sum(1.0 / math.log2(r.rank + 1) for r in records if r.rank <= k)
    return total / len(records)


def rank_of_target(row: np.ndarray, candidates: np.ndarray, target: int) -> int:
    """1-based rank of the target among candidates under descending logit,
    ties broken by ascending token id."""
    lt = row[target]
    cand_logits = row[candidates]
    higher = int((cand_logits > lt).sum())
    tied_before = int(((cand_logits == lt) & (candidates < target)).sum())
    return 1 + higher + tied_before


# --- scorers -------------------------------------------------------------------

def eval_head(kind: TaskKind, context: dict, item_prompt: str) -> str:
    hour = context["hour"]
    if kind in (TaskKind.ITEM_MASKED, TaskKind.ITEM_CONTEXTUAL):
        if item_prompt == "contextual":
            return (f"<|watch|> hour={hour} <|surface={context['surface']}|>"
                    f"<|carousel({context['carousel']})|>")
        return f"<|watch|> hour={hour} <|surface=home|><|carousel(MASK)|>"
    if kind == TaskKind.CAROUSEL:
        return f"<|watch|> hour={hour} <|surface={context['surface']}|>"
    if kind == TaskKind.SEARCH:
        # queries are already in the prefix history; the head reopens the watch
        return f"<|watch|> hour={hour} <|surface=search|><|carousel()|>"
    raise EvalError(f"no evaluation head for kind {kind!r}")


class ModelScorer:
    """Ranks positions with the language model; `transform` strips the story
    prefix to this variant's view before serialization."""

    def __init__(self, model, name: str = "model", transform: dict | None = None,
                 batch_size: int = 32):
        self.model = model
        self.name = name
        self.transform = transform or {}
        self.batch_size = batch_size

    def _prompt_ids(self, pos: EligiblePosition, kind: TaskKind,
                    vocabulary: Vocabulary, item_prompt: str) -> list[int]:
        ctx_len = self.model.config.context_length
        story = pos.prefix_story
        head = eval_head(kind, pos.context, item_prompt)
        while True:
            stripped = grammar.apply_transform(story, **self.transform)
            text = grammar.serialize(stripped, validate=False) + " " + head
            ids = tokenize(text, vocabulary)
            if len(ids) <= ctx_len:
                return ids
            if not story.sessions:
                raise EvalError(f"prompt head exceeds context length {ctx_len}")
            story = replace(story, sessions=story.sessions[1:])

    def target_ranks(self, positions, kind: TaskKind, vocabulary: Vocabulary,
                     cfg: EvalConfig) -> list[int]:
        candidates = np.asarray(
            vocabulary.item_token_ids
            if kind in (TaskKind.ITEM_MASKED, TaskKind.ITEM_CONTEXTUAL,
                        TaskKind.SEARCH)
            else vocabulary.carousel_token_ids)
        ranks = []
        ctx = self.model.config.context_length
        for lo in range(0, len(positions), self.batch_size):
            chunk = positions[lo:lo + self.batch_size]
            ids = np.zeros((len(chunk), ctx), dtype=np.int64)
            slots = []
            for r, pos in enumerate(chunk):
                seq = self._prompt_ids(pos, kind, vocabulary, cfg.item_prompt)
                ids[r, :len(seq)] = seq
                slots.append(len(seq) - 1)
            logits = self.model.forward(ids)
            for r, pos in enumerate(chunk):
                ranks.append(rank_of_target(logits[r, slots[r]], candidates,
                                            pos.target_token))
        return ranks


class StaticScorer:
    """Fixed per-token scores (popularity counts, hand-built logit tables)."""

    def __init__(self, name: str, token_scores: dict[int, float]):
        self.name = name
        self.token_scores = token_scores

    def target_ranks(self, positions, kind: TaskKind, vocabulary: Vocabulary,
                     cfg: EvalConfig) -> list[int]:
        candidates = np.asarray(
            vocabulary.item_token_ids
            if kind in (TaskKind.ITEM_MASKED, TaskKind.ITEM_CONTEXTUAL,
                        TaskKind.SEARCH)
            else vocabulary.carousel_token_ids)
        row = np.zeros(vocabulary.size)
        for tid, score in self.token_scores.items():
            row[tid] = score
        return [rank_of_target(row, candidates, pos.target_token)
                for pos in positions]


def popularity_scorer(train_stories, vocabulary: Vocabulary) -> StaticScorer:
    """Reference baseline: rank tokens by global watch count on the train
    split (items and carousels alike)."""
    counts: dict[int, float] = {}
    for story in train_stories:
        for event in story.events():
            if isinstance(event, WatchEvent) and event.item is not None:
                tid = vocabulary.item_token_to_id.get(event.item.item_id)
                if tid is not None:
                    counts[tid] = counts.get(tid, 0) + 1
                cid = vocabulary.carousel_token_of_id.get(
                    event.carousel.carousel_id)
                if cid is not None and event.carousel.carousel_id:
                    counts[cid] = counts.get(cid, 0) + 1
    return StaticScorer("popularity", counts)


# --- BM25 ----------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def bm25_terms(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass
class BM25Index:
    """Okapi BM25 over catalog titles with the +1-smoothed IDF variant."""
    doc_ids: list[str]
    doc_terms: list[dict[str, int]]
    doc_len: list[int]
    avg_len: float
    df: dict[str, int]
    k1: float = 1.2
    b: float = 0.75

    @classmethod
    def build(cls, items, k1: float = 1.2, b: float = 0.75) -> "BM25Index":
        items = sorted(items, key=lambda i: i.item_id)
        if not items:
            raise EvalError("cannot build BM25 index over an empty catalog")
        doc_ids, doc_terms, doc_len = [], [], []
        df: dict[str, int] = {}
        for item in items:
            terms = bm25_terms(item.title)
            counts: dict[str, int] = {}
            for t in terms:
                counts[t] = counts.get(t, 0) + 1
            for t in counts:
                df[t] = df.get(t, 0) + 1
            doc_ids.append(item.item_id)
            doc_terms.append(counts)
            doc_len.append(len(terms))
        avg = sum(doc_len) / len(doc_len)
        return cls(doc_ids, doc_terms, doc_len, avg, df, k1, b)

    def scores(self, query: str) -> list[float]:
        n = len(self.doc_ids)
        out = [0.0] * n
        for term in bm25_terms(query):
            d_f = self.df.get(term)
            if not d_f:
                continue
            idf = math.log((n - d_f + 0.5) / (d_f + 0.5) + 1.0)
            for i in range(n):
                tf = self.doc_terms[i].get(term, 0)
                if tf == 0:
                    continue
                norm = self.k1 * (1.0 - self.b + self.b * self.doc_len[i] / self.avg_len)
                out[i] += idf * tf * (self.k1 + 1.0) / (tf + norm)
        return out

    def rank_items(self, query: str) -> list[tuple[str, float]]:
        """All documents, best first; ties break by ascending item_id (the
        doc list is already id-sorted, so the sort is stable on it)."""
        scored = self.scores(query)
        order = sorted(range(len(scored)), key=lambda i: (-scored[i], self.doc_ids[i]))
        return [(self.doc_ids[i], scored[i]) for i in order]


class Bm25Scorer:
    def __init__(self, index: BM25Index, name: str = "bm25"):
        self.index = index
        self.name = name

    def target_ranks(self, positions, kind: TaskKind, vocabulary: Vocabulary,
                     cfg: EvalConfig) -> list[int]:
        if kind != TaskKind.SEARCH:
            raise EvalError("BM25 scores search positions only")
        candidates = np.asarray(vocabulary.item_token_ids)
        ranks = []
        for pos in positions:
            row = np.zeros(vocabulary.size)
            for item_id, score in zip(self.index.doc_ids,
                                      self.index.scores(pos.context["query"])):
                tid = vocabulary.item_token_to_id.get(item_id)
                if tid is not None:
                    row[tid] = score
            ranks.append(rank_of_target(row, candidates, pos.target_token))
        return ranks


# --- the harness ----------------------------------------------------------------

def evaluate(scorers, eval_stories, kinds, cfg: EvalConfig,
             vocabulary: Vocabulary, config_hash: str = "") -> list[dict]:
    """Metric rows for every (method, task, K): {method, task, K, hr, ndcg,
    n_positions, config_hash}. A kind with zero eligible positions yields an
    explicit row with n_positions 0 and null metrics."""
    stories = sorted(eval_stories, key=lambda s: s.user_id)
    if cfg.max_eval_users is not None:
        stories = stories[:cfg.max_eval_users]
    rows = []
    for kind in kinds:
        kind = TaskKind(kind)
        positions = []
        for story in stories:
            per_user = eligible_positions(story, kind, vocabulary)
            if cfg.max_positions_per_user is not None:
                per_user = per_user[-cfg.max_positions_per_user:]
            positions.extend(per_user)
        for scorer in scorers:
            if isinstance(scorer, Bm25Scorer) and kind != TaskKind.SEARCH:
                continue
            if not positions:
                for k in cfg.cutoffs:
                    rows.append({"method": scorer.name, "task": kind.value,
                                 "K": k, "hr": None, "ndcg": None,
                                 "n_positions": 0, "config_hash": config_hash})
                continue
            ranks = scorer.target_ranks(positions, kind, vocabulary, cfg)
            records = [EvalRecord(p.user_id, kind.value, p.position_index,
                                  p.target_token, r)
                       for p, r in zip(positions, ranks)]
            for k in cfg.cutoffs:
                rows.append({
                    "method": scorer.name, "task": kind.value, "K": k,
                    "hr": hit_rate_at_k(records, k),
                    "ndcg": ndcg_at_k(records, k),
                    "n_positions": len(records),
                    "config_hash": config_hash,
                })
    return rows


def write_metrics(path, rows, *, manifest_hash: str = "") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if manifest_hash:
            fh.write(json.dumps({"_manifest": manifest_hash}) + "\n")
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_metrics(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            if "_manifest" not in d:
                rows.append(d)
    return rows


def format_table(rows) -> str:
    """Text table shaped like the main offline-results table: one line per
    (task, method), HR and NDCG columns per cutoff."""
    cutoffs = sorted({r["K"] for r in rows})
    header = (["Task", "Method"] + [f"HR@{k}" for k in cutoffs]
              + [f"NDCG@{k}" for k in cutoffs] + ["n"])
    lines = [header]
    seen = []
    for row in rows:
        key = (row["task"], row["method"])
        if key not in seen:
            seen.append(key)
    for task, method in seen:
        cells = [task, method]
        sub = {r["K"]: r for r in rows if r["task"] == task and r["method"] == method}
        for k in cutoffs:
            hr = sub.get(k, {}).get("hr")
            cells.append("-" if hr is None else f"{hr:.4f}")
        for k in cutoffs:
            nd = sub.get(k, {}).get("ndcg")
            cells.append("-" if nd is None else f"{nd:.4f}")
        cells.append(str(sub.get(cutoffs[0], {}).get("n_positions", 0)))
        lines.append(cells)
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip()
                     for line in lines)
