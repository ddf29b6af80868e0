"""Training corpora: stochastic masking, the catalog corpus, the 20:1
story/catalog mixture, and the binary record stream on disk.

Masking is training-time only. Carousel masking replaces a watch's
surface+carousel token pair with <|surface=home|><|carousel(MASK)|> so the
model learns a container-independent next-item score; item UNK substitution
teaches it to survive catalog drift between token refreshes. Both draws come
from a counter-based generator keyed on (seed, sequence index), so corpora
are reproducible regardless of worker count or platform.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .vocab import CLASS_CAROUSEL, CLASS_ITEM, CLASS_SPECIAL, CLASS_SURFACE, \
    CatalogIndex, Vocabulary, tokenize

ORIGIN_STORY = 0
ORIGIN_CATALOG = 1

_MAGIC = b"SRCORP1\n"


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class MaskingConfig:
    p_carousel_mask: float = 0.1
    p_item_unk: float = 0.001
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("p_carousel_mask", "p_item_unk"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise CorpusError(f"{name} must be in [0, 1], got {p}")


@dataclass(frozen=True)
class MixtureConfig:
    story_weight: int = 20
    catalog_weight: int = 1
    context_length: int = 256
    rng_seed: int = 0
    truncate: str = "head"

    def __post_init__(self):
        if self.story_weight <= 0 or self.catalog_weight <= 0:
            raise CorpusError("mixture weights must be positive integers")
        if self.context_length < 2:
            raise CorpusError("context_length must be at least 2")
        if self.truncate not in ("head", "tail"):
            raise CorpusError(f"truncate must be head or tail, got {self.truncate!r}")


@dataclass(frozen=True)
class TrainingExample:
    token_ids: tuple[int, ...]
    origin: int  # ORIGIN_STORY or ORIGIN_CATALOG


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, stream]))


def apply_masking(token_ids, cfg: MaskingConfig, vocabulary: Vocabulary,
                  sequence_index: int = 0) -> list[int]:
    """Mask one tokenized story. Deterministic given (seed, sequence_index).

    Per watch event (a surface token followed by a carousel token), with
    probability p_carousel_mask the pair becomes home+MASK. Independently,
    each item token becomes UNK with probability p_item_unk. Sequence length
    never changes.
    """
    classes = vocabulary.classes
    pair_positions = []
    item_positions = []
    for i, tid in enumerate(token_ids):
        cls = classes[tid]
        if cls == CLASS_SURFACE and i + 1 < len(token_ids):
            nxt = classes[token_ids[i + 1]]
            if nxt == CLASS_CAROUSEL or token_ids[i + 1] == vocabulary.mask_carousel_id:
                pair_positions.append(i)
        elif cls == CLASS_ITEM:
            item_positions.append(i)
    out = list(token_ids)
    rng = _rng(cfg.rng_seed, sequence_index)
    draws = rng.random(len(pair_positions))
    for pos, u in zip(pair_positions, draws):
        if u < cfg.p_carousel_mask:
            out[pos] = vocabulary.surface_ids["home"]
            out[pos + 1] = vocabulary.mask_carousel_id
    draws = rng.random(len(item_positions))
    for pos, u in zip(item_positions, draws):
        if u < cfg.p_item_unk:
            out[pos] = vocabulary.unk_item_id
    return out


def build_catalog_corpus(catalog: CatalogIndex,
                         vocabulary: Vocabulary) -> list[TrainingExample]:
    """Token-to-text statements: one per item ('<token> has title ...') and
    one per carousel ('<token> has name ...')."""
    examples = []
    for item in sorted(catalog.items, key=lambda i: i.item_id):
        tid = vocabulary.item_token_to_id[item.item_id]
        text = f" has title {item.title}".rstrip()
        ids = [tid] + tokenize(text, vocabulary)
        examples.append(TrainingExample(tuple(ids), ORIGIN_CATALOG))
    for carousel in sorted(catalog.carousels, key=lambda c: c.carousel_id):
        tid = vocabulary.carousel_token_of_id[carousel.carousel_id]
        text = f" has name {catalog.carousel_name(carousel.carousel_id)}".rstrip()
        ids = [tid] + tokenize(text, vocabulary)
        examples.append(TrainingExample(tuple(ids), ORIGIN_CATALOG))
    return examples


def truncate_ids(token_ids, context_length: int, mode: str = "head"):
    if len(token_ids) <= context_length:
        return token_ids
    if mode == "head":
        return token_ids[:context_length]
    return token_ids[-context_length:]


def sample_mixture(story_examples, catalog_examples, cfg: MixtureConfig,
                   n: int, masking: MaskingConfig | None = None,
                   vocabulary: Vocabulary | None = None) -> Iterator[TrainingExample]:
    """Draw n training examples, stories vs catalog at the configured weights
    (20:1 by default, i.e. story with probability 20/21), uniform within each
    corpus. Story draws are masked (when a masking config is given) and then
    truncated to the context length.
    """
    if n <= 0:
        raise CorpusError(f"sample count must be positive, got {n}")
    if not story_examples or not catalog_examples:
        raise CorpusError("both corpora must be non-empty")
    if masking is not None and vocabulary is None:
        raise CorpusError("masking requires the vocabulary")
    p_story = cfg.story_weight / (cfg.story_weight + cfg.catalog_weight)
    rng = _rng(cfg.rng_seed, 0)
    for i in range(n):
        take_story = rng.random() < p_story
        if take_story:
            idx = int(rng.integers(len(story_examples)))
            ids = story_examples[idx].token_ids
            if masking is not None:
                ids = apply_masking(ids, masking, vocabulary, sequence_index=i)
            ids = truncate_ids(ids, cfg.context_length, cfg.truncate)
            yield TrainingExample(tuple(ids), ORIGIN_STORY)
        else:
            idx = int(rng.integers(len(catalog_examples)))
            ex = catalog_examples[idx]
            ids = truncate_ids(ex.token_ids, cfg.context_length, cfg.truncate)
            yield TrainingExample(tuple(ids), ex.origin)


def tokenize_stories(texts: Iterable[str], vocabulary: Vocabulary,
                     min_length: int = 2) -> list[TrainingExample]:
    """Tokenize serialized stories into ORIGIN_STORY examples (unmasked,
    untruncated); sequences shorter than min_length carry no prediction
    target and are dropped."""
    out = []
    for text in texts:
        ids = tokenize(text, vocabulary)
        if len(ids) >= min_length:
            out.append(TrainingExample(tuple(ids), ORIGIN_STORY))
    return out


# --- binary record stream ---------------------------------------------------
#
# Layout: magic, a JSON meta line (vocab hash, manifest hash), then records.
# Each record is one origin byte, a 4-byte little-endian token count, and
# that many 4-byte little-endian token ids.

def write_examples(path, examples: Iterable[TrainingExample],
                   *, vocab_hash: str = "", manifest_hash: str = "") -> int:
    n = 0
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        meta = json.dumps({"vocab_hash": vocab_hash, "manifest": manifest_hash},
                          sort_keys=True)
        fh.write(meta.encode("utf-8") + b"\n")
        for ex in examples:
            fh.write(struct.pack("<BI", ex.origin, len(ex.token_ids)))
            fh.write(np.asarray(ex.token_ids, dtype="<u4").tobytes())
            n += 1
    return n


def read_examples(path, *, expect_vocab_hash: str | None = None
                  ) -> tuple[list[TrainingExample], dict]:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise CorpusError(f"{path}: not a storyrank corpus file")
        meta = json.loads(fh.readline().decode("utf-8"))
        if expect_vocab_hash and meta.get("vocab_hash") \
                and meta["vocab_hash"] != expect_vocab_hash:
            raise CorpusError(
                f"{path}: corpus was tokenized with vocabulary "
                f"{meta['vocab_hash']}, expected {expect_vocab_hash}")
        examples = []
        while True:
            head = fh.read(5)
            if not head:
                break
            if len(head) < 5:
                raise CorpusError(f"{path}: truncated record header")
            origin, count = struct.unpack("<BI", head)
            payload = fh.read(4 * count)
            if len(payload) < 4 * count:
                raise CorpusError(f"{path}: truncated record payload")
            ids = np.frombuffer(payload, dtype="<u4")
            examples.append(TrainingExample(tuple(int(x) for x in ids), origin))
    return examples, meta
