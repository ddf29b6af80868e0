"""Mixed vocabulary: byte-level base tokens (plus optional learned merges)
interleaved with atomic domain tokens for markers, surfaces, carousels, and
catalog items.

Domain tokens are single vocabulary entries regardless of their surface
length; tokenization longest-matches them anchored on '<|', so an item like
<|id(SYN201|The Lantern at Exit 13)|> always costs exactly one token and one
forward pass can score the whole catalog off the next-token logits.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from . import _kernels
from .stories import CarouselRef, ItemRef

CLASS_BYTE = "byte"
CLASS_MERGE = "merge"
CLASS_MARKER = "marker"
CLASS_SURFACE = "surface"
CLASS_CAROUSEL = "carousel"
CLASS_ITEM = "item"
CLASS_SPECIAL = "special"

MARKER_FORMS = ("<|begin_sessions|>", "<|session|>", "<|watch|>", "<|search|>")
SURFACE_FORMS = ("<|surface=home|>", "<|surface=search|>",
                 "<|surface=browse|>", "<|surface=autoplay|>")
MASK_CAROUSEL_FORM = "<|carousel(MASK)|>"
UNK_ITEM_FORM = "<|id(UNK)|>"

N_BYTES = 256


class VocabularyError(ValueError):
    pass


class TokenizeError(ValueError):
    pass


@dataclass(frozen=True)
class CatalogIndex:
    """The item and carousel inventory a vocabulary is minted from."""
    items: tuple[ItemRef, ...]
    carousels: tuple[CarouselRef, ...]
    carousel_names: dict = field(default_factory=dict)

    def __post_init__(self):
        item_ids = [i.item_id for i in self.items]
        if len(set(item_ids)) != len(item_ids):
            dup = sorted({x for x in item_ids if item_ids.count(x) > 1})
            raise VocabularyError(f"duplicate item ids in catalog: {dup[:5]}")
        car_ids = [c.carousel_id for c in self.carousels]
        if len(set(car_ids)) != len(car_ids):
            dup = sorted({x for x in car_ids if car_ids.count(x) > 1})
            raise VocabularyError(f"duplicate carousel ids in catalog: {dup[:5]}")

    def item_ids(self) -> set[str]:
        return {i.item_id for i in self.items}

    def carousel_name(self, carousel_id: str) -> str:
        return self.carousel_names.get(carousel_id, carousel_id)


def item_token_form(item: ItemRef) -> str:
    return f"<|id({item.item_id}|{item.title})|>"


def carousel_token_form(carousel_id: str) -> str:
    return f"<|carousel({carousel_id})|>"


def surface_token_form(surface_value: str) -> str:
    return f"<|surface={surface_value}|>"


@dataclass(frozen=True)
class Vocabulary:
    classes: tuple[str, ...]
    forms: tuple[bytes, ...]  # UTF-8 surface form for every token
    merge_pairs: tuple[tuple[int, int], ...]  # merge id 256+r merges merge_pairs[r]

    # derived lookups, filled by _finish()
    domain_to_id: dict = field(default_factory=dict, compare=False)
    item_token_to_id: dict = field(default_factory=dict, compare=False)
    item_id_of_token: dict = field(default_factory=dict, compare=False)
    carousel_id_of_token: dict = field(default_factory=dict, compare=False)
    carousel_token_of_id: dict = field(default_factory=dict, compare=False)
    marker_ids: dict = field(default_factory=dict, compare=False)
    surface_ids: dict = field(default_factory=dict, compare=False)
    _lengths: tuple = field(default=(), compare=False)
    _merge_ranks: dict = field(default_factory=dict, compare=False)

    @property
    def size(self) -> int:
        return len(self.classes)

    @property
    def base_size(self) -> int:
        return N_BYTES + len(self.merge_pairs)

    @property
    def mask_carousel_id(self) -> int:
        return self.domain_to_id[MASK_CAROUSEL_FORM.encode()]

    @property
    def unk_item_id(self) -> int:
        return self.domain_to_id[UNK_ITEM_FORM.encode()]

    @property
    def item_token_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.item_id_of_token))

    @property
    def carousel_token_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.carousel_id_of_token))

    def is_class(self, token_id: int, cls: str) -> bool:
        return self.classes[token_id] == cls

    def form_text(self, token_id: int) -> str:
        return self.forms[token_id].decode("utf-8", "backslashreplace")

    def vocab_hash(self) -> str:
        h = hashlib.sha256()
        for line in _token_lines(self):
            h.update(line.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()[:16]


def _finish(vocab: Vocabulary) -> Vocabulary:
    for tid, (cls, form) in enumerate(zip(vocab.classes, vocab.forms)):
        if cls in (CLASS_MARKER, CLASS_SURFACE, CLASS_CAROUSEL, CLASS_ITEM,
                   CLASS_SPECIAL):
            if form in vocab.domain_to_id:
                raise VocabularyError(
                    f"duplicate surface form {form.decode('utf-8', 'replace')!r}")
            vocab.domain_to_id[form] = tid
            text = form.decode("utf-8")
            if cls == CLASS_MARKER:
                vocab.marker_ids[text] = tid
            elif cls == CLASS_SURFACE:
                vocab.surface_ids[text[len("<|surface="):-2]] = tid
            elif cls == CLASS_CAROUSEL:
                cid = text[len("<|carousel("):-3]
                vocab.carousel_id_of_token[tid] = cid
                vocab.carousel_token_of_id[cid] = tid
            elif cls == CLASS_ITEM:
                item_id = text[len("<|id("):].split("|", 1)[0]
                vocab.item_id_of_token[tid] = item_id
                vocab.item_token_to_id[item_id] = tid
    lengths = sorted({len(f) for f in vocab.domain_to_id}, reverse=True)
    object.__setattr__(vocab, "_lengths", tuple(lengths))
    ranks = {pair: (rank, N_BYTES + rank)
             for rank, pair in enumerate(vocab.merge_pairs)}
    object.__setattr__(vocab, "_merge_ranks", ranks)
    return vocab


def _plain_segments(data: bytes, domain: dict, lengths: tuple) -> list[bytes]:
    """Byte spans of `data` lying outside domain tokens (for merge learning)."""
    segments = []
    pos = 0
    n = len(data)
    while pos < n:
        anchor = data.find(b"<|", pos)
        if anchor < 0:
            anchor = n
        if anchor > pos:
            segments.append(data[pos:anchor])
        pos = anchor
        if pos >= n:
            break
        for length in lengths:
            if pos + length <= n and data[pos:pos + length] in domain:
                pos += length
                break
        else:
            raise TokenizeError(f"unknown domain token span at byte {pos} "
                                "in merge training text")
    return segments


def _learn_merges(segments: list[bytes], n_merges: int,
                  existing_forms: set[bytes]) -> tuple[list[tuple[int, int]], list[bytes]]:
    """Greedy pair-merge learning over byte segments; returns (pairs, expansions)."""
    seqs = [list(seg) for seg in segments if len(seg) >= 2]
    expansion: list[bytes] = [bytes([i]) for i in range(N_BYTES)]
    pairs: list[tuple[int, int]] = []
    taken = set(existing_forms)
    for _ in range(n_merges):
        counts: dict[tuple[int, int], int] = {}
        for seq in seqs:
            for i in range(len(seq) - 1):
                p = (seq[i], seq[i + 1])
                counts[p] = counts.get(p, 0) + 1
        best = None
        for p, c in sorted(counts.items()):
            if c < 2:
                continue
            merged = expansion[p[0]] + expansion[p[1]]
            if merged in taken:
                continue
            if best is None or c > best[1]:
                best = (p, c)
        if best is None:
            break
        pair = best[0]
        new_id = N_BYTES + len(pairs)
        merged_form = expansion[pair[0]] + expansion[pair[1]]
        pairs.append(pair)
        expansion.append(merged_form)
        taken.add(merged_form)
        for si, seq in enumerate(seqs):
            out = []
            i = 0
            while i < len(seq):
                if i + 1 < len(seq) and seq[i] == pair[0] and seq[i + 1] == pair[1]:
                    out.append(new_id)
                    i += 2
                else:
                    out.append(seq[i])
                    i += 1
            seqs[si] = out
    return pairs, expansion[N_BYTES:]


def build_vocabulary(catalog: CatalogIndex, merges: int = 0,
                     merge_training_text: str | None = None) -> Vocabulary:
    """Mint the full vocabulary for a catalog. Deterministic given inputs.

    Token layout: 256 byte tokens, `merges` learned merges, then the domain
    block (markers, surfaces, MASK/UNK specials, carousels sorted by id,
    items sorted by id).
    """
    classes: list[str] = [CLASS_BYTE] * N_BYTES
    forms: list[bytes] = [bytes([i]) for i in range(N_BYTES)]

    domain_entries: list[tuple[str, str]] = []
    for form in MARKER_FORMS:
        domain_entries.append((CLASS_MARKER, form))
    for form in SURFACE_FORMS:
        domain_entries.append((CLASS_SURFACE, form))
    domain_entries.append((CLASS_SPECIAL, MASK_CAROUSEL_FORM))
    domain_entries.append((CLASS_SPECIAL, UNK_ITEM_FORM))
    for carousel in sorted(catalog.carousels, key=lambda c: c.carousel_id):
        domain_entries.append((CLASS_CAROUSEL, carousel_token_form(carousel.carousel_id)))
    for item in sorted(catalog.items, key=lambda i: i.item_id):
        domain_entries.append((CLASS_ITEM, item_token_form(item)))

    merge_pairs: tuple[tuple[int, int], ...] = ()
    if merges > 0:
        if merge_training_text is None:
            raise VocabularyError("merges > 0 requires merge_training_text")
        domain_forms = {form.encode(): None for _, form in domain_entries}
        lengths = tuple(sorted({len(f) for f in domain_forms}, reverse=True))
        segments = _plain_segments(merge_training_text.encode(), domain_forms, lengths)
        existing = {form.encode() for _, form in domain_entries}
        pairs, expansions = _learn_merges(segments, merges, existing)
        merge_pairs = tuple(pairs)
        for exp in expansions:
            classes.append(CLASS_MERGE)
            forms.append(exp)

    for cls, form in domain_entries:
        classes.append(cls)
        forms.append(form.encode())

    return _finish(Vocabulary(tuple(classes), tuple(forms), merge_pairs))


def tokenize(text: str, vocabulary: Vocabulary) -> list[int]:
    """Encode text; domain tokens longest-match, the rest is byte/merge coded.

    A '<|...|>' span matching no domain token is a hard error: catalog drift
    must be handled upstream with map_unknown_items, never silently here.
    """
    try:
        return _kernels.encode_text(text.encode("utf-8"), vocabulary.domain_to_id,
                                    vocabulary._lengths, vocabulary._merge_ranks)
    except ValueError as exc:
        raise TokenizeError(str(exc)) from None


def detokenize(token_ids, vocabulary: Vocabulary) -> str:
    parts = []
    for tid in token_ids:
        if not 0 <= tid < vocabulary.size:
            raise TokenizeError(f"token id {tid} out of range 0..{vocabulary.size - 1}")
        parts.append(vocabulary.forms[tid])
    return b"".join(parts).decode("utf-8")


def map_unknown_items(token_ids, vocabulary: Vocabulary, known_catalog) -> list[int]:
    """Replace item tokens absent from `known_catalog` with the UNK item token."""
    known = known_catalog.item_ids() if isinstance(known_catalog, CatalogIndex) \
        else set(known_catalog)
    unk = vocabulary.unk_item_id
    out = []
    for tid in token_ids:
        if vocabulary.classes[tid] == CLASS_ITEM \
                and vocabulary.item_id_of_token[tid] not in known:
            out.append(unk)
        else:
            out.append(tid)
    return out


def prefix_freedom_violations(vocabulary: Vocabulary) -> list[tuple[str, str]]:
    """Domain-form pairs where one is a prefix of the other once the closing
    '|>' delimiter is ignored. Structurally this list is empty; asserted in tests."""
    stripped = sorted((form.decode("utf-8")[:-2], form.decode("utf-8"))
                      for form in vocabulary.domain_to_id)
    bad = []
    for i in range(len(stripped) - 1):
        a, b = stripped[i], stripped[i + 1]
        if b[0].startswith(a[0]) and a[0] != b[0]:
            bad.append((a[1], b[1]))
    return bad


# --- vocabulary file --------------------------------------------------------

_PRINTABLE = set(range(0x20, 0x7F)) - {ord("\\")}


def _escape(form: bytes) -> str:
    out = []
    for b in form:
        if b in _PRINTABLE:
            out.append(chr(b))
        else:
            out.append(f"\\x{b:02x}")
    return "".join(out)


def _unescape(text: str) -> bytes:
    out = bytearray()
    i = 0
    while i < len(text):
        if text[i] == "\\" and i + 3 < len(text) + 1 and text[i + 1] == "x":
            out.append(int(text[i + 2:i + 4], 16))
            i += 4
        else:
            out.append(ord(text[i]))
            i += 1
    return bytes(out)


def _token_lines(vocabulary: Vocabulary):
    for tid, (cls, form) in enumerate(zip(vocabulary.classes, vocabulary.forms)):
        yield f"{tid}\t{cls}\t{_escape(form)}"


def write_vocab(path, vocabulary: Vocabulary, *, manifest_hash: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        meta = {"format": "storyrank-vocab-v1",
                "merge_pairs": [list(p) for p in vocabulary.merge_pairs]}
        if manifest_hash:
            meta["manifest"] = manifest_hash
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        for line in _token_lines(vocabulary):
            fh.write(line + "\n")


def read_vocab(path) -> Vocabulary:
    classes: list[str] = []
    forms: list[bytes] = []
    merge_pairs: list[tuple[int, int]] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("# "):
                meta = json.loads(line[2:])
                merge_pairs = [tuple(p) for p in meta.get("merge_pairs", [])]
                continue
            tid_s, cls, escaped = line.split("\t")
            if int(tid_s) != len(classes):
                raise VocabularyError(
                    f"non-contiguous token id {tid_s} at position {len(classes)}")
            classes.append(cls)
            forms.append(_unescape(escaped))
    vocab = Vocabulary(tuple(classes), tuple(forms), tuple(merge_pairs))
    return _finish(vocab)


# --- catalog file -----------------------------------------------------------

def write_catalog(path, catalog: CatalogIndex, *, header: dict | None = None,
                  item_extra: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({"_manifest": header}, sort_keys=True) + "\n")
        for item in catalog.items:
            record = {"item_id": item.item_id, "title": item.title}
            if item_extra and item.item_id in item_extra:
                record.update(item_extra[item.item_id])
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        for carousel in catalog.carousels:
            fh.write(json.dumps({"carousel_id": carousel.carousel_id,
                                 "name": catalog.carousel_name(carousel.carousel_id)},
                                ensure_ascii=False) + "\n")


def read_catalog(path) -> CatalogIndex:
    items: list[ItemRef] = []
    carousels: list[CarouselRef] = []
    names: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            if "_manifest" in d:
                continue
            if "item_id" in d:
                items.append(ItemRef(d["item_id"], d.get("title", "")))
            elif "carousel_id" in d:
                carousels.append(CarouselRef(d["carousel_id"]))
                if "name" in d:
                    names[d["carousel_id"]] = d["name"]
            else:
                raise VocabularyError(f"catalog line without item_id or carousel_id: {d}")
    return CatalogIndex(tuple(items), tuple(carousels), names)
