"""Pure-Python tokenizer kernel: domain-token scan plus byte-pair merges.

Same contract as the compiled kernel in _encode_cy.pyx; keep the two in
lockstep (tests/test_kernels.py cross-checks them).
"""
from __future__ import annotations

ANCHOR = b"<|"


def bpe_encode(ids: list[int], ranks: dict) -> list[int]:
    """Apply learned merges to a byte-id sequence.

    ranks maps (left_id, right_id) -> (rank, merged_id); the lowest rank is
    merged first, all occurrences left to right, until no pair applies.
    """
    if not ranks or len(ids) < 2:
        return ids
    while True:
        best_rank = -1
        best_new = -1
        best_a = best_b = -1
        for i in range(len(ids) - 1):
            entry = ranks.get((ids[i], ids[i + 1]))
            if entry is not None and (best_rank < 0 or entry[0] < best_rank):
                best_rank, best_new = entry
                best_a, best_b = ids[i], ids[i + 1]
        if best_rank < 0:
            return ids
        out = []
        i = 0
        n = len(ids)
        while i < n:
            if i + 1 < n and ids[i] == best_a and ids[i + 1] == best_b:
                out.append(best_new)
                i += 2
            else:
                out.append(ids[i])
                i += 1
        ids = out


def encode_text(data: bytes, domain: dict, lengths: tuple, ranks: dict) -> list[int]:
    """Tokenize UTF-8 bytes: longest-match domain tokens anchored on '<|',
    byte/merge encoding for everything in between.

    domain maps surface-form bytes -> token id; lengths is the descending
    tuple of distinct surface-form lengths. Raises ValueError on a '<|...'
    span that matches no domain token.
    """
    out: list[int] = []
    pos = 0
    n = len(data)
    while pos < n:
        anchor = data.find(ANCHOR, pos)
        if anchor < 0:
            anchor = n
        if anchor > pos:
            out.extend(bpe_encode(list(data[pos:anchor]), ranks))
            pos = anchor
        if pos >= n:
            break
        matched = -1
        for length in lengths:
            if pos + length > n:
                continue
            tid = domain.get(data[pos:pos + length])
            if tid is not None:
                matched = length
                out.append(tid)
                break
        if matched < 0:
            close = data.find(b"|>", pos + 2)
            span = data[pos:close + 2 if close >= 0 else min(n, pos + 40)]
            raise ValueError(
                f"unknown domain token span {span.decode('utf-8', 'replace')!r} "
                f"at byte {pos}")
        pos += matched
    return out
