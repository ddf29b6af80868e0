# cython: boundscheck=False, wraparound=False, language_level=3
"""Compiled tokenizer kernel: domain-token scan plus byte-pair merges.

Mirrors _encode_py exactly; the pure-Python module is the reference
implementation and the two are cross-checked in tests/test_kernels.py.
"""
from cpython.bytes cimport PyBytes_GET_SIZE


def bpe_encode(list ids, dict ranks):
    cdef Py_ssize_t i, n, best_i
    cdef long best_rank, best_new, best_a, best_b
    cdef object entry
    if not ranks or len(ids) < 2:
        return ids
    while True:
        n = len(ids)
        best_rank = -1
        best_new = -1
        best_a = -1
        best_b = -1
        for i in range(n - 1):
            entry = ranks.get((ids[i], ids[i + 1]))
            if entry is not None:
                if best_rank < 0 or <long> entry[0] < best_rank:
                    best_rank = entry[0]
                    best_new = entry[1]
                    best_a = ids[i]
                    best_b = ids[i + 1]
        if best_rank < 0:
            return ids
        out = []
        i = 0
        while i < n:
            if i + 1 < n and <long> ids[i] == best_a and <long> ids[i + 1] == best_b:
                out.append(best_new)
                i += 2
            else:
                out.append(ids[i])
                i += 1
        ids = out


def encode_text(bytes data, dict domain, tuple lengths, dict ranks):
    cdef Py_ssize_t pos = 0, anchor, n = PyBytes_GET_SIZE(data)
    cdef Py_ssize_t length, matched, close, nlens = len(lengths)
    cdef Py_ssize_t j
    cdef const unsigned char* buf = data
    cdef bint have_ranks = bool(ranks)
    cdef object tid
    cdef list out = [], span_ids
    while pos < n:
        anchor = data.find(b"<|", pos)
        if anchor < 0:
            anchor = n
        if anchor > pos:
            if have_ranks:
                span_ids = [buf[j] for j in range(pos, anchor)]
                out.extend(bpe_encode(span_ids, ranks))
            else:
                for j in range(pos, anchor):
                    out.append(buf[j])
            pos = anchor
        if pos >= n:
            break
        matched = -1
        for j in range(nlens):
            length = lengths[j]
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
