"""Tokenizer hot loop: compiled Cython kernel with a pure-Python fallback.

The compiled kernel is preferred when the extension built; set
STORYRANK_PURE_PYTHON=1 to force the fallback. benchmarks/bench_tokenize.py
compares the two.
"""
import os

from . import _encode_py

if os.environ.get("STORYRANK_PURE_PYTHON"):
    _impl = _encode_py
    BACKEND = "python"
else:
    try:
        from . import _encode_cy as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _encode_py
        BACKEND = "python"

encode_text = _impl.encode_text
bpe_encode = _impl.bpe_encode


def get_backend(name: str):
    """Explicit backend module lookup ('python' or 'cython'), for benchmarks."""
    if name == "python":
        return _encode_py
    if name == "cython":
        from . import _encode_cy
        return _encode_cy
    raise ValueError(f"unknown backend {name!r}")
