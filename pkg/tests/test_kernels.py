import pytest

from storyrank import _kernels
from storyrank._kernels import _encode_py
from storyrank.grammar import serialize
from storyrank.vocab import build_vocabulary, tokenize

from conftest import SAMPLE_TEXT, make_sample_story


cython_kernel = pytest.importorskip("storyrank._kernels._encode_cy",
                                    reason="compiled kernel not built")


def _args(vocab, text):
    return (text.encode("utf-8"), vocab.domain_to_id, vocab._lengths,
            vocab._merge_ranks)


def test_backends_agree_on_sample_text(sample_vocab):
    a = _encode_py.encode_text(*_args(sample_vocab, SAMPLE_TEXT))
    b = cython_kernel.encode_text(*_args(sample_vocab, SAMPLE_TEXT))
    assert a == b


def test_backends_agree_with_merges(sample_catalog):
    text = serialize(make_sample_story())
    vocab = build_vocabulary(sample_catalog, merges=24, merge_training_text=text)
    a = _encode_py.encode_text(*_args(vocab, text))
    b = cython_kernel.encode_text(*_args(vocab, text))
    assert a == b
    assert any(t >= 256 and t < 256 + 24 for t in a)  # merges actually used


def test_backends_agree_on_error_spans(sample_vocab):
    bad = "x <|id(NOPE|Missing)|> y"
    with pytest.raises(ValueError, match="NOPE") as e1:
        _encode_py.encode_text(*_args(sample_vocab, bad))
    with pytest.raises(ValueError, match="NOPE") as e2:
        cython_kernel.encode_text(*_args(sample_vocab, bad))
    assert str(e1.value) == str(e2.value)


def test_bpe_merge_loop_matches(sample_catalog):
    text = serialize(make_sample_story()) * 3
    vocab = build_vocabulary(sample_catalog, merges=16, merge_training_text=text)
    seg = list(b" hour=22 after dark hour=3 ")
    a = _encode_py.bpe_encode(list(seg), vocab._merge_ranks)
    b = cython_kernel.bpe_encode(list(seg), vocab._merge_ranks)
    assert a == b


def test_selected_backend_is_exposed():
    assert _kernels.BACKEND in ("python", "cython")
    assert _kernels.get_backend("python") is _encode_py
