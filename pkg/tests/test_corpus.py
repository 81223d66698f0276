from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dennlm import corpus


@pytest.fixture
def vocab():
    return corpus.build_vocabulary(["a b a"])


def test_build_vocabulary_frequency_order(vocab):
    assert vocab.V == 4
    assert set(vocab.id_to_token) == {corpus.UNK, corpus.EOS, "a", "b"}
    assert vocab.id("a") < vocab.id("b")


def test_build_vocabulary_ties_are_lexicographic():
    v = corpus.build_vocabulary(["c b a", "b"])
    assert v.id_to_token[2:] == ["b", "a", "c"]


def test_build_vocabulary_cap_and_existing_unk():
    v = corpus.build_vocabulary(["x x x y y z <unk> <unk>"], max_size=3)
    assert v.id_to_token == [corpus.UNK, corpus.EOS, "x"]
    assert v.id("z") == v.unk_id


def test_build_vocabulary_empty():
    with pytest.raises(ValueError, match="empty corpus"):
        corpus.build_vocabulary([""])


def test_vocabulary_bijection(vocab):
    for i, tok in enumerate(vocab.id_to_token):
        assert vocab.token_to_id[tok] == i
    assert vocab.unk_id != vocab.eos_id


def test_encode_examples(vocab):
    a, b, eos, unk = vocab.id("a"), vocab.id("b"), vocab.eos_id, vocab.unk_id
    assert corpus.encode(["a b"], vocab).tolist() == [a, b, eos]
    assert corpus.encode(["a z"], vocab).tolist() == [a, unk, eos]
    assert corpus.encode(["a", "b"], vocab).tolist() == [a, eos, b, eos]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.sampled_from(["a", "b", "c", "d", "e"]), min_size=1, max_size=6), min_size=1, max_size=5))
def test_decode_encode_round_trip(sents):
    vocab = corpus.build_vocabulary([" ".join(s) for s in sents[:1]])
    lines = [" ".join(s) for s in sents]
    back = corpus.decode(corpus.encode(lines, vocab), vocab)
    expect = [" ".join(t if t in vocab.token_to_id else corpus.UNK for t in s) for s in sents]
    assert back == expect


def test_vocabulary_file_round_trip(tmp_path, vocab):
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    assert corpus.Vocabulary.load(path).id_to_token == vocab.id_to_token
    assert path.read_text().splitlines() == vocab.id_to_token


def test_ngram_windows_padding():
    a, eos = 5, 1
    ctx, tgt = corpus.ngram_windows([a, eos], 3)
    assert ctx.tolist() == [[eos, eos], [eos, a]]
    assert tgt.tolist() == [a, eos]


def test_ngram_windows_empty_and_bad_order():
    ctx, tgt = corpus.ngram_windows([], 3)
    assert ctx.shape == (0, 2) and len(tgt) == 0
    with pytest.raises(ValueError):
        corpus.ngram_windows([2, 1], 1)


def test_ngram_windows_do_not_cross_sentences():
    ids = [2, 3, 4, 1, 5, 6, 1]
    ctx, tgt = corpus.ngram_windows(ids, 4)
    assert ctx[4].tolist() == [1, 1, 1]
    assert ctx[5].tolist() == [1, 1, 5]
    assert ctx[3].tolist() == [2, 3, 4]


def naive_windows(ids, N, eos=1):
    out, hist = [], [eos] * (N - 1)
    for w in ids:
        out.append((tuple(hist), w))
        hist = [eos] * (N - 1) if w == eos else hist[1:] + [w]
    return out


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 6), max_size=40), st.integers(2, 5))
def test_ngram_windows_match_naive(ids, N):
    ctx, tgt = corpus.ngram_windows(ids, N)
    assert [(tuple(c), t) for c, t in zip(ctx.tolist(), tgt.tolist())] == naive_windows(ids, N)


def test_make_batches_sizes_and_determinism():
    ctx, tgt = corpus.ngram_windows(list(range(2, 11)) + [1], 3)
    batches = corpus.make_batches(ctx, tgt, 4, seed=0)
    assert [b.B for b in batches] == [4, 4, 2]
    again = corpus.make_batches(ctx, tgt, 4, seed=0)
    for x, y in zip(batches, again):
        np.testing.assert_array_equal(x.contexts, y.contexts)
        np.testing.assert_array_equal(x.targets, y.targets)
    with pytest.raises(ValueError):
        corpus.make_batches(ctx, tgt, 0, seed=0)


def test_make_batches_epoch_coverage():
    rng = np.random.default_rng(0)
    ids = rng.integers(1, 20, 300)
    ctx, tgt = corpus.ngram_windows(ids, 4)
    batches = corpus.make_batches(ctx, tgt, 32, seed=3)
    got = Counter((tuple(c), t) for b in batches for c, t in zip(b.contexts.tolist(), b.targets.tolist()))
    assert got == Counter((tuple(c), t) for c, t in zip(ctx.tolist(), tgt.tolist()))


def test_make_batches_seeds_give_different_orders():
    ctx, tgt = corpus.ngram_windows(np.arange(2, 202), 2)
    orders = {tuple(np.concatenate([b.targets for b in corpus.make_batches(ctx, tgt, 16, seed=s)])) for s in range(20)}
    assert len(orders) == 20
