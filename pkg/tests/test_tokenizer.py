import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bdistill.tokenizer import (CLS_ID, NUM_SPECIALS, SEP_ID, SPECIALS, UNK_ID, NormalizerConfig, Vocab,
                                decode, encode, encode_words, normalize, train_wordpiece)

from oracles import brute_force_pair_scores


def small_vocab(*pieces):
    return Vocab(list(SPECIALS) + list(pieces))


class TestNormalize:
    def test_accents_stripped_and_lowercased(self):
        assert normalize("Café") == "cafe"

    def test_hangul_untouched_without_stripping(self):
        assert normalize("한국", NormalizerConfig(strip_accents=False)) == "한국"

    def test_whitespace_collapsed(self):
        assert normalize("  a \t b\n") == "a b"

    @settings(max_examples=300, deadline=None)
    @given(st.text(max_size=30), st.booleans(), st.booleans())
    def test_idempotent(self, text, lower, strip):
        cfg = NormalizerConfig(lowercase=lower, strip_accents=strip)
        once = normalize(text, cfg)
        assert normalize(once, cfg) == once


class TestTrain:
    def test_best_pair_by_likelihood_ratio(self):
        corpus = ["aa"] * 4 + ["ab"] + ["ba"] * 3
        vocab = train_wordpiece(corpus, NUM_SPECIALS + 4 + 1)
        assert vocab.tokens[-1] == "ab"
        scores = brute_force_pair_scores({"aa": 4, "ab": 1, "ba": 3})
        assert max(scores, key=scores.get) == ("a", "##b")
        assert scores[("a", "##a")] == pytest.approx(0.1143, abs=1e-4)
        assert scores[("b", "##a")] == pytest.approx(0.1429, abs=1e-4)

    def test_nothing_to_merge(self):
        vocab = train_wordpiece(["a"], NUM_SPECIALS + 2)
        assert vocab.tokens == list(SPECIALS) + ["a"]

    def test_tie_breaks_lexicographically(self):
        # "ab" and "cd" have identical scores; the smaller merged string wins
        vocab = train_wordpiece(["cd", "ab"], NUM_SPECIALS + 4 + 1)
        assert vocab.tokens[-1] == "ab"

    def test_rejects_empty_and_small_target(self):
        with pytest.raises(ValueError, match="empty"):
            train_wordpiece([], 100)
        with pytest.raises(ValueError, match="below"):
            train_wordpiece(["abc"], NUM_SPECIALS + 1)

    def test_deterministic_file(self, tmp_path):
        corpus = ["the cat sat", "a dog ran far", "the dog sat"] * 3
        train_wordpiece(corpus, 40).save(tmp_path / "a.txt")
        train_wordpiece(list(reversed(corpus)), 40).save(tmp_path / "b.txt")
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_save_load_identity(self, tmp_path):
        vocab = train_wordpiece(["hello world", "held word"], 30)
        vocab.save(tmp_path / "v.txt")
        loaded = Vocab.load(tmp_path / "v.txt")
        assert loaded == vocab
        assert all(loaded.lookup(t) == i for i, t in enumerate(loaded.tokens))
        assert len((tmp_path / "v.txt").read_text().splitlines()) == len(vocab)

    def test_per_language_normalizers(self):
        vocab = train_wordpiece({"x": ["É"], "y": ["É"]}, 20,
                                {"x": NormalizerConfig(), "y": NormalizerConfig(strip_accents=False)})
        assert "e" in vocab and "é" in vocab


class TestEncode:
    def test_greedy_longest_match(self):
        vocab = small_vocab("a", "b", "##a", "##b")
        assert encode("ab", vocab) == [CLS_ID, vocab.lookup("a"), vocab.lookup("##b"), SEP_ID]

    def test_unknown_word(self):
        vocab = small_vocab("a", "##b")
        assert encode("q", vocab) == [CLS_ID, UNK_ID, SEP_ID]
        assert encode("aq", vocab) == [CLS_ID, UNK_ID, SEP_ID]

    def test_empty(self):
        assert encode("", small_vocab("a")) == [CLS_ID, SEP_ID]

    def test_truncation_keeps_sep(self):
        vocab = small_vocab("a")
        ids = encode("a " * 50, vocab, max_len=8)
        assert len(ids) == 8 and ids[0] == CLS_ID and ids[-1] == SEP_ID

    def test_encode_words_first_pieces(self):
        vocab = small_vocab("a", "b", "##b")
        ids, first = encode_words(["ab", "b", "a"], vocab, max_len=5)
        assert ids == [CLS_ID, 5, 7, 6, SEP_ID]
        assert first == [1, 3, -1]


class TestDecode:
    def test_round_trip(self):
        vocab = small_vocab("a", "b", "##a", "##b")
        assert decode(encode("ab a", vocab), vocab) == "ab a"

    def test_specials_only(self):
        assert decode([CLS_ID, SEP_ID], small_vocab("a")) == ""

    def test_glue(self):
        vocab = small_vocab("a", "b", "##b")
        assert decode([vocab.lookup("a"), vocab.lookup("##b"), vocab.lookup("b")], vocab) == "ab b"

    def test_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            decode([99], small_vocab("a"))


words = st.text(alphabet="abcdéü", min_size=1, max_size=6)


@settings(max_examples=150, deadline=None)
@given(st.lists(words, min_size=1, max_size=8), st.integers(3, 24))
def test_round_trip_and_length_properties(ws, max_len):
    text = " ".join(ws)
    vocab = train_wordpiece([text, "abc cab"], 60)
    ids = encode(text, vocab, max_len=max_len)
    assert len(ids) <= max_len and ids[0] == CLS_ID and ids[-1] == SEP_ID
    full = encode(text, vocab, max_len=10_000)
    if UNK_ID not in full:
        assert decode(full, vocab) == normalize(text)


def test_every_corpus_word_segments_without_unknowns():
    rng = np.random.default_rng(0)
    corpus = [" ".join("".join(rng.choice(list("xyzw"), size=rng.integers(1, 6))) for _ in range(5))
              for _ in range(30)]
    vocab = train_wordpiece(corpus, 50)
    for s in corpus:
        assert UNK_ID not in encode(s, vocab, max_len=1000)
