"""Shared uncased WordPiece vocabulary: normalisation, training, encode/decode."""
from __future__ import annotations

import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)
NUM_SPECIALS = len(SPECIALS)
CONT = "##"


@dataclass(frozen=True)
class NormalizerConfig:
    lowercase: bool = True
    strip_accents: bool = True


def _strip_marks(text: str) -> str:
    return "".join(c for c in unicodedata.normalize("NFD", text) if unicodedata.category(c) != "Mn")


def normalize(text: str, cfg: NormalizerConfig = NormalizerConfig()) -> str:
    """Lowercase, strip combining marks after NFD, collapse whitespace."""
    while True:
        out = text.lower() if cfg.lowercase else text
        if cfg.strip_accents:
            out = _strip_marks(out)
        out = " ".join(out.split())
        if out == text:
            return out
        text = out


class Vocab:
    """Token strings in id order; ids 0-4 are the specials."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens: list[str] = list(tokens)
        if tuple(self.tokens[:NUM_SPECIALS]) != SPECIALS:
            raise ValueError(f"vocab must start with specials {SPECIALS}")
        self.index: dict[str, int] = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.index:
                raise ValueError(f"duplicate token {tok!r} at line {i}")
            self.index[tok] = i
        self._word_cache: dict[str, list[int]] = {}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def lookup(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text.split("\n")[:-1] if text.endswith("\n") else text.split("\n"))

    def word_pieces(self, word: str) -> list[int]:
        """Greedy longest-match-first segmentation of one normalised word."""
        cached = self._word_cache.get(word)
        if cached is not None:
            return cached
        ids: list[int] = []
        start = 0
        while start < len(word):
            end = len(word)
            found = None
            while end > start:
                piece = word[start:end] if start == 0 else CONT + word[start:end]
                if piece in self.index:
                    found = self.index[piece]
                    break
                end -= 1
            if found is None:
                ids = [UNK_ID]
                break
            ids.append(found)
            start = end
        self._word_cache[word] = ids
        return ids


def _merge_symbol(x: str, y: str) -> str:
    return x + y[len(CONT):]


def _texts(corpora, cfg) -> Iterable[tuple[str, NormalizerConfig]]:
    """Yield (sentence, normaliser) from a CorpusSet-like object, a
    mapping language -> sentences, or a plain list of sentences."""
    if hasattr(corpora, "languages") and hasattr(corpora, "sentences"):
        corpora = {lang: corpora.sentences[lang] for lang in corpora.languages}
    if isinstance(corpora, Mapping):
        for lang, sentences in corpora.items():
            lang_cfg = cfg.get(lang, NormalizerConfig()) if isinstance(cfg, Mapping) else cfg
            for s in sentences:
                yield s, lang_cfg
    else:
        base = cfg if isinstance(cfg, NormalizerConfig) else NormalizerConfig()
        for s in corpora:
            yield s, base


def train_wordpiece(corpora, target_size: int, cfg=NormalizerConfig()) -> Vocab:
    """Learn a WordPiece vocabulary of at most ``target_size`` tokens.

    Pairs are scored by count(xy) / (count(x) * count(y)); equal scores go
    to the lexicographically smallest merged string.
    """
    word_freq: Counter[str] = Counter()
    for sentence, lang_cfg in _texts(corpora, cfg):
        word_freq.update(normalize(sentence, lang_cfg).split())
    if not word_freq:
        raise ValueError("cannot train a vocabulary on empty corpora")

    words = sorted(word_freq)
    splits = [[w[0]] + [CONT + c for c in w[1:]] for w in words]
    freqs = [word_freq[w] for w in words]

    alphabet = sorted({sym for s in splits for sym in s})
    if target_size < NUM_SPECIALS + len(alphabet):
        raise ValueError(f"target_size {target_size} below specials + alphabet "
                         f"({NUM_SPECIALS} + {len(alphabet)})")
    tokens = list(SPECIALS) + alphabet
    known = set(tokens)

    sym_count: Counter[str] = Counter()
    pair_count: Counter[tuple[str, str]] = Counter()
    pair_words: dict[tuple[str, str], set[int]] = defaultdict(set)
    for i, (syms, f) in enumerate(zip(splits, freqs)):
        for s in syms:
            sym_count[s] += f
        for pair in zip(syms, syms[1:]):
            pair_count[pair] += f
            pair_words[pair].add(i)

    while len(tokens) < target_size and pair_count:
        best = min(pair_count, key=lambda p: (-pair_count[p] / (sym_count[p[0]] * sym_count[p[1]]),
                                              _merge_symbol(*p)))
        x, y = best
        merged = _merge_symbol(x, y)
        for i in sorted(pair_words.pop(best)):
            syms, f = splits[i], freqs[i]
            for pair in zip(syms, syms[1:]):
                pair_count[pair] -= f
                if pair_count[pair] <= 0:
                    del pair_count[pair]
                if pair != best:
                    pair_words[pair].discard(i)
            new: list[str] = []
            j = 0
            while j < len(syms):
                if j + 1 < len(syms) and syms[j] == x and syms[j + 1] == y:
                    new.append(merged)
                    sym_count[x] -= f
                    sym_count[y] -= f
                    sym_count[merged] += f
                    j += 2
                else:
                    new.append(syms[j])
                    j += 1
            splits[i] = new
            for pair in zip(new, new[1:]):
                pair_count[pair] += f
                pair_words[pair].add(i)
        pair_count.pop(best, None)
        if merged not in known:
            known.add(merged)
            tokens.append(merged)
    return Vocab(tokens)


def encode(text: str, vocab: Vocab, cfg: NormalizerConfig = NormalizerConfig(),
           max_len: int = 128) -> list[int]:
    """[CLS] + word pieces + [SEP], truncated to ``max_len`` keeping [SEP]."""
    if max_len < 3:
        raise ValueError(f"max_len must be >= 3, got {max_len}")
    ids = [CLS_ID]
    for word in normalize(text, cfg).split():
        ids.extend(vocab.word_pieces(word))
        if len(ids) >= max_len:
            break
    ids = ids[:max_len - 1]
    ids.append(SEP_ID)
    return ids


def encode_words(words: list[str], vocab: Vocab, cfg: NormalizerConfig = NormalizerConfig(),
                 max_len: int = 128) -> tuple[list[int], list[int]]:
    """Encode pre-split words; also return the position of each word's first
    piece (-1 for words cut off by truncation)."""
    ids = [CLS_ID]
    first: list[int] = []
    full = False
    for word in words:
        norm = normalize(word, cfg).replace(" ", "")
        pieces = vocab.word_pieces(norm) if norm else [UNK_ID]
        if full or len(ids) + len(pieces) > max_len - 1:
            full = True
            first.append(-1)
            continue
        first.append(len(ids))
        ids.extend(pieces)
    ids.append(SEP_ID)
    return ids, first


def decode(ids: Iterable[int], vocab: Vocab) -> str:
    words: list[str] = []
    for i in ids:
        if not 0 <= i < len(vocab):
            raise ValueError(f"token id {i} out of range for vocab of {len(vocab)}")
        if i < NUM_SPECIALS:
            continue
        tok = vocab.tokens[i]
        if tok.startswith(CONT) and words:
            words[-1] += tok[len(CONT):]
        else:
            words.append(tok[len(CONT):] if tok.startswith(CONT) else tok)
    return " ".join(words)
