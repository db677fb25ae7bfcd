"""Per-language corpora: loading, truncation balancing, batching, tagged
data, and a synthetic multilingual world for desk-scale experiments."""
from __future__ import annotations

import hashlib
import logging
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .losses import MaskedBatch, apply_masking, collate
from .tokenizer import NormalizerConfig, Vocab, encode, normalize

log = logging.getLogger(__name__)


class CorpusError(ValueError):
    pass


@dataclass
class CorpusSet:
    languages: list[str]
    sentences: dict[str, list[str]]
    # character budget recorded by balance(); None for unbalanced corpora
    char_budget: int | None = None

    def __post_init__(self):
        if len(set(self.languages)) != len(self.languages):
            raise CorpusError(f"duplicate language ids in {self.languages}")
        missing = [l for l in self.languages if l not in self.sentences]
        if missing:
            raise CorpusError(f"no sentences for languages {missing}")

    @property
    def balanced(self) -> bool:
        return self.char_budget is not None

    @property
    def char_counts(self) -> dict[str, int]:
        return {l: sum(len(s) for s in self.sentences[l]) for l in self.languages}

    def subset(self, languages: Sequence[str]) -> "CorpusSet":
        return CorpusSet(list(languages), {l: list(self.sentences[l]) for l in languages}, self.char_budget)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for lang in self.languages:
            h.update(lang.encode("utf-8") + b"\x00")
            for s in self.sentences[lang]:
                h.update(s.encode("utf-8") + b"\n")
            h.update(b"\x01")
        return h.hexdigest()


@dataclass
class TaggedCorpus:
    sentences: list[list[tuple[str, str]]]
    tags: list[str]
    language: str | None = None

    def __post_init__(self):
        known = set(self.tags)
        for i, sent in enumerate(self.sentences):
            for tok, tag in sent:
                if tag not in known:
                    raise CorpusError(f"sentence {i}: tag {tag!r} not in tag set")

    def split(self, test_fraction: float = 0.2) -> tuple["TaggedCorpus", "TaggedCorpus"]:
        """Deterministic head/tail split; the two halves share no sentences."""
        n_test = max(1, int(round(len(self.sentences) * test_fraction)))
        if n_test >= len(self.sentences):
            raise CorpusError("tagged corpus too small to split")
        cut = len(self.sentences) - n_test
        return (TaggedCorpus(self.sentences[:cut], self.tags, self.language),
                TaggedCorpus(self.sentences[cut:], self.tags, self.language))


# ---------------------------------------------------------------- plain text

def read_sentences(path) -> list[str]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc.strerror}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusError(f"{path}: invalid UTF-8 at byte {exc.start}") from None
    return [line for line in text.splitlines() if line.strip()]


def load_corpus(paths: Mapping[str, str | Path]) -> CorpusSet:
    """One sentence per line; empty lines dropped; language order preserved."""
    sentences = {}
    for lang, path in paths.items():
        sents = read_sentences(path)
        if not sents:
            raise CorpusError(f"language {lang!r}: corpus {path} is empty")
        sentences[lang] = sents
    return CorpusSet(list(paths), sentences)


def write_sentences(sentences: Sequence[str], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(s + "\n" for s in sentences), encoding="utf-8")


def _fill(sents: Sequence[str], budget: int, rng: np.random.Generator, lang: str) -> list[str]:
    taken, total = [], 0
    for i in rng.permutation(len(sents)):
        n = len(sents[i])
        if total + n > budget:
            continue
        taken.append(sents[i])
        total += n
    if not taken:
        raise CorpusError(f"cannot truncate: no sentence of {lang!r} fits the {budget}-character budget")
    return taken


def subsample(corpora: CorpusSet, budget: int, rng: np.random.Generator) -> CorpusSet:
    """Truncate every language to at most ``budget`` characters.

    Each over-budget language is shuffled and filled sentence by sentence,
    skipping any sentence that would overflow the budget. Languages already within
    budget pass through untouched. The budget is recorded on the result.
    """
    if budget <= 0:
        raise CorpusError(f"character budget must be positive, got {budget}")
    counts = corpora.char_counts
    empty = [l for l, c in counts.items() if c == 0 or not corpora.sentences[l]]
    if empty:
        raise CorpusError(f"cannot truncate: empty languages {empty}")
    out = {lang: list(corpora.sentences[lang]) if counts[lang] <= budget
           else _fill(corpora.sentences[lang], budget, rng, lang)
           for lang in corpora.languages}
    return CorpusSet(list(corpora.languages), out, budget)


def balance(corpora: CorpusSet, rng: np.random.Generator) -> CorpusSet:
    """Truncate every language to the smallest language's character count
    (see :func:`subsample`). The budget is recorded on the result, so
    re-balancing a balanced corpus is a no-op."""
    counts = corpora.char_counts
    empty = [l for l, c in counts.items() if c == 0 or not corpora.sentences[l]]
    if empty:
        raise CorpusError(f"cannot balance: empty languages {empty}")
    budget = corpora.char_budget if corpora.char_budget is not None else min(counts.values())
    return subsample(corpora, budget, rng)


def _split_key(seed: int, lang: str, sentence: str) -> float:
    digest = hashlib.sha256(f"{seed}\x00{lang}\x00{sentence}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") / 2.0 ** 64


def split_dev_test(corpora: CorpusSet, seed: int, dev_fraction: float = 0.05,
                   test_fraction: float = 0.05) -> tuple[CorpusSet, CorpusSet, CorpusSet]:
    """(train, dev, test) by a seeded hash of each sentence. A zero fraction
    leaves that part empty."""
    parts = ({}, {}, {})
    for lang in corpora.languages:
        train, dev, test = [], [], []
        for s in corpora.sentences[lang]:
            u = _split_key(seed, lang, s)
            (dev if u < dev_fraction else test if u < dev_fraction + test_fraction else train).append(s)
        if not train or (dev_fraction > 0 and not dev) or (test_fraction > 0 and not test):
            raise CorpusError(f"language {lang!r}: too few sentences for a dev/test carve-out")
        for part, sents in zip(parts, (train, dev, test)):
            part[lang] = sents
    langs = list(corpora.languages)
    return CorpusSet(langs, parts[0]), CorpusSet(langs, parts[1]), CorpusSet(langs, parts[2])


# ---------------------------------------------------------------- batching

class Batcher:
    """Encodes a corpus once and deals out masked, monolingual batches."""

    def __init__(self, corpus: CorpusSet, vocab: Vocab, batch_size: int = 8, max_len: int = 128,
                 mask_rate: float = 0.15, normalizers: Mapping[str, NormalizerConfig] | None = None,
                 corrupt: bool = True):
        if batch_size <= 0:
            raise ValueError(f"batch_size must be positive, got {batch_size}")
        self.corpus = corpus
        self.vocab_size = len(vocab)
        self.batch_size = batch_size
        self.mask_rate = mask_rate
        self.corrupt = corrupt
        self.skipped: dict[str, int] = {}
        self.encoded: dict[str, list[list[int]]] = {}
        normalizers = normalizers or {}
        for lang in corpus.languages:
            cfg = normalizers.get(lang, NormalizerConfig())
            keep, skipped = [], 0
            for s in corpus.sentences[lang]:
                ids = encode(s, vocab, cfg, max_len)
                if len(ids) <= 2:
                    skipped += 1
                    continue
                keep.append(ids)
            self.encoded[lang] = keep
            self.skipped[lang] = skipped
            if skipped:
                log.info("%s: skipped %d sentences that encode to specials only", lang, skipped)

    def chunks(self, rng: np.random.Generator) -> list[tuple[str, np.ndarray]]:
        chunks = []
        for lang in self.corpus.languages:
            order = rng.permutation(len(self.encoded[lang]))
            for start in range(0, len(order), self.batch_size):
                chunks.append((lang, order[start:start + self.batch_size]))
        return [chunks[i] for i in rng.permutation(len(chunks))]

    def num_batches(self) -> int:
        return sum(-(-len(v) // self.batch_size) for v in self.encoded.values())

    def epoch(self, rng: np.random.Generator) -> list[MaskedBatch]:
        batches = []
        for lang, idx in self.chunks(rng):
            seqs = [apply_masking(self.encoded[lang][i], self.mask_rate, rng, self.vocab_size,
                                  lang, self.corrupt) for i in idx]
            batches.append(collate(seqs, lang, [int(i) for i in idx]))
        return batches


def make_batches(corpus: CorpusSet, vocab: Vocab, batch_size: int = 8, max_len: int = 128,
                 rng: np.random.Generator | None = None, mask_rate: float = 0.15,
                 normalizers: Mapping[str, NormalizerConfig] | None = None) -> list[MaskedBatch]:
    rng = rng if rng is not None else np.random.default_rng(0)
    return Batcher(corpus, vocab, batch_size, max_len, mask_rate, normalizers).epoch(rng)


# ---------------------------------------------------------------- CoNLL

def load_conll(path, language: str | None = None) -> TaggedCorpus:
    """Two whitespace-separated columns (token, tag); blank line ends a sentence."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc.strerror}") from None
    sentences, current, tags = [], [], set()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            if current:
                sentences.append(current)
                current = []
            continue
        cols = line.split()
        if len(cols) != 2:
            raise CorpusError(f"{path}:{lineno}: expected 2 columns, got {len(cols)}")
        current.append((cols[0], cols[1]))
        tags.add(cols[1])
    if current:
        sentences.append(current)
    if not sentences:
        raise CorpusError(f"{path}: no tagged sentences")
    return TaggedCorpus(sentences, sorted(tags), language)


def write_conll(tagged: TaggedCorpus, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for sent in tagged.sentences:
            for tok, tag in sent:
                fh.write(f"{tok}\t{tag}\n")
            fh.write("\n")


# ---------------------------------------------------------------- synthetic world

@dataclass
class SyntheticLangSpec:
    """A toy language: Zipfian unigrams, a seeded sparse bigram chain, and
    word surface forms rendered in a code-point range ("script")."""
    name: str
    vocab_size: int = 300
    zipf_exponent: float = 1.1
    bigram_seed: int = 0
    script_offset: int = 0x61
    overlap: float = 0.0
    reference: str | None = None
    tag_arity: int = 4
    alphabet_size: int = 16
    successors: int = 4
    chain_weight: float = 0.85
    min_words: int = 6
    max_words: int = 14

    def shared_types(self) -> int:
        n = self.overlap * self.vocab_size
        if not 0.0 <= self.overlap <= 1.0 or abs(n - round(n)) > 1e-9:
            raise CorpusError(f"{self.name}: overlap {self.overlap} x vocab {self.vocab_size} "
                              f"is not an integer count of word types")
        return int(round(n))


def script_alphabet(offset: int, size: int) -> list[str]:
    """First ``size`` lowercase letters at or after ``offset`` that survive
    normalisation unchanged."""
    out, cp = [], offset
    while len(out) < size:
        if cp > 0x10FFFF:
            raise CorpusError(f"script offset {offset:#x} has fewer than {size} usable letters")
        c = chr(cp)
        if (c.isalpha() and c.lower() == c and unicodedata.normalize("NFD", c) == c
                and normalize(c) == c):
            out.append(c)
        cp += 1
    return out


def _surface_forms(spec: SyntheticLangSpec, seed: int, reference_forms: list[str] | None) -> list[str]:
    rng = np.random.default_rng([seed, spec.bigram_seed, spec.script_offset, 1])
    alphabet = script_alphabet(spec.script_offset, spec.alphabet_size)
    shared = spec.shared_types()
    forms: list[str] = list(reference_forms[:shared]) if shared else []
    used = set(forms)
    while len(forms) < spec.vocab_size:
        length = int(rng.integers(2, 8))
        form = "".join(alphabet[i] for i in rng.integers(0, len(alphabet), size=length))
        if form not in used:
            used.add(form)
            forms.append(form)
    return forms


def surface_forms(specs: Sequence[SyntheticLangSpec], seed: int) -> dict[str, list[str]]:
    """Word-type inventory per language, word id -> surface string."""
    out: dict[str, list[str]] = {}
    for spec in specs:
        if spec.name in out:
            raise CorpusError(f"duplicate synthetic language {spec.name!r}")
        shared = spec.shared_types()
        ref_forms = None
        if shared:
            if spec.reference not in out:
                raise CorpusError(f"{spec.name}: reference language {spec.reference!r} must precede it")
            ref_forms = out[spec.reference]
            if shared > len(ref_forms):
                raise CorpusError(f"{spec.name}: {shared} shared types exceed reference vocabulary "
                                  f"of {len(ref_forms)}")
        out[spec.name] = _surface_forms(spec, seed, ref_forms)
    return out


def _transition_cdf(spec: SyntheticLangSpec, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([seed, spec.bigram_seed, 2])
    v = spec.vocab_size
    unigram = 1.0 / np.arange(1, v + 1) ** spec.zipf_exponent
    unigram /= unigram.sum()
    trans = np.tile((1.0 - spec.chain_weight) * unigram, (v, 1))
    k = min(spec.successors, v)
    weights = 1.0 / np.arange(1, k + 1)
    weights /= weights.sum()
    for i in range(v):
        succ = rng.choice(v, size=k, replace=False, p=unigram)
        trans[i, succ] += spec.chain_weight * weights
    cdf = np.cumsum(trans, axis=1)
    cdf[:, -1] = 1.0
    ucdf = np.cumsum(unigram)
    ucdf[-1] = 1.0
    return ucdf, cdf


def _sample_sentence(rng: np.random.Generator, spec: SyntheticLangSpec, ucdf, cdf) -> list[int]:
    n = int(rng.integers(spec.min_words, spec.max_words + 1))
    u = rng.random(n)
    words = [int(np.searchsorted(ucdf, u[0], side="right"))]
    for x in u[1:]:
        words.append(int(np.searchsorted(cdf[words[-1]], x, side="right")))
    return words


def _sample_text(rng, spec: SyntheticLangSpec, forms, ucdf, cdf, target: int) -> list[str]:
    sents, total = [], 0
    while True:
        text = " ".join(forms[w] for w in _sample_sentence(rng, spec, ucdf, cdf))
        if total + len(text) > target:
            return sents
        sents.append(text)
        total += len(text)


def gen_heldout(specs: Sequence[SyntheticLangSpec], chars_per_lang: Sequence[int], seed: int) -> CorpusSet:
    """Extra text from the same languages as :func:`gen_synthetic` with the
    same seed, drawn from an independent stream (for evaluation)."""
    if len(specs) != len(chars_per_lang):
        raise CorpusError(f"{len(specs)} specs but {len(chars_per_lang)} sizes")
    forms_by_lang = surface_forms(specs, seed)
    out = {}
    for idx, (spec, target) in enumerate(zip(specs, chars_per_lang)):
        ucdf, cdf = _transition_cdf(spec, seed)
        out[spec.name] = _sample_text(np.random.default_rng([seed, idx, 5]), spec, forms_by_lang[spec.name],
                                      ucdf, cdf, target)
    return CorpusSet([s.name for s in specs], out)


def gen_synthetic(specs: Sequence[SyntheticLangSpec], chars_per_lang: Sequence[int], seed: int,
                  tagged_sentences: int = 200) -> tuple[CorpusSet, dict[str, TaggedCorpus]]:
    """Sample a synthetic multilingual corpus and tagged probing data.

    Word id ``w`` carries tag ``w mod tag_arity``; the first
    ``overlap * vocab_size`` ids copy the reference language's surface forms
    (and hence its tags).
    """
    if len(specs) != len(chars_per_lang):
        raise CorpusError(f"{len(specs)} specs but {len(chars_per_lang)} sizes")
    forms_by_lang = surface_forms(specs, seed)
    sentences: dict[str, list[str]] = {}
    tagged: dict[str, TaggedCorpus] = {}
    for idx, (spec, target) in enumerate(zip(specs, chars_per_lang)):
        forms = forms_by_lang[spec.name]
        ucdf, cdf = _transition_cdf(spec, seed)

        sentences[spec.name] = _sample_text(np.random.default_rng([seed, idx, 3]), spec, forms, ucdf, cdf, target)

        trng = np.random.default_rng([seed, idx, 4])
        tagset = [f"T{t}" for t in range(spec.tag_arity)]
        rows = []
        for _ in range(tagged_sentences):
            rows.append([(forms[w], tagset[w % spec.tag_arity])
                         for w in _sample_sentence(trng, spec, ucdf, cdf)])
        tagged[spec.name] = TaggedCorpus(rows, tagset, spec.name)
    return CorpusSet([s.name for s in specs], sentences), tagged

