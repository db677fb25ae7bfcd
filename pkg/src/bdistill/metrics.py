"""Evaluation formulas: MRR, balanced multilingual score, zero-shot
transfer, averaged cross-lingual transfer, and the two hypothesis checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from typing import Mapping, Sequence

import numpy as np

from .corpus import CorpusSet
from .losses import apply_masking, collate
from .model import MaskedLmModel
from .tokenizer import NormalizerConfig, Vocab, encode


def reciprocal_ranks(logits: np.ndarray, golds: np.ndarray) -> np.ndarray:
    """1 / (1 + #tokens scoring strictly above the gold token), per row."""
    logits = np.asarray(logits)
    golds = np.asarray(golds, dtype=np.int64)
    gold_scores = logits[np.arange(len(golds)), golds]
    ranks = 1 + (logits > gold_scores[:, None]).sum(axis=1)
    return 1.0 / ranks


def mrr_from_ranks(ranks: Sequence[int]) -> float:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("mrr: no ranked positions")
    return float(np.mean(1.0 / ranks))


def masked_eval_batches(corpus: CorpusSet, language: str, vocab: Vocab, seed: int,
                        cfg: NormalizerConfig = NormalizerConfig(), mask_rate: float = 0.15,
                        max_len: int = 128, batch_size: int = 32):
    """Deterministic all-[MASK] evaluation batches for one language."""
    rng = np.random.default_rng([seed, 0xE7A1])
    seqs = []
    for s in corpus.sentences[language]:
        ids = encode(s, vocab, cfg, max_len)
        if len(ids) > 2:
            seqs.append(apply_masking(ids, mask_rate, rng, len(vocab), language, corrupt=False))
    return [collate(seqs[i:i + batch_size], language) for i in range(0, len(seqs), batch_size)]


def mrr(model: MaskedLmModel, test_corpus: CorpusSet, vocab: Vocab, seed: int,
        language: str | None = None, cfg: NormalizerConfig = NormalizerConfig(),
        mask_rate: float = 0.15, max_len: int = 128, batches=None) -> float:
    """Mean reciprocal rank of gold tokens at masked positions of one language.

    Pass precomputed ``batches`` (from :func:`masked_eval_batches`) to score
    several models on identical masks without re-encoding.
    """
    if language is None:
        if len(test_corpus.languages) != 1:
            raise ValueError("mrr needs a single-language test corpus or an explicit language")
        language = test_corpus.languages[0]
    if batches is None:
        batches = masked_eval_batches(test_corpus, language, vocab, seed, cfg, mask_rate,
                                      min(max_len, model.config.max_seq_len))
    rr = [reciprocal_ranks(model.predict_logits(b.input_ids, b.positions), b.golds) for b in batches]
    if not rr or sum(len(r) for r in rr) == 0:
        raise ValueError(f"mrr: no masked positions in the {language!r} test set")
    return float(np.mean(np.concatenate(rr)))


# ---------------------------------------------------------------- score tables

@dataclass
class ScoreTable:
    """S_M(l) for multilingual models plus the monolingual gold standard per language."""
    scores: dict[tuple[str, str], float] = field(default_factory=dict)
    gold: dict[str, float] = field(default_factory=dict)

    def set(self, model_id: str, language: str, value: float) -> None:
        self.scores[(model_id, language)] = float(value)


def balanced_score(table: ScoreTable, model_id: str, languages: Sequence[str]) -> float:
    """Mean over languages of (model score - monolingual gold score); higher is better.

    Scores are summed as decimals of their shortest round-trip repr, so
    fixtures such as (0.4 - 0.6 + 0.1 - 0.2) / 2 come out as exactly -0.15.
    """
    if not languages:
        raise ValueError("balanced_score: empty language set")
    diffs = []
    for lang in languages:
        if (model_id, lang) not in table.scores:
            raise KeyError(f"balanced_score: no score for model {model_id!r} on {lang!r}")
        if lang not in table.gold:
            raise KeyError(f"balanced_score: no monolingual gold score for {lang!r}")
        diffs.append(Decimal(repr(float(table.scores[(model_id, lang)])))
                     - Decimal(repr(float(table.gold[lang]))))
    return float(sum(diffs) / len(diffs))


TransferMatrix = Mapping[tuple[str, str], float]


def _score_of(cell, metric: str) -> float:
    if isinstance(cell, (int, float, np.floating)):
        return float(cell)
    return float(getattr(cell, metric).mean)


def transfer_score(results: Mapping, l1: str, l2: str, metric: str = "accuracy") -> float:
    """Zero-shot score on ``l2`` of a probe trained on ``l1``."""
    if l1 == l2:
        raise ValueError(f"transfer_score: source and target are both {l1!r}")
    if (l1, l2) not in results:
        raise KeyError(f"transfer_score: no probe result for {l1!r} -> {l2!r}")
    return _score_of(results[(l1, l2)], metric)


def transfer_matrix(results: Mapping, languages: Sequence[str], metric: str = "accuracy") -> dict:
    return {(a, b): transfer_score(results, a, b, metric) for a in languages for b in languages if a != b}


def avg_cross_lingual(matrix: TransferMatrix, languages: Sequence[str]) -> float:
    """Average of Z(l1, l2) over all ordered pairs with l1 != l2."""
    n = len(languages)
    if n < 2:
        raise ValueError("avg_cross_lingual needs at least two languages")
    total = 0.0
    for a in languages:
        for b in languages:
            if a == b:
                continue
            if (a, b) not in matrix:
                raise KeyError(f"avg_cross_lingual: missing cell {a!r} -> {b!r}")
            total += matrix[(a, b)]
    return total / (n * n - n)


@dataclass
class ModelSummary:
    languages: list[str]
    balanced: float
    cross_lingual: float | None = None


def compare_hypotheses(baseline: ModelSummary, student: ModelSummary,
                       languages: Sequence[str] | None = None) -> dict:
    """Check B(baseline) <= B(student) and C_Z(baseline) <= C_Z(student).

    Margins are student minus baseline, so a non-negative margin means the
    hypothesis holds.
    """
    if set(baseline.languages) != set(student.languages):
        raise ValueError(f"language sets differ: {baseline.languages} vs {student.languages}")
    if languages is not None and set(languages) != set(baseline.languages):
        raise ValueError(f"reports cover {baseline.languages}, asked for {list(languages)}")
    margin_b = student.balanced - baseline.balanced
    out = {"balanced": {"holds": bool(baseline.balanced <= student.balanced), "margin": margin_b}}
    if baseline.cross_lingual is not None and student.cross_lingual is not None:
        margin_z = student.cross_lingual - baseline.cross_lingual
        out["transfer"] = {"holds": bool(baseline.cross_lingual <= student.cross_lingual),
                           "margin": margin_z}
    return out
