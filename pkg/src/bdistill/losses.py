"""Hard-label cross-entropy, soft-label KL distillation, and MLM masking."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .tokenizer import CLS_ID, MASK_ID, NUM_SPECIALS, PAD_ID, SEP_ID, UNK_ID

_SPECIAL_IDS = np.array([PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID])


def hard_loss(logits: Tensor, golds) -> Tensor:
    """Mean of -log softmax(logits)[gold] over mask positions (nats)."""
    golds = np.asarray(golds, dtype=np.int64)
    if logits.shape[0] == 0:
        raise ValueError("hard_loss: no mask positions (mean undefined)")
    if golds.shape != (logits.shape[0],):
        raise ValueError(f"hard_loss: {golds.shape[0] if golds.ndim else 0} golds for {logits.shape[0]} rows")
    return T.neg(T.mean(T.pick(T.log_softmax(logits), golds)))


def soft_loss(logits: Tensor, targets, temperature: float = 1.0) -> Tensor:
    """Mean over positions of KL(target || softmax(logits / temperature)).

    Zero-probability target entries contribute nothing.
    """
    targets = np.asarray(targets)
    if targets.ndim != 2 or targets.shape[0] != logits.shape[0]:
        raise ValueError(f"soft_loss: target rows {targets.shape} do not match logits {logits.shape}")
    if targets.shape[1] != logits.shape[1]:
        raise ValueError(f"soft_loss: target width {targets.shape[1]} != vocab {logits.shape[1]}")
    n = logits.shape[0]
    if n == 0:
        raise ValueError("soft_loss: no mask positions (mean undefined)")
    if temperature != 1.0:
        logits = T.scale(logits, 1.0 / temperature)
    p = targets.astype(logits.dtype)
    safe = np.where(p > 0, p, 1.0)
    neg_entropy = float(np.sum(p * np.log(safe), dtype=np.float64)) / n
    cross = T.scale(T.sum(T.mul(T.log_softmax(logits), Tensor(p))), -1.0 / n)
    return T.add(cross, neg_entropy)


def softmax_rows(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class MaskedSequence:
    """One corrupted sequence: inputs, masked positions and their gold ids."""
    input_ids: list[int]
    positions: list[int]
    golds: list[int]
    language: str | None = None


@dataclass
class MaskedBatch:
    input_ids: np.ndarray                 # [batch, seq], PAD-filled
    positions: list[list[int]]            # per-sequence masked positions
    golds: np.ndarray                     # flat, ordered like positions
    language: str | None = None
    sentence_ids: list[int] = field(default_factory=list)

    @property
    def num_masks(self) -> int:
        return int(self.golds.shape[0])


def n_to_mask(n: int, rate: float) -> int:
    # round() guards against float noise such as 0.15 * 100 = 15.000000000000002
    return max(1, math.ceil(round(rate * n, 9)))


def apply_masking(token_ids, rate: float, rng: np.random.Generator, vocab_size: int,
                  language: str | None = None, corrupt: bool = True) -> MaskedSequence:
    """Select ceil(rate * n) of the n non-special positions; 80% -> [MASK],
    10% -> random non-special id, 10% kept (per-position draw).

    ``corrupt=False`` replaces every selected position by [MASK].
    """
    ids = list(int(i) for i in token_ids)
    candidates = [i for i, t in enumerate(ids) if t not in _SPECIAL_IDS]
    if not candidates:
        raise ValueError("apply_masking: sequence has no non-special tokens")
    k = min(len(candidates), n_to_mask(len(candidates), rate))
    chosen = np.sort(rng.choice(len(candidates), size=k, replace=False))
    positions = [candidates[c] for c in chosen]
    golds = [ids[p] for p in positions]
    out = list(ids)
    for p in positions:
        u = rng.random()
        if not corrupt or u < 0.8:
            out[p] = MASK_ID
        elif u < 0.9:
            out[p] = int(rng.integers(NUM_SPECIALS, vocab_size))
    return MaskedSequence(out, positions, golds, language)


def collate(seqs: list[MaskedSequence], language: str | None = None,
            sentence_ids: list[int] | None = None) -> MaskedBatch:
    width = max(len(s.input_ids) for s in seqs)
    ids = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, :len(s.input_ids)] = s.input_ids
    golds = np.asarray([g for s in seqs for g in s.golds], dtype=np.int64)
    return MaskedBatch(ids, [list(s.positions) for s in seqs], golds,
                       language if language is not None else seqs[0].language,
                       list(sentence_ids or []))
