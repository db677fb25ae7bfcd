"""Linear probes on frozen encoder representations for token tagging."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .corpus import TaggedCorpus
from .losses import hard_loss
from .model import MaskedLmModel
from .tokenizer import NormalizerConfig, Vocab, encode_words
from .tokenizer import PAD_ID


@dataclass
class Probe:
    weight: np.ndarray          # [hidden, num_tags]
    bias: np.ndarray            # [num_tags]
    tags: list[str]
    language: str | None = None

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.argmax(features @ self.weight + self.bias, axis=1)


@dataclass
class RunStats:
    runs: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.runs))

    @property
    def std(self) -> float:
        # sample standard deviation; a single run has no spread
        return float(np.std(self.runs, ddof=1)) if len(self.runs) > 1 else 0.0

    def as_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "runs": list(self.runs)}


@dataclass
class ProbeEval:
    accuracy: float
    macro_f1: float
    tokens: int
    skipped: int = 0


@dataclass
class ProbeResult:
    accuracy: RunStats
    macro_f1: RunStats
    skipped: int = 0

    @classmethod
    def from_evals(cls, evals: Sequence[ProbeEval]) -> "ProbeResult":
        return cls(RunStats([e.accuracy for e in evals]), RunStats([e.macro_f1 for e in evals]),
                   evals[0].skipped if evals else 0)

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy.as_dict(), "macro_f1": self.macro_f1.as_dict(),
                "skipped": self.skipped}


def macro_f1(gold: Sequence, pred: Sequence) -> float:
    """Per-token macro F1 over the classes present in ``gold``."""
    gold = np.asarray(gold)
    pred = np.asarray(pred)
    if gold.size == 0:
        raise ValueError("macro_f1: empty input")
    scores = []
    for c in np.unique(gold):
        tp = np.sum((gold == c) & (pred == c))
        n_pred = np.sum(pred == c)
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / np.sum(gold == c)
        scores.append(0.0 if tp == 0 else 2 * precision * recall / (precision + recall))
    return float(np.mean(scores))


def accuracy(gold: Sequence, pred: Sequence) -> float:
    gold = np.asarray(gold)
    if gold.size == 0:
        raise ValueError("accuracy: empty input")
    return float(np.mean(gold == np.asarray(pred)))


def features(model: MaskedLmModel, tagged: TaggedCorpus, vocab: Vocab,
             cfg: NormalizerConfig = NormalizerConfig(), batch_size: int = 32) -> tuple[np.ndarray, list[str]]:
    """First-sub-token final-layer vectors for every word that survives truncation."""
    max_len = model.config.max_seq_len
    encoded = [encode_words([w for w, _ in sent], vocab, cfg, max_len) for sent in tagged.sentences]
    vecs, labels = [], []
    for start in range(0, len(encoded), batch_size):
        chunk = encoded[start:start + batch_size]
        sents = tagged.sentences[start:start + batch_size]
        width = max(len(ids) for ids, _ in chunk)
        ids = np.full((len(chunk), width), PAD_ID, dtype=np.int64)
        for i, (row, _) in enumerate(chunk):
            ids[i, :len(row)] = row
        hidden = model.hidden_states(ids)
        for i, ((_, first), sent) in enumerate(zip(chunk, sents)):
            for pos, (_, tag) in zip(first, sent):
                if pos >= 0:
                    vecs.append(hidden[i, pos])
                    labels.append(tag)
    if not vecs:
        return np.zeros((0, model.config.hidden_dim), np.float32), []
    return np.stack(vecs).astype(np.float32), labels


def fit_probe(x: np.ndarray, labels: Sequence[str], tags: Sequence[str], seed: int,
              epochs: int = 20, lr: float = 1e-3, batch_size: int = 32,
              language: str | None = None) -> Probe:
    """Softmax regression with Adam (linear decay) for a fixed number of epochs."""
    tag_index = {t: i for i, t in enumerate(tags)}
    y = np.asarray([tag_index[t] for t in labels], dtype=np.int64)
    n, h = x.shape
    if n == 0:
        raise ValueError("fit_probe: no training tokens")
    rng = np.random.default_rng(seed)
    w = T.Tensor((rng.standard_normal((h, len(tags))) * 0.02).astype(np.float32), requires_grad=True)
    b = T.Tensor(np.zeros(len(tags), np.float32), requires_grad=True)
    steps = epochs * -(-n // batch_size)
    state = T.OptimizerState(total_steps=steps, base_lr=lr)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            logits = T.add(T.matmul(T.Tensor(x[idx]), w), b)
            T.backward(hard_loss(logits, y[idx]))
            T.adam_step([w, b], state)
    return Probe(w.data.copy(), b.data.copy(), list(tags), language)


def train_probe(model: MaskedLmModel, tagged: TaggedCorpus, vocab: Vocab, runs: int = 5, seed: int = 0,
                cfg: NormalizerConfig = NormalizerConfig(), epochs: int = 20, lr: float = 1e-3,
                batch_size: int = 32, feats: tuple[np.ndarray, list[str]] | None = None) -> list[Probe]:
    """``runs`` probes differing only in initialisation/shuffle seed (seed + r)."""
    if not tagged.sentences:
        raise ValueError("train_probe: empty tagged corpus")
    x, labels = feats if feats is not None else features(model, tagged, vocab, cfg)
    return [fit_probe(x, labels, tagged.tags, seed + r, epochs, lr, batch_size, tagged.language)
            for r in range(runs)]


def eval_features(probe: Probe, x: np.ndarray, labels: Sequence[str]) -> ProbeEval:
    index = {t: i for i, t in enumerate(probe.tags)}
    keep = [i for i, t in enumerate(labels) if t in index]
    skipped = len(labels) - len(keep)
    if not keep:
        raise ValueError("eval_probe: no evaluable tokens (tag sets disjoint or corpus empty)")
    gold = np.asarray([index[labels[i]] for i in keep])
    pred = probe.predict(x[keep])
    return ProbeEval(accuracy(gold, pred), macro_f1(gold, pred), len(keep), skipped)


def eval_probe(probe: Probe, model: MaskedLmModel, tagged: TaggedCorpus, vocab: Vocab,
               cfg: NormalizerConfig = NormalizerConfig()) -> ProbeEval:
    x, labels = features(model, tagged, vocab, cfg)
    return eval_features(probe, x, labels)


@dataclass
class ProbeMatrix:
    languages: list[str]
    cells: dict[tuple[str, str], ProbeResult] = field(default_factory=dict)

    def __getitem__(self, key: tuple[str, str]) -> ProbeResult:
        return self.cells[key]

    def __contains__(self, key) -> bool:
        return key in self.cells

    def __len__(self) -> int:
        return len(self.cells)

    def in_lang(self, lang: str) -> ProbeResult:
        return self.cells[(lang, lang)]


def probe_matrix(model: MaskedLmModel, corpora: Mapping[str, TaggedCorpus], vocab: Vocab,
                 languages: Sequence[str] | None = None, runs: int = 5, seed: int = 0,
                 normalizers: Mapping[str, NormalizerConfig] | None = None, epochs: int = 20,
                 lr: float = 1e-3, batch_size: int = 32, test_fraction: float = 0.2) -> ProbeMatrix:
    """Train on each source language's train split, test on every language's
    test split: diagonal = in-language, off-diagonal = zero-shot."""
    languages = list(languages or corpora)
    normalizers = normalizers or {}
    train_feats, test_feats, splits = {}, {}, {}
    for lang in languages:
        train, test = corpora[lang].split(test_fraction)
        cfg = normalizers.get(lang, NormalizerConfig())
        splits[lang] = train
        train_feats[lang] = features(model, train, vocab, cfg)
        test_feats[lang] = features(model, test, vocab, cfg)
    out = ProbeMatrix(languages)
    for src in languages:
        probes = train_probe(model, splits[src], vocab, runs, seed, epochs=epochs, lr=lr,
                             batch_size=batch_size, feats=train_feats[src])
        for tgt in languages:
            x, labels = test_feats[tgt]
            out.cells[(src, tgt)] = ProbeResult.from_evals([eval_features(p, x, labels) for p in probes])
    return out
