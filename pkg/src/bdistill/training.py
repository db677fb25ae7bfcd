"""Training loops for the four model kinds: monolingual teachers, HL (all
data, hard labels), HL-balanced (truncated data, hard labels) and the
distilled student (truncated data, teacher soft labels)."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import tensor as T
from .corpus import Batcher, CorpusSet
from .losses import MaskedBatch, hard_loss, soft_loss, softmax_rows
from .model import MaskedLmModel
from .tokenizer import NormalizerConfig, Vocab

log = logging.getLogger(__name__)

MODES = ("teacher", "hl", "hl_balanced", "student")


@dataclass
class TrainPlan:
    mode: str
    epochs: int = 10
    batch_size: int = 8
    base_lr: float = 5e-5
    patience: int = 2
    seed: int = 0
    alpha: float = 0.0
    temperature: float = 1.0
    mask_rate: float = 0.15
    max_len: int = 128
    mono_distill_lr_factor: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown training mode {self.mode!r}; expected one of {MODES}")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass
class TeacherRegistry:
    """Language id -> frozen monolingual teacher."""
    teachers: dict[str, MaskedLmModel]

    def __getitem__(self, lang: str) -> MaskedLmModel:
        try:
            return self.teachers[lang]
        except KeyError:
            raise KeyError(f"no teacher registered for language {lang!r}") from None

    def __len__(self) -> int:
        return len(self.teachers)

    def check(self, languages, vocab_size: int) -> None:
        for lang in languages:
            teacher = self[lang]
            if teacher.config.vocab_size != vocab_size:
                raise ValueError(f"teacher for {lang!r} has vocab {teacher.config.vocab_size}, "
                                 f"student has {vocab_size}")


@dataclass
class TrainResult:
    model: MaskedLmModel
    train_loss: list[float] = field(default_factory=list)   # per epoch
    batch_loss: list[float] = field(default_factory=list)
    dev_loss: list[float] = field(default_factory=list)     # per evaluated epoch
    lr_trace: list[float] = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0
    total_steps: int = 0
    skipped_sentences: dict[str, int] = field(default_factory=dict)

    def history(self) -> dict:
        return {"train_loss": self.train_loss, "dev_loss": self.dev_loss, "best_epoch": self.best_epoch,
                "epochs_run": self.epochs_run, "total_steps": self.total_steps,
                "skipped_sentences": self.skipped_sentences}


def teacher_targets(teacher: MaskedLmModel, batch: MaskedBatch, temperature: float = 1.0) -> np.ndarray:
    """Teacher probability rows at the batch's mask positions (inference mode)."""
    logits = teacher.predict_logits(batch.input_ids, batch.positions)
    return softmax_rows(logits, temperature).astype(np.float32)


def batch_loss(model: MaskedLmModel, batch: MaskedBatch, targets: np.ndarray | None = None,
               alpha: float = 0.0, temperature: float = 1.0) -> T.Tensor:
    """Hard loss when ``targets`` is None, else (1 - alpha) * soft + alpha * hard."""
    logits = model.forward_mlm(batch.input_ids, batch.positions)
    if targets is None:
        return hard_loss(logits, batch.golds)
    soft = soft_loss(logits, targets, temperature)
    if alpha == 0.0:
        return soft
    return T.add(T.scale(soft, 1.0 - alpha), T.scale(hard_loss(logits, batch.golds), alpha))


def dev_batches(dev: CorpusSet, vocab: Vocab, plan: TrainPlan,
                normalizers: Mapping[str, NormalizerConfig] | None) -> list[MaskedBatch]:
    batcher = Batcher(dev, vocab, plan.batch_size, plan.max_len, plan.mask_rate, normalizers)
    return batcher.epoch(np.random.default_rng([plan.seed, 0xDE5]))


def evaluate_dev_loss(model: MaskedLmModel, batches: list[MaskedBatch],
                      teachers: TeacherRegistry | None = None, temperature: float = 1.0) -> float:
    """Mask-weighted mean loss over the dev batches (hard, or soft when
    teachers are given), dropout off."""
    was = model.training
    model.eval()
    total, n = 0.0, 0
    try:
        with T.no_grad():
            for b in batches:
                targets = teacher_targets(teachers[b.language], b, temperature) if teachers else None
                total += batch_loss(model, b, targets, 0.0, temperature).item() * b.num_masks
                n += b.num_masks
    finally:
        model.train(was)
    if n == 0:
        raise ValueError("dev set produced no masked positions")
    return total / n


def _fit(model: MaskedLmModel, corpus: CorpusSet, plan: TrainPlan, vocab: Vocab,
         dev: CorpusSet | None, normalizers, teachers: TeacherRegistry | None,
         base_lr: float) -> TrainResult:
    batcher = Batcher(corpus, vocab, plan.batch_size, plan.max_len, plan.mask_rate, normalizers)
    steps_per_epoch = batcher.num_batches()
    if steps_per_epoch == 0:
        raise ValueError("training corpus yields no batches")
    params = model.parameters()
    state = T.OptimizerState(total_steps=plan.epochs * steps_per_epoch, base_lr=base_lr,
                             beta1=plan.beta1, beta2=plan.beta2, epsilon=plan.epsilon)
    result = TrainResult(model, total_steps=state.total_steps, skipped_sentences=dict(batcher.skipped))
    dev_set = dev_batches(dev, vocab, plan, normalizers) if dev is not None else None
    model.rng = np.random.default_rng([plan.seed, 0xD0])

    best_loss, best_state, bad = np.inf, None, 0
    for epoch in range(1, plan.epochs + 1):
        model.train()
        losses = []
        for batch in batcher.epoch(np.random.default_rng([plan.seed, epoch])):
            targets = (teacher_targets(teachers[batch.language], batch, plan.temperature)
                       if teachers is not None else None)
            loss = batch_loss(model, batch, targets, plan.alpha, plan.temperature)
            T.backward(loss)
            result.lr_trace.append(T.adam_step(params, state))
            losses.append(loss.item())
        model.eval()
        result.batch_loss.extend(losses)
        result.train_loss.append(float(np.mean(losses)))
        result.epochs_run = epoch
        if dev_set is None:
            continue
        d = evaluate_dev_loss(model, dev_set, teachers, plan.temperature)
        result.dev_loss.append(d)
        log.info("%s epoch %d: train %.4f dev %.4f", plan.mode, epoch, result.train_loss[-1], d)
        if d < best_loss:
            best_loss, best_state, bad = d, model.state(), 0
            result.best_epoch = epoch
        else:
            bad += 1
            if bad > plan.patience:
                break
    if best_state is not None:
        model.load_state(best_state)
    else:
        result.best_epoch = result.epochs_run
    model.eval()
    return result


def train_hard(model: MaskedLmModel, corpus: CorpusSet, plan: TrainPlan, vocab: Vocab,
               dev: CorpusSet | None = None,
               normalizers: Mapping[str, NormalizerConfig] | None = None) -> TrainResult:
    """Hard-label MLM training with Adam, linear decay and early stopping on
    ``dev`` loss; the best-dev parameters are restored into ``model``."""
    if plan.mode == "student":
        raise ValueError("train_hard: mode 'student' needs distill()")
    if plan.mode == "teacher" and len(corpus.languages) != 1:
        raise ValueError(f"teacher mode needs a single-language corpus, got {corpus.languages}")
    if plan.mode == "hl" and corpus.balanced:
        raise ValueError("hl mode trains on the full (unbalanced) corpus")
    if plan.mode == "hl_balanced" and not corpus.balanced:
        raise ValueError("hl_balanced mode needs a balanced corpus (see corpus.balance)")
    if model.config.vocab_size != len(vocab):
        raise ValueError(f"model vocab {model.config.vocab_size} != vocab size {len(vocab)}")
    return _fit(model, corpus, plan, vocab, dev, normalizers, None, plan.base_lr)


def distill(student: MaskedLmModel, teachers: TeacherRegistry | Mapping[str, MaskedLmModel],
            corpus: CorpusSet, plan: TrainPlan, vocab: Vocab, dev: CorpusSet | None = None,
            normalizers: Mapping[str, NormalizerConfig] | None = None) -> TrainResult:
    """Soft-label training against the teacher of each batch's language.

    With a single language the learning rate is scaled by
    ``plan.mono_distill_lr_factor``.
    """
    if plan.mode != "student":
        raise ValueError(f"distill needs plan.mode == 'student', got {plan.mode!r}")
    if len(corpus.languages) > 1 and not corpus.balanced:
        raise ValueError("distill needs a balanced corpus (see corpus.balance)")
    if not isinstance(teachers, TeacherRegistry):
        teachers = TeacherRegistry(dict(teachers))
    teachers.check(corpus.languages, student.config.vocab_size)
    if student.config.vocab_size != len(vocab):
        raise ValueError(f"student vocab {student.config.vocab_size} != vocab size {len(vocab)}")
    for t in teachers.teachers.values():
        t.eval()
    lr = plan.base_lr * (plan.mono_distill_lr_factor if len(corpus.languages) == 1 else 1.0)
    return _fit(student, corpus, plan, vocab, dev, normalizers, teachers, lr)
