"""End-to-end jobs driven by a JobConfig: synthetic data generation,
tokenizer training, and the teacher / HL / HL-balanced / student runs."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import model as M
from .config import STAGES, JobConfig
from .corpus import (CorpusError, CorpusSet, TaggedCorpus, balance, gen_heldout, gen_synthetic, load_conll,
                     load_corpus,
                     split_dev_test, write_conll, write_sentences)
from .model import MaskedLmModel
from .tokenizer import NUM_SPECIALS, Vocab, train_wordpiece
from .training import distill, train_hard

log = logging.getLogger(__name__)

MULTILINGUAL = ("hl", "hl_balanced", "student")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_atomic(path, data: bytes | str) -> None:
    """Write through a ``.partial`` sibling so a crash never leaves a
    complete-looking file behind."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".partial")
    tmp.write_bytes(data.encode("utf-8") if isinstance(data, str) else data)
    tmp.replace(path)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


@dataclass(frozen=True)
class Layout:
    """Where every artifact lives under the output directory."""
    root: Path

    def corpus(self, lang: str) -> Path:
        return self.root / "corpora" / f"{lang}.txt"

    def heldout(self, lang: str) -> Path:
        return self.root / "corpora" / f"{lang}.test.txt"

    def conll(self, lang: str) -> Path:
        return self.root / "corpora" / f"{lang}.conll"

    @property
    def vocab(self) -> Path:
        return self.root / "vocab.txt"

    @property
    def tokenizer_summary(self) -> Path:
        return self.root / "tokenizer.json"

    def checkpoint(self, model_id: str) -> Path:
        return self.root / "checkpoints" / f"{model_id}.ckpt"

    def history(self, model_id: str) -> Path:
        return self.root / "histories" / f"{model_id}.json"

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"

    @property
    def metrics(self) -> Path:
        return self.root / "metrics.json"

    @property
    def tables(self) -> Path:
        return self.root / "tables.txt"

    @property
    def figures(self) -> Path:
        return self.root / "figures"


def teacher_id(lang: str) -> str:
    return f"teacher-{lang}"


# ---------------------------------------------------------------- data

def generate_synthetic(cfg: JobConfig, out) -> dict[str, list[Path]]:
    """Write one sentence file and one CoNLL file per synthetic language."""
    if cfg.synthetic is None:
        raise CorpusError("config has no 'synthetic' section")
    layout = Layout(Path(out))
    langs = cfg.synthetic.languages
    cs, tagged = gen_synthetic([l.spec() for l in langs], [l.chars for l in langs], cfg.seed,
                               cfg.synthetic.tagged_sentences)
    written = {}
    for lang in cs.languages:
        for path, writer, data in ((layout.corpus(lang), write_sentences, cs.sentences[lang]),
                                   (layout.conll(lang), write_conll, tagged[lang])):
            tmp = path.with_name(path.name + ".partial")
            writer(data, tmp)
            tmp.replace(path)
        written[lang] = [layout.corpus(lang), layout.conll(lang)]
    if cfg.synthetic.test_chars:
        held = gen_heldout([l.spec() for l in langs], [cfg.synthetic.test_chars] * len(langs), cfg.seed)
        for lang in held.languages:
            tmp = layout.heldout(lang).with_name(layout.heldout(lang).name + ".partial")
            write_sentences(held.sentences[lang], tmp)
            tmp.replace(layout.heldout(lang))
            written[lang].append(layout.heldout(lang))
    return written


def corpus_paths(cfg: JobConfig, out) -> dict[str, Path]:
    if cfg.corpora:
        return {l: cfg.resolve(cfg.corpora[l]) for l in cfg.languages}
    layout = Layout(Path(out))
    paths = {l: layout.corpus(l) for l in cfg.languages}
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise CorpusError(f"synthetic corpus files missing (run gen-synthetic first): {', '.join(missing)}")
    return paths


def load_job_corpora(cfg: JobConfig, out) -> CorpusSet:
    return load_corpus(corpus_paths(cfg, out))


def heldout_paths(cfg: JobConfig, out) -> dict[str, Path] | None:
    """Independent test files, when the job has them."""
    if cfg.test_corpora:
        return {l: cfg.resolve(cfg.test_corpora[l]) for l in cfg.languages}
    if cfg.synthetic is not None and cfg.synthetic.test_chars:
        return {l: Layout(Path(out)).heldout(l) for l in cfg.languages}
    return None


def probe_corpora(cfg: JobConfig, out) -> dict[str, dict[str, TaggedCorpus]]:
    """task -> language -> tagged corpus. Synthetic jobs without explicit
    tasks probe the generated word tags."""
    tasks = {t: {l: cfg.resolve(p) for l, p in paths.items()} for t, paths in cfg.probe.tasks.items()}
    if not tasks and cfg.synthetic is not None:
        layout = Layout(Path(out))
        tasks = {"tags": {l: layout.conll(l) for l in cfg.languages}}
    return {task: {l: load_conll(p, l) for l, p in sorted(paths.items(), key=lambda kv: cfg.languages.index(kv[0]))}
            for task, paths in sorted(tasks.items())}


@dataclass
class Splits:
    train: CorpusSet
    dev: CorpusSet | None
    test: CorpusSet
    balanced: CorpusSet
    balanced_dev: CorpusSet | None


def make_splits(cfg: JobConfig, corpora: CorpusSet, heldout: CorpusSet | None = None) -> Splits:
    """Train/dev/test plus the balanced train and dev sets. With ``heldout``
    the test set is that corpus and only dev is carved out of ``corpora``."""
    test_fraction = 0.0 if heldout is not None else cfg.split.test_fraction
    train, dev, test = split_dev_test(corpora, cfg.seed, cfg.split.dev_fraction, test_fraction)
    bal = balance(train, np.random.default_rng([cfg.seed, 1]))
    has_dev = all(dev.sentences[l] for l in dev.languages)
    bdev = balance(dev, np.random.default_rng([cfg.seed, 2])) if has_dev else None
    return Splits(train, dev if has_dev else None, heldout if heldout is not None else test, bal, bdev)


def load_splits(cfg: JobConfig, out) -> tuple[CorpusSet, Splits]:
    corpora = load_job_corpora(cfg, out)
    paths = heldout_paths(cfg, out)
    return corpora, make_splits(cfg, corpora, load_corpus(paths) if paths else None)


# ---------------------------------------------------------------- tokenizer

def train_tokenizer(cfg: JobConfig, out) -> Vocab:
    layout = Layout(Path(out))
    corpora = load_job_corpora(cfg, out)
    normalizers = cfg.normalizers()
    vocab = train_wordpiece(corpora, cfg.tokenizer.target_size,
                            {l: normalizers[l] for l in corpora.languages})
    alphabet = sum(1 for t in vocab.tokens[NUM_SPECIALS:] if len(t.removeprefix("##")) == 1)
    summary = {"vocab_size": len(vocab), "target_size": cfg.tokenizer.target_size, "alphabet_size": alphabet,
               "merges": len(vocab) - NUM_SPECIALS - alphabet, "corpus_hash": corpora.content_hash()}
    tmp = layout.vocab.with_name("vocab.txt.partial")
    vocab.save(tmp)
    tmp.replace(layout.vocab)
    write_atomic(layout.tokenizer_summary, dump_json(summary))
    return vocab


def load_vocab(out) -> Vocab:
    path = Layout(Path(out)).vocab
    if not path.exists():
        raise FileNotFoundError(f"vocabulary not found: {path} (run train-tokenizer first)")
    return Vocab.load(path)


# ---------------------------------------------------------------- experiment

def parse_only(only: str | Sequence[str] | None) -> list[str]:
    if only is None:
        return list(STAGES)
    items = only.split(",") if isinstance(only, str) else list(only)
    items = [s.strip() for s in items if s.strip()]
    unknown = [s for s in items if s not in STAGES]
    if unknown or not items:
        raise ValueError(f"unknown stage(s) {unknown or items}; choose from {list(STAGES)}")
    return [s for s in STAGES if s in items]


def _save_stage(layout: Layout, model_id: str, model: MaskedLmModel, result, seed: int,
                init_seed: int, seconds: float) -> dict:
    path = layout.checkpoint(model_id)
    M.save(model, path)
    write_atomic(layout.history(model_id), dump_json(result.history()))
    return {"checkpoint": str(path.relative_to(layout.root)), "sha256": sha256_file(path),
            "train_seed": seed, "init_seed": init_seed, "epochs_run": result.epochs_run,
            "best_epoch": result.best_epoch, "wall_clock_s": round(seconds, 3)}


def _load_teachers(cfg: JobConfig, layout: Layout) -> dict[str, MaskedLmModel]:
    teachers = {}
    for lang in cfg.languages:
        path = layout.checkpoint(teacher_id(lang))
        if not path.exists():
            raise FileNotFoundError(f"teacher checkpoint missing: {path} (run the 'teachers' stage)")
        teachers[lang] = M.load(path)
    return teachers


def run_experiment(cfg: JobConfig, out, only: str | Sequence[str] | None = None) -> dict:
    """Train the selected stages and write checkpoints, histories and the manifest.

    Teachers get init seeds ``seed + 101 + i``; the three multilingual models
    share init seed ``seed`` so they start from identical weights.
    """
    stages = parse_only(only)
    layout = Layout(Path(out))
    vocab = load_vocab(out)
    corpora, splits = load_splits(cfg, out)
    normalizers = cfg.normalizers()

    manifest = json.loads(layout.manifest.read_text(encoding="utf-8")) if layout.manifest.exists() else {}
    manifest.update({
        "languages": cfg.languages,
        "seed": cfg.seed,
        "vocab_sha256": sha256_file(layout.vocab),
        "corpus_hashes": {"full": corpora.content_hash(), "train": splits.train.content_hash(),
                          "balanced": splits.balanced.content_hash(), "test": splits.test.content_hash(),
                          "dev": splits.dev.content_hash() if splits.dev else None},
        "balanced_char_budget": min(splits.train.char_counts.values()),
    })
    manifest.setdefault("stages", {})

    def new_model(init_seed: int) -> MaskedLmModel:
        return MaskedLmModel.init(cfg.build_model_config(len(vocab), init_seed))

    for stage in stages:
        start = time.perf_counter()
        marker = layout.root / "checkpoints" / f"{stage}.partial"
        marker.parent.mkdir(parents=True, exist_ok=True)
        marker.write_text("running\n", encoding="utf-8")
        try:
            plan = cfg.plan(stage)
            if stage == "teachers":
                entries = {}
                for i, lang in enumerate(cfg.languages):
                    t0 = time.perf_counter()
                    init = cfg.seed + 101 + i
                    m = new_model(init)
                    dev = splits.balanced_dev.subset([lang]) if splits.balanced_dev else None
                    r = train_hard(m, splits.train.subset([lang]), plan, vocab, dev, normalizers)
                    entries[teacher_id(lang)] = _save_stage(layout, teacher_id(lang), m, r, plan.seed, init,
                                                            time.perf_counter() - t0)
                manifest["stages"].update(entries)
            elif stage == "student":
                teachers = _load_teachers(cfg, layout)
                m = new_model(cfg.seed)
                r = distill(m, teachers, splits.balanced, plan, vocab, splits.balanced_dev, normalizers)
                manifest["stages"][stage] = _save_stage(layout, stage, m, r, plan.seed, cfg.seed,
                                                        time.perf_counter() - start)
            else:
                data = splits.train if stage == "hl" else splits.balanced
                m = new_model(cfg.seed)
                r = train_hard(m, data, plan, vocab, splits.balanced_dev, normalizers)
                manifest["stages"][stage] = _save_stage(layout, stage, m, r, plan.seed, cfg.seed,
                                                        time.perf_counter() - start)
        except Exception as exc:
            raise StageError(stage, exc) from exc
        marker.unlink()
        log.info("stage %s done in %.1fs", stage, time.perf_counter() - start)
        write_atomic(layout.manifest, dump_json(manifest))
    return manifest
