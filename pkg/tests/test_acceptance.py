"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line
that is printed in the terminal summary."""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from bdistill import tensor as T
from bdistill.config import parse_config
from bdistill.corpus import SyntheticLangSpec, balance, gen_heldout, gen_synthetic, split_dev_test, subsample
from bdistill.experiment import Layout, generate_synthetic, run_experiment, train_tokenizer
from bdistill.losses import hard_loss, soft_loss
from bdistill.metrics import ScoreTable, avg_cross_lingual, balanced_score, masked_eval_batches, mrr, \
    reciprocal_ranks
from bdistill.model import MaskedLmModel, checkpoint_bytes, preset
from bdistill.probing import macro_f1, probe_matrix
from bdistill.report import evaluate, write_report
from bdistill.tokenizer import train_wordpiece
from bdistill.training import TrainPlan, distill, train_hard

from acceptance_results import record
from gradcases import CASES, check_case
from oracles import separable_tags

# training settings for the desk-scale synthetic runs (criteria 5 and 6)
DESK_TRAIN = {"epochs": 30, "base_lr": 3e-3, "patience": 5, "max_len": 64}


def trend_config(seed: int) -> dict:
    return {
        "seed": seed,
        "languages": ["hi", "mid", "lo"],
        "groups": {"High-Res": ["hi"], "Low-Res": ["lo"]},
        "synthetic": {"tagged_sentences": 0, "test_chars": 20_000, "languages": [
            {"name": "hi", "chars": 100_000, "bigram_seed": 1, "script_offset": 0x61},
            {"name": "mid", "chars": 50_000, "bigram_seed": 2, "script_offset": 0x3b1},
            {"name": "lo", "chars": 10_000, "bigram_seed": 3, "script_offset": 0x430}]},
        "tokenizer": {"target_size": 1500},
        "model": {"preset": "desk"},
        "train": DESK_TRAIN,
        "probe": {"enabled": False},
    }


def run_job(raw: dict, out: Path) -> dict:
    cfg = parse_config(raw)
    generate_synthetic(cfg, out)
    train_tokenizer(cfg, out)
    run_experiment(cfg, out)
    report = evaluate(cfg, out)
    write_report(report, out)
    return report


def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    failures, cases = [], 0
    for name, make, fn in CASES:
        for seed in range(5):
            cases += 1
            try:
                check_case(name, make, fn, seed)
            except AssertionError as exc:
                failures.append(f"{name}[{seed}]: {exc}")
    elapsed = time.perf_counter() - start
    ok = not failures and cases >= 100 and elapsed < 120
    record(1, ok, f"{cases} finite-difference cases over {len(CASES)} ops/losses, "
                  f"{len(failures)} failures, {elapsed:.1f}s")
    assert ok, failures[:3]


def test_criterion_2_loss_identities():
    rng = np.random.default_rng(0)
    vocab = 50
    worst_onehot = worst_self = 0.0
    for _ in range(1000):
        logits = rng.normal(scale=3.0, size=(1, vocab))
        gold = rng.integers(vocab, size=1)
        onehot = np.eye(vocab)[gold]
        hard = hard_loss(T.Tensor(logits), gold).item()
        worst_onehot = max(worst_onehot, abs(soft_loss(T.Tensor(logits), onehot).item() - hard))
        p = np.exp(logits - logits.max())
        p /= p.sum()
        worst_self = max(worst_self, abs(soft_loss(T.Tensor(logits), p).item()))
    uniform = hard_loss(T.Tensor(np.zeros((4, vocab), dtype=np.float32)), [0, 1, 2, 3]).item()
    uniform_err = abs(uniform - math.log(vocab))
    ok = worst_onehot <= 1e-6 and worst_self <= 1e-6 and uniform_err <= 1e-5
    record(2, ok, f"one-hot soft vs hard max |diff| {worst_onehot:.2e}, self-KL max {worst_self:.2e}, "
                  f"uniform vs ln|V| {uniform_err:.2e}")
    assert ok


def test_criterion_3_metric_oracles():
    logits = np.array([[5.0, 1.0, 0.0, -1.0], [2.0, 3.0, 0.0, -1.0], [1.0, 2.0, 3.0, 0.5]])
    golds = np.array([0, 0, 3])  # ranks 1, 2, 4
    m = float(np.mean(reciprocal_ranks(logits, golds)))
    t = ScoreTable(gold={"a": 0.6, "b": 0.2})
    t.set("zero", "a", 0.5)
    t.set("zero", "b", 0.3)
    t.set("neg", "a", 0.4)
    t.set("neg", "b", 0.1)
    b0, b1 = balanced_score(t, "zero", ["a", "b"]), balanced_score(t, "neg", ["a", "b"])
    cz = avg_cross_lingual({("a", "b"): 0.4, ("b", "a"): 0.6}, ["a", "b"])
    f1 = macro_f1(list("AABB"), list("ABBB"))
    ok = abs(m - 0.58333333333) <= 1e-9 and b0 == 0.0 and b1 == -0.15 and cz == 0.5 and abs(f1 - 0.73333) <= 1e-5
    record(3, ok, f"mrr {m:.10f}, B {b0!r} and {b1!r}, C_Z {cz!r}, macro-F1 {f1:.5f}")
    assert ok


def test_criterion_4_balancing_contract():
    specs = [SyntheticLangSpec("a", bigram_seed=1, script_offset=0x61),
             SyntheticLangSpec("b", bigram_seed=2, script_offset=0x3b1),
             SyntheticLangSpec("c", bigram_seed=3, script_offset=0x430)]
    cs, _ = gen_synthetic(specs, [100_000, 50_000, 10_000], seed=0)
    once = balance(cs, np.random.default_rng(0))
    twice = balance(once, np.random.default_rng(1))
    counts = once.char_counts
    ok = (all(v <= 10_000 for v in counts.values()) and once.sentences["c"] == cs.sentences["c"]
          and twice.char_counts == counts and twice.sentences == once.sentences)
    record(4, ok, f"before {cs.char_counts}, after {counts}, idempotent {twice.char_counts == counts}")
    assert ok


def test_criterion_5_trend_reproduction(tmp_path):
    start = time.perf_counter()
    wins_low = wins_high = holds = 0
    rows = []
    for seed in range(3):
        report = run_job(trend_config(seed), tmp_path / f"seed{seed}")
        mrr_ = report["mrr"]
        wins_low += mrr_["student"]["lo"] > mrr_["hl"]["lo"]
        wins_high += mrr_["student"]["hi"] > mrr_["hl_balanced"]["hi"]
        holds += report["hypotheses"]["hl_vs_student"]["balanced"]["holds"]
        rows.append(f"seed {seed}: lo st/hl {mrr_['student']['lo']:.4f}/{mrr_['hl']['lo']:.4f}, "
                    f"hi st/hlb {mrr_['student']['hi']:.4f}/{mrr_['hl_balanced']['hi']:.4f}, "
                    f"B st-hl {report['hypotheses']['hl_vs_student']['balanced']['margin']:+.4f}")
    elapsed = time.perf_counter() - start
    ok = wins_low >= 2 and wins_high >= 2 and holds >= 2 and elapsed < 30 * 60
    record(5, ok, f"(a) {wins_low}/3 (b) {wins_high}/3 (c) {holds}/3 in {elapsed / 60:.1f} min; " + "; ".join(rows))
    assert ok


def test_criterion_6_monolingual_distillation():
    start = time.perf_counter()
    wins, rows = 0, []
    for seed in range(3):
        spec = SyntheticLangSpec("x", bigram_seed=1)
        cs, _ = gen_synthetic([spec], [100_000], seed=seed)
        test = gen_heldout([spec], [20_000], seed)
        vocab = train_wordpiece(cs, 800)
        train, dev, _ = split_dev_test(cs, seed, 0.05, 0.0)
        small = subsample(train, 10_000, np.random.default_rng([seed, 1]))
        cfg = preset("desk", len(vocab), seed=seed)
        teacher = MaskedLmModel.init(preset("desk", len(vocab), seed=seed + 101))
        train_hard(teacher, train, TrainPlan("teacher", seed=seed, **DESK_TRAIN), vocab, dev=dev)
        hl = MaskedLmModel.init(cfg)
        train_hard(hl, small, TrainPlan("teacher", seed=seed, **DESK_TRAIN), vocab, dev=dev)
        student = MaskedLmModel.init(cfg)
        distill(student, {"x": teacher}, small, TrainPlan("student", seed=seed, **DESK_TRAIN), vocab, dev=dev)
        batches = masked_eval_batches(test, "x", vocab, 1234, max_len=64)
        s, h = (mrr(m, test, vocab, 1234, "x", batches=batches) for m in (student, hl))
        wins += s > h
        rows.append(f"seed {seed}: student {s:.4f} vs HL-10k {h:.4f}")
    elapsed = time.perf_counter() - start
    ok = wins >= 2 and elapsed < 10 * 60
    record(6, ok, f"student > HL-10k in {wins}/3 seeds, {elapsed / 60:.1f} min; " + "; ".join(rows))
    assert ok


def test_criterion_7_determinism(tmp_path):
    raw = {
        "seed": 3,
        "languages": ["a", "b"],
        "groups": {"High-Res": ["a"], "Low-Res": ["b"]},
        "synthetic": {"tagged_sentences": 40, "languages": [
            {"name": "a", "chars": 8000, "vocab_size": 60, "bigram_seed": 1, "script_offset": 0x61},
            {"name": "b", "chars": 4000, "vocab_size": 60, "bigram_seed": 2, "script_offset": 0x3b1}]},
        "tokenizer": {"target_size": 200},
        "model": {"preset": "desk", "overrides": {"num_layers": 1, "hidden_dim": 16, "max_seq_len": 32}},
        "train": {"epochs": 2, "base_lr": 3e-3, "max_len": 32},
        "split": {"dev_fraction": 0.1, "test_fraction": 0.1},
        "probe": {"runs": 2, "epochs": 2},
    }
    first, second = tmp_path / "first", tmp_path / "second"
    run_job(raw, first)
    run_job(raw, second)
    names = sorted(p.name for p in (first / "checkpoints").glob("*.ckpt"))
    same_ckpt = all((first / "checkpoints" / n).read_bytes() == (second / "checkpoints" / n).read_bytes()
                    for n in names)
    same_metrics = Layout(first).metrics.read_bytes() == Layout(second).metrics.read_bytes()
    ok = len(names) == 5 and same_ckpt and same_metrics
    record(7, ok, f"{len(names)} checkpoints identical: {same_ckpt}, metrics JSON identical: {same_metrics}")
    assert ok


def test_criterion_8_probing_integrity():
    spec = SyntheticLangSpec("a", vocab_size=300, bigram_seed=1, min_words=2, max_words=4)
    _, tagged = gen_synthetic([spec], [10], seed=0, tagged_sentences=2000)
    corpus = {"a": [" ".join(w for w, _ in s) for s in tagged["a"].sentences]}
    vocab = train_wordpiece(corpus, 600)
    model = MaskedLmModel.init(preset("desk", len(vocab), seed=0))
    before = checkpoint_bytes(model)
    relabeled = separable_tags(model, tagged["a"], vocab)
    cell = probe_matrix(model, {"a": relabeled}, vocab, ["a"], runs=5, seed=0).in_lang("a")
    runs = cell.accuracy.runs
    stats_ok = len(runs) == 5 and cell.accuracy.as_dict()["std"] == pytest.approx(np.std(runs, ddof=1), abs=1e-15)
    frozen = checkpoint_bytes(model) == before
    ok = stats_ok and frozen and cell.accuracy.mean >= 0.99
    record(8, ok, f"in-lang accuracy {cell.accuracy.mean:.4f} +- {cell.accuracy.std:.4f} over {len(runs)} runs, "
                  f"sample std {stats_ok}, base unchanged {frozen}")
    assert ok
