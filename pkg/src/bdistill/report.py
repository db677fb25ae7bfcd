"""Evaluate trained checkpoints into a MetricsReport, plus text tables and figures."""
from __future__ import annotations

import logging
from pathlib import Path

import jsonschema
import numpy as np

from . import model as M
from .config import JobConfig
from .experiment import MULTILINGUAL, Layout, dump_json, load_splits, load_vocab, probe_corpora, teacher_id, \
    write_atomic
from .metrics import ModelSummary, ScoreTable, avg_cross_lingual, balanced_score, compare_hypotheses, \
    masked_eval_batches, mrr, transfer_matrix
from .probing import probe_matrix

log = logging.getLogger(__name__)

ALL = "All"

_STATS = {"type": "object", "required": ["mean", "std", "runs"],
          "properties": {"mean": {"type": "number"}, "std": {"type": "number"},
                         "runs": {"type": "array", "items": {"type": "number"}}}}
_VERDICT = {"type": "object", "required": ["holds", "margin"],
            "properties": {"holds": {"type": "boolean"}, "margin": {"type": "number"}}}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["models", "languages", "groups", "mrr", "gold", "balanced", "balanced_groups", "transfer",
                 "cross_lingual", "hypotheses", "config", "seeds", "probe_layer"],
    "additionalProperties": False,
    "properties": {
        "models": {"type": "array", "items": {"type": "string"}},
        "languages": {"type": "array", "items": {"type": "string"}},
        "groups": {"type": "object", "additionalProperties": {"type": "array", "items": {"type": "string"}}},
        "mrr": {"type": "object", "additionalProperties": {
            "type": "object", "additionalProperties": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}}},
        "gold": {"type": "object", "additionalProperties": {"type": "number"}},
        "balanced": {"type": "object", "additionalProperties": {"type": "number"}},
        "balanced_groups": {"type": "object", "additionalProperties": {
            "type": "object", "additionalProperties": {"type": "number"}}},
        "transfer": {"type": "object", "additionalProperties": {  # model
            "type": "object", "additionalProperties": {  # task
                "type": "object", "additionalProperties": {  # source language
                    "type": "object", "additionalProperties": {  # target language
                        "type": "object", "required": ["mean", "std", "runs", "macro_f1", "skipped"],
                        "properties": {"mean": {"type": "number"}, "std": {"type": "number"},
                                       "runs": {"type": "array", "items": {"type": "number"}},
                                       "macro_f1": _STATS, "skipped": {"type": "integer"}}}}}}},
        "cross_lingual": {"type": "object", "additionalProperties": {
            "type": "object", "additionalProperties": {"type": "number"}}},
        "hypotheses": {"type": "object", "additionalProperties": {
            "type": "object", "required": ["balanced"],
            "properties": {"balanced": _VERDICT, "transfer": {**_VERDICT, "properties": {
                **_VERDICT["properties"], "task": {"type": "string"}}}}}},
        "config": {"type": "object"},
        "seeds": {"type": "object", "additionalProperties": {"type": "integer"}},
        "probe_layer": {"type": "string"},
    },
}


def validate_report(report: dict) -> None:
    jsonschema.validate(report, REPORT_SCHEMA)


def _load(layout: Layout, model_id: str) -> M.MaskedLmModel:
    path = layout.checkpoint(model_id)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint missing: {path} (run run-experiment first)")
    return M.load(path)


def evaluate(cfg: JobConfig, out) -> dict:
    """Score every checkpoint and return the (schema-valid) report dict."""
    layout = Layout(Path(out))
    vocab = load_vocab(out)
    teachers = {l: _load(layout, teacher_id(l)) for l in cfg.languages}
    models = {m: _load(layout, m) for m in MULTILINGUAL}
    _, splits = load_splits(cfg, out)
    normalizers = cfg.normalizers()
    eval_seed = cfg.metrics.eval_seed
    max_len = cfg.plan("hl").max_len

    table = ScoreTable()
    mrr_out: dict[str, dict[str, float]] = {m: {} for m in [*MULTILINGUAL, *map(teacher_id, cfg.languages)]}
    for lang in cfg.languages:
        t = teachers[lang]
        batches = masked_eval_batches(splits.test, lang, vocab, eval_seed, normalizers[lang],
                                      cfg.metrics.mask_rate, min(max_len, t.config.max_seq_len))
        table.gold[lang] = mrr(t, splits.test, vocab, eval_seed, lang, batches=batches)
        mrr_out[teacher_id(lang)][lang] = table.gold[lang]
        for name, m in models.items():
            table.set(name, lang, mrr(m, splits.test, vocab, eval_seed, lang, batches=batches))
            mrr_out[name][lang] = table.scores[(name, lang)]

    groups = {**{g: list(ls) for g, ls in cfg.groups.items()}, ALL: list(cfg.languages)}
    balanced_groups = {m: {g: balanced_score(table, m, ls) for g, ls in groups.items()} for m in MULTILINGUAL}

    transfer: dict = {m: {} for m in MULTILINGUAL}
    cross: dict = {m: {} for m in MULTILINGUAL}
    tasks = probe_corpora(cfg, out) if cfg.probe.enabled else {}
    p = cfg.probe
    for task, corpora in tasks.items():
        langs = [l for l in cfg.languages if l in corpora]
        for name, m in models.items():
            pm = probe_matrix(m, corpora, vocab, langs, runs=p.runs, seed=cfg.seed, normalizers=normalizers,
                              epochs=p.epochs, lr=p.lr, batch_size=p.batch_size, test_fraction=p.test_fraction)
            transfer[name][task] = {
                src: {tgt: {**pm[(src, tgt)].accuracy.as_dict(), "macro_f1": pm[(src, tgt)].macro_f1.as_dict(),
                            "skipped": pm[(src, tgt)].skipped} for tgt in langs}
                for src in langs}
            if len(langs) >= 2:
                cross[name][task] = avg_cross_lingual(transfer_matrix(pm.cells, langs), langs)

    first_task = next((t for t in tasks if all(t in cross[m] for m in MULTILINGUAL)), None)

    def summary(name):
        return ModelSummary(list(cfg.languages), balanced_groups[name][ALL],
                            cross[name][first_task] if first_task else None)

    hypotheses = {}
    for base in ("hl", "hl_balanced"):
        verdict = compare_hypotheses(summary(base), summary("student"), cfg.languages)
        if "transfer" in verdict:
            verdict["transfer"]["task"] = first_task
        hypotheses[f"{base}_vs_student"] = verdict

    report = {
        "models": [*MULTILINGUAL, *map(teacher_id, cfg.languages)],
        "languages": list(cfg.languages),
        "groups": groups,
        "mrr": mrr_out,
        "gold": dict(table.gold),
        "balanced": {m: balanced_groups[m][ALL] for m in MULTILINGUAL},
        "balanced_groups": balanced_groups,
        "transfer": transfer,
        "cross_lingual": cross,
        "hypotheses": hypotheses,
        "config": cfg.echo(),
        "seeds": {"experiment": cfg.seed, "eval": eval_seed, "probe": cfg.seed},
        "probe_layer": "final",
    }
    validate_report(report)
    return report


# ---------------------------------------------------------------- rendering

def balanced_table(report: dict) -> str:
    """Average difference from the monolingual models, in MRR points (x100)."""
    groups = list(report["groups"])
    lines = ["Balanced score B: mean difference from monolingual models (MRR x100, higher is better)",
             f"{'Lang. set':<12}" + "".join(f"{m:>14}" for m in MULTILINGUAL)]
    for g in groups:
        lines.append(f"{g:<12}" + "".join(f"{100 * report['balanced_groups'][m][g]:>14.2f}" for m in MULTILINGUAL))
    lines.append("")
    lines.append("MRR per language")
    lines.append(f"{'Language':<12}" + "".join(f"{m:>14}" for m in (*MULTILINGUAL, "monolingual")))
    for lang in report["languages"]:
        row = [report["mrr"][m][lang] for m in MULTILINGUAL] + [report["gold"][lang]]
        lines.append(f"{lang:<12}" + "".join(f"{v:>14.4f}" for v in row))
    return "\n".join(lines) + "\n"


def probe_table(report: dict) -> str:
    """In-language accuracy (mean +- std over probe runs) and averaged zero-shot C_Z."""
    langs = report["languages"]
    blocks = []
    tasks = sorted({t for m in MULTILINGUAL for t in report["transfer"][m]})
    for task in tasks:
        lines = [f"Probing task {task!r}: in-lang accuracy (mean +- std), zero-shot average C_Z",
                 f"{'Model':<14}" + "".join(f"{l:>18}" for l in langs) + f"{'C_Z':>10}"]
        for m in MULTILINGUAL:
            cells = report["transfer"][m].get(task, {})
            row = "".join(f"{cells[l][l]['mean']:>11.4f} +-{cells[l][l]['std']:.3f}" if l in cells else f"{'-':>18}"
                          for l in langs)
            cz = report["cross_lingual"][m].get(task)
            lines.append(f"{m:<14}{row}" + (f"{cz:>10.4f}" if cz is not None else f"{'-':>10}"))
        blocks.append("\n".join(lines))
    hyp = ["Hypotheses (margin = student - baseline)"]
    for pair, v in report["hypotheses"].items():
        text = f"{pair:<24} B: {'holds' if v['balanced']['holds'] else 'fails'} ({v['balanced']['margin']:+.4f})"
        if "transfer" in v:
            t = v["transfer"]
            text += f"  C_Z[{t['task']}]: {'holds' if t['holds'] else 'fails'} ({t['margin']:+.4f})"
        hyp.append(text)
    blocks.append("\n".join(hyp))
    return "\n\n".join(blocks) + "\n"


def render_figures(report: dict, directory) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    langs = report["languages"]
    written = []
    meta = {"Software": None}

    fig, ax = plt.subplots(figsize=(6, 3.5))
    series = [*MULTILINGUAL, "monolingual"]
    width = 0.8 / len(series)
    for i, name in enumerate(series):
        vals = [report["gold"][l] if name == "monolingual" else report["mrr"][name][l] for l in langs]
        ax.bar(np.arange(len(langs)) + i * width, vals, width, label=name)
    ax.set_xticks(np.arange(len(langs)) + 0.4 - width / 2, langs)
    ax.set_ylabel("MRR")
    ax.legend(fontsize=8)
    fig.tight_layout()
    written.append(directory / "mrr.png")
    fig.savefig(written[-1], metadata=meta)
    plt.close(fig)

    groups = list(report["groups"])
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / len(MULTILINGUAL)
    for i, name in enumerate(MULTILINGUAL):
        ax.bar(np.arange(len(groups)) + i * width, [100 * report["balanced_groups"][name][g] for g in groups],
               width, label=name)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xticks(np.arange(len(groups)) + 0.4 - width / 2, groups)
    ax.set_ylabel("B (MRR x100)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    written.append(directory / "balanced.png")
    fig.savefig(written[-1], metadata=meta)
    plt.close(fig)

    tasks = sorted({t for m in MULTILINGUAL for t in report["transfer"][m]})
    for task in tasks:
        fig, axes = plt.subplots(1, len(MULTILINGUAL), figsize=(3.2 * len(MULTILINGUAL), 3))
        for ax, name in zip(np.atleast_1d(axes), MULTILINGUAL):
            cells = report["transfer"][name][task]
            grid = np.array([[cells[s][t]["mean"] for t in cells] for s in cells])
            im = ax.imshow(grid, vmin=0.0, vmax=1.0, cmap="viridis")
            ax.set_xticks(range(len(cells)), list(cells))
            ax.set_yticks(range(len(cells)), list(cells))
            ax.set_title(name, fontsize=9)
            ax.set_xlabel("test")
            ax.set_ylabel("train")
        fig.colorbar(im, ax=axes, shrink=0.8)
        written.append(directory / f"transfer_{task}.png")
        fig.savefig(written[-1], metadata=meta)
        plt.close(fig)
    return written


def write_report(report: dict, out) -> dict[str, Path]:
    layout = Layout(Path(out))
    write_atomic(layout.metrics, dump_json(report))
    write_atomic(layout.tables, balanced_table(report) + "\n" + probe_table(report))
    figures = render_figures(report, layout.figures)
    return {"metrics": layout.metrics, "tables": layout.tables, **{p.stem: p for p in figures}}
