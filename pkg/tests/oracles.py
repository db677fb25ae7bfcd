"""Independent reference computations used by the tests.

Nothing here touches the autodiff path: finite differences only call the
forward function, and the closed forms are written out in float64.
"""
import math

import numpy as np


def central_differences(fn, arrays, h=1e-4):
    """d fn(*arrays) / d arrays[k], elementwise, by central differences.

    ``fn`` maps float64 numpy arrays to a python float.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn(*arrays)
            flat[i] = orig - h
            down = fn(*arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def assert_grad_close(auto, numeric, rel=1e-3, abs_floor=1e-6):
    auto = np.asarray(auto, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    assert auto.shape == numeric.shape
    small = np.abs(numeric) < abs_floor
    err_abs = np.abs(auto - numeric)
    err_rel = err_abs / np.maximum(np.abs(numeric), 1e-300)
    bad = np.where(small, err_abs > abs_floor, err_rel > rel)
    assert not bad.any(), (f"max rel err {err_rel[~small].max() if (~small).any() else 0:.3e}, "
                           f"max abs err on small entries {err_abs[small].max() if small.any() else 0:.3e}")


def softmax_hp(values):
    """Softmax in exact-ish float arithmetic via math.fsum."""
    m = max(values)
    exps = [math.exp(v - m) for v in values]
    s = math.fsum(exps)
    return [e / s for e in exps]


def kl_hp(p, q):
    return math.fsum(pi * math.log(pi / qi) for pi, qi in zip(p, q) if pi > 0)


def brute_force_pair_scores(words):
    """All WordPiece pair scores count(xy)/(count(x)count(y)) for a word->freq map,
    enumerated from scratch."""
    sym, pairs = {}, {}
    for w, f in words.items():
        syms = [w[0]] + ["##" + c for c in w[1:]]
        for s in syms:
            sym[s] = sym.get(s, 0) + f
        for a, b in zip(syms, syms[1:]):
            pairs[(a, b)] = pairs.get((a, b), 0) + f
    return {p: c / (sym[p[0]] * sym[p[1]]) for p, c in pairs.items()}


def confusion_macro_f1(gold, pred):
    """Macro F1 from an explicit confusion table (gold-present classes)."""
    classes = sorted(set(gold))
    f1s = []
    for c in classes:
        tp = sum(1 for g, p in zip(gold, pred) if g == c and p == c)
        fp = sum(1 for g, p in zip(gold, pred) if g != c and p == c)
        fn = sum(1 for g, p in zip(gold, pred) if g == c and p != c)
        f1s.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return sum(f1s) / len(f1s)


def separable_tags(model, tagged, vocab, seed=0, margin=0.25):
    """Relabel tokens by the sign of a fixed linear read-out of their own
    representation, so a linear probe can fit the tags exactly.

    The read-out direction is the leading principal axis of the features,
    with a random sign, and the threshold sits at the feature mean.
    Sentences holding any token within ``margin`` standard deviations of the
    threshold are dropped, which leaves a clear gap between the classes.
    """
    from bdistill.corpus import TaggedCorpus
    from bdistill.probing import features
    from bdistill.tokenizer import encode_words

    x, _ = features(model, tagged, vocab)
    centered = x.astype(np.float64) - x.astype(np.float64).mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    sign = 1.0 if np.random.default_rng(seed).random() < 0.5 else -1.0
    z = centered @ (sign * vt[0])
    z = iter(z / z.std())
    sents = []
    for sent in tagged.sentences:
        _, first = encode_words([w for w, _ in sent], vocab, max_len=model.config.max_seq_len)
        scores = [next(z) if pos >= 0 else None for pos in first]
        if any(s is not None and abs(s) < margin for s in scores):
            continue
        # truncated words never reach the probe; their label is irrelevant
        sents.append([(w, "P" if s is not None and s > 0 else "N") for (w, _), s in zip(sent, scores)])
    return TaggedCorpus(sents, ["N", "P"], tagged.language)
