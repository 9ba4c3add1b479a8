"""Oracle: per-device vs pooled logistic classifiers on raw generated features.

Run directly to print the accuracy gap per shift strength; the frozen numbers
live in ``fixtures/shift_gap.json``.
"""
import json
import sys

import numpy as np
from sklearn.linear_model import LogisticRegression

from cloudadapt.synthdata import make_corpus, stack


def features(samples, vocab):
    b = stack(samples)
    bag = np.zeros((len(b), vocab))
    for i in range(len(b)):
        np.add.at(bag[i], b.tokens[i, :b.lengths[i]], 1.0 / b.lengths[i])
    return np.hstack([b.frames.mean(axis=1), bag]), b.labels


def shift_gap(shift, seed=0, n_hist=2000, n_rt=500):
    corpus = make_corpus(3, n_hist, n_rt, 10, shift, seed)
    vocab = corpus[0].vocab
    tr = [features(d.history, vocab) for d in corpus]
    te = [features(d.realtime, vocab) for d in corpus]
    pooled = LogisticRegression(max_iter=2000).fit(np.vstack([x for x, _ in tr]), np.concatenate([y for _, y in tr]))
    per, pool = [], []
    for (xtr, ytr), (xte, yte) in zip(tr, te):
        clf = LogisticRegression(max_iter=2000).fit(xtr, ytr)
        per.append(clf.score(xte, yte))
        pool.append(pooled.score(xte, yte))
    return float(np.mean(per)), float(np.mean(pool))


if __name__ == "__main__":
    out = {}
    for s in [0.0, 1.0, 2.0, 3.0]:
        per, pool = shift_gap(s)
        out[str(s)] = {"per_device": per, "pooled": pool, "gap": per - pool}
        print(s, round(per, 4), round(pool, 4), round(per - pool, 4), file=sys.stderr)
    print(json.dumps(out, indent=2))
