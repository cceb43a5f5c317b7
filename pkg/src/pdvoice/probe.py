"""Deterministic multinomial logistic probe for feature diagnostics."""

from __future__ import annotations

import numpy as np

from .nn import softmax, softmax_cross_entropy


def fit_linear_probe(x: np.ndarray, y: np.ndarray, num_classes: int,
                     epochs: int = 300, lr: float = 0.05, l2: float = 0.05,
                     seed: int = 0):
    """Full-batch Adam on L2-regularized softmax regression over standardized
    features. Returns (w, b, mean, std)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0] = 1.0
    xs = (x - mean) / std
    rng = np.random.default_rng(seed)
    w = rng.normal(0, 0.01, (x.shape[1], num_classes))
    b = np.zeros(num_classes)
    mw = np.zeros_like(w)
    vw = np.zeros_like(w)
    mb = np.zeros_like(b)
    vb = np.zeros_like(b)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for t in range(1, epochs + 1):
        _, dlogits = softmax_cross_entropy(xs @ w + b, y)
        gw = xs.T @ dlogits + l2 * w
        gb = dlogits.sum(axis=0)
        for g, m, v, p in ((gw, mw, vw, w), (gb, mb, vb, b)):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return w, b, mean, std


def probe_predict(model, x: np.ndarray) -> np.ndarray:
    w, b, mean, std = model
    return softmax((np.asarray(x, dtype=np.float64) - mean) / std @ w + b).argmax(axis=1)


def probe_accuracy(x_train, y_train, x_test, y_test, num_classes: int,
                   seed: int = 0) -> float:
    """Train on one split, score on the other."""
    model = fit_linear_probe(x_train, y_train, num_classes, seed=seed)
    return float(np.mean(probe_predict(model, x_test) == np.asarray(y_test)))


def loso_speaker_accuracy(vectors, labels, speakers) -> float:
    """Leave-one-speaker-out calibration oracle: train a probe without the
    speaker, majority-vote their utterances, score at speaker level. Ties in
    the vote go to class 1 (PD)."""
    vectors = np.asarray(vectors)
    labels = np.asarray(labels)
    speakers = np.asarray(speakers)
    spk_ids = sorted(set(speakers))
    correct = 0
    for spk in spk_ids:
        tr = speakers != spk
        te = speakers == spk
        model = fit_linear_probe(vectors[tr], labels[tr], 2)
        preds = probe_predict(model, vectors[te])
        vote = 1 if np.sum(preds == 1) * 2 >= len(preds) else 0
        correct += vote == labels[te][0]
    return correct / len(spk_ids)


def heldout_speaker_probe_accuracy(vectors, targets, speakers, num_classes: int,
                                   holdout_fraction: float = 0.5,
                                   seed: int = 0) -> float:
    """Utterance-level probe accuracy on speakers held out of probe training."""
    vectors = np.asarray(vectors)
    targets = np.asarray(targets)
    speakers = np.asarray(speakers)
    spk_ids = sorted(set(speakers))
    rng = np.random.default_rng(seed)
    n_test = max(1, int(round(holdout_fraction * len(spk_ids))))
    test_set = set(np.array(spk_ids)[rng.permutation(len(spk_ids))[:n_test]])
    te = np.array([s in test_set for s in speakers])
    return probe_accuracy(vectors[~te], targets[~te], vectors[te], targets[te],
                          num_classes)
