"""Frame-level k-means pseudo-labels.

Stage 1 clusters MFCC frames (100 clusters at paper scale); stage 2 reclusters
hidden states taken from a trained encoder layer (500 at paper scale). Lloyd
iterations with k-means++ seeding, deterministic for a given seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class ClusterModel:
    centroids: np.ndarray          # (K, dim)
    feature_space: str = "mfcc"    # "mfcc" | "encoder_layer_<L>"
    seed: int = 0
    inertia_curve: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise ValueError("centroids must be a non-empty (K, dim) array")
        if not np.all(np.isfinite(self.centroids)):
            raise ValueError("centroids must be finite")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def save(self, path: str | Path) -> None:
        header = {
            "k": self.k,
            "dim": self.dim,
            "seed": self.seed,
            "feature_space": self.feature_space,
            "dtype": "f4le",
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            fh.write(self.centroids.astype("<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "ClusterModel":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode("utf-8"))
            payload = fh.read()
        cents = np.frombuffer(payload, dtype="<f4").reshape(header["k"], header["dim"])
        return cls(cents.astype(np.float64), feature_space=header["feature_space"],
                   seed=header["seed"])


def _sq_dists(x: np.ndarray, cents: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, (N, K). Formula keeps exact ties exact
    when coordinates are exact."""
    d2 = (
        (x * x).sum(axis=1)[:, None]
        - 2.0 * x @ cents.T
        + (cents * cents).sum(axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    cents = np.empty((k, x.shape[1]))
    cents[0] = x[rng.integers(n)]
    d2 = _sq_dists(x, cents[:1])[:, 0]
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            cents[j] = x[rng.integers(n)]
        else:
            cents[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, _sq_dists(x, cents[j:j + 1])[:, 0])
    return cents


def kmeans_fit(features: np.ndarray, k: int, max_iters: int = 100,
               seed: int = 0) -> ClusterModel:
    """Lloyd's algorithm with k-means++ initialization.

    Stops when no assignment changes or after max_iters; inertia is recorded
    per iteration and is non-increasing. Raises if the data has fewer than k
    distinct rows.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be (N, dim)")
    if k < 1:
        raise ValueError("k must be >= 1")
    n_distinct = len(np.unique(x, axis=0))
    if n_distinct < k:
        raise ValueError(f"need at least k={k} distinct frames, got {n_distinct}")

    rng = np.random.default_rng(seed)
    cents = _kmeanspp_init(x, k, rng)
    assign_prev = None
    inertia_curve: list[float] = []
    for _ in range(max_iters):
        d2 = _sq_dists(x, cents)
        assign = d2.argmin(axis=1)
        # Re-seat empty clusters on the currently worst-fit points.
        empty = np.setdiff1d(np.arange(k), assign)
        if len(empty):
            cost = d2[np.arange(len(x)), assign]
            worst = np.argsort(-cost, kind="stable")
            for slot, cid in enumerate(empty):
                cents[cid] = x[worst[slot]]
                assign[worst[slot]] = cid
        for cid in range(k):
            members = x[assign == cid]
            if len(members):
                cents[cid] = members.mean(axis=0)
        inertia = float(_sq_dists(x, cents).min(axis=1).sum())
        inertia_curve.append(inertia)
        if assign_prev is not None and np.array_equal(assign, assign_prev):
            break
        assign_prev = assign
    return ClusterModel(cents, seed=seed, inertia_curve=inertia_curve)


def assign(model: ClusterModel, frames: np.ndarray) -> np.ndarray:
    """Nearest-centroid labels for each frame row; ties go to the lowest id."""
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise ValueError(f"frames must be (N, {model.dim}), got {x.shape}")
    return _sq_dists(x, model.centroids).argmin(axis=1).astype(np.int64)


def refit_from_encoder(encoder, feature_mats, layer: int, k: int,
                       seed: int = 0, max_iters: int = 100,
                       frame_subsample: int = 1) -> ClusterModel:
    """Stage-2 pseudo-labels: cluster hidden states from one encoder layer.

    feature_mats is an iterable of (frames, feat_dim) arrays; the encoder runs
    in eval mode. frame_subsample keeps every nth frame to bound memory.
    """
    if frame_subsample < 1:
        raise ValueError("frame_subsample must be >= 1")
    states = []
    for vals in feature_mats:
        h = encoder.layer_states(np.asarray(vals, dtype=np.float64), layer)
        states.append(h[::frame_subsample])
    pool = np.concatenate(states, axis=0)
    model = kmeans_fit(pool, k, max_iters=max_iters, seed=seed)
    model.feature_space = f"encoder_layer_{layer}"
    return model
