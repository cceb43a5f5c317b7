"""Non-neural reference classifiers over pooled utterance vectors.

LSRC reconstructs a test vector as a sparse combination of training exemplars
(FISTA on the L1-regularized least-squares problem) and picks the class with
the smallest reconstruction residual; the joint variant solves once against a
two-class dictionary, the per-class variant solves against each class
dictionary separately. The SVM is a primal hinge-loss SGD with a
Pegasos-style schedule. Ties everywhere resolve to PD.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _objective(d_mat, y, c, lam):
    r = y - d_mat @ c
    return 0.5 * float(r @ r) + lam * float(np.abs(c).sum())


def _soft(x, thr):
    return np.sign(x) * np.maximum(np.abs(x) - thr, 0.0)


def l1_ls_solve(d_mat: np.ndarray, y: np.ndarray, lam: float,
                max_iters: int = 2000, tol: float = 1e-12) -> np.ndarray:
    """Minimize 0.5||y - Dc||^2 + lam*||c||_1 with monotone FISTA.

    Momentum steps that would increase the objective fall back to a plain
    proximal step and reset the momentum, so the objective never increases.
    Terminates when the relative objective change drops below tol.
    """
    d_mat = np.asarray(d_mat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (np.all(np.isfinite(d_mat)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite inputs to l1_ls_solve")
    if d_mat.shape[0] != y.shape[0]:
        raise ValueError("dictionary and target dimensions differ")

    lip = np.linalg.norm(d_mat, 2) ** 2
    if lip == 0:
        return np.zeros(d_mat.shape[1])
    step = 1.0 / lip
    gram = d_mat.T @ d_mat
    dty = d_mat.T @ y

    x = np.zeros(d_mat.shape[1])
    z = x.copy()
    t = 1.0
    f_x = _objective(d_mat, y, x, lam)
    for _ in range(max_iters):
        grad = gram @ z - dty
        cand = _soft(z - step * grad, lam * step)
        f_cand = _objective(d_mat, y, cand, lam)
        if f_cand > f_x:
            # restart: plain proximal step from the last accepted iterate
            grad = gram @ x - dty
            cand = _soft(x - step * grad, lam * step)
            f_cand = _objective(d_mat, y, cand, lam)
            t = 1.0
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        z = cand + ((t - 1.0) / t_next) * (cand - x)
        x_prev_f = f_x
        x, f_x, t = cand, f_cand, t_next
        if abs(x_prev_f - f_x) < tol * max(1.0, abs(x_prev_f)):
            break
    return x


@dataclass
class Dictionary:
    """Unit-norm exemplar columns tagged with their class."""

    atoms: np.ndarray              # (dim, n) columns
    classes: np.ndarray            # (n,) of "PD" / "HC"
    mode: str = "joint"            # "joint" | "per_class"

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=np.float64)
        self.classes = np.asarray(self.classes)
        if self.atoms.ndim != 2 or self.atoms.shape[1] != len(self.classes):
            raise ValueError("atoms must be (dim, n) with one class tag per column")
        if self.mode not in ("joint", "per_class"):
            raise ValueError("mode must be joint or per_class")
        for c in ("PD", "HC"):
            if not np.any(self.classes == c):
                raise ValueError(f"dictionary needs at least one {c} column")
        norms = np.linalg.norm(self.atoms, axis=0)
        if np.any(norms == 0):
            raise ValueError("zero exemplar vector")
        self.atoms = self.atoms / norms

    @classmethod
    def from_training(cls, vectors: np.ndarray, labels, mode: str = "joint") -> "Dictionary":
        return cls(np.asarray(vectors, dtype=np.float64).T, np.asarray(labels), mode)


def lsrc_classify(d: Dictionary, y: np.ndarray, lam: float,
                  max_iters: int = 2000, tol: float = 1e-12) -> tuple[str, dict[str, float]]:
    """Minimum-residual sparse-representation classification.

    The test vector is unit-normalized before solving so the decision is
    invariant to positive rescaling. Residual ties go to PD.
    """
    y = np.asarray(y, dtype=np.float64)
    ny = np.linalg.norm(y)
    if ny > 0:
        y = y / ny
    residuals: dict[str, float] = {}
    if d.mode == "joint":
        c = l1_ls_solve(d.atoms, y, lam, max_iters, tol)
        for cls in ("PD", "HC"):
            sel = d.classes == cls
            residuals[cls] = float(np.linalg.norm(y - d.atoms[:, sel] @ c[sel]))
    else:
        for cls in ("PD", "HC"):
            sel = d.classes == cls
            c = l1_ls_solve(d.atoms[:, sel], y, lam, max_iters, tol)
            residuals[cls] = float(np.linalg.norm(y - d.atoms[:, sel] @ c))
    pred = "PD" if residuals["PD"] <= residuals["HC"] else "HC"
    return pred, residuals


@dataclass
class SvmModel:
    w: np.ndarray
    b: float
    c_reg: float
    feat_mean: np.ndarray = field(default=None)
    feat_std: np.ndarray = field(default=None)
    objective_curve: list[float] = field(default_factory=list)

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.feat_mean) / self.feat_std


def svm_train(vectors: np.ndarray, labels, c_reg: float = 1.0,
              epochs: int = 60, seed: int = 0) -> SvmModel:
    """Primal hinge-loss SGD with L2 regularization on a Pegasos schedule,
    returning the uniform average of the iterates (smooth, near-monotone
    objective). labels are "PD"/"HC"; PD maps to +1. Standardization
    statistics are fitted on the given (training) vectors only.
    """
    x = np.asarray(vectors, dtype=np.float64)
    lab = np.asarray(labels)
    y = np.where(lab == "PD", 1.0, -1.0)
    if len(np.unique(lab)) < 2:
        raise ValueError("svm_train needs both classes")

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0] = 1.0
    xs = (x - mean) / std

    n, dim = xs.shape
    reg = 1.0 / (c_reg * n)
    w = np.zeros(dim)
    b = 0.0
    w_avg = np.zeros(dim)
    b_avg = 0.0
    rng = np.random.default_rng(seed)
    t = 0
    curve = []
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (reg * t)
            margin = y[i] * (xs[i] @ w + b)
            w *= 1.0 - eta * reg
            if margin < 1.0:
                w += eta * y[i] * xs[i]
                b += eta * 0.01 * y[i]  # small unregularized bias step
            w_avg += (w - w_avg) / t
            b_avg += (b - b_avg) / t
        hinge = np.maximum(0.0, 1.0 - y * (xs @ w_avg + b_avg)).mean()
        curve.append(0.5 * reg * float(w_avg @ w_avg) + float(hinge))
    return SvmModel(w=w_avg, b=b_avg, c_reg=c_reg, feat_mean=mean, feat_std=std,
                    objective_curve=curve)


def svm_predict(model: SvmModel, vector: np.ndarray) -> str:
    x = np.asarray(vector, dtype=np.float64)
    if x.shape != model.w.shape:
        raise ValueError(f"expected vector of dim {model.w.shape[0]}, got {x.shape}")
    score = model.standardize(x) @ model.w + model.b
    return "PD" if score >= 0.0 else "HC"  # boundary goes to PD


def svm_decision(model: SvmModel, vector: np.ndarray) -> float:
    return float(model.standardize(np.asarray(vector, dtype=np.float64)) @ model.w + model.b)


HYPER_GRID = tuple(float(v) for v in np.logspace(-4, 0, 5))


def select_hyper(train_fn, score_fn, grid=HYPER_GRID):
    """Pick the grid value with the best validation score; first best wins."""
    best_val, best_score = None, -np.inf
    for v in grid:
        model = train_fn(v)
        s = score_fn(model)
        if s > best_score:
            best_val, best_score = v, s
    return best_val, best_score
