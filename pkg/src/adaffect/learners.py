"""Binary classifiers written from scratch: LDA, linear SVM and RBF SVM, plus
group-aware inner cross-validation for hyperparameter selection.

Labels are 0/1 at the public surface (1 = High) and +-1 inside the SVM.
"""

from __future__ import annotations

import itertools
import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

GRID = tuple(10.0 ** np.arange(-3, 4))
CLASSIFIERS = ("LDA", "LSVM", "RSVM")


class DegenerateLabelsError(ValueError):
    """Training labels contain a single class."""


def _check_binary(y):
    y = np.asarray(y)
    classes = np.unique(y)
    if len(classes) < 2:
        raise DegenerateLabelsError(f"need both classes, got only {classes.tolist()}")
    return y


def _signs(y) -> np.ndarray:
    y = np.asarray(y)
    return np.where(y > 0, 1.0, -1.0)


# -- preprocessing -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=float)
        sd = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.scale


# -- LDA ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LdaModel:
    w: np.ndarray
    b: float
    priors: tuple  # (P(Low), P(High))

    def decision_function(self, X):
        return np.asarray(X, dtype=float) @ self.w + self.b

    def predict(self, X):
        return (self.decision_function(X) >= 0).astype(int)


def train_lda(X, y, shrinkage: float = 1e-6) -> LdaModel:
    """Two-class Fisher discriminant with a shared (pooled) covariance.

    The pooled covariance is ridge-regularised by ``shrinkage * tr(S)/d``
    so that rank-deficient inputs stay solvable; the threshold sits midway
    between the class means, shifted by the log prior ratio.
    """
    X = np.asarray(X, dtype=float)
    y = _check_binary(y) > 0
    pos, neg = X[y], X[~y]
    mu_p, mu_n = pos.mean(axis=0), neg.mean(axis=0)
    d = X.shape[1]
    resid = np.vstack([pos - mu_p, neg - mu_n])
    dof = max(len(X) - 2, 1)
    S = resid.T @ resid / dof
    ridge = shrinkage * (np.trace(S) / d if np.trace(S) > 0 else 1.0)
    A = S + ridge * np.eye(d)
    delta = mu_p - mu_n
    try:
        w = np.linalg.solve(A, delta)
    except np.linalg.LinAlgError:
        w = np.linalg.lstsq(A, delta, rcond=None)[0]
    prior_p = len(pos) / len(X)
    b = -w @ (mu_p + mu_n) / 2 + np.log(prior_p / (1 - prior_p))
    return LdaModel(w, float(b), (1 - prior_p, prior_p))


# -- SVM ---------------------------------------------------------------------

def kernel_matrix(A, B, kernel: str = "linear", gamma: float = 1.0) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if kernel == "linear":
        return A @ B.T
    if kernel == "rbf":
        sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2 * A @ B.T
        return np.exp(-gamma * np.maximum(sq, 0))
    raise ValueError(f"unknown kernel {kernel!r}")


@dataclass(frozen=True, eq=False)
class SvmModel:
    kernel: str
    gamma: float
    C: float
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i for the support vectors
    b: float
    converged: bool = True
    n_iter: int = 0
    seed: int = 0

    def decision_function(self, X):
        if len(self.support_vectors) == 0:
            return np.full(len(X), self.b)
        return kernel_matrix(X, self.support_vectors, self.kernel, self.gamma) @ self.dual_coef + self.b

    def predict(self, X):
        return (self.decision_function(X) >= 0).astype(int)

    def to_dict(self) -> dict:
        return {"type": "svm", "kernel": self.kernel, "gamma": self.gamma, "C": self.C,
                "support_vectors": self.support_vectors.tolist(), "dual_coef": self.dual_coef.tolist(),
                "b": self.b, "converged": self.converged, "n_iter": self.n_iter, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        sv = np.array(d["support_vectors"], dtype=float)
        return cls(d["kernel"], d["gamma"], d["C"], sv.reshape(len(sv), -1) if sv.size else sv.reshape(0, 0),
                   np.array(d["dual_coef"], dtype=float), d["b"], d["converged"], d["n_iter"], d["seed"])


@dataclass(frozen=True)
class SmoResult:
    alpha: np.ndarray
    b: float
    converged: bool
    n_iter: int


def _bias(alpha, grad, y, C, tau=1e-12):
    yg = y * grad
    free = (alpha > tau) & (alpha < C - tau)
    if free.any():
        return float(-yg[free].mean())
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
    hi = np.max(-yg[up]) if up.any() else 0.0
    lo = np.min(-yg[low]) if low.any() else 0.0
    return float((hi + lo) / 2)


def _smo_loop(Q, K, y, C, tol, max_iter, random_partner, draws):
    """Working-set loop shared by both partner rules; returns (alpha, grad, converged, n_iter).

    Plain loops so that it compiles under numba; ``draws`` holds one uniform
    number per iteration for the random partner rule.
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    it = 0
    while it < max_iter:
        it += 1
        i = -1
        m = -np.inf
        lo = np.inf
        for t in range(n):
            sc = -y[t] * grad[t]
            up = alpha[t] < C if y[t] > 0 else alpha[t] > 0
            low = alpha[t] > 0 if y[t] > 0 else alpha[t] < C
            if up and sc > m:
                m = sc
                i = t
            if low and sc < lo:
                lo = sc
        if i < 0 or lo == np.inf or m - lo < tol:
            return alpha, grad, True, it
        j = -1
        if random_partner:
            count = 0
            for t in range(n):
                low = alpha[t] > 0 if y[t] > 0 else alpha[t] < C
                if low and -y[t] * grad[t] < m:
                    count += 1
            pick = int(draws[it - 1] * count)
            for t in range(n):
                low = alpha[t] > 0 if y[t] > 0 else alpha[t] < C
                if low and -y[t] * grad[t] < m:
                    if pick == 0:
                        j = t
                        break
                    pick -= 1
        else:
            best = np.inf
            for t in range(n):
                sc = -y[t] * grad[t]
                low = alpha[t] > 0 if y[t] > 0 else alpha[t] < C
                if low and sc < m:
                    a = Q[i, i] + Q[t, t] - 2 * K[i, t]
                    if a <= 1e-12:
                        a = 1e-12
                    gain = -((m - sc) ** 2) / a
                    if gain < best:
                        best = gain
                        j = t
        a_ij = K[i, i] + K[j, j] - 2 * K[i, j]
        if a_ij <= 1e-12:
            a_ij = 1e-12
        ai_old = alpha[i]
        aj_old = alpha[j]
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / a_ij
            diff = ai_old - aj_old
            ai = ai_old + delta
            aj = aj_old + delta
            if diff > 0 and aj < 0:
                aj = 0.0
                ai = diff
            elif diff <= 0 and ai < 0:
                ai = 0.0
                aj = -diff
            if diff > 0 and ai > C:
                ai = C
                aj = C - diff
            elif diff <= 0 and aj > C:
                aj = C
                ai = C + diff
        else:
            delta = (grad[i] - grad[j]) / a_ij
            s = ai_old + aj_old
            ai = ai_old - delta
            aj = aj_old + delta
            if s > C and ai > C:
                ai = C
                aj = s - C
            elif s <= C and aj < 0:
                aj = 0.0
                ai = s
            if s > C and aj > C:
                aj = C
                ai = s - C
            elif s <= C and ai < 0:
                ai = 0.0
                aj = s
        dai = ai - ai_old
        daj = aj - aj_old
        alpha[i] = ai
        alpha[j] = aj
        for t in range(n):
            grad[t] += Q[t, i] * dai + Q[t, j] * daj
    return alpha, grad, False, it


try:
    import numba

    _smo_loop = numba.njit(cache=True)(_smo_loop)
except ImportError:  # pure-Python fallback, same arithmetic
    pass


def smo(K, y, C: float, tol: float = 1e-3, max_iter: int = 200_000,
        selection: str = "mvp", seed: int = 0) -> SmoResult:
    """Solve the soft-margin SVM dual by pairwise (two-variable) updates.

    ``K`` is the precomputed kernel matrix and ``y`` holds +-1 labels.
    ``selection="mvp"`` picks the maximal-violating pair with second-order
    choice of the partner; ``"random"`` keeps the most violating first index
    and draws its partner at random from the eligible set. Stops when the
    KKT gap ``max(-y*grad | up) - min(-y*grad | low)`` drops below ``tol``.
    """
    if selection not in ("mvp", "random"):
        raise ValueError(f"unknown selection rule {selection!r}")
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    Q = K * np.outer(y, y)
    draws = (np.random.default_rng(seed).random(max_iter) if selection == "random"
             else np.zeros(1))
    alpha, grad, converged, it = _smo_loop(Q, K, y, float(C), float(tol), int(max_iter),
                                           selection == "random", draws)
    b = _bias(alpha, grad, y, C)
    return SmoResult(alpha, b, bool(converged), int(it))


def dual_objective(alpha, K, y) -> float:
    """Maximisation form: sum(alpha) - 1/2 alpha^T Q alpha."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def kkt_violation(alpha, b, K, y, C, tau: float = 1e-8) -> float:
    """Largest violation of the soft-margin KKT conditions on the training set."""
    margin = y * (K @ (alpha * y) + b)
    at_zero = alpha <= tau
    at_c = alpha >= C - tau
    free = ~at_zero & ~at_c
    v = np.zeros_like(margin)
    v[at_zero] = np.maximum(0, 1 - margin[at_zero])
    v[at_c] = np.maximum(0, margin[at_c] - 1)
    v[free] = np.abs(margin[free] - 1)
    return float(v.max()) if len(v) else 0.0


def train_svm(X, y, kernel: str = "linear", C: float = 1.0, gamma: float = 1.0, tol: float = 1e-3,
              max_iter: int = 200_000, selection: str = "mvp", seed: int = 0, K=None) -> SvmModel:
    """Soft-margin SVM trained with :func:`smo`.

    A run that hits ``max_iter`` returns its last iterate with
    ``converged=False`` instead of raising.
    """
    if not C > 0:
        raise ValueError("C must be positive")
    X = np.asarray(X, dtype=float)
    ys = _signs(_check_binary(y))
    if K is None:
        K = kernel_matrix(X, X, kernel, gamma)
    res = smo(K, ys, C, tol=tol, max_iter=max_iter, selection=selection, seed=seed)
    if not res.converged:
        log.warning("SMO stopped at max_iter=%d before reaching tol=%g (C=%g)", max_iter, tol, C)
    sv = res.alpha > 0
    return SvmModel(kernel, float(gamma), float(C), X[sv], res.alpha[sv] * ys[sv], res.b,
                    res.converged, res.n_iter, seed)


# -- classifier front end ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConstantModel:
    label: int

    def predict(self, X):
        return np.full(len(X), self.label, dtype=int)


@dataclass(frozen=True, eq=False)
class FittedClassifier:
    """A trained model together with the standardisation fitted on its training data."""

    kind: str
    params: dict
    scaler: Optional[Standardizer]
    model: object

    def predict(self, X):
        Z = self.scaler.transform(X) if self.scaler is not None else np.asarray(X, dtype=float)
        return self.model.predict(Z)

    def to_dict(self) -> dict:
        m = self.model
        if isinstance(m, SvmModel):
            md = m.to_dict()
        elif isinstance(m, LdaModel):
            md = {"type": "lda", "w": m.w.tolist(), "b": m.b, "priors": list(m.priors)}
        else:
            md = {"type": "constant", "label": m.label}
        sc = None if self.scaler is None else {"mean": self.scaler.mean.tolist(), "scale": self.scaler.scale.tolist()}
        return {"kind": self.kind, "params": self.params, "scaler": sc, "model": md}

    @classmethod
    def from_dict(cls, d):
        md = d["model"]
        if md["type"] == "svm":
            model = SvmModel.from_dict(md)
        elif md["type"] == "lda":
            model = LdaModel(np.array(md["w"], dtype=float), md["b"], tuple(md["priors"]))
        else:
            model = ConstantModel(md["label"])
        sc = d["scaler"]
        scaler = None if sc is None else Standardizer(np.array(sc["mean"]), np.array(sc["scale"]))
        return cls(d["kind"], d["params"], scaler, model)


def save_model(clf: FittedClassifier, path) -> None:
    with open(path, "w") as fh:
        json.dump(clf.to_dict(), fh)


def load_model(path) -> FittedClassifier:
    with open(path) as fh:
        return FittedClassifier.from_dict(json.load(fh))


@dataclass(frozen=True)
class HyperGrid:
    C: tuple = GRID
    gamma: tuple = GRID

    def __post_init__(self):
        if not self.C or not self.gamma:
            raise ValueError("hyperparameter grids must be non-empty")
        object.__setattr__(self, "C", tuple(sorted(self.C)))
        object.__setattr__(self, "gamma", tuple(sorted(self.gamma)))

    def points(self, kind: str) -> list:
        """Grid points in tie-break order (smaller C first, then smaller gamma)."""
        if kind == "LDA":
            return [{}]
        if kind == "LSVM":
            return [{"C": c} for c in self.C]
        if kind == "RSVM":
            return [{"C": c, "gamma": g} for c, g in itertools.product(self.C, self.gamma)]
        raise ValueError(f"unknown classifier {kind!r}")


def _sq_dists(Z):
    sq = (Z * Z).sum(1)
    return np.maximum(sq[:, None] + sq[None, :] - 2 * Z @ Z.T, 0)


def fit_classifier(kind: str, X, y, params: Optional[dict] = None, standardize: bool = True,
                   seed: int = 0, sq_dists=None, tol: float = 1e-3) -> FittedClassifier:
    """Standardise on ``X`` and train ``kind`` with ``params``.

    Single-class training data yields a constant predictor.
    """
    params = dict(params or {})
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    scaler = Standardizer.fit(X) if standardize else None
    Z = scaler.transform(X) if scaler is not None else X
    if len(np.unique(y)) < 2:
        return FittedClassifier(kind, params, scaler, ConstantModel(int(y[0]) if len(y) else 0))
    if kind == "LDA":
        model = train_lda(Z, y, **params)
    elif kind == "LSVM":
        model = train_svm(Z, y, "linear", C=params.get("C", 1.0), seed=seed, tol=tol)
    elif kind == "RSVM":
        gamma = params.get("gamma", 1.0)
        K = None if sq_dists is None else np.exp(-gamma * sq_dists)
        model = train_svm(Z, y, "rbf", C=params.get("C", 1.0), gamma=gamma, seed=seed, K=K, tol=tol)
    else:
        raise ValueError(f"unknown classifier {kind!r}")
    return FittedClassifier(kind, params, scaler, model)


def group_kfold(groups, k: int, rng, labels=None) -> list:
    """Shuffle unique groups and deal them into ``k`` folds of near-equal size.

    With ``labels`` the shuffled groups are dealt round-robin class by class
    (a group's class is its majority row label), so every fold gets a
    positive group whenever there are at least ``k`` of them. Returns a list
    of boolean test masks over the rows.
    """
    groups = np.asarray(groups)
    uniq = np.unique(groups)
    shuffled = uniq[rng.permutation(len(uniq))]
    if labels is None:
        folds = np.array_split(shuffled, k)
    else:
        labels = np.asarray(labels)
        cls = np.array([int(np.mean(labels[groups == g]) >= 0.5) for g in shuffled])
        seq = np.concatenate([shuffled[cls == 1], shuffled[cls == 0]])
        folds = [seq[i::k] for i in range(k)]
    return [np.isin(groups, f) for f in folds]


def inner_cv_select(X, y, groups, kind: str, grid: HyperGrid = HyperGrid(), k: int = 5,
                    seed: int = 0, standardize: bool = True, score=None, return_scores: bool = False,
                    stratify: bool = True):
    """Pick the grid point with the best mean F1 over a group-aware k-fold split.

    Ties go to the earlier point in :meth:`HyperGrid.points` order.
    """
    from .evaluation import f1_score

    score = score or f1_score
    points = grid.points(kind)
    n_groups = len(np.unique(groups))
    if n_groups < k:
        warnings.warn(f"only {n_groups} groups for {k}-fold inner CV; using {n_groups} folds", stacklevel=2)
        k = n_groups
    if len(points) == 1 or k < 2:
        return (points[0], {0: None}) if return_scores else points[0]
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    masks = group_kfold(groups, k, np.random.default_rng(seed), y if stratify else None)
    totals = np.zeros(len(points))
    for test in masks:
        train = ~test
        scaler = Standardizer.fit(X[train]) if standardize else None
        Ztr = scaler.transform(X[train]) if scaler else X[train]
        Zte = scaler.transform(X[test]) if scaler else X[test]
        D = _sq_dists(Ztr) if kind == "RSVM" else None
        for p, params in enumerate(points):
            clf = fit_classifier(kind, Ztr, y[train], params, standardize=False, seed=seed, sq_dists=D)
            totals[p] += score(y[test], clf.predict(Zte))
    means = totals / len(masks)
    best = int(np.flatnonzero(means >= means.max() - 1e-12)[0])
    if return_scores:
        return points[best], dict(enumerate(means))
    return points[best]
