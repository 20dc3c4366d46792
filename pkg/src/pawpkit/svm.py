"""Regularized linear maximum-margin classifier.

The solver is dual coordinate descent on the L1-hinge dual with the usual
shrinking heuristic, the bias handled as an augmented always-one feature
(so the bias is weakly regularized, the standard linear-SVM convention).
Each coordinate step is an exact one-dimensional minimization, so the dual
objective can only decrease; that trajectory is recorded and asserted on
every fit. Training stops when the duality gap falls below
``tol * max(1, primal)``, or when a whole shrink cycle improves the dual
objective by less than ``tol * max(1, |dual|)`` (the objective has hit the
requested resolution).

Fold shuffling and the solver's coordinate permutations are seeded, so a
fit is reproducible given the data order and the seed.

Probabilities come from Platt scaling: a logistic fit of labels on
decision scores, meant to be fed out-of-fold scores so the calibration
never sees its own training predictions.
"""

import logging
from dataclasses import dataclass, replace

import numba
import numpy as np

from .errors import DataError, SingleClassError
from .evaluation import roc_auc

log = logging.getLogger(__name__)

DEFAULT_C_GRID = (0.001, 0.01, 0.1, 1.0)
DEFAULT_FOLDS = 10
DEFAULT_TOL = 1e-6
MAX_EPOCHS = 1000
PLATT_LOGIT_BOUND = 30.0


@dataclass
class LinearClassifier:
    """Linear decision function ``s(x) = w . x + b`` plus optional calibration."""

    weights: np.ndarray
    bias: float
    c: float
    platt_a: float | None = None
    platt_b: float | None = None
    epochs_run: int = 0
    duality_gap: float = 0.0


@numba.njit(cache=True)
def _duality_gap(X, y, caps, w, alpha_sum):  # pragma: no cover - jitted
    n, d = X.shape
    norm_sq = 0.0
    for j in range(d):
        norm_sq += w[j] * w[j]
    hinge_sum = 0.0
    for i in range(n):
        margin = 0.0
        for j in range(d):
            margin += w[j] * X[i, j]
        slack = 1.0 - y[i] * margin
        if slack > 0.0:
            hinge_sum += caps[i] * slack
    primal = 0.5 * norm_sq + hinge_sum
    return primal, primal - (alpha_sum - 0.5 * norm_sq)


@numba.njit(cache=True)
def _dual_cd(X, y, caps, tol, max_epochs, seed):  # pragma: no cover - jitted
    # Dual coordinate descent with the usual shrinking heuristic: bounded
    # coordinates whose gradients are safely past the previous epoch's
    # violation range leave the sweep, and once the active set satisfies
    # the current projected-gradient tolerance the full set is restored
    # and checked. The PG tolerance tightens until the duality gap meets
    # the requested tolerance.
    n, d = X.shape
    w = np.zeros(d)
    alpha = np.zeros(n)
    qdiag = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += X[i, j] * X[i, j]
        qdiag[i] = acc
    active = np.arange(n)
    n_active = n
    hi_guard = np.inf
    lo_guard = -np.inf
    eps_pg = 0.1
    dual_path = np.empty(max_epochs)
    np.random.seed(seed)
    epochs = 0
    gap = np.inf
    alpha_sum = 0.0
    last_checked_dual = np.inf
    for ep in range(max_epochs):
        for i in range(n_active - 1, 0, -1):
            j = np.random.randint(0, i + 1)
            tmp = active[i]
            active[i] = active[j]
            active[j] = tmp
        hi = -np.inf
        lo = np.inf
        k = 0
        while k < n_active:
            i = active[k]
            if qdiag[i] <= 0.0:
                k += 1
                continue
            g = 0.0
            for j in range(d):
                g += w[j] * X[i, j]
            g = y[i] * g - 1.0
            pg = g
            if alpha[i] <= 0.0:
                if g > hi_guard:
                    n_active -= 1
                    active[k] = active[n_active]
                    active[n_active] = i
                    continue
                if g > 0.0:
                    pg = 0.0
            elif alpha[i] >= caps[i]:
                if g < lo_guard:
                    n_active -= 1
                    active[k] = active[n_active]
                    active[n_active] = i
                    continue
                if g < 0.0:
                    pg = 0.0
            if pg > hi:
                hi = pg
            if pg < lo:
                lo = pg
            if pg != 0.0:
                new_alpha = alpha[i] - g / qdiag[i]
                if new_alpha < 0.0:
                    new_alpha = 0.0
                elif new_alpha > caps[i]:
                    new_alpha = caps[i]
                delta = new_alpha - alpha[i]
                if delta != 0.0:
                    alpha_sum += delta
                    coef = delta * y[i]
                    for j in range(d):
                        w[j] += coef * X[i, j]
                    alpha[i] = new_alpha
            k += 1
        norm_sq = 0.0
        for j in range(d):
            norm_sq += w[j] * w[j]
        dual_path[ep] = 0.5 * norm_sq - alpha_sum  # minimized form
        epochs = ep + 1
        if hi - lo < eps_pg or hi == -np.inf:
            if n_active == n:
                primal, gap = _duality_gap(X, y, caps, w, alpha_sum)
                bound = tol * (1.0 if primal < 1.0 else primal)
                if gap <= bound:
                    break
                # objective-tolerance stop: the dual stopped improving at
                # the requested resolution over a whole shrink cycle
                dual_now = dual_path[ep]
                dual_scale = 1.0 if abs(dual_now) < 1.0 else abs(dual_now)
                if last_checked_dual - dual_now < tol * dual_scale:
                    break
                last_checked_dual = dual_now
                eps_pg *= 0.1
                if eps_pg < 1e-12:
                    break
            else:
                n_active = n
                hi_guard = np.inf
                lo_guard = -np.inf
        else:
            hi_guard = hi if hi > 0.0 else np.inf
            lo_guard = lo if lo < 0.0 else -np.inf
    if gap == np.inf:
        _, gap = _duality_gap(X, y, caps, w, alpha_sum)
    return w, alpha, dual_path[:epochs], epochs, gap


def train(
    features: np.ndarray,
    labels: np.ndarray,
    c: float = 1.0,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    balanced: bool = False,
) -> LinearClassifier:
    """Fit the hinge-loss classifier at regularization constant ``c``.

    ``labels`` may be {0,1} or {-1,+1}; anything > 0 is the positive class.
    ``balanced=True`` scales each class's loss inversely to its prevalence.
    """
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("features must be a 2D matrix")
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite feature values")
    y = np.where(np.asarray(labels) > 0, 1.0, -1.0)
    if y.shape[0] != X.shape[0]:
        raise DataError("features and labels disagree on sample count")
    n_pos = int((y > 0).sum())
    if n_pos == 0 or n_pos == y.shape[0]:
        raise SingleClassError("training needs both classes present")
    if c <= 0:
        raise DataError(f"regularization constant must be positive, got {c}")

    caps = np.full(y.shape[0], float(c))
    if balanced:
        n = y.shape[0]
        caps[y > 0] = c * n / (2.0 * n_pos)
        caps[y < 0] = c * n / (2.0 * (n - n_pos))

    augmented = np.hstack([X, np.ones((X.shape[0], 1))])
    w, _, dual_path, epochs, gap = _dual_cd(
        augmented, y, caps, float(tol), MAX_EPOCHS, np.uint32(seed)
    )
    drops = np.diff(dual_path)
    if drops.size and drops.max() > 1e-9 * (1.0 + np.abs(dual_path[:-1]).max()):
        raise AssertionError("dual objective increased during coordinate descent")
    if gap > tol * max(1.0, abs(dual_path[-1])) * 10:
        log.warning("solver stopped at duality gap %.3g after %d epochs", gap, epochs)
    return LinearClassifier(
        weights=w[:-1], bias=float(w[-1]), c=float(c), epochs_run=epochs, duality_gap=float(gap)
    )


def decision_scores(clf: LinearClassifier, features: np.ndarray) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != clf.weights.shape[0]:
        raise DataError(
            f"feature width {X.shape[-1] if X.ndim == 2 else '?'} does not match "
            f"classifier ({clf.weights.shape[0]})"
        )
    return X @ clf.weights + clf.bias


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def fit_platt(scores: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Maximum-likelihood logistic fit of labels on decision scores.

    Perfect separation is guarded by clipping the fitted logits to
    +-PLATT_LOGIT_BOUND over the provided scores. Constant scores yield an
    intercept-only fit (probability = prevalence).
    """
    s = np.asarray(scores, dtype=np.float64)
    t = (np.asarray(labels) > 0).astype(np.float64)
    if s.shape[0] != t.shape[0] or s.ndim != 1:
        raise DataError("scores and labels must be aligned 1D arrays")
    if t.min() == t.max():
        raise SingleClassError("calibration needs both classes present")

    prevalence = t.mean()
    if s.std() == 0.0:
        b = float(np.log(prevalence / (1.0 - prevalence)))
        return 0.0, float(np.clip(b, -PLATT_LOGIT_BOUND, PLATT_LOGIT_BOUND))

    def nll(a, b):
        z = a * s + b
        # log(1 + e^-z) stable in both tails
        return float(np.sum(np.logaddexp(0.0, -z) + (1.0 - t) * z))

    a, b = 0.0, float(np.log(prevalence / (1.0 - prevalence)))
    current = nll(a, b)
    for _ in range(100):
        p = _sigmoid(a * s + b)
        residual = p - t
        grad = np.array([np.dot(residual, s), residual.sum()])
        wgt = np.maximum(p * (1.0 - p), 1e-12)
        h11 = np.dot(wgt, s * s)
        h12 = np.dot(wgt, s)
        h22 = wgt.sum()
        hess = np.array([[h11, h12], [h12, h22]]) + 1e-12 * np.eye(2)
        step = np.linalg.solve(hess, grad)
        scale = 1.0
        for _ in range(30):
            cand = nll(a - scale * step[0], b - scale * step[1])
            if cand <= current:
                break
            scale *= 0.5
        a -= scale * step[0]
        b -= scale * step[1]
        improved = current - cand
        current = cand
        if improved < 1e-12 * (1.0 + abs(current)):
            break

    worst = float(np.abs(a * s + b).max())
    if worst > PLATT_LOGIT_BOUND:
        shrink = PLATT_LOGIT_BOUND / worst
        a *= shrink
        b *= shrink
    return float(a), float(b)


def calibrate(clf: LinearClassifier, scores: np.ndarray, labels: np.ndarray) -> LinearClassifier:
    """Return a copy of ``clf`` with Platt parameters fitted on the given
    (ideally out-of-fold) scores."""
    a, b = fit_platt(scores, labels)
    return replace(clf, platt_a=a, platt_b=b)


def predict_proba(clf: LinearClassifier, features: np.ndarray) -> np.ndarray:
    if clf.platt_a is None or clf.platt_b is None:
        raise DataError("classifier is not calibrated; run calibrate() first")
    return _sigmoid(clf.platt_a * decision_scores(clf, features) + clf.platt_b)


def stratified_folds(labels: np.ndarray, folds: int, seed: int = 0):
    """Seeded stratified fold assignment; returns one index array per fold."""
    y = np.asarray(labels) > 0
    n = y.shape[0]
    if folds < 2:
        raise DataError(f"need at least 2 folds, got {folds}")
    if n < folds:
        raise DataError(f"cannot split {n} samples into {folds} folds")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos < folds or n_neg < folds:
        raise DataError(
            f"stratification impossible: {n_pos} positives / {n_neg} negatives "
            f"for {folds} folds"
        )
    rng = np.random.default_rng(seed)
    assignments = np.empty(n, dtype=np.int64)
    for cls in (True, False):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        assignments[idx] = np.arange(idx.size) % folds
    return [np.flatnonzero(assignments == k) for k in range(folds)]


def cross_val_scores(
    features: np.ndarray,
    labels: np.ndarray,
    c: float,
    folds: int = DEFAULT_FOLDS,
    seed: int = 0,
    balanced: bool = False,
) -> np.ndarray:
    """Out-of-fold decision scores at a fixed C (used for Platt calibration)."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    out = np.empty(X.shape[0])
    for k, val_idx in enumerate(stratified_folds(y, folds, seed)):
        train_mask = np.ones(X.shape[0], dtype=bool)
        train_mask[val_idx] = False
        clf = train(X[train_mask], y[train_mask], c=c, seed=seed + k, balanced=balanced)
        out[val_idx] = decision_scores(clf, X[val_idx])
    return out


def grid_search_cv(
    features: np.ndarray,
    labels: np.ndarray,
    grid=DEFAULT_C_GRID,
    folds: int = DEFAULT_FOLDS,
    seed: int = 0,
    balanced: bool = False,
):
    """Stratified k-fold grid search maximizing mean validation AUC.

    Returns (best_c, cv_table) where cv_table is a list of (c, fold, auc)
    rows. Ties on mean AUC go to the smallest C; duplicate grid entries are
    evaluated once.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    unique_grid = list(dict.fromkeys(float(c) for c in grid))
    if not unique_grid:
        raise DataError("empty C grid")
    fold_indices = stratified_folds(y, folds, seed)

    cv_table = []
    means = {}
    for c in unique_grid:
        aucs = []
        for k, val_idx in enumerate(fold_indices):
            train_mask = np.ones(X.shape[0], dtype=bool)
            train_mask[val_idx] = False
            clf = train(X[train_mask], y[train_mask], c=c, seed=seed + k, balanced=balanced)
            auc = roc_auc(decision_scores(clf, X[val_idx]), y[val_idx])
            cv_table.append((c, k, auc))
            aucs.append(auc)
        means[c] = float(np.mean(aucs))
    best_c = min(means, key=lambda c: (-means[c], c))
    return best_c, cv_table
