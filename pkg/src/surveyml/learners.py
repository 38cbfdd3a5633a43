"""Regression and propensity learners behind a uniform fit/predict contract.

The five benchmark propensity methods (logistic regression, CART, random
forest, gradient boosting, propensity-score stratification) plus the weighted
least-squares fit that defines GREG. Trees and forests are backed by
scikit-learn; the logistic solver and the Newton boosting loop are
implemented here because the surrounding estimators need their convergence
flags and stagewise structure.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from sklearn.ensemble import RandomForestRegressor
from sklearn.tree import DecisionTreeRegressor

DEFAULT_CLIP_FLOOR = 0.0005

REGRESSION = "regression"
PROPENSITY = "propensity"


class SingularSystemError(np.linalg.LinAlgError):
    """Weighted normal equations are rank deficient."""


class FoldFitError(RuntimeError):
    """A per-fold nuisance fit failed; carries the offending fold id."""

    def __init__(self, fold: int, message: str):
        super().__init__(f"fold {fold}: {message}")
        self.fold = fold


@dataclass(frozen=True)
class LearnerSpec:
    """A learning procedure together with its tuning parameters."""

    kind: str
    params: dict = field(default_factory=dict)
    task: str = REGRESSION

    KNOWN = (
        "wls",
        "logistic",
        "tree",
        "forest",
        "boosting",
        "pss",
        "mean",
        "constant",
    )

    def __post_init__(self):
        if self.kind not in self.KNOWN:
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.task not in (REGRESSION, PROPENSITY):
            raise ValueError(f"unknown task {self.task!r}")


@dataclass
class FittedPredictor:
    """An opaque trained function from covariate rows to predictions."""

    predict: Callable[[np.ndarray], np.ndarray]
    kind: str
    n_train: int
    fold_id: int | None = None
    converged: bool = True
    coefficients: np.ndarray | None = None
    model: Any = None


def clip_probabilities(p, floor: float = DEFAULT_CLIP_FLOOR) -> np.ndarray:
    """Bound probabilities below by ``floor`` (and above by one)."""
    return np.clip(np.asarray(p, dtype=float), floor, 1.0)


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def _with_intercept(x: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(x.shape[0]), x])


def _derive_seed(rng: np.random.Generator | None) -> int:
    if rng is None:
        return 0
    return int(rng.integers(2**31 - 1))


# ---------------------------------------------------------------------------
# linear models


def fit_weighted_least_squares(x, y, weights, intercept: bool = True) -> FittedPredictor:
    """Solve the weighted normal equations. Rank deficiency is an error, not
    a silent pseudo-inverse."""
    x = _as_matrix(x)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    design = _with_intercept(x) if intercept else x
    xtw = design.T * w
    gram = xtw @ design
    if np.linalg.matrix_rank(gram) < design.shape[1]:
        raise SingularSystemError("design matrix is rank deficient")
    beta = np.linalg.solve(gram, xtw @ y)

    def predict(xnew, beta=beta, intercept=intercept):
        xnew = _as_matrix(xnew)
        d = _with_intercept(xnew) if intercept else xnew
        return d @ beta

    return FittedPredictor(
        predict=predict, kind="wls", n_train=len(y), coefficients=beta
    )


def _logistic_loglik(margin, r, w):
    # numerically stable weighted Bernoulli log-likelihood with logit link
    return float(np.sum(w * (r * margin - np.logaddexp(0.0, margin))))


def expit(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def fit_logistic(
    x,
    r,
    weights,
    max_iter: int = 100,
    tol: float = 1e-8,
    intercept: bool = True,
) -> FittedPredictor:
    """Design-weighted logistic pseudo-likelihood, maximized by iteratively
    reweighted least squares with step-halving.

    Non-convergence and separation do not raise: the fit is returned with
    ``converged=False`` and remains usable after probability clipping.
    """
    x = _as_matrix(x)
    r = np.asarray(r, dtype=float)
    w = np.asarray(weights, dtype=float)
    if r.min() == r.max():
        raise ValueError("response indicator needs both classes")
    design = _with_intercept(x) if intercept else x
    beta = np.zeros(design.shape[1])
    margin = design @ beta
    loglik = _logistic_loglik(margin, r, w)
    converged = False
    for _ in range(max_iter):
        p = expit(margin)
        grad = design.T @ (w * (r - p))
        if np.max(np.abs(grad)) <= tol:
            converged = True
            break
        h = w * p * (1.0 - p)
        hess = (design.T * h) @ design
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        # step-halving on the weighted log-likelihood
        scale = 1.0
        for _ in range(30):
            cand = beta + scale * step
            cand_margin = design @ cand
            cand_ll = _logistic_loglik(cand_margin, r, w)
            if cand_ll >= loglik:
                break
            scale *= 0.5
        beta, margin, loglik = cand, cand_margin, cand_ll
        if np.max(np.abs(beta)) > 30.0:
            # diverging coefficients signal complete separation
            break

    if not converged:
        warnings.warn("logistic fit did not converge", RuntimeWarning, stacklevel=2)

    def predict(xnew, beta=beta, intercept=intercept):
        xnew = _as_matrix(xnew)
        d = _with_intercept(xnew) if intercept else xnew
        return expit(d @ beta)

    return FittedPredictor(
        predict=predict,
        kind="logistic",
        n_train=len(r),
        converged=converged,
        coefficients=beta,
    )


# ---------------------------------------------------------------------------
# trees and forests (scikit-learn backed)


def fit_regression_tree(
    x,
    target,
    weights,
    cp: float = 0.0,
    minsplit: int = 20,
    max_depth: int | None = None,
    seed: int = 0,
) -> FittedPredictor:
    """Greedy binary regression tree with weighted squared-error splits.

    ``cp`` follows the relative-error convention: a split must reduce the
    root-normalized error by more than ``cp``, which maps to scikit-learn's
    ``min_impurity_decrease`` scaled by the weighted root variance.
    """
    x = _as_matrix(x)
    target = np.asarray(target, dtype=float)
    w = np.asarray(weights, dtype=float)
    root_mean = np.average(target, weights=w)
    root_var = float(np.average((target - root_mean) ** 2, weights=w))
    tree = DecisionTreeRegressor(
        min_samples_split=max(2, int(minsplit)),
        max_depth=max_depth,
        min_impurity_decrease=cp * root_var,
        random_state=seed,
    )
    tree.fit(x, target, sample_weight=w)
    return FittedPredictor(
        predict=lambda xnew: tree.predict(_as_matrix(xnew)),
        kind="tree",
        n_train=len(target),
        model=tree,
    )


def fit_random_forest(
    x,
    target,
    weights,
    ntree: int = 500,
    mtry: int = 2,
    nodesize: int = 5,
    bootstrap: bool = True,
    seed: int = 0,
) -> FittedPredictor:
    """Bagged regression trees with ``mtry`` random split candidates per node
    and leaves of at least ``nodesize`` rows; deterministic per seed."""
    x = _as_matrix(x)
    target = np.asarray(target, dtype=float)
    w = np.asarray(weights, dtype=float)
    forest = RandomForestRegressor(
        n_estimators=int(ntree),
        max_features=min(int(mtry), x.shape[1]),
        min_samples_leaf=int(nodesize),
        bootstrap=bootstrap,
        random_state=seed,
        n_jobs=1,
    )
    forest.fit(x, target, sample_weight=w)
    return FittedPredictor(
        predict=lambda xnew: forest.predict(_as_matrix(xnew)),
        kind="forest",
        n_train=len(target),
        model=forest,
    )


# ---------------------------------------------------------------------------
# gradient boosting with binary logistic loss


class NewtonBoost:
    """Stagewise additive model on the logit scale.

    Each round fits a depth-bounded regression tree to the negative gradient
    of the weighted logistic loss, with leaf values given by the Newton step
    (achieved by regressing g/h with hessian sample weights). The round count
    is chosen by K-fold cross-validated loss with early stopping.
    """

    def __init__(
        self,
        eta: float = 0.3,
        max_depth: int = 6,
        min_child_weight: float = 1.0,
        subsample: float = 1.0,
        colsample: float = 1.0,
        max_rounds: int = 100,
        cv_folds: int = 5,
        patience: int = 10,
        seed: int = 0,
    ):
        self.eta = eta
        self.max_depth = max_depth
        self.min_child_weight = min_child_weight
        self.subsample = subsample
        self.colsample = colsample
        self.max_rounds = max_rounds
        self.cv_folds = cv_folds
        self.patience = patience
        self.seed = seed
        self.base_score = 0.0
        self.trees: list[DecisionTreeRegressor] = []
        self.chosen_rounds = 0

    def _fit_round(self, x, r, w, margin, rng):
        p = expit(margin)
        h = w * p * (1.0 - p)
        h = np.maximum(h, 1e-12)
        target = w * (r - p) / h
        rows = np.arange(len(r))
        if self.subsample < 1.0:
            keep = max(1, int(round(self.subsample * len(r))))
            rows = rng.choice(len(r), size=keep, replace=False)
        max_features = None
        if self.colsample < 1.0:
            max_features = max(1, int(round(self.colsample * x.shape[1])))
        total_h = float(h[rows].sum())
        tree = DecisionTreeRegressor(
            max_depth=self.max_depth,
            min_weight_fraction_leaf=min(0.5, self.min_child_weight / max(total_h, 1e-12)),
            max_features=max_features,
            random_state=int(rng.integers(2**31 - 1)),
        )
        tree.fit(x[rows], target[rows], sample_weight=h[rows])
        return tree

    @staticmethod
    def _loss(margin, r, w):
        return float(np.sum(w * (np.logaddexp(0.0, margin) - r * margin)) / np.sum(w))

    def _select_rounds(self, x, r, w, rng):
        n = len(r)
        fold_of = np.empty(n, dtype=np.int64)
        fold_of[rng.permutation(n)] = np.arange(n) % self.cv_folds
        states = []
        for v in range(self.cv_folds):
            tr = fold_of != v
            if r[tr].min() == r[tr].max():
                continue  # degenerate fold, evaluate on the remaining ones
            base = _weighted_logit_rate(r[tr], w[tr])
            states.append(
                {
                    "train": tr,
                    "margin_tr": np.full(tr.sum(), base),
                    "margin_val": np.full((~tr).sum(), base),
                    "rng": np.random.default_rng(rng.integers(2**31 - 1)),
                }
            )
        if not states:
            return 0
        best_loss, best_round = np.inf, 0
        for t in range(1, self.max_rounds + 1):
            val_loss = 0.0
            for st in states:
                tr = st["train"]
                tree = self._fit_round(x[tr], r[tr], w[tr], st["margin_tr"], st["rng"])
                st["margin_tr"] = st["margin_tr"] + self.eta * tree.predict(x[tr])
                st["margin_val"] = st["margin_val"] + self.eta * tree.predict(x[~tr])
                val_loss += self._loss(st["margin_val"], r[~tr], w[~tr])
            val_loss /= len(states)
            if val_loss < best_loss - 1e-12:
                best_loss, best_round = val_loss, t
            elif t - best_round >= self.patience:
                break
        return best_round

    def fit(self, x, r, w):
        x = _as_matrix(x)
        r = np.asarray(r, dtype=float)
        w = np.asarray(weights_or_ones(w, len(r)), dtype=float)
        rng = np.random.default_rng(self.seed)
        self.base_score = _weighted_logit_rate(r, w)
        if self.max_rounds > 0 and self.cv_folds >= 2 and r.min() != r.max():
            self.chosen_rounds = self._select_rounds(x, r, w, rng)
        else:
            self.chosen_rounds = 0
        margin = np.full(len(r), self.base_score)
        self.trees = []
        for _ in range(self.chosen_rounds):
            tree = self._fit_round(x, r, w, margin, rng)
            margin = margin + self.eta * tree.predict(x)
            self.trees.append(tree)
        return self

    def decision_function(self, x, rounds: int | None = None):
        x = _as_matrix(x)
        margin = np.full(x.shape[0], self.base_score)
        use = self.trees if rounds is None else self.trees[:rounds]
        for tree in use:
            margin = margin + self.eta * tree.predict(x)
        return margin

    def predict_proba(self, x):
        return expit(self.decision_function(x))


def _weighted_logit_rate(r, w):
    rate = float(np.average(r, weights=w))
    rate = min(max(rate, 1e-12), 1.0 - 1e-12)
    return float(np.log(rate / (1.0 - rate)))


def weights_or_ones(w, n):
    return np.ones(n) if w is None else w


def fit_gradient_boosting(
    x,
    r,
    weights,
    eta: float = 0.3,
    max_depth: int = 6,
    min_child_weight: float = 1.0,
    subsample: float = 1.0,
    colsample: float = 1.0,
    max_rounds: int = 100,
    cv_folds: int = 5,
    patience: int = 10,
    seed: int = 0,
) -> FittedPredictor:
    booster = NewtonBoost(
        eta=eta,
        max_depth=max_depth,
        min_child_weight=min_child_weight,
        subsample=subsample,
        colsample=colsample,
        max_rounds=max_rounds,
        cv_folds=cv_folds,
        patience=patience,
        seed=seed,
    ).fit(x, np.asarray(r, dtype=float), weights)
    return FittedPredictor(
        predict=booster.predict_proba,
        kind="boosting",
        n_train=len(np.asarray(r)),
        model=booster,
    )


# ---------------------------------------------------------------------------
# propensity score stratification


def fit_propensity_stratification(
    x,
    r,
    weights,
    n_strata: int = 5,
    base: LearnerSpec | None = None,
    rng: np.random.Generator | None = None,
) -> FittedPredictor:
    """Cut base propensities at sample quantiles; predict the weighted
    response rate of the stratum a unit's base propensity falls into.
    Boundary values go to the lower stratum; empty strata merge with a
    neighbor."""
    x = _as_matrix(x)
    r = np.asarray(r, dtype=float)
    w = np.asarray(weights, dtype=float)
    if base is None:
        base = LearnerSpec(kind="logistic", task=PROPENSITY)
    base_fit = fit(base, x, r, w, rng=rng)
    scores = np.asarray(base_fit.predict(x), dtype=float)
    quantiles = np.quantile(scores, np.arange(1, n_strata) / n_strata)
    boundaries = np.unique(quantiles)
    strata = np.searchsorted(boundaries, scores, side="left")
    n_eff = len(boundaries) + 1
    rates = np.full(n_eff, np.nan)
    for s in range(n_eff):
        mask = strata == s
        if mask.any() and w[mask].sum() > 0:
            rates[s] = float(np.sum(w[mask] * r[mask]) / np.sum(w[mask]))
    # merge empty strata with the nearest fitted neighbor below, else above
    for s in range(n_eff):
        if np.isnan(rates[s]):
            lower = [t for t in range(s - 1, -1, -1) if not np.isnan(rates[t])]
            upper = [t for t in range(s + 1, n_eff) if not np.isnan(rates[t])]
            rates[s] = rates[lower[0]] if lower else rates[upper[0]]

    def predict(xnew):
        s = np.asarray(base_fit.predict(_as_matrix(xnew)), dtype=float)
        return rates[np.searchsorted(boundaries, s, side="left")]

    return FittedPredictor(
        predict=predict,
        kind="pss",
        n_train=len(r),
        converged=base_fit.converged,
        model={"base": base_fit, "boundaries": boundaries, "rates": rates},
    )


# ---------------------------------------------------------------------------
# dispatcher and cross-fitting


def fit(
    spec: LearnerSpec,
    x,
    target,
    weights,
    rng: np.random.Generator | None = None,
) -> FittedPredictor:
    """Fit any learner from its spec. Propensity-task predictions are clipped
    to [floor, 1]."""
    x = _as_matrix(x)
    target = np.asarray(target, dtype=float)
    w = np.asarray(weights_or_ones(weights, len(target)), dtype=float)
    params = dict(spec.params)
    floor = params.pop("clip_floor", DEFAULT_CLIP_FLOOR)

    if spec.kind == "wls":
        fitted = fit_weighted_least_squares(x, target, w, **params)
    elif spec.kind == "logistic":
        fitted = fit_logistic(x, target, w, **params)
    elif spec.kind == "tree":
        fitted = fit_regression_tree(x, target, w, seed=_derive_seed(rng), **params)
    elif spec.kind == "forest":
        fitted = fit_random_forest(x, target, w, seed=_derive_seed(rng), **params)
    elif spec.kind == "boosting":
        fitted = fit_gradient_boosting(x, target, w, seed=_derive_seed(rng), **params)
    elif spec.kind == "pss":
        fitted = fit_propensity_stratification(x, target, w, rng=rng, **params)
    elif spec.kind == "mean":
        value = float(np.average(target, weights=w))
        fitted = FittedPredictor(
            predict=lambda xnew, v=value: np.full(_as_matrix(xnew).shape[0], v),
            kind="mean",
            n_train=len(target),
        )
    else:  # constant
        value = float(params.get("value", 0.0))
        fitted = FittedPredictor(
            predict=lambda xnew, v=value: np.full(_as_matrix(xnew).shape[0], v),
            kind="constant",
            n_train=len(target),
        )

    if spec.task == PROPENSITY:
        raw = fitted.predict
        fitted.predict = lambda xnew, raw=raw, floor=floor: clip_probabilities(
            raw(xnew), floor
        )
    return fitted


def fit_crossfitted(
    spec: LearnerSpec,
    x,
    target,
    weights,
    fold_of: np.ndarray,
    k_folds: int,
    rng: np.random.Generator | None = None,
    train_mask: np.ndarray | None = None,
) -> list[FittedPredictor]:
    """One predictor per fold, each trained with zero access to its own fold.

    ``fold_of`` assigns every row a fold in 0..K-1 (rows of a population-level
    partition restricted to the sample are fine). ``train_mask`` optionally
    restricts training rows within each complement (e.g. respondents only).
    Per-fold failures surface with the fold id.
    """
    x = _as_matrix(x)
    target = np.asarray(target, dtype=float)
    w = np.asarray(weights_or_ones(weights, len(target)), dtype=float)
    fold_of = np.asarray(fold_of)
    if fold_of.shape[0] != x.shape[0]:
        raise ValueError("fold assignment length must match the data")
    predictors = []
    for v in range(k_folds):
        rows = fold_of != v
        if train_mask is not None:
            rows = rows & train_mask
        if not rows.any():
            raise FoldFitError(v, "empty training complement")
        child = None if rng is None else np.random.default_rng(rng.integers(2**31 - 1))
        try:
            fitted = fit(spec, x[rows], target[rows], w[rows], rng=child)
        except Exception as exc:  # surfaced with the offending fold id
            raise FoldFitError(v, str(exc)) from exc
        fitted.fold_id = v
        predictors.append(fitted)
    return predictors


def crossfit_predict(
    predictors: list[FittedPredictor], x, fold_of: np.ndarray
) -> np.ndarray:
    """Evaluate each row with the predictor trained on its complement."""
    x = _as_matrix(x)
    out = np.empty(x.shape[0])
    for v, predictor in enumerate(predictors):
        mask = fold_of == v
        if mask.any():
            out[mask] = predictor.predict(x[mask])
    return out
