"""Train/test split, k-fold CV and R^2 scoring for regression tasks."""

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import clone

from ..errors import ModelError

MIN_SPLIT_ROWS = 10


def split(rows, ratio=0.8, seed=0):
    """Seeded shuffle; the first floor(ratio * n) rows train, the rest test.

    ``rows`` is a count or a sequence of row labels. Returns two sorted arrays.
    """
    rows = np.arange(rows) if np.isscalar(rows) else np.asarray(rows)
    n = len(rows)
    if n < MIN_SPLIT_ROWS:
        raise ModelError(f"need at least {MIN_SPLIT_ROWS} rows to split, got {n}")
    if not 0 < ratio < 1:
        raise ModelError("split ratio must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(ratio * n + 1e-9))
    return np.sort(rows[perm[:n_train]]), np.sort(rows[perm[n_train:]])


def kfold(rows, k=5, seed=0):
    """k disjoint folds covering ``rows``; sizes differ by at most one, larger first."""
    rows = np.arange(rows) if np.isscalar(rows) else np.asarray(rows)
    if k < 2:
        raise ModelError("k must be >= 2")
    if len(rows) < k:
        raise ModelError(f"{len(rows)} rows cannot form {k} folds")
    perm = np.random.default_rng(seed).permutation(len(rows))
    return [np.sort(rows[part]) for part in np.array_split(perm, k)]


def r_squared(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if len(y_true) < 2:
        raise ModelError("R^2 needs at least 2 rows")
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0:
        raise ModelError("R^2 undefined for constant truth")
    ss_res = float(np.sum((y_true - y_pred) ** 2))
    return 1.0 - ss_res / ss_tot


@dataclass
class EvaluationReport:
    target: str
    selector: str
    model: str
    seed: int
    train_rows: list
    test_rows: list
    folds: list
    cv_r2: list
    train_r2: float
    test_r2: float
    extra: dict = field(default_factory=dict)

    @property
    def cv_mean(self):
        return float(np.mean(self.cv_r2)) if self.cv_r2 else float("nan")

    def score_rows(self):
        """Long-form records: one per CV fold plus train and test."""
        rows = [dict(target=self.target, selector=self.selector, model=self.model,
                     split=f"cv{i}", n=len(f), r2=r)
                for i, (f, r) in enumerate(zip(self.folds, self.cv_r2))]
        rows.append(dict(target=self.target, selector=self.selector, model=self.model,
                         split="train", n=len(self.train_rows), r2=self.train_r2))
        rows.append(dict(target=self.target, selector=self.selector, model=self.model,
                         split="test", n=len(self.test_rows), r2=self.test_r2))
        return rows


def _fit_score(estimator, X, y, train, valid):
    est = clone(estimator).fit(X[train], y[train])
    return r_squared(y[valid], est.predict(X[valid]))


def evaluate(estimator, X, y, *, target="", selector="", model="", seed=0, ratio=0.8, k=5,
             executor=None):
    """Split, cross-validate on the training part, refit on all of it and score.

    Rows with a missing target are dropped first. ``executor`` (a
    concurrent.futures executor) runs the CV fits concurrently; results are
    gathered in fold order. Returns (report, fitted estimator, train idx, test idx).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = np.flatnonzero(~np.isnan(y))
    train, test = split(keep, ratio, seed)
    folds = kfold(train, k, seed)
    jobs = []
    for i, fold in enumerate(folds):
        fit_rows = np.concatenate([f for j, f in enumerate(folds) if j != i])
        args = (estimator, X, y, np.sort(fit_rows), fold)
        jobs.append(executor.submit(_fit_score, *args) if executor else args)

    final = clone(estimator)
    if executor:
        final_job = executor.submit(final.fit, X[train], y[train])
        cv = [job.result() for job in jobs]
        final = final_job.result()
    else:
        cv = [_fit_score(*args) for args in jobs]
        final.fit(X[train], y[train])
    report = EvaluationReport(
        target=target, selector=selector, model=model, seed=seed,
        train_rows=train.tolist(), test_rows=test.tolist(),
        folds=[f.tolist() for f in folds], cv_r2=cv,
        train_r2=r_squared(y[train], final.predict(X[train])),
        test_r2=r_squared(y[test], final.predict(X[test])),
    )
    return report, final, train, test
