"""Chained-equations multiple imputation on an outcome-augmented matrix.

The censored outcome enters the imputation models as two surrogate columns,
the Nelson-Aalen cumulative hazard at each subject's own follow-up time and
the event indicator. Rows appended for prediction carry no outcome, so both
surrogates are imputed for them alongside any missing predictors and then
dropped from the result.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, softmax

from . import seeding
from .errors import ParameterError, ShapeError, UnusableColumnError
from .survival import BINARY, CATEGORICAL, ColumnKind, SurvivalDataset, nelson_aalen

PMM_DONORS = 5
DEFAULT_CYCLES = 5
RIDGE = 1e-5


@dataclass(frozen=True, eq=False)
class AugmentedDataset:
    """Calibration rows followed by validation rows whose outcome is unknown."""

    predictors: np.ndarray
    missing_mask: np.ndarray
    column_kinds: tuple
    column_names: tuple
    is_validation: np.ndarray
    time: np.ndarray  # NaN on validation rows
    status: np.ndarray  # NaN on validation rows
    na_transform: np.ndarray  # H(T_i) from calibration rows only; NaN on validation rows

    @property
    def n(self) -> int:
        return self.predictors.shape[0]

    @property
    def n_calibration(self) -> int:
        return int((~self.is_validation).sum())

    @property
    def outcome_missing(self) -> np.ndarray:
        return self.is_validation


def build_augmented(calibration: SurvivalDataset, validation_predictors=None, validation_mask=None) -> AugmentedDataset:
    p = calibration.p
    if validation_predictors is None:
        validation_predictors = np.empty((0, p))
    V = np.array(validation_predictors, dtype=float, copy=True)
    if V.ndim == 1:
        V = V[None, :]
    if V.shape[1] != p:
        raise ShapeError(f"validation rows have {V.shape[1]} columns, calibration has {p}")
    vmask = np.isnan(V) if validation_mask is None else np.asarray(validation_mask, dtype=bool)
    if vmask.shape != V.shape:
        raise ShapeError("validation mask shape does not match validation predictors")
    V[vmask] = np.nan
    m = V.shape[0]
    H = nelson_aalen(calibration.time, calibration.status)
    na = np.concatenate([H(calibration.time), np.full(m, np.nan)])
    return AugmentedDataset(
        predictors=np.vstack([calibration.predictors, V]),
        missing_mask=np.vstack([calibration.missing_mask, vmask]),
        column_kinds=calibration.column_kinds,
        column_names=calibration.column_names,
        is_validation=np.concatenate([np.zeros(calibration.n, bool), np.ones(m, bool)]),
        time=np.concatenate([calibration.time, np.full(m, np.nan)]),
        status=np.concatenate([calibration.status.astype(float), np.full(m, np.nan)]),
        na_transform=na,
    )


@dataclass(frozen=True, eq=False)
class ImputationStack:
    """K completed predictor matrices over the rows of an augmented dataset."""

    completed: tuple  # of (n, p) arrays
    imputed_mask: np.ndarray
    seeds: tuple  # stream identifier per copy
    provenance: dict = field(default_factory=dict)
    diagnostics: tuple = ()

    @property
    def K(self) -> int:
        return len(self.completed)

    def __getitem__(self, k):
        return self.completed[k]

    def mean(self) -> np.ndarray:
        return sum(self.completed) / len(self.completed)


# ---------------------------------------------------------------------------
# conditional draws


def _norm_draw(X, y, rng):
    """Posterior draw of linear-regression coefficients (flat prior, ridge for stability)."""
    xtx = X.T @ X
    xtx[np.diag_indices_from(xtx)] += RIDGE * np.maximum(np.diag(xtx), 1e-12)
    v = np.linalg.inv(xtx)
    v = (v + v.T) / 2
    coef = v @ (X.T @ y)
    resid = y - X @ coef
    df = max(X.shape[0] - X.shape[1], 1)
    sigma = np.sqrt(resid @ resid / rng.chisquare(df))
    draw = coef + sigma * (np.linalg.cholesky(v) @ rng.standard_normal(X.shape[1]))
    return coef, draw


def _pmm(Xobs, yobs, Xmis, rng, donors=PMM_DONORS):
    coef, draw = _norm_draw(Xobs, yobs, rng)
    yhat_obs = Xobs @ coef
    yhat_mis = Xmis @ draw
    return yobs[_nearest_donors(yhat_obs, yhat_mis, donors, rng)]


def _nearest_donors(yhat_obs, yhat_mis, donors, rng):
    """Index of a donor drawn uniformly from the ``donors`` closest predicted means."""
    n_obs, m = yhat_obs.size, yhat_mis.size
    k = min(donors, n_obs)
    order = np.argsort(yhat_obs, kind="stable")
    sorted_hat = yhat_obs[order]
    # the k nearest lie within k positions either side of the insertion point
    pos = np.searchsorted(sorted_hat, yhat_mis)
    window = np.clip(pos[:, None] + np.arange(-k, k)[None, :], 0, n_obs - 1)
    dist = np.abs(sorted_hat[window] - yhat_mis[:, None])
    dist[:, 1:][window[:, 1:] == window[:, :-1]] = np.inf  # clipped duplicates
    nearest = np.take_along_axis(window, np.argsort(dist, axis=1, kind="stable")[:, :k], axis=1)
    return order[nearest[np.arange(m), rng.integers(0, k, size=m)]]


def _logistic_fit(X, y, start=None, ridge=1e-4, max_iter=25):
    beta = np.zeros(X.shape[1]) if start is None else start.copy()
    pen = ridge * np.eye(X.shape[1])
    for _ in range(max_iter):
        mu = expit(X @ beta)
        w = mu * (1 - mu)
        info = (X * w[:, None]).T @ X + pen
        step = np.linalg.solve(info, X.T @ (y - mu) - pen @ beta)
        beta = beta + step
        if np.max(np.abs(step)) < 1e-8:
            break
    mu = expit(X @ beta)
    info = (X * (mu * (1 - mu))[:, None]).T @ X + pen
    return beta, info


def _logistic_draw(Xobs, yobs, Xmis, rng, start=None):
    beta, info = _logistic_fit(Xobs, yobs, start)
    cov = np.linalg.inv(info)
    draw = beta + np.linalg.cholesky((cov + cov.T) / 2) @ rng.standard_normal(beta.size)
    prob = expit(Xmis @ draw)
    return (rng.uniform(size=prob.size) < prob).astype(float), beta


def _polytomous_draw(Xobs, yobs, Xmis, rng, ridge=1e-4, max_iter=25):
    levels = np.unique(yobs)
    if levels.size == 1:
        return np.full(Xmis.shape[0], levels[0])
    J, q = levels.size, Xobs.shape[1]
    Y = (yobs[:, None] == levels[None, :]).astype(float)[:, 1:]
    B = np.zeros((q, J - 1))
    pen = ridge * np.eye(q * (J - 1))

    def probs(X, B):
        eta = np.hstack([np.zeros((X.shape[0], 1)), X @ B])
        return softmax(eta, axis=1)

    def information(P):
        Pm = P[:, 1:]
        info = np.zeros((q * (J - 1), q * (J - 1)))
        for a in range(J - 1):
            for b in range(J - 1):
                w = Pm[:, a] * ((a == b) - Pm[:, b])
                info[a * q:(a + 1) * q, b * q:(b + 1) * q] = (Xobs * w[:, None]).T @ Xobs
        return info + pen

    for _ in range(max_iter):
        P = probs(Xobs, B)
        grad = (Xobs.T @ (Y - P[:, 1:])).T.reshape(-1) - pen @ B.T.reshape(-1)
        step = np.linalg.solve(information(P), grad)
        B = B + step.reshape(J - 1, q).T
        if np.max(np.abs(step)) < 1e-8:
            break
    cov = np.linalg.inv(information(probs(Xobs, B)))
    draw = B.T.reshape(-1) + np.linalg.cholesky((cov + cov.T) / 2) @ rng.standard_normal(cov.shape[0])
    P = probs(Xmis, draw.reshape(J - 1, q).T)
    u = rng.uniform(size=(P.shape[0], 1))
    idx = np.minimum((np.cumsum(P, axis=1) < u).sum(axis=1), J - 1)
    return levels[idx]


# ---------------------------------------------------------------------------


def _encode(column, kind: ColumnKind):
    if kind.kind == CATEGORICAL:
        return (column[:, None] == np.arange(1, kind.levels)[None, :]).astype(float)
    return column[:, None]


def _impute_one(Z, miss, kinds, cycles, rng, incomplete):
    """One chained-equations chain on the working matrix Z (modified in place)."""
    n, c = Z.shape
    for j in range(c):
        obs = Z[~miss[:, j], j]
        Z[miss[:, j], j] = obs[rng.integers(0, obs.size, size=int(miss[:, j].sum()))]
    blocks = [_encode(Z[:, j], kinds[j]) for j in range(c)]
    ones = np.ones((n, 1))
    warm = {}
    for _ in range(cycles):
        for j in incomplete:
            X = np.hstack([ones] + [blocks[i] for i in range(c) if i != j])
            m = miss[:, j]
            Xobs, yobs, Xmis = X[~m], Z[~m, j], X[m]
            kind = kinds[j]
            if kind.kind == BINARY:
                Z[m, j], warm[j] = _logistic_draw(Xobs, yobs, Xmis, rng, warm.get(j))
            elif kind.kind == CATEGORICAL:
                Z[m, j] = _polytomous_draw(Xobs, yobs, Xmis, rng)
            else:
                Z[m, j] = _pmm(Xobs, yobs, Xmis, rng)
            blocks[j] = _encode(Z[:, j], kind)
    return Z


def impute_chained(aug: AugmentedDataset, K: int, cycles: int = DEFAULT_CYCLES, seed=0, *, first_copy: int = 0) -> ImputationStack:
    """Generate K completed copies of the augmented predictor matrix.

    Copy ``k`` draws from the stream ``derive(seed, first_copy + k)``, so a
    caller generating copies one at a time reproduces a batch call.
    """
    if K < 1:
        raise ParameterError("K must be at least 1")
    if cycles < 1:
        raise ParameterError("cycles must be at least 1")
    p = aug.predictors.shape[1]
    diagnostics = []
    for j in range(p):
        observed = ~aug.missing_mask[:, j]
        if not observed.any():
            raise UnusableColumnError(f"column {aug.column_names[j]!r} has no observed values")
        kind = aug.column_kinds[j]
        if kind.kind == CATEGORICAL:
            seen = np.unique(aug.predictors[observed, j])
            if seen.size < kind.levels:
                diagnostics.append(f"column {aug.column_names[j]!r}: levels {sorted(set(range(kind.levels)) - set(seen.astype(int)))} never observed")
    Z0 = np.column_stack([aug.predictors, aug.na_transform, aug.status])
    miss = np.column_stack([aug.missing_mask, aug.is_validation, aug.is_validation])
    kinds = tuple(aug.column_kinds) + (ColumnKind(), ColumnKind(BINARY))
    if aug.is_validation.any() and aug.is_validation.all():
        raise UnusableColumnError("no calibration rows: outcome surrogates are unobserved everywhere")
    incomplete = [j for j in range(Z0.shape[1]) if miss[:, j].any()]
    copies, seeds = [], []
    for k in range(first_copy, first_copy + K):
        ss = seeding.derive(seed, k)
        rng = np.random.Generator(np.random.Philox(ss))
        if incomplete:
            Z = _impute_one(Z0.copy(), miss, kinds, cycles, rng, incomplete)
        else:
            Z = Z0.copy()
        X = Z[:, :p]
        X.setflags(write=False)
        copies.append(X)
        seeds.append(tuple(seeding.describe(ss)))
    return ImputationStack(
        completed=tuple(copies),
        imputed_mask=aug.missing_mask.copy(),
        seeds=tuple(seeds),
        provenance={"cycles": cycles, "first_copy": first_copy, "n_validation": int(aug.is_validation.sum())},
        diagnostics=tuple(diagnostics),
    )
