"""Cox regression, Breslow / Nelson-Aalen cumulative hazards and Kaplan-Meier.

Times are positive reals; ``status`` is 1 for an observed event and 0 for a
censored follow-up. Tied times are handled with the Breslow convention
throughout so that the partial likelihood and the baseline estimator agree.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConvergenceError, NoEventsError, ParameterError, ShapeError, SingularError, ValidationError

CONTINUOUS = "continuous"
BINARY = "binary"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class ColumnKind:
    kind: str = CONTINUOUS
    levels: int = 0

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, BINARY, CATEGORICAL):
            raise ParameterError(f"unknown column kind {self.kind!r}")
        if self.kind == CATEGORICAL and self.levels < 2:
            raise ParameterError("categorical columns need at least 2 levels")

    @classmethod
    def categorical(cls, levels: int) -> "ColumnKind":
        return cls(CATEGORICAL, int(levels))

    @property
    def is_continuous(self) -> bool:
        return self.kind == CONTINUOUS

    def __str__(self):
        return f"categorical({self.levels})" if self.kind == CATEGORICAL else self.kind


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Follow-up times, event indicators and a partially observed predictor matrix.

    Masked predictor cells are stored as NaN; every estimator reads the mask,
    never the slot.
    """

    time: np.ndarray
    status: np.ndarray
    predictors: np.ndarray
    missing_mask: np.ndarray
    column_kinds: tuple = ()
    column_names: tuple = ()

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float).reshape(-1)
        status = np.asarray(self.status)
        X = np.array(self.predictors, dtype=float, copy=True)
        if X.ndim == 1:
            X = X[:, None]
        mask = np.asarray(self.missing_mask, dtype=bool)
        if mask.shape != X.shape:
            raise ShapeError(f"missing_mask shape {mask.shape} != predictors shape {X.shape}")
        n, p = X.shape
        if time.shape != (n,) or status.shape != (n,):
            raise ShapeError("time/status length must equal the number of predictor rows")
        if n < 2 or p < 1:
            raise ShapeError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if not np.all(time > 0):
            raise ValidationError("all follow-up times must be positive")
        if not np.all((status == 0) | (status == 1)):
            raise ValidationError("status must be 0 or 1")
        kinds = tuple(self.column_kinds) or tuple(ColumnKind() for _ in range(p))
        kinds = tuple(k if isinstance(k, ColumnKind) else ColumnKind(k) for k in kinds)
        if len(kinds) != p:
            raise ShapeError("one column kind per predictor column is required")
        names = tuple(self.column_names) or tuple(f"x{j + 1}" for j in range(p))
        if len(names) != p:
            raise ShapeError("one column name per predictor column is required")
        X[mask] = np.nan
        if not np.all(np.isfinite(X[~mask])):
            raise ValidationError("observed predictor cells must be finite")
        for j, k in enumerate(kinds):
            obs = X[~mask[:, j], j]
            if k.kind == BINARY and not np.all((obs == 0) | (obs == 1)):
                raise ValidationError(f"binary column {names[j]!r} has values outside {{0, 1}}")
            if k.kind == CATEGORICAL and not np.all((obs == np.round(obs)) & (obs >= 0) & (obs < k.levels)):
                raise ValidationError(f"categorical column {names[j]!r} has invalid level indices")
        for arr in (time, X, mask):
            arr.setflags(write=False)
        status = status.astype(np.int64)
        status.setflags(write=False)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "predictors", X)
        object.__setattr__(self, "missing_mask", mask)
        object.__setattr__(self, "column_kinds", kinds)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.predictors.shape[0]

    @property
    def p(self) -> int:
        return self.predictors.shape[1]

    @property
    def row_has_missing(self) -> np.ndarray:
        return self.missing_mask.any(axis=1)

    def subset(self, rows) -> "SurvivalDataset":
        rows = np.asarray(rows)
        return SurvivalDataset(self.time[rows], self.status[rows], self.predictors[rows],
                               self.missing_mask[rows], self.column_kinds, self.column_names)

    def with_missing(self, mask) -> "SurvivalDataset":
        """Copy with ``mask`` cells additionally set missing."""
        mask = np.asarray(mask, dtype=bool) | self.missing_mask
        return SurvivalDataset(self.time, self.status, self.predictors, mask,
                               self.column_kinds, self.column_names)

    def equals(self, other: "SurvivalDataset") -> bool:
        return (np.array_equal(self.time, other.time)
                and np.array_equal(self.status, other.status)
                and np.array_equal(self.missing_mask, other.missing_mask)
                and np.array_equal(self.predictors, other.predictors, equal_nan=True)
                and self.column_kinds == other.column_kinds
                and self.column_names == other.column_names)


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous step function; ``initial`` is its value before the first knot."""

    knots: np.ndarray
    values: np.ndarray
    initial: float = 0.0

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if knots.shape != values.shape:
            raise ShapeError("knots and values must have the same length")
        if knots.size and np.any(np.diff(knots) <= 0):
            raise ValidationError("knots must be strictly increasing")
        knots.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side="right") - 1
        vals = np.concatenate(([self.initial], self.values))
        return vals[idx + 1]

    def left_limit(self, t):
        """Value just before ``t``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side="left") - 1
        vals = np.concatenate(([self.initial], self.values))
        return vals[idx + 1]

    def equals(self, other: "StepFunction") -> bool:
        return (np.array_equal(self.knots, other.knots) and np.array_equal(self.values, other.values)
                and self.initial == other.initial)


def check_cumulative_hazard(fn: StepFunction) -> None:
    if fn.initial != 0.0 or np.any(fn.values < 0) or np.any(np.diff(fn.values) < 0):
        raise ValidationError("cumulative hazard must be non-negative and non-decreasing")
    if fn.knots.size and fn.knots[0] <= 0:
        raise ValidationError("cumulative hazard knots must be positive")


# ---------------------------------------------------------------------------
# design matrices


@dataclass(frozen=True)
class DesignSpec:
    """Maps predictor columns to design columns.

    Continuous and binary columns pass through; a categorical column becomes
    one indicator per observed non-reference level. The reference is the
    lowest level index observed when the spec was built.
    """

    column_kinds: tuple
    column_names: tuple
    dummy_levels: tuple  # per predictor column: None, or tuple of level indices coded as indicators
    reference_levels: tuple

    @classmethod
    def from_dataset(cls, data: SurvivalDataset) -> "DesignSpec":
        dummy, refs = [], []
        for j, kind in enumerate(data.column_kinds):
            if kind.kind == CATEGORICAL:
                obs = np.unique(data.predictors[~data.missing_mask[:, j], j]).astype(int)
                if obs.size == 0:
                    obs = np.arange(kind.levels)
                refs.append(int(obs[0]))
                dummy.append(tuple(int(v) for v in obs[1:]))
            else:
                refs.append(None)
                dummy.append(None)
        return cls(data.column_kinds, data.column_names, tuple(dummy), tuple(refs))

    @property
    def width(self) -> int:
        return sum(1 if d is None else len(d) for d in self.dummy_levels)

    @property
    def design_names(self) -> list[str]:
        names = []
        for name, d in zip(self.column_names, self.dummy_levels):
            names.extend([name] if d is None else [f"{name}[{lv}]" for lv in d])
        return names

    def transform(self, predictors: np.ndarray) -> np.ndarray:
        X = np.asarray(predictors, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != len(self.dummy_levels):
            raise ShapeError(f"expected {len(self.dummy_levels)} predictor columns, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ShapeError("design matrices must be fully observed")
        cols = []
        for j, d in enumerate(self.dummy_levels):
            if d is None:
                cols.append(X[:, j:j + 1])
            elif d:
                cols.append((X[:, j:j + 1] == np.asarray(d, dtype=float)[None, :]).astype(float))
        if not cols:
            return np.zeros((X.shape[0], 0))
        return np.hstack(cols)

    def to_dict(self) -> dict:
        return {
            "columns": [
                {"name": n, "kind": str(k), "reference": r, "dummy_levels": None if d is None else list(d)}
                for n, k, d, r in zip(self.column_names, self.column_kinds, self.dummy_levels, self.reference_levels)
            ]
        }


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    values: np.ndarray
    spec: DesignSpec | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ShapeError("design matrix must be two-dimensional")
        if not np.all(np.isfinite(v)):
            raise ShapeError("design matrix must be finite and fully observed")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_predictors(cls, predictors, spec: DesignSpec) -> "DesignMatrix":
        return cls(spec.transform(predictors), spec)


def _as_design(design) -> np.ndarray:
    if isinstance(design, DesignMatrix):
        return design.values
    X = np.asarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if not np.all(np.isfinite(X)):
        raise ShapeError("design matrix must be finite and fully observed")
    return X


# ---------------------------------------------------------------------------
# estimators


class _RiskSets:
    """Sorted-time bookkeeping shared by the likelihood and Breslow estimator."""

    def __init__(self, time, status):
        time = np.asarray(time, dtype=float)
        status = np.asarray(status)
        self.order = np.argsort(time, kind="stable")
        ts = time[self.order]
        ev = status[self.order].astype(float)
        uniq, start, inverse = np.unique(ts, return_index=True, return_inverse=True)
        d = np.bincount(inverse, weights=ev, minlength=uniq.size)
        keep = d > 0
        self.event_times = uniq[keep]
        self.d = d[keep]
        self.first = start[keep]  # first sorted index whose time equals the event time
        self.group = inverse
        self.group_keep = np.flatnonzero(keep)
        self.status_sorted = ev
        self.n_groups = uniq.size


def _reverse_cumsum(a):
    return np.cumsum(a[::-1], axis=0)[::-1]


def breslow(design, time, status, beta) -> StepFunction:
    """Breslow cumulative baseline hazard at covariate vector zero."""
    X = _as_design(design)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    rs = _RiskSets(time, status)
    if rs.event_times.size == 0:
        return StepFunction(np.empty(0), np.empty(0))
    eta = X[rs.order] @ beta if beta.size else np.zeros(X.shape[0])
    s0 = _reverse_cumsum(np.exp(eta))[rs.first]
    return StepFunction(rs.event_times, np.cumsum(rs.d / s0))


def nelson_aalen(time, status) -> StepFunction:
    """Nelson-Aalen cumulative hazard: sum of d_i / n_i over event times."""
    time = np.asarray(time, dtype=float).reshape(-1)
    if time.size < 1:
        raise ParameterError("nelson_aalen needs at least one observation")
    return breslow(np.zeros((time.size, 0)), time, status, np.empty(0))


def kaplan_meier_censoring(time, status) -> StepFunction:
    """Kaplan-Meier estimate of the censoring survivor function G(t)."""
    time = np.asarray(time, dtype=float).reshape(-1)
    status = np.asarray(status).reshape(-1)
    if time.size < 1:
        raise ParameterError("kaplan_meier_censoring needs at least one observation")
    uniq, inverse = np.unique(time, return_inverse=True)
    censored = np.bincount(inverse, weights=(status == 0).astype(float), minlength=uniq.size)
    counts = np.bincount(inverse, minlength=uniq.size)
    at_risk = _reverse_cumsum(counts.astype(float))
    keep = censored > 0
    surv = np.cumprod(1.0 - censored[keep] / at_risk[keep])
    return StepFunction(uniq[keep], surv, initial=1.0)


def cox_loglik(design, time, status, beta) -> float:
    """Breslow-tie log partial likelihood (written out directly, no risk-set tricks)."""
    X = _as_design(design)
    time = np.asarray(time, dtype=float)
    status = np.asarray(status)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    eta = X @ beta if beta.size else np.zeros(time.size)
    ll = 0.0
    for t in np.unique(time[status == 1]):
        dead = (time == t) & (status == 1)
        risk = time >= t
        ll += eta[dead].sum() - dead.sum() * np.log(np.exp(eta[risk]).sum())
    return float(ll)


def _loglik_derivatives(Xs, rs: _RiskSets, beta, need_hessian=True):
    eta = Xs @ beta
    c = eta.max()
    w = np.exp(eta - c)
    s0 = _reverse_cumsum(w)[rs.first]
    s1 = _reverse_cumsum(w[:, None] * Xs)[rs.first]
    ev = rs.status_sorted
    # per event-time sums of event covariates and linear predictors
    sx = np.zeros((rs.n_groups, Xs.shape[1]))
    np.add.at(sx, rs.group, ev[:, None] * Xs)
    sx = sx[rs.group_keep]
    seta = np.bincount(rs.group, weights=ev * eta, minlength=rs.n_groups)[rs.group_keep]
    ll = float(np.sum(seta - rs.d * (np.log(s0) + c)))
    xbar = s1 / s0[:, None]
    grad = sx.sum(axis=0) - (rs.d[:, None] * xbar).sum(axis=0)
    if not need_hessian:
        return ll, grad, None
    s2 = _reverse_cumsum(w[:, None, None] * (Xs[:, :, None] * Xs[:, None, :]))[rs.first]
    info = np.einsum("k,kij->ij", rs.d, s2 / s0[:, None, None] - xbar[:, :, None] * xbar[:, None, :])
    return ll, grad, info


@dataclass(frozen=True, eq=False)
class CoxFit:
    beta: np.ndarray
    baseline_cumhaz: StepFunction
    design_spec: DesignSpec | None = None
    loglik: float = float("nan")
    n_iter: int = 0

    def predict(self, x, horizons):
        return predict_survival(self, x, horizons)


GRAD_TOL = 1e-8
LOGLIK_TOL = 1e-10
MAX_ITER = 50


def fit_cox(design, time, status, *, max_iter: int = MAX_ITER, spec: DesignSpec | None = None) -> CoxFit:
    """Newton-Raphson maximisation of the Breslow partial likelihood from beta = 0.

    Steps are halved while they decrease the likelihood. Stops when the
    gradient norm divided by n drops below 1e-8 or the log-likelihood changes
    by less than 1e-10.
    """
    X = _as_design(design)
    if spec is None and isinstance(design, DesignMatrix):
        spec = design.spec
    time = np.asarray(time, dtype=float).reshape(-1)
    status = np.asarray(status).reshape(-1)
    n, q = X.shape
    if time.shape != (n,) or status.shape != (n,):
        raise ShapeError("time/status length must match the design rows")
    if not np.any(status == 1):
        raise NoEventsError("no events in the data; the Cox model is not estimable")
    rs = _RiskSets(time, status)
    beta = np.zeros(q)
    if q == 0:
        return CoxFit(beta, breslow(X, time, status, beta), spec, cox_loglik(X, time, status, beta), 0)
    Xs = X[rs.order]
    ll, grad, info = _loglik_derivatives(Xs, rs, beta)
    for it in range(1, max_iter + 1):
        if np.linalg.norm(grad) / n < GRAD_TOL:
            return CoxFit(beta, breslow(X, time, status, beta), spec, ll, it - 1)
        try:
            chol = np.linalg.cholesky(info)
        except np.linalg.LinAlgError:
            raise SingularError("information matrix is singular; check for constant or collinear design columns")
        if np.linalg.cond(chol) > 1e7:
            raise SingularError("information matrix is numerically singular")
        step = np.linalg.solve(info, grad)
        for _ in range(30):
            cand = beta + step
            ll_new, grad_new, info_new = _loglik_derivatives(Xs, rs, cand)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            step = step / 2
        else:
            raise ConvergenceError("step halving failed to increase the partial likelihood", beta, it)
        change = abs(ll_new - ll)
        beta, ll, grad, info = cand, ll_new, grad_new, info_new
        if change < LOGLIK_TOL:
            return CoxFit(beta, breslow(X, time, status, beta), spec, ll, it)
    if np.linalg.norm(grad) / n < GRAD_TOL:
        return CoxFit(beta, breslow(X, time, status, beta), spec, ll, max_iter)
    raise ConvergenceError(f"no convergence after {max_iter} Newton iterations", beta, max_iter)


def cox_gradient(design, time, status, beta) -> np.ndarray:
    X = _as_design(design)
    rs = _RiskSets(time, status)
    return _loglik_derivatives(X[rs.order], rs, np.asarray(beta, dtype=float).reshape(-1), need_hessian=False)[1]


def predict_survival(fit, x, horizons: Sequence[float]):
    """Survival probabilities exp(-H0(t) * exp(x . beta)).

    ``x`` is one design row (returns shape (len(horizons),)) or a matrix of
    rows (returns shape (m, len(horizons))).
    """
    beta = np.asarray(fit.beta, dtype=float)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != beta.size:
        raise ShapeError(f"covariate dimension {X.shape[-1]} does not match model dimension {beta.size}")
    horizons = np.asarray(horizons, dtype=float).reshape(-1)
    h0 = fit.baseline_cumhaz(horizons)
    risk = np.exp(X @ beta) if beta.size else np.ones(X.shape[0])
    surv = np.exp(-np.outer(risk, h0))
    return surv[0] if single else surv
