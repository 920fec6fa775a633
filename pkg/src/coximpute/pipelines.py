"""Calibration strategies and their cross-validation drivers.

approach 1   fit one Cox model per imputed dataset and average the predictions;
             in cross-validation the fold partition is redrawn per imputation.
approach 2A  average coefficients and baseline cumulative hazards across the
             K fits, keep one partition fixed.
approach 2B  average coefficients, re-estimate the baseline with Breslow on
             the mean of the imputed calibration designs.
naive        impute once on the full data, outcomes included, then run the
             cross-validation on the completed copies.

Random streams are keyed so that runs with the same seed are matched: the
k-th partition and the (fold, k) imputation stream are shared between
approaches, which makes all of them coincide when K = 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from . import seeding
from .errors import CoxImputeError, ParameterError, PipelineError, ShapeError
from .imputation import DEFAULT_CYCLES, build_augmented, impute_chained
from .survival import CoxFit, DesignSpec, StepFunction, SurvivalDataset, breslow, fit_cox, predict_survival

VARIANTS = ("2A", "2B")
COMBINE_RULES = ("mean", "median", "logit-mean")


@dataclass(frozen=True, eq=False)
class FoldPartition:
    folds: tuple

    @property
    def L(self) -> int:
        return len(self.folds)

    def __iter__(self):
        return iter(self.folds)


def make_folds(n: int, L: int, seed) -> FoldPartition:
    """Uniformly random partition of range(n) into L folds of near-equal size."""
    if not 2 <= L <= n:
        raise ParameterError(f"need 2 <= L <= n, got L={L}, n={n}")
    perm = seeding.generator(seed).permutation(n)
    return FoldPartition(tuple(np.sort(f) for f in np.array_split(perm, L)))


def combine_predictions(constituents: np.ndarray, rule: str = "mean") -> np.ndarray:
    if rule == "mean":
        return constituents.mean(axis=-1)
    if rule == "median":
        return np.median(constituents, axis=-1)
    if rule == "logit-mean":
        eps = 1e-12
        return expit(logit(np.clip(constituents, eps, 1 - eps)).mean(axis=-1))
    raise ParameterError(f"unknown combine rule {rule!r}; expected one of {COMBINE_RULES}")


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """Survival probabilities per horizon, subject and imputation: shape (H, n, K)."""

    horizons: np.ndarray
    constituents: np.ndarray
    had_missing: np.ndarray
    combine: str = "mean"
    method: str = ""

    def __post_init__(self):
        if self.combine not in COMBINE_RULES:
            raise ParameterError(f"unknown combine rule {self.combine!r}")

    @property
    def K(self) -> int:
        return self.constituents.shape[2]

    @property
    def n(self) -> int:
        return self.constituents.shape[1]

    @property
    def combined(self) -> np.ndarray:
        return combine_predictions(self.constituents, self.combine)

    def equals(self, other: "PredictionSet") -> bool:
        return (np.array_equal(self.horizons, other.horizons)
                and np.array_equal(self.constituents, other.constituents)
                and np.array_equal(self.had_missing, other.had_missing))


@dataclass(frozen=True, eq=False)
class PooledCoxModel:
    beta: np.ndarray
    baseline_cumhaz: StepFunction
    variant: str
    design_spec: DesignSpec | None = None


def pool_rubin(fits, variant: str, mean_imputed_calibration=None, time=None, status=None) -> PooledCoxModel:
    if not fits:
        raise ParameterError("pool_rubin needs at least one fit")
    if variant not in VARIANTS:
        raise ParameterError(f"variant must be one of {VARIANTS}")
    q = {f.beta.size for f in fits}
    if len(q) != 1:
        raise ShapeError("all fits must share the design width")
    K = len(fits)
    beta = sum(f.beta for f in fits) / K
    if variant == "2A":
        knots = np.unique(np.concatenate([f.baseline_cumhaz.knots for f in fits]))
        values = sum(f.baseline_cumhaz(knots) for f in fits) / K
        baseline = StepFunction(knots, values)
    else:
        if mean_imputed_calibration is None or time is None or status is None:
            raise ParameterError("variant 2B needs the mean-imputed calibration design with its time and status")
        design = getattr(mean_imputed_calibration, "values", mean_imputed_calibration)
        baseline = breslow(design, time, status, beta)
    return PooledCoxModel(beta, baseline, variant, fits[0].design_spec)


# ---------------------------------------------------------------------------


@dataclass
class _FoldModels:
    fits: list
    cal_designs: list
    val_designs: list
    time: np.ndarray
    status: np.ndarray


def _calibrate_fold(data, spec, rows, K, cycles, seed, first_copy) -> _FoldModels:
    """Impute the outcome-masked augmented data and fit one Cox model per copy."""
    held_out = np.zeros(data.n, bool)
    held_out[rows] = True
    cal = data.subset(np.flatnonzero(~held_out))
    aug = build_augmented(cal, data.predictors[rows], data.missing_mask[rows])
    stack = impute_chained(aug, K, cycles, seed, first_copy=first_copy)
    ncal = cal.n
    fits, cal_designs, val_designs = [], [], []
    for copy in stack.completed:
        dc = spec.transform(copy[:ncal])
        fits.append(fit_cox(dc, cal.time, cal.status, spec=spec))
        cal_designs.append(dc)
        val_designs.append(spec.transform(copy[ncal:]))
    return _FoldModels(fits, cal_designs, val_designs, cal.time, cal.status)


def _models_from_copies(data, spec, copies, rows) -> _FoldModels:
    """Naive path: fits on already completed full-data copies, held-out rows removed."""
    keep = np.ones(data.n, bool)
    keep[rows] = False
    fits, cal_designs, val_designs = [], [], []
    for copy in copies:
        dc = spec.transform(copy[keep])
        fits.append(fit_cox(dc, data.time[keep], data.status[keep], spec=spec))
        cal_designs.append(dc)
        val_designs.append(spec.transform(copy[rows]))
    return _FoldModels(fits, cal_designs, val_designs, data.time[keep], data.status[keep])


def _pooled_predictions(models: _FoldModels, horizons, variants=VARIANTS) -> dict:
    out = {}
    mean_design = sum(models.cal_designs) / len(models.cal_designs)
    for v in variants:
        pooled = pool_rubin(models.fits, v, mean_design, models.time, models.status)
        out[v] = np.stack([predict_survival(pooled, dv, horizons) for dv in models.val_designs], axis=-1)
    return out


def _check(K, horizons, combine):
    if K < 1:
        raise ParameterError("K must be at least 1")
    horizons = np.asarray(horizons, dtype=float).reshape(-1)
    if horizons.size == 0 or np.any(horizons <= 0):
        raise ParameterError("horizons must be positive")
    combine_predictions(np.zeros((1, 1)), combine)
    return horizons


def _guard(fn, context):
    try:
        return fn()
    except CoxImputeError as err:
        where = ", ".join(f"{k}={v}" for k, v in context.items())
        raise PipelineError(f"{type(err).__name__} at {where}: {err}", context) from err


def _validation_arrays(validation):
    if isinstance(validation, SurvivalDataset):
        return validation.predictors, validation.missing_mask
    if isinstance(validation, tuple):
        X, mask = validation
        return np.asarray(X, float), np.asarray(mask, bool)
    X = np.asarray(validation, float)
    return X, np.isnan(X)


def run_approach1(data: SurvivalDataset, horizons, *, K: int, L: int | None = None, validation=None,
                  seed=0, cycles: int = DEFAULT_CYCLES, combine: str = "mean", spec: DesignSpec | None = None) -> PredictionSet:
    """Prediction averaging.

    With ``L`` the data are cross-validated; with ``validation`` (predictor
    matrix, optionally with a mask) predictions are made for those new rows
    from models calibrated on ``data``.
    """
    horizons = _check(K, horizons, combine)
    spec = spec or DesignSpec.from_dataset(data)
    if validation is not None:
        Xv, mv = _validation_arrays(validation)
        rows = _direct_predictions(data, spec, Xv, mv, K, cycles, seed, horizons)["1"]
        return PredictionSet(horizons, rows, mv.any(axis=1), combine, "ap1")
    if L is None:
        raise ParameterError("either L (cross-validation) or validation rows are required")
    preds = np.empty((horizons.size, data.n, K))
    for k in range(K):
        part = make_folds(data.n, L, seeding.derive(seed, seeding.FOLDS, k))
        for f, rows in enumerate(part):
            m = _guard(lambda: _calibrate_fold(data, spec, rows, 1, cycles, seeding.derive(seed, seeding.IMPUTE, f), k),
                       {"k": k, "fold": f})
            preds[:, rows, k] = predict_survival(m.fits[0], m.val_designs[0], horizons).T
    return PredictionSet(horizons, preds, data.row_has_missing, combine, "ap1")


def _direct_predictions(data, spec, Xv, mv, K, cycles, seed, horizons):
    aug_rows = np.arange(data.n, data.n + Xv.shape[0])
    joined = SurvivalDataset(
        np.concatenate([data.time, np.ones(Xv.shape[0])]),
        np.concatenate([data.status, np.zeros(Xv.shape[0], int)]),
        np.vstack([data.predictors, Xv]),
        np.vstack([data.missing_mask, mv]),
        data.column_kinds, data.column_names,
    )
    # the placeholder outcomes on the new rows are dropped by _calibrate_fold
    m = _guard(lambda: _calibrate_fold(joined, spec, aug_rows, K, cycles, seeding.derive(seed, seeding.IMPUTE, 0), 0),
               {"mode": "direct"})
    out = {"1": np.stack([predict_survival(f, dv, horizons).T for f, dv in zip(m.fits, m.val_designs)], axis=-1)}
    for v, arr in _pooled_predictions(m, horizons).items():
        out[v] = np.moveaxis(arr, 0, 1)
    return out


def approach2_both(data, horizons, *, K, L=None, validation=None, seed=0, cycles=DEFAULT_CYCLES,
                   combine="mean", spec=None) -> dict:
    """Approach 2A and 2B from one shared set of imputations and fits."""
    horizons = _check(K, horizons, combine)
    spec = spec or DesignSpec.from_dataset(data)
    if validation is not None:
        Xv, mv = _validation_arrays(validation)
        res = _direct_predictions(data, spec, Xv, mv, K, cycles, seed, horizons)
        return {v: PredictionSet(horizons, res[v], mv.any(axis=1), combine, "ap" + v) for v in VARIANTS}
    if L is None:
        raise ParameterError("either L (cross-validation) or validation rows are required")
    preds = {v: np.empty((horizons.size, data.n, K)) for v in VARIANTS}
    part = make_folds(data.n, L, seeding.derive(seed, seeding.FOLDS, 0))
    for f, rows in enumerate(part):
        m = _guard(lambda: _calibrate_fold(data, spec, rows, K, cycles, seeding.derive(seed, seeding.IMPUTE, f), 0),
                   {"fold": f})
        for v, arr in _guard(lambda: _pooled_predictions(m, horizons), {"fold": f}).items():
            preds[v][:, rows, :] = np.moveaxis(arr, 0, 1)
    return {v: PredictionSet(horizons, preds[v], data.row_has_missing, combine, "ap" + v) for v in VARIANTS}


def run_approach2(data: SurvivalDataset, horizons, *, K: int, variant: str, L: int | None = None, validation=None,
                  seed=0, cycles: int = DEFAULT_CYCLES, combine: str = "mean", spec: DesignSpec | None = None) -> PredictionSet:
    """Plug-in pooled model (variant ``"2A"`` or ``"2B"``) with one fixed partition."""
    if variant not in VARIANTS:
        raise ParameterError(f"variant must be one of {VARIANTS}")
    return approach2_both(data, horizons, K=K, L=L, validation=validation, seed=seed, cycles=cycles,
                          combine=combine, spec=spec)[variant]


def naive_all(data, horizons, *, K, L, seed=0, cycles=DEFAULT_CYCLES, combine="mean", spec=None,
              variants=("1", "2A", "2B")) -> dict:
    horizons = _check(K, horizons, combine)
    spec = spec or DesignSpec.from_dataset(data)
    stack = _guard(lambda: impute_chained(build_augmented(data), K, cycles, seeding.derive(seed, seeding.NAIVE_IMPUTE)),
                   {"stage": "naive imputation"})
    out = {}
    if "1" in variants:
        preds = np.empty((horizons.size, data.n, K))
        for k in range(K):
            part = make_folds(data.n, L, seeding.derive(seed, seeding.FOLDS, k))
            for f, rows in enumerate(part):
                m = _guard(lambda: _models_from_copies(data, spec, [stack[k]], rows), {"k": k, "fold": f})
                preds[:, rows, k] = predict_survival(m.fits[0], m.val_designs[0], horizons).T
        out["1"] = PredictionSet(horizons, preds, data.row_has_missing, combine, "nv1")
    pooled = [v for v in variants if v in VARIANTS]
    if pooled:
        preds = {v: np.empty((horizons.size, data.n, K)) for v in pooled}
        part = make_folds(data.n, L, seeding.derive(seed, seeding.FOLDS, 0))
        for f, rows in enumerate(part):
            m = _guard(lambda: _models_from_copies(data, spec, stack.completed, rows), {"fold": f})
            for v, arr in _pooled_predictions(m, horizons, pooled).items():
                preds[v][:, rows, :] = np.moveaxis(arr, 0, 1)
        for v in pooled:
            out[v] = PredictionSet(horizons, preds[v], data.row_has_missing, combine, "nv" + v)
    return out


def run_naive(data: SurvivalDataset, horizons, *, K: int, L: int, variant: str, seed=0,
              cycles: int = DEFAULT_CYCLES, combine: str = "mean", spec: DesignSpec | None = None) -> PredictionSet:
    """Naive counterpart of approach ``variant`` (``"1"``, ``"2A"`` or ``"2B"``)."""
    if variant not in ("1",) + VARIANTS:
        raise ParameterError("variant must be '1', '2A' or '2B'")
    return naive_all(data, horizons, K=K, L=L, seed=seed, cycles=cycles, combine=combine, spec=spec,
                     variants=(variant,))[variant]


METHODS = ("ap1", "ap2A", "ap2B", "nv1", "nv2A", "nv2B")


def run_methods(data, horizons, methods, *, K, L, seed=0, cycles=DEFAULT_CYCLES, combine="mean") -> dict:
    """Run a subset of METHODS, sharing work between 2A/2B and among the naive variants."""
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ParameterError(f"unknown methods {sorted(unknown)}")
    spec = DesignSpec.from_dataset(data)
    kw = dict(K=K, L=L, seed=seed, cycles=cycles, combine=combine, spec=spec)
    out = {}
    if "ap1" in methods:
        out["ap1"] = run_approach1(data, horizons, **kw)
    if {"ap2A", "ap2B"} & set(methods):
        for v, ps in approach2_both(data, horizons, **kw).items():
            if "ap" + v in methods:
                out["ap" + v] = ps
    nv = tuple(m[2:] for m in methods if m.startswith("nv"))
    if nv:
        for v, ps in naive_all(data, horizons, variants=nv, **kw).items():
            out["nv" + v] = ps
    return {m: out[m] for m in methods}


def calibrate(data: SurvivalDataset, *, K: int, seed=0, cycles: int = DEFAULT_CYCLES):
    """Fit one Cox model per imputation of ``data`` and the two pooled models.

    Returns ``(fits, {"2A": pooled, "2B": pooled}, spec)``.
    """
    spec = DesignSpec.from_dataset(data)
    stack = impute_chained(build_augmented(data), K, cycles, seeding.derive(seed, seeding.IMPUTE, 0))
    designs = [spec.transform(c) for c in stack.completed]
    fits = [fit_cox(d, data.time, data.status, spec=spec) for d in designs]
    mean_design = sum(designs) / K
    pooled = {v: pool_rubin(fits, v, mean_design, data.time, data.status) for v in VARIANTS}
    return fits, pooled, spec
