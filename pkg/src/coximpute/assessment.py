"""Variation, accuracy and bias summaries of cross-validated survival predictions.

Quantiles linearly interpolate the empirical distribution function
(Hyndman-Fan type 4, numpy's "interpolated_inverted_cdf"): with n sorted
values the p-quantile sits at position n*p. Other numpy rules can be
selected through ``quantile_method``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateWeightsError, EmptyFilterError, ParameterError, ShapeError
from .survival import kaplan_meier_censoring

STRATA = ("missing", "observed", "all")
LOWER, UPPER = 0.2, 0.8
QUANTILE_METHOD = "interpolated_inverted_cdf"


def _quantile_range(values, method=QUANTILE_METHOD) -> float:
    q10, q90 = np.quantile(values, [0.10, 0.90], method=method)
    return float((q90 - q10) * 100)


def variation_R(predictions, row_means_reference=None, lower: float = LOWER, upper: float = UPPER,
                quantile_method: str = QUANTILE_METHOD) -> float:
    """Spread (in percentage points) of per-row deviations around the row means.

    ``predictions`` is n x m (subjects by imputations or replicates). Rows
    whose filter value lies outside [lower, upper] are dropped; the filter
    value is the row mean unless ``row_means_reference`` supplies another
    per-row quantity (e.g. the true survival probability). The remaining
    deviations are pooled and the 10th-90th percentile range is returned
    times 100.
    """
    P = np.asarray(predictions, dtype=float)
    if P.ndim != 2:
        raise ShapeError("predictions must be an n x m matrix")
    if P.shape[1] < 2:
        raise ParameterError("variation_R needs at least two columns")
    means = P.mean(axis=1)
    ref = means if row_means_reference is None else np.asarray(row_means_reference, dtype=float)
    if ref.shape != means.shape:
        raise ShapeError("row_means_reference must have one value per row")
    keep = (ref >= lower) & (ref <= upper)
    if not keep.any():
        raise EmptyFilterError(f"no rows with filter value in [{lower}, {upper}]")
    return _quantile_range((P[keep] - means[keep, None]).ravel(), quantile_method)


def brier_ipcw(predictions, time, status, t: float, subset=None, censoring=None) -> float:
    """Inverse-probability-of-censoring weighted Brier score at horizon ``t``.

    Subjects with an event by ``t`` are weighted by 1/G(T_i-), subjects still
    at risk after ``t`` by 1/G(t); subjects censored before ``t`` contribute
    zero but stay in the denominator. G is the Kaplan-Meier censoring
    survivor estimated on all subjects; ``subset`` restricts the average.
    """
    S = np.asarray(predictions, dtype=float).reshape(-1)
    time = np.asarray(time, dtype=float).reshape(-1)
    status = np.asarray(status).reshape(-1)
    if not (S.shape == time.shape == status.shape):
        raise ShapeError("predictions, time and status must have equal length")
    G = censoring if censoring is not None else kaplan_meier_censoring(time, status)
    if subset is None:
        rows = np.arange(S.size)
    else:
        subset = np.asarray(subset)
        rows = np.flatnonzero(subset) if subset.dtype == bool else subset
    if rows.size == 0:
        raise EmptyFilterError("empty subset for the Brier score")
    S, time, status = S[rows], time[rows], status[rows]
    died = (time <= t) & (status == 1)
    alive = time > t
    g_event = G.left_limit(time)
    g_t = float(G(t))
    bad = (died & (g_event <= 0)) | (alive & (g_t <= 0))
    if bad.any():
        raise DegenerateWeightsError("censoring survivor estimate is zero where a weight is needed",
                                     rows[bad].tolist())
    terms = np.zeros(S.size)
    terms[died] = S[died] ** 2 / g_event[died]
    if alive.any():
        terms[alive] = (1 - S[alive]) ** 2 / g_t
    return float(terms.mean())


def bias_summary(mean_predictions, true_survival, lower: float = LOWER, upper: float = UPPER) -> float:
    """Mean of (prediction - truth) over subjects whose truth lies in [lower, upper]."""
    pred = np.asarray(mean_predictions, dtype=float).reshape(-1)
    truth = np.asarray(true_survival, dtype=float).reshape(-1)
    if pred.shape != truth.shape:
        raise ShapeError("predictions and truth must have equal length")
    keep = (truth >= lower) & (truth <= upper)
    if not keep.any():
        raise EmptyFilterError(f"no subjects with true survival in [{lower}, {upper}]")
    return float(np.mean(pred[keep] - truth[keep]))


def truth_window(truth, rule: str = "quantile"):
    """Filter bounds on true survival: the 20th/80th percentiles, or the fixed 0.2/0.8 values."""
    if rule == "quantile":
        lo, hi = np.quantile(truth, [0.2, 0.8], method=QUANTILE_METHOD)
        return float(lo), float(hi)
    if rule == "value":
        return LOWER, UPPER
    raise ParameterError(f"unknown truth filter {rule!r}")


def simulation_variation_R(per_simulation, truths, subsets=None, truth_filter: str = "quantile"):
    """Average over simulations of the replicate-deviation range R.

    ``per_simulation[s]`` is an n_s x R matrix of combined predictions
    (subjects by replicate analyses) and ``truths[s]`` the true survival
    probabilities. The truth window is computed on all subjects of the
    simulation and then intersected with ``subsets[s]`` when given.
    Simulations whose window is empty are skipped; returns
    ``(mean R, per-simulation R with NaN for skipped)``.
    """
    values = []
    for s, (P, truth) in enumerate(zip(per_simulation, truths)):
        P = np.asarray(P, dtype=float)
        truth = np.asarray(truth, dtype=float)
        lo, hi = truth_window(truth, truth_filter)
        ref = truth.copy()
        if subsets is not None:
            ref[~np.asarray(subsets[s], dtype=bool)] = np.nan
        try:
            values.append(variation_R(P, ref, lo, hi))
        except EmptyFilterError:
            values.append(np.nan)
    values = np.asarray(values)
    if np.all(np.isnan(values)):
        raise EmptyFilterError("no simulation had subjects inside the truth window")
    return float(np.nanmean(values)), values


@dataclass
class AssessmentReport:
    """Long-format table of (method, K, horizon, stratum, metric, value) rows."""

    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    COLUMNS = ("method", "K", "horizon", "stratum", "metric", "value")

    def add(self, method, K, horizon, stratum, metric, value):
        v = None if value is None or (isinstance(value, float) and np.isnan(value)) else float(value)
        self.rows.append({"method": method, "K": int(K), "horizon": float(horizon), "stratum": stratum,
                          "metric": metric, "value": v})

    def get(self, method, K, horizon, stratum, metric):
        for r in self.rows:
            if (r["method"], r["K"], r["horizon"], r["stratum"], r["metric"]) == (method, K, float(horizon), stratum, metric):
                return r["value"]
        raise KeyError((method, K, horizon, stratum, metric))

    def extend(self, other: "AssessmentReport"):
        self.rows.extend(other.rows)


def strata_masks(had_missing) -> dict:
    had_missing = np.asarray(had_missing, dtype=bool)
    return {"missing": had_missing, "observed": ~had_missing, "all": np.ones_like(had_missing)}


def assess_replicates(replicates, time, status, *, method: str, K: int) -> AssessmentReport:
    """Summaries for R repeated calibrations of one method on the same data.

    ``replicates`` is a list of PredictionSet objects. Reports the
    between-replicate R of the combined predictions, the within-calibration
    R of the individual constituents (first replicate, K >= 2), and the
    mean and sample SD of the replicate Brier scores, per stratum.
    """
    report = AssessmentReport()
    first = replicates[0]
    G = kaplan_meier_censoring(time, status)
    for h, t in enumerate(first.horizons):
        combined = np.stack([ps.combined[h] for ps in replicates], axis=1)
        for stratum, mask in strata_masks(first.had_missing).items():
            if not mask.any():
                continue
            r_between = None
            if combined.shape[1] >= 2:
                try:
                    r_between = variation_R(combined[mask])
                except EmptyFilterError:
                    pass
            report.add(method, K, t, stratum, "R", r_between)
            r_within = None
            if first.K >= 2:
                try:
                    r_within = variation_R(first.constituents[h][mask])
                except EmptyFilterError:
                    pass
            report.add(method, K, t, stratum, "R_individual", r_within)
            briers = [brier_ipcw(ps.combined[h], time, status, t, subset=mask, censoring=G) for ps in replicates]
            report.add(method, K, t, stratum, "brier_mean", float(np.mean(briers)))
            report.add(method, K, t, stratum, "brier_sd", float(np.std(briers, ddof=1)) if len(briers) > 1 else None)
    return report
