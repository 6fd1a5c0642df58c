"""Absolute treatment effects: average, conditional, heterogeneous, and
per-period estimates with standard errors and confidence intervals.

Every query is one delta vector (or a contrast of two) applied to the same
fitted model; only the covariate profile changes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import ndtri

from .data import Dataset
from .model import FittedModel
from .predicates import describe_predicate
from .vectors import CovariateProfile, apply, delta_vector, profile_from_subset

__all__ = ["EffectEstimate", "ate", "cate", "hte", "dte"]


@dataclass(frozen=True)
class EffectEstimate:
    """Point estimate with normal-quantile confidence interval."""

    estimate: float
    std_error: float
    ci_low: float
    ci_high: float
    ci_level: float
    query: Mapping[str, object]

    def to_dict(self) -> dict:
        return {
            "kind": "effect",
            "estimate": self.estimate,
            "std_error": self.std_error,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "ci_level": self.ci_level,
            "query": dict(self.query),
        }


def _estimate(value: float, variance: float, ci_level: float, query: dict) -> EffectEstimate:
    if not 0.0 < ci_level < 1.0:
        raise ValueError("ci_level must be strictly between 0 and 1")
    se = float(np.sqrt(variance))
    z = float(ndtri(0.5 + ci_level / 2.0))
    return EffectEstimate(estimate=value, std_error=se, ci_low=value - z * se,
                          ci_high=value + z * se, ci_level=ci_level, query=query)


def ate(model: FittedModel, data: Dataset, arm_to: str, arm_from: str,
        ci_level: float = 0.95) -> EffectEstimate:
    """Average treatment effect of ``arm_to`` relative to ``arm_from`` at
    the global covariate means."""
    profile = profile_from_subset(data, model.schema)
    vec = delta_vector(model.schema, profile, arm_to, arm_from)
    value, variance = apply(vec, model)
    return _estimate(value, variance, ci_level,
                     {"type": "ate", "arm_to": vec.arm_to, "arm_from": vec.arm_from})


def cate(model: FittedModel, data: Dataset, arm_to: str, arm_from: str, predicate,
         ci_level: float = 0.95) -> EffectEstimate:
    """Treatment effect conditional on the predicate's subset: the delta
    vector is evaluated at that subset's covariate means."""
    profile = profile_from_subset(data, model.schema, predicate)
    vec = delta_vector(model.schema, profile, arm_to, arm_from)
    value, variance = apply(vec, model)
    return _estimate(value, variance, ci_level,
                     {"type": "cate", "arm_to": vec.arm_to, "arm_from": vec.arm_from,
                      "predicate": describe_predicate(predicate)})


def hte(model: FittedModel, data: Dataset, arm_to: str, arm_from: str, predicate,
        ci_level: float = 0.95) -> EffectEstimate:
    """Heterogeneity contrast: the conditional effect on the predicate's
    subset minus the conditional effect on its complement.

    The variance is the quadratic form on the full contrast vector, which
    accounts for the covariance between the two conditional effects; it is
    not a difference of the two standalone standard errors.
    """
    profile_in = profile_from_subset(data, model.schema, predicate)
    profile_out = profile_from_subset(data, model.schema, predicate, complement=True)
    vec_in = delta_vector(model.schema, profile_in, arm_to, arm_from)
    vec_out = delta_vector(model.schema, profile_out, arm_to, arm_from)
    contrast = vec_in.entries - vec_out.entries
    value, variance = apply(contrast, model)
    return _estimate(value, variance, ci_level,
                     {"type": "hte", "arm_to": vec_in.arm_to, "arm_from": vec_in.arm_from,
                      "predicate": describe_predicate(predicate)})


def dte(model: FittedModel, data: Dataset, arm_to: str, arm_from: str, period: int,
        ci_level: float = 0.95, period_covariate: str = "period") -> EffectEstimate:
    """Treatment effect within one time period.

    Repeated measures correlate within a unit, so the model must have been
    fitted with cluster-robust covariance; anything else silently
    understates the standard error and is refused. The period column must
    also have been encoded as a categorical covariate (see
    ``add_period_covariate``) unless the data has a single period, in which
    case the time axis is degenerate and the estimate equals the average
    effect.
    """
    if model.covariance_kind != "cluster":
        raise ValueError("time-dynamic effects require cluster-robust covariance")
    if data.period is None:
        raise ValueError("dataset has no period column")
    periods = set(int(p) for p in data.period.tolist())
    period = int(period)
    if period not in periods:
        raise ValueError(f"unknown period {period}; data has periods {sorted(periods)}")
    if len(periods) > 1:
        has_period_cov = any(
            c.covariate == period_covariate for c in model.schema.covariate_columns
        )
        if not has_period_cov:
            raise ValueError(
                f"model schema lacks the {period_covariate!r} covariate; encode the "
                "period column as a categorical covariate before fitting"
            )
    mask = np.asarray(data.period, dtype=np.int64) == period
    profile = profile_from_subset(data, model.schema, mask)
    vec = delta_vector(model.schema, profile, arm_to, arm_from)
    value, variance = apply(vec, model)
    return _estimate(value, variance, ci_level,
                     {"type": "dte", "arm_to": vec.arm_to, "arm_from": vec.arm_from,
                      "period": period})
