"""Probability-of-superiority and probability-of-best-arm queries.

These read the coefficient distribution N(beta, cov_beta) as a posterior, so
they demand a model that was actually fitted as one (or explicitly
reinterpreted via ``as_flat_prior_posterior``); a frequentist sampling
distribution does not license "the probability that arm A is best" without
that opt-in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset
from .model import FittedModel
from .mvnorm import OrthantResult, mvn_orthant
from .predicates import describe_predicate
from .vectors import apply, delta_vector, profile_from_subset

__all__ = ["ProbEstimate", "ArmProbability", "RankingResult", "prob_positive", "prob_best"]


@dataclass(frozen=True)
class ProbEstimate:
    """Posterior probability with the quadrature error bound."""

    probability: float
    error: float
    method: str
    query: Mapping[str, object]

    def to_dict(self) -> dict:
        return {
            "kind": "prob_positive",
            "probability": self.probability,
            "error": self.error,
            "method": self.method,
            "query": dict(self.query),
        }


@dataclass(frozen=True)
class ArmProbability:
    arm: str
    probability: float
    error: float
    method: str


@dataclass(frozen=True)
class RankingResult:
    """Per-arm probabilities of being the best arm.

    The entries are estimated independently, so their sum is 1 only up to
    the individual quadrature errors; ``total`` exposes it for checking.
    """

    entries: tuple[ArmProbability, ...]
    query: Mapping[str, object]

    @property
    def total(self) -> float:
        return float(sum(e.probability for e in self.entries))

    @property
    def total_error(self) -> float:
        return float(sum(e.error for e in self.entries))

    def best(self) -> ArmProbability:
        return max(self.entries, key=lambda e: e.probability)

    def to_dict(self) -> dict:
        return {
            "kind": "prob_best",
            "arms": {
                e.arm: {"probability": e.probability, "error": e.error, "method": e.method}
                for e in self.entries
            },
            "total": self.total,
            "query": dict(self.query),
        }


def _require_posterior(model: FittedModel) -> None:
    if not model.posterior:
        raise ValueError(
            "ranking queries read the coefficient distribution as a posterior; "
            "fit with a prior, or opt in with as_flat_prior_posterior()"
        )


def prob_positive(model: FittedModel, data: Dataset, arm_to: str, arm_from: str,
                  predicate=None, tol: float = 5e-4, seed=None) -> ProbEstimate:
    """Posterior probability that the effect of ``arm_to`` over ``arm_from``
    is positive at the global (or ``predicate``-subset) covariate means.
    One-dimensional, so this is an exact normal CDF; ``tol``/``seed`` only
    matter in degenerate cases."""
    _require_posterior(model)
    profile = profile_from_subset(data, model.schema, predicate)
    vec = delta_vector(model.schema, profile, arm_to, arm_from)
    value, variance = apply(vec, model)
    res = mvn_orthant([value], [[variance]], tol=tol, seed=seed)
    query = {"type": "prob_positive", "arm_to": vec.arm_to, "arm_from": vec.arm_from}
    if predicate is not None:
        query["predicate"] = describe_predicate(predicate)
    return ProbEstimate(
        probability=res.probability, error=res.error, method=res.method,
        query=query,
    )


def _stacked_orthant(model: FittedModel, profile, arm: str,
                     others: Sequence[str], tol: float, seed) -> OrthantResult:
    """P(arm beats every other arm): stack the pairwise delta vectors into
    one matrix D and take the orthant probability of N(D beta, D cov D')."""
    rows = [delta_vector(model.schema, profile, arm, other).entries for other in others]
    stack = np.vstack(rows)
    mu = stack @ model.beta
    cov = stack @ model.cov_beta @ stack.T
    cov = (cov + cov.T) / 2.0
    return mvn_orthant(mu, cov, tol=tol, seed=seed)


def prob_best(model: FittedModel, data: Dataset, arms: Sequence[str] | None = None,
              predicate=None, tol: float = 5e-4, seed=None) -> RankingResult:
    """Posterior probability, for each arm, that it has the highest average
    outcome at the global (or ``predicate``-subset) covariate means.

    Each arm's probability is a separate orthant evaluation over its stacked
    deltas against the other arms (rivals in sorted order, so results do not
    depend on input ordering). With two arms this reduces exactly to
    ``prob_positive``.
    """
    _require_posterior(model)
    if arms is None:
        candidates = model.schema.all_arms
    else:
        candidates = tuple(model.schema.require_arm(a) for a in arms)
        if len(set(candidates)) != len(candidates):
            raise ValueError("duplicate arm labels in ranking request")
    if len(candidates) < 2:
        raise ValueError("ranking needs at least 2 arms")
    profile = profile_from_subset(data, model.schema, predicate)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    # One child seed per schema position, so an arm's estimate does not
    # depend on the order the candidates were requested in.
    children = ss.spawn(len(model.schema.all_arms))
    entries = []
    for arm in candidates:
        child = children[model.schema.all_arms.index(arm)]
        others = sorted(a for a in candidates if a != arm)
        res = _stacked_orthant(model, profile, arm, others, tol, child)
        entries.append(ArmProbability(arm=arm, probability=res.probability,
                                      error=res.error, method=res.method))
    query = {"type": "prob_best", "arms": list(candidates)}
    if predicate is not None:
        query["predicate"] = describe_predicate(predicate)
    return RankingResult(entries=tuple(entries), query=query)
