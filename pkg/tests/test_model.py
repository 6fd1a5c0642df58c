"""Design construction and model fitting."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from effect_engine.data import Dataset
from effect_engine.model import (
    BayesPrior,
    FittedModel,
    ModelSpec,
    as_flat_prior_posterior,
    build_design,
    fit_bayes,
    fit_model,
    fit_ols,
)


def two_arm_data():
    # Arm "0" outcomes 1, 3 (mean 2); arm "1" outcomes 4, 6 (mean 5).
    return Dataset(outcome=[1.0, 3.0, 4.0, 6.0], arm=["0", "0", "1", "1"])


def test_two_arm_fit_matches_hand_computation():
    # Saturated two-arm fit: beta = (mean_0, mean_1 - mean_0) = (2, 3).
    # Residuals are (-1, 1, -1, 1), so RSS = 4, sigma^2 = 4 / (4 - 2) = 2,
    # X'X = [[4, 2], [2, 2]], and classical cov = 2 (X'X)^-1 = [[1,-1],[-1,2]].
    model = fit_model(two_arm_data(), ModelSpec(reference_arm="0", covariance_kind="classical"))
    assert model.schema.labels == ("intercept", "arm=1")
    assert_allclose(model.beta, [2.0, 3.0], rtol=0, atol=1e-12)
    assert_allclose(model.cov_beta, [[1.0, -1.0], [-1.0, 2.0]], rtol=0, atol=1e-12)
    assert_allclose(model.std_errors, [1.0, np.sqrt(2.0)], rtol=0, atol=1e-12)
    assert model.n == 4
    assert model.dof == 2
    assert not model.posterior


def test_hc1_equals_classical_when_residuals_have_equal_magnitude():
    # All four residuals are +-1, so the HC1 meat X'diag(e^2)X collapses to
    # X'X and the sandwich reduces to the classical estimator exactly.
    classical = fit_model(two_arm_data(), ModelSpec(reference_arm="0", covariance_kind="classical"))
    hc1 = fit_model(two_arm_data(), ModelSpec(reference_arm="0", covariance_kind="hc1"))
    assert_allclose(hc1.cov_beta, classical.cov_beta, rtol=0, atol=1e-12)
    assert_allclose(hc1.cov_beta, [[1.0, -1.0], [-1.0, 2.0]], rtol=0, atol=1e-12)


def test_design_layout_covariate_major():
    data = Dataset(
        outcome=np.arange(6, dtype=float),
        arm=["0", "1", "2", "0", "1", "2"],
        covariates={"x": [0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
                    "grade": ["4", "9", "4", "9", "4", "9"]},
    )
    design, y, schema = build_design(data, ModelSpec(reference_arm="0"))
    assert schema.labels == (
        "intercept", "x", "grade=9", "arm=1", "arm=2",
        "x:arm=1", "x:arm=2", "grade=9:arm=1", "grade=9:arm=2",
    )
    assert design.shape == (6, 9)
    assert_allclose(design[:, 0], 1.0)
    assert_allclose(design[:, 1], data.covariates["x"])
    assert_allclose(design[:, 2], [0, 1, 0, 1, 0, 1])
    assert_allclose(design[:, 3], [0, 1, 0, 0, 1, 0])  # arm=1
    assert_allclose(design[:, 4], [0, 0, 1, 0, 0, 1])  # arm=2
    # Interactions are elementwise products, covariate-major.
    assert_allclose(design[:, 5], design[:, 1] * design[:, 3])
    assert_allclose(design[:, 6], design[:, 1] * design[:, 4])
    assert_allclose(design[:, 7], design[:, 2] * design[:, 3])
    assert_allclose(design[:, 8], design[:, 2] * design[:, 4])
    assert_allclose(y, data.outcome)
    assert schema.all_arms == ("0", "1", "2")
    assert schema.arm_labels == ("1", "2")


def test_categorical_drops_string_sorted_first_level():
    # Levels sort as strings, so "10" < "4" < "9" and "10" is the reference.
    data = Dataset(
        outcome=[1.0, 2.0, 3.0, 4.0],
        arm=["a", "b", "a", "b"],
        covariates={"grade": ["4", "10", "9", "10"]},
    )
    _, _, schema = build_design(data, ModelSpec(reference_arm="a", interactions=False))
    assert schema.labels == ("intercept", "grade=4", "grade=9", "arm=b")


def test_numeric_column_can_be_forced_categorical():
    data = Dataset(
        outcome=[1.0, 2.0, 3.0, 4.0],
        arm=["a", "b", "a", "b"],
        covariates={"dose": [1.0, 2.0, 1.0, 2.0]},
    )
    spec = ModelSpec(reference_arm="a", encodings={"dose": "categorical"}, interactions=False)
    _, _, schema = build_design(data, spec)
    assert schema.labels == ("intercept", "dose=2.0", "arm=b")


def test_categorical_column_cannot_be_forced_numeric():
    data = Dataset(
        outcome=[1.0, 2.0],
        arm=["a", "b"],
        covariates={"site": ["north", "south"]},
    )
    spec = ModelSpec(reference_arm="a", encodings={"site": "numeric"})
    with pytest.raises(ValueError, match="cannot be encoded as numeric"):
        build_design(data, spec)


def test_single_level_categorical_rejected():
    data = Dataset(
        outcome=[1.0, 2.0],
        arm=["a", "b"],
        covariates={"site": ["north", "north"]},
    )
    with pytest.raises(ValueError, match="single level 'north'"):
        build_design(data, ModelSpec(reference_arm="a"))


def test_constant_numeric_covariate_warns():
    data = Dataset(
        outcome=[1.0, 2.0],
        arm=["a", "b"],
        covariates={"x": [3.0, 3.0]},
    )
    with pytest.warns(UserWarning, match="constant across all rows"):
        build_design(data, ModelSpec(reference_arm="a"))


def test_unknown_encoding_rejected():
    with pytest.raises(ValueError, match="unknown encoding 'onehot'"):
        ModelSpec(reference_arm="a", encodings={"x": "onehot"})


def test_unknown_covariance_kind_rejected():
    with pytest.raises(ValueError, match="unknown covariance_kind 'hc3'"):
        ModelSpec(reference_arm="a", covariance_kind="hc3")


def test_reference_arm_must_exist():
    with pytest.raises(ValueError, match="reference arm 'z' not present"):
        fit_model(two_arm_data(), ModelSpec(reference_arm="z"))


def test_interactions_off_drops_block():
    data = Dataset(
        outcome=[1.0, 2.0, 3.0, 4.0],
        arm=["a", "b", "a", "b"],
        covariates={"x": [0.0, 1.0, 2.0, 3.0]},
    )
    _, _, schema = build_design(data, ModelSpec(reference_arm="a", interactions=False))
    assert schema.labels == ("intercept", "x", "arm=b")
    assert schema.interaction_indices == ()


def test_rank_deficient_design_names_columns():
    rng = np.random.default_rng(5)
    x = rng.normal(size=12)
    data = Dataset(
        outcome=rng.normal(size=12),
        arm=np.where(np.arange(12) % 2 == 0, "a", "b"),
        covariates={"x": x, "z": 2.0 * x},
        unit_id=None,
    )
    spec = ModelSpec(reference_arm="a", covariance_kind="classical", interactions=False)
    with pytest.raises(ValueError, match=r"rank deficient; dependent columns: .*[xz]"):
        fit_model(data, spec)


def test_more_columns_than_rows_rejected():
    X = np.ones((2, 3))
    with pytest.raises(ValueError, match=r"n=2, p=3"):
        fit_ols(X, np.zeros(2), covariance_kind="classical")


def test_noiseless_fit_recovers_coefficients():
    rng = np.random.default_rng(11)
    X = np.column_stack([np.ones(20), rng.normal(size=(20, 2))])
    beta = np.array([1.0, -2.0, 0.5])
    for kind in ("classical", "hc1"):
        model = fit_ols(X, X @ beta, covariance_kind=kind)
        assert_allclose(model.beta, beta, rtol=0, atol=1e-12)
        # Zero residuals force a zero covariance under both estimators.
        assert_allclose(model.cov_beta, np.zeros((3, 3)), rtol=0, atol=1e-20)


def test_classical_covariance_matches_direct_inverse():
    rng = np.random.default_rng(12)
    X = np.column_stack([np.ones(50), rng.normal(size=(50, 3))])
    y = rng.normal(size=50)
    model = fit_ols(X, y, covariance_kind="classical")
    resid = y - X @ model.beta
    sigma2 = resid @ resid / (50 - 4)
    assert_allclose(model.cov_beta, sigma2 * np.linalg.inv(X.T @ X), rtol=1e-10)


def test_hc1_covariance_matches_direct_sandwich():
    rng = np.random.default_rng(13)
    X = np.column_stack([np.ones(50), rng.normal(size=(50, 3))])
    y = rng.normal(size=50)
    model = fit_ols(X, y, covariance_kind="hc1")
    resid = y - X @ model.beta
    bread = np.linalg.inv(X.T @ X)
    xe = X * resid[:, None]
    expected = bread @ (xe.T @ xe) @ bread * (50 / 46)
    assert_allclose(model.cov_beta, expected, rtol=1e-10)


def test_singleton_clusters_match_hc1():
    # One row per cluster: the Liang-Zeger meat equals the HC1 meat, and the
    # corrections agree, (G/(G-1)) ((n-1)/(n-p)) = n/(n-p) when G = n.
    rng = np.random.default_rng(14)
    X = np.column_stack([np.ones(30), rng.normal(size=(30, 2))])
    y = rng.normal(size=30)
    hc1 = fit_ols(X, y, covariance_kind="hc1")
    clustered = fit_ols(X, y, covariance_kind="cluster",
                        cluster_ids=[f"u{i}" for i in range(30)])
    assert_allclose(clustered.cov_beta, hc1.cov_beta, rtol=1e-12)


def test_cluster_covariance_matches_direct_formula():
    rng = np.random.default_rng(15)
    n = 40
    X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
    y = rng.normal(size=n)
    ids = [f"g{i % 8}" for i in range(n)]
    model = fit_ols(X, y, covariance_kind="cluster", cluster_ids=ids)
    resid = y - X @ model.beta
    bread = np.linalg.inv(X.T @ X)
    meat = np.zeros((3, 3))
    for g in set(ids):
        mask = np.asarray([i == g for i in ids])
        s = (X[mask] * resid[mask, None]).sum(axis=0)
        meat += np.outer(s, s)
    expected = bread @ meat @ bread * (8 / 7) * ((n - 1) / (n - 3))
    assert_allclose(model.cov_beta, expected, rtol=1e-10)


def test_cluster_requires_ids_and_two_clusters():
    X = np.column_stack([np.ones(6), np.arange(6.0)])
    y = np.arange(6.0)
    with pytest.raises(ValueError, match="requires cluster_ids"):
        fit_ols(X, y, covariance_kind="cluster")
    with pytest.raises(ValueError, match="at least 2 clusters"):
        fit_ols(X, y, covariance_kind="cluster", cluster_ids=["g"] * 6)


def test_fit_model_cluster_requires_unit_id():
    with pytest.raises(ValueError, match="requires a unit_id column"):
        fit_model(two_arm_data(), ModelSpec(reference_arm="0", covariance_kind="cluster"))


def test_row_permutation_invariance():
    rng = np.random.default_rng(16)
    data = Dataset(
        outcome=rng.normal(size=24),
        arm=[str(i % 3) for i in range(24)],
        covariates={"x": rng.normal(size=24)},
        unit_id=[f"u{i % 6}" for i in range(24)],
    )
    perm = rng.permutation(24)
    shuffled = Dataset(
        outcome=data.outcome[perm],
        arm=data.arm[perm],
        covariates={"x": data.covariates["x"][perm]},
        unit_id=data.unit_id[perm],
    )
    for kind in ("classical", "hc1", "cluster"):
        spec = ModelSpec(reference_arm="0", covariance_kind=kind)
        a, b = fit_model(data, spec), fit_model(shuffled, spec)
        assert_allclose(a.beta, b.beta, rtol=0, atol=1e-10)
        assert_allclose(a.cov_beta, b.cov_beta, rtol=0, atol=1e-10)


def test_posterior_matches_hand_formula():
    rng = np.random.default_rng(17)
    n, p = 40, 3
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    y = rng.normal(size=n)
    m0 = rng.normal(size=p)
    A = rng.normal(size=(p, p))
    S0 = A @ A.T + np.eye(p)
    s2 = 1.3
    model = fit_bayes(X, y, m0, S0, s2)
    precision = np.linalg.inv(S0) + X.T @ X / s2
    cov = np.linalg.inv(precision)
    assert_allclose(model.cov_beta, cov, rtol=1e-10)
    assert_allclose(model.beta, cov @ (np.linalg.inv(S0) @ m0 + X.T @ y / s2), rtol=1e-10)
    assert model.posterior
    assert model.covariance_kind == "bayes"


def test_wide_prior_approaches_least_squares():
    rng = np.random.default_rng(18)
    X = np.column_stack([np.ones(30), rng.normal(size=(30, 2))])
    y = rng.normal(size=30)
    ols = fit_ols(X, y, covariance_kind="classical")
    post = fit_bayes(X, y, np.zeros(3), 1e8 * np.eye(3), 1.0)
    assert_allclose(post.beta, ols.beta, rtol=1e-5)


def test_huge_noise_variance_returns_the_prior():
    # With the likelihood washed out the posterior collapses to the prior.
    rng = np.random.default_rng(19)
    X = np.column_stack([np.ones(30), rng.normal(size=(30, 2))])
    y = rng.normal(size=30)
    m0 = np.array([2.0, -1.0, 0.5])
    post = fit_bayes(X, y, m0, np.eye(3), 1e8)
    assert_allclose(post.beta, m0, rtol=1e-4)
    assert_allclose(post.cov_beta, np.eye(3), rtol=1e-4, atol=1e-6)


def test_fit_bayes_rejects_empty_data():
    with pytest.raises(ValueError, match="empty dataset"):
        fit_bayes(np.empty((0, 2)), np.empty(0), np.zeros(2), np.eye(2), 1.0)


def test_posterior_covariance_stays_spd():
    rng = np.random.default_rng(23)
    X = np.column_stack([np.ones(25), rng.normal(size=(25, 3))])
    y = rng.normal(size=25)
    for _ in range(10):
        A = rng.normal(size=(4, 4))
        S0 = A @ A.T + 0.1 * np.eye(4)
        post = fit_bayes(X, y, rng.normal(size=4), S0, float(rng.uniform(0.2, 5.0)))
        np.linalg.cholesky(post.cov_beta)  # raises if not SPD


def test_bad_priors_rejected():
    X = np.column_stack([np.ones(5), np.arange(5.0)])
    y = np.arange(5.0)
    with pytest.raises(ValueError, match="not symmetric positive definite"):
        fit_bayes(X, y, np.zeros(2), np.array([[1.0, 2.0], [0.0, 1.0]]), 1.0)
    with pytest.raises(ValueError, match="not symmetric positive definite"):
        fit_bayes(X, y, np.zeros(2), -np.eye(2), 1.0)
    with pytest.raises(ValueError, match="noise_variance must be positive"):
        fit_bayes(X, y, np.zeros(2), np.eye(2), 0.0)
    with pytest.raises(ValueError, match="prior dimensions"):
        fit_bayes(X, y, np.zeros(3), np.eye(3), 1.0)
    with pytest.raises(ValueError, match="noise_variance must be positive"):
        BayesPrior(mean=np.zeros(2), covariance=np.eye(2), noise_variance=-1.0)


def test_flat_prior_opt_in():
    model = fit_model(two_arm_data(), ModelSpec(reference_arm="0"))
    assert not model.posterior
    flat = as_flat_prior_posterior(model)
    assert flat.posterior
    assert_allclose(flat.beta, model.beta, rtol=0, atol=0)
    assert as_flat_prior_posterior(flat) is flat


def test_fitted_model_validation():
    model = fit_model(two_arm_data(), ModelSpec(reference_arm="0"))
    with pytest.raises(ValueError, match="beta has length"):
        FittedModel(schema=model.schema, beta=np.zeros(3), cov_beta=np.eye(2),
                    n=4, dof=2, covariance_kind="classical")
    with pytest.raises(ValueError, match="not symmetric"):
        FittedModel(schema=model.schema, beta=np.zeros(2),
                    cov_beta=np.array([[1.0, 0.5], [0.0, 1.0]]),
                    n=4, dof=2, covariance_kind="classical")
    with pytest.raises(ValueError, match="negative diagonal"):
        FittedModel(schema=model.schema, beta=np.zeros(2),
                    cov_beta=np.array([[-1.0, 0.0], [0.0, 1.0]]),
                    n=4, dof=2, covariance_kind="classical")


def test_arm_onehot_and_require_arm():
    _, _, schema = build_design(
        Dataset(outcome=[1.0, 2.0, 3.0], arm=["a", "b", "c"]),
        ModelSpec(reference_arm="b"),
    )
    assert schema.all_arms == ("b", "a", "c")
    assert_allclose(schema.arm_onehot("b"), [0.0, 0.0])
    assert_allclose(schema.arm_onehot("a"), [1.0, 0.0])
    assert_allclose(schema.arm_onehot("c"), [0.0, 1.0])
    with pytest.raises(ValueError, match="unknown arm label 'd'"):
        schema.require_arm("d")
