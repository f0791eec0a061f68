import json

import numpy as np
import pytest

from pglab import diagnostics as dg
from pglab import symmetry as sym
from pglab.network import NetworkSpec


def prior_store(rng, spec, tau, K=10, S=2000):
    return tau * rng.standard_normal((K, S, spec.n_params))


def test_leaf_pass_rule():
    assert dg.leaf(1.0, se=0.1, target=1.25)["pass"]
    assert not dg.leaf(1.0, se=0.1, target=1.31)["pass"]
    assert dg.leaf(1.0, tol=0.5, target=1.4)["pass"]
    assert dg.leaf(2.0)["pass"] is None
    assert dg.all_pass({"a": [dg.leaf(1.0), dg.leaf(0.0, se=1.0, target=0.0)]})
    assert not dg.all_pass({"a": dg.leaf(5.0, se=1.0, target=0.0)})


def test_pure_prior_balance(rng):
    spec = NetworkSpec(3, (6, 4), 1)
    rep = dg.balancedness_report(spec, prior_store(rng, spec, 0.8), 0.8, pure_prior=True)
    assert dg.all_pass(rep)
    assert len(rep["layers"]) == 3 and len(rep["residuals"]) == 2


def test_one_hidden_layer_has_one_residual(rng):
    spec = NetworkSpec(1, (1,), 1)
    rep = dg.balancedness_report(spec, prior_store(rng, spec, 1.0, S=50), 1.0)
    assert len(rep["residuals"]) == 1


def test_planted_store_residuals_exact():
    spec = NetworkSpec(2, (3,), 1)
    c = np.array([0.5, 2.0])
    w = np.concatenate([np.full(6, c[0]), np.full(3, c[1])])
    samples = np.tile(w, (4, 10, 1))
    tau = np.array([1.0, 0.5])
    rep = dg.balancedness_report(spec, samples, tau)
    B = np.array([6 * c[0] ** 2 / 1.0 - 6, 3 * c[1] ** 2 / 0.25 - 3])
    assert abs(rep["layers"][0]["value"] - B[0]) < 1e-10
    assert abs(rep["residuals"][0]["value"] - (B[0] - B[1])) < 1e-10
    units = dg.neuronwise_balance(spec, samples, tau)[0]
    per_unit = 2 * c[0] ** 2 - c[1] ** 2 / 0.25 - (2 - 1)
    assert all(abs(u["value"] - per_unit) < 1e-10 for u in units["units"])


def test_unit_identities_sum_to_layer_identity(rng):
    spec = NetworkSpec(3, (5, 4), 2)
    s = rng.standard_normal((3, 20, spec.n_params)) * 1.3
    tau = [1.0, 0.7, 2.0]
    rep = dg.balancedness_report(spec, s, tau)
    for l, units in enumerate(dg.neuronwise_balance(spec, s, tau)):
        assert abs(units["raw"].sum(-1).mean() - rep["residuals"][l]["value"]) < 1e-10


def test_pure_prior_unit_balance(rng):
    spec = NetworkSpec(2, (4,), 3)
    units = dg.neuronwise_balance(spec, prior_store(rng, spec, 1.0), 1.0)
    assert dg.all_pass(units[0]["units"])


def test_dirichlet_uniform_reference(rng):
    rho = rng.dirichlet([1.0, 1.0], 20_000)
    res = dg.dirichlet_gof(rho, 1.0)
    assert all(c["p_value"]["pass"] for c in res["ks"])
    with pytest.raises(ValueError):
        dg.dirichlet_gof(rho[:, :1], 1.0)
    with pytest.raises(ValueError):
        dg.dirichlet_gof(rho * 1.1, 1.0)


def test_dirichlet_self_consistency(rng):
    passes = pairs = 0
    for _ in range(20):
        rho = rng.dirichlet([0.5] * 3, 100_000)
        res = dg.dirichlet_gof(rho, 0.5)
        passes += all(c["p_value"]["pass"] for c in res["ks"])
        pairs += res["pair_covariance"]["pass"] and res["pair_correlation"]["pass"]
    # three coordinates at 1% each: expect about 97% of runs to pass
    assert passes >= 19 and pairs >= 19


def test_dirichlet_discrimination(rng):
    a = sym.Assignment.from_sizes([3])
    rho = sym.sample_reallocation(a, rng, 100_000).rho[0]
    good = dg.dirichlet_gof(rho, 0.5)
    assert all(c["p_value"]["pass"] for c in good["ks"])
    bad = dg.dirichlet_gof(rho, 5.0)
    assert min(c["D"]["value"] for c in bad["ks"]) > 0.1
    # power against the tube law at p = 2
    tube = dg.dirichlet_gof(rho, 1.5)
    assert not any(c["p_value"]["pass"] for c in tube["ks"])
    cmp = dg.compare_alphas(rho, [0.5, 1.5])
    assert cmp["better_fit"] == "0.5"
    assert all(l["pass"] is None for l in dg.iter_leaves(cmp))


def test_constrained_moments_planted(rng):
    M = 3
    K, S = 8, 4000
    w1 = rng.standard_normal((K, S, M))
    w2 = 0.4 * w1 + np.sqrt(1 - 0.16) * rng.standard_normal((K, S, M))
    res = dg.constrained_moments(np.concatenate([w1, w2], -1), M, beta=1.2)
    assert all(l["pass"] for l in res["cov"])
    assert all(l["pass"] for l in res["mean_in"] + res["mean_out"])
    with pytest.raises(ValueError):
        dg.constrained_moments(np.zeros((2, 5, 7)), 3, 1.0)


def test_block_moment_scaling_small(rng):
    with pytest.raises(ValueError):
        dg.block_moment_scaling([4, 16], 100, rng)
    res = dg.block_moment_scaling([4, 16, 64], 20_000, rng)
    assert -0.6 <= res["mean_slope"]["value"] <= -0.4
    assert all(r["between_cov"]["pass"] for r in res["grid"])


def test_loglog_slope_exact():
    Ms = [2, 4, 8, 16]
    slope, se = dg.loglog_slope(Ms, [3.0 * m**-1.5 for m in Ms], [1e-3] * 4)
    assert slope == pytest.approx(-1.5, abs=1e-12)


def test_prior_conformity(rng):
    tau = 0.6
    x = tau * rng.standard_normal((10, 5000, 3))
    res = dg.prior_conformity_test(x, tau)
    assert dg.all_pass(res)
    res2 = dg.prior_conformity_test(x, 2 * tau, band=(0.8, 1.2))
    assert all(abs(d["ratio"]["value"] - 0.25) < 0.01 for d in res2["dims"])
    assert not any(d["in_band"]["pass"] for d in res2["dims"])
    with pytest.raises(ValueError):
        dg.prior_conformity_test(np.zeros((10, 0)), 1.0)


def test_sample_covariance_basics(rng):
    same = np.ones((3, 10, 4))
    res = dg.sample_covariance(same)
    assert np.all(res["cov"] == 0) and list(res["zero_var"]) == [0, 1, 2, 3]
    assert np.all(res["corr"] == 0)
    # prior-only draws: each entry within 3 SE of 0.25 I in the large majority of runs
    hits = [l["pass"] for _ in range(20)
            for l in dg.iter_leaves(dg.covariance_section(0.5 * rng.standard_normal((10, 3000, 3)),
                                                          planted=0.25 * np.eye(3)))]
    assert np.mean(hits) >= 0.95
    with pytest.raises(ValueError):
        dg.sample_covariance(np.zeros((1, 1, 2)))


def test_planted_covariance_recovery_rate(rng):
    Sigma = np.array([[1.0, 0.6, -0.3], [0.6, 2.0, 0.0], [-0.3, 0.0, 0.5]])
    L = np.linalg.cholesky(Sigma)
    hits = 0
    for _ in range(100):
        x = rng.standard_normal((10, 400, 3)) @ L.T
        hits += dg.all_pass(dg.covariance_section(x, planted=Sigma))
    # six distinct entries tested at 3 SE with K = 10 batches (t tails): allow some misses
    assert hits >= 85


def test_planted_mean_recovery_rate(rng):
    hits = 0
    for _ in range(100):
        x = 0.3 + rng.standard_normal((10, 200, 1))
        m, se = dg.batch_mean(x)
        hits += abs(m[0] - 0.3) <= 3 * se[0]
    assert hits >= 95


def test_marginal_grids(rng):
    x = rng.uniform(-1, 1, (4, 25_000, 2))
    g = dg.marginal_grids(x, singles=[0], pairs=[(0, 1)], bins=10, ranges={0: (-1, 1), 1: (-1, 1)})
    one = g["singles"]["0"]
    assert dg.grid_integral(one) == pytest.approx(1.0, abs=1e-9)
    assert dg.grid_integral(g["pairs"]["0,1"]) == pytest.approx(1.0, abs=1e-9)
    n = x.shape[0] * x.shape[1]
    p = 0.1
    se = np.sqrt(p * (1 - p) / n) / 0.2
    assert np.all(np.abs(one["density"] - 0.5) < 4 * se)
    again = dg.marginal_grids(x[::-1], singles=[0], pairs=[(0, 1)], bins=10, ranges={0: (-1, 1), 1: (-1, 1)})
    assert np.array_equal(again["pairs"]["0,1"]["density"], g["pairs"]["0,1"]["density"])
    with pytest.raises(ValueError):
        dg.marginal_grids(x)


def test_report_layout_and_json(rng):
    spec = NetworkSpec(1, (2,), 1)
    rep = dg.build_report({"seed": 1}, {"balancedness": dg.balancedness_report(spec, prior_store(rng, spec, 1.0), 1.0)})
    assert list(rep) == ["meta", *dg.SECTIONS]
    json.dumps(dg.to_jsonable(rep))
