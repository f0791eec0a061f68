import numpy as np
import pytest

from pglab import model as mdl
from pglab import network as nw
from pglab.model import LikelihoodSpec, PosteriorModel, PriorSpec
from pglab.network import NetworkSpec

from conftest import central_diff


def test_prior_values():
    spec = NetworkSpec(1, (1,), 1, "identity")
    prior = PriorSpec.isotropic(spec, 1.0)
    assert np.all(mdl.grad_log_prior(spec, prior, np.zeros(2)) == 0)
    # a single weight w = 2 with tau = 1 contributes -2
    assert mdl.log_prior(spec, prior, [2.0, 0.0]) == pytest.approx(-2.0)
    assert mdl.grad_log_prior(spec, prior, [2.0, 0.0])[0] == pytest.approx(-2.0)


def test_prior_gradient_fd(rng):
    spec = NetworkSpec(2, (3, 2), 1, "relu", (True, True, False))
    prior = PriorSpec((0.5, 1.5, 2.0), "gaussian", 0.7)
    w = rng.standard_normal(spec.n_params)
    fd = central_diff(lambda v: mdl.log_prior(spec, prior, v), w, h=1e-5)
    g = mdl.grad_log_prior(spec, prior, w)
    assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-8


def test_flat_bias_prior_contributes_nothing(rng):
    spec = NetworkSpec(2, (3,), 1, "relu", (True, True))
    prior = PriorSpec.isotropic(spec, 1.0, bias="flat")
    w = np.zeros(spec.n_params)
    for ls in spec.layout:
        w[ls.bias] = rng.standard_normal(ls.rows) * 10
    assert mdl.log_prior(spec, prior, w) == 0.0
    assert np.all(mdl.grad_log_prior(spec, prior, w) == 0.0)


def test_empty_data_posterior_is_prior(rng):
    spec = NetworkSpec(2, (3,), 1)
    prior = PriorSpec.isotropic(spec, 0.8)
    m = PosteriorModel(spec, prior, LikelihoodSpec("gaussian", 0.1))
    w = rng.standard_normal(spec.n_params)
    assert m.log_prob(w) == pytest.approx(mdl.log_prior(spec, prior, w))


def test_perfect_fit_likelihood_constant():
    spec = NetworkSpec(1, (1,), 1, "identity")
    X = np.linspace(-1, 1, 7)[:, None]
    w = np.array([2.0, 3.0])
    y = 6.0 * X
    s2 = 0.3
    m = PosteriorModel(spec, PriorSpec.isotropic(spec), LikelihoodSpec("gaussian", s2), X, y)
    assert m.log_likelihood(w) == pytest.approx(-7 / 2 * np.log(2 * np.pi * s2))


@pytest.mark.parametrize("family", ["gaussian", "bernoulli_logit", "categorical_logit"])
def test_posterior_gradient_fd(rng, family):
    worst = 0.0
    for _ in range(20):
        o = 3 if family == "categorical_logit" else 1
        spec = NetworkSpec(2, (4, 3), o, "relu", (True, True, True))
        X = rng.standard_normal((6, 2))
        if family == "gaussian":
            y = rng.standard_normal((6, 1))
        elif family == "bernoulli_logit":
            y = rng.integers(0, 2, size=6).astype(float)
        else:
            y = rng.integers(0, 3, size=6)
        m = PosteriorModel(spec, PriorSpec.isotropic(spec, 1.3), LikelihoodSpec(family, 0.5), X, y)
        w = rng.standard_normal(spec.n_params)
        lp, g = m.logp_and_grad(w)
        fd = central_diff(m.log_prob, w)
        worst = max(worst, np.max(np.abs(g - fd)) / np.max(np.abs(fd)))
    assert worst < 1e-5


def test_non_finite_names_term():
    spec = NetworkSpec(1, (1,), 1, "identity")
    m = PosteriorModel(spec, PriorSpec.isotropic(spec), LikelihoodSpec("gaussian", 1.0), [[1e200]], [[0.0]])
    with pytest.raises(mdl.NonFiniteError) as err:
        m.logp_and_grad(np.array([1e200, 1e200]), check=True)
    assert err.value.term == "likelihood"


def test_sign_flip_and_permutation_invariance(rng):
    M = 4
    spec = NetworkSpec(1, (M,), 1, "identity")
    X = np.linspace(-1, 1, 9)[:, None]
    y = X + 0.1 * rng.standard_normal(X.shape)
    m = PosteriorModel(spec, PriorSpec.isotropic(spec), LikelihoodSpec("gaussian", 0.05), X, y)
    w = rng.standard_normal(spec.n_params)
    flipped = w.copy()
    flipped[[1, M + 1]] *= -1
    perm = rng.permutation(M)
    permuted = np.concatenate([w[:M][perm], w[M:][perm]])
    assert abs(m.log_prob(flipped) - m.log_prob(w)) <= 1e-10
    assert abs(m.log_prob(permuted) - m.log_prob(w)) <= 1e-10


def test_rescaling_changes_prior_by_norm_formula(rng):
    spec = NetworkSpec(2, (3,), 1)
    tau = 0.7
    X = rng.standard_normal((5, 2))
    m = PosteriorModel(spec, PriorSpec.isotropic(spec, tau), LikelihoodSpec("gaussian", 1.0), X, rng.standard_normal(5))
    w = rng.standard_normal(spec.n_params)
    c, unit = 1.8, 1
    (W1, _), (W2, _) = nw.unflatten(spec, w.copy())
    a_in = np.sum(W1[unit] ** 2)
    v_out = np.sum(W2[:, unit] ** 2)
    W1 = W1.copy(); W2 = W2.copy()
    W1[unit] *= c
    W2[:, unit] /= c
    v = nw.flatten(spec, [(W1, None), (W2, None)])
    expected = 0.5 * ((1 - c**2) * a_in + (1 - c**-2) * v_out) / tau**2
    assert m.log_prior(v) - m.log_prior(w) == pytest.approx(expected, abs=1e-12)
    assert m.log_likelihood(v) == pytest.approx(m.log_likelihood(w), abs=1e-10)


# --- conjugate 1-2-1 ---

def test_conjugate_no_data_is_prior():
    mu, cov = mdl.conjugate_121_conditional(0.3, -1.2, [], [], 0.1)
    assert np.allclose(mu, 0) and np.allclose(cov, np.eye(2))
    assert mdl.conjugate_121_marginal(0.3, -1.2, [], [], 0.1) == 0.0


def test_conjugate_dead_units():
    x = -np.linspace(0.1, 1, 5)
    y = np.sin(x)
    mu, cov = mdl.conjugate_121_conditional(0.5, 2.0, x, y, 0.2)
    assert np.allclose(mu, 0) and np.allclose(cov, np.eye(2))
    s2 = 0.2
    expected = np.sum(-0.5 * np.log(2 * np.pi * s2) - 0.5 * y**2 / s2)
    assert mdl.conjugate_121_marginal(0.5, 2.0, x, y, s2) == pytest.approx(expected, abs=1e-12)


def test_conjugate_marginal_times_conditional_is_joint(rng):
    x = rng.uniform(-1, 1, 12)
    y = 0.8 * x + 0.1 * rng.standard_normal(12)
    s2 = 0.05
    for _ in range(5):
        b, d = rng.standard_normal(2)
        theta = rng.standard_normal(2)
        Phi = mdl.conjugate_121_design(b, d, x)
        r = y - Phi @ theta
        joint = (-0.5 * r @ r / s2 - 0.5 * len(x) * np.log(2 * np.pi * s2)
                 - 0.5 * theta @ theta - np.log(2 * np.pi))
        mu, cov = mdl.conjugate_121_conditional(b, d, x, y, s2)
        diff = theta - mu
        cond = -0.5 * diff @ np.linalg.solve(cov, diff) - 0.5 * np.linalg.slogdet(cov)[1] - np.log(2 * np.pi)
        assert abs(mdl.conjugate_121_marginal(b, d, x, y, s2) + cond - joint) < 1e-8


def test_conjugate_conditional_mean_importance_sampling(rng):
    x = rng.uniform(-1, 1, 8)
    y = 0.5 * x + 0.3 * rng.standard_normal(8)
    s2 = 0.5
    b, d = 0.9, -1.3
    Phi = mdl.conjugate_121_design(b, d, x)
    N = 400_000
    theta = rng.standard_normal((N, 2))
    r = y - theta @ Phi.T
    logw = -0.5 * np.sum(r * r, 1) / s2
    wt = np.exp(logw - logw.max())
    wt /= wt.sum()
    est = wt @ theta
    # self-normalised IS standard error via the delta method
    se = np.sqrt(np.sum(wt[:, None] ** 2 * (theta - est) ** 2, axis=0))
    mu, _ = mdl.conjugate_121_conditional(b, d, x, y, s2)
    assert np.all(np.abs(est - mu) < 3 * se)


def test_conjugate_marginal_gradient_fd(rng):
    x = rng.uniform(-1, 1, 10)
    y = x + 0.1 * rng.standard_normal(10)
    t = mdl.Conjugate121Marginal(x, y, 0.05)
    for _ in range(5):
        w = rng.standard_normal(2)
        _, g = t.logp_and_grad(w)
        fd = central_diff(t.log_prob, w, h=1e-7)
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-6)


def test_conjugate_marginal_matches_network_integral(rng):
    # the 1-2-1 network with the full posterior agrees with marginal + conditional
    x = rng.uniform(-1, 1, 6)
    y = x + 0.2 * rng.standard_normal(6)
    spec = mdl.conjugate_121_spec()
    m = PosteriorModel(spec, PriorSpec.isotropic(spec), LikelihoodSpec("gaussian", 0.1), x[:, None], y)
    b, d, a, c = rng.standard_normal(4)
    full = m.log_prob([b, d, a, c])
    mu, cov = mdl.conjugate_121_conditional(b, d, x, y, 0.1)
    diff = np.array([a, c]) - mu
    cond = -0.5 * diff @ np.linalg.solve(cov, diff) - 0.5 * np.linalg.slogdet(cov)[1]
    marg = mdl.Conjugate121Marginal(x, y, 0.1).log_prob([b, d])
    # equal up to the dropped constant log(2 pi)
    assert full - (marg + cond) == pytest.approx(0.0, abs=1e-9)
