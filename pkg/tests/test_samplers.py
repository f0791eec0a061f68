import numpy as np
import pytest

from pglab import model as mdl
from pglab import samplers as smp
from pglab.model import GaussianTarget, LikelihoodSpec, PosteriorModel, PriorSpec
from pglab.network import NetworkSpec
from pglab.rng import chain_generators


def batch_stats(samples):
    """Pooled mean of a (K, S, ...) array and its between-chain standard error."""
    chain_means = samples.mean(axis=1)
    K = samples.shape[0]
    return chain_means.mean(0), chain_means.std(0, ddof=1) / np.sqrt(K)


def run_kernel(kernel, target, w0, n, step, rngs, L=10):
    state = smp.init_state(target, w0)
    out = np.empty((n,) + state.w.shape)
    acc = 0
    for i in range(n):
        if kernel == "mala":
            state, info = smp.mala_step(state, target, step, rngs)
        else:
            state, info = smp.hmc_step(state, target, step, L, rngs)
        out[i] = state.w
        acc += info.accepted.mean()
    return out, acc / n


def test_mala_standard_normal_2d():
    t = GaussianTarget(np.zeros(2))
    # the +-0.02 band is about 1.5 standard errors at this step size
    rngs = chain_generators(0, 1)
    draws, _ = run_kernel("mala", t, np.zeros((1, 2)), 100_000, 0.5, rngs)
    x = draws[:, 0]
    assert np.all(np.abs(x.mean(0)) < 0.02)
    assert np.all(np.abs(x.var(0) - 1) < 0.05)


def test_mala_small_step_accepts_everything():
    t = GaussianTarget(np.zeros(3))
    _, acc = run_kernel("mala", t, np.ones((1, 3)), 200, 1e-4, chain_generators(2, 1))
    assert acc == 1.0


def test_mala_is_deterministic():
    t = GaussianTarget(np.zeros(3), np.diag([1.0, 2.0, 0.5]))
    a, _ = run_kernel("mala", t, np.ones((2, 3)), 500, 0.7, chain_generators(5, 2))
    b, _ = run_kernel("mala", t, np.ones((2, 3)), 500, 0.7, chain_generators(5, 2))
    assert np.array_equal(a, b)


def test_leapfrog_reversibility():
    cov = np.array([[2.0, 0.6], [0.6, 0.5]])
    t = GaussianTarget(np.array([0.3, -1.0]), cov)
    w0 = np.array([[1.0, 2.0]])
    p0 = np.array([[0.4, -0.9]])
    _, g0 = t.logp_and_grad(w0)
    w1, p1, _, g1 = smp.leapfrog(t, w0, p0, g0, 0.1, 25)
    w2, p2, _, _ = smp.leapfrog(t, w1, -p1, g1, 0.1, 25)
    assert np.max(np.abs(w2 - w0)) < 1e-8
    assert np.max(np.abs(-p2 - p0)) < 1e-8


def test_hmc_standard_normal_10d():
    t = GaussianTarget(np.zeros(10))
    K = 10
    draws, _ = run_kernel("hmc", t, np.zeros((K, 10)), 10_000, 0.2, chain_generators(3, K), L=8)
    x = draws.reshape(-1, 10)
    assert np.all(np.abs(x.mean(0)) < 0.03)
    v = x.var(0)
    assert np.all((v > 0.9) & (v < 1.1))


def test_leapfrog_energy_error_is_second_order():
    t = GaussianTarget(np.zeros(5), np.diag([1.0, 0.5, 2.0, 0.8, 1.5]))
    rng = np.random.default_rng(0)
    w0 = rng.standard_normal((400, 5))
    p0 = rng.standard_normal((400, 5))
    lp0, g0 = t.logp_and_grad(w0)

    def median_dh(eps, L):
        w, p, lp, _ = smp.leapfrog(t, w0, p0, g0, eps, L)
        dh = (-lp + 0.5 * np.sum(p * p, 1)) - (-lp0 + 0.5 * np.sum(p0 * p0, 1))
        return np.median(np.abs(dh))

    ratio = median_dh(0.2, 10) / median_dh(0.1, 20)
    assert 3.0 < ratio < 5.0


def test_hmc_flags_divergence():
    t = GaussianTarget(np.zeros(2), np.diag([1.0, 1e-6]))
    state = smp.init_state(t, np.ones((1, 2)) * 1e-3)
    _, info = smp.hmc_step(state, t, 1.0, 10, chain_generators(0, 1))
    assert info.divergent[0] and not info.accepted[0]


def test_map_fit_gaussian_bowl():
    spec = NetworkSpec(2, (3,), 1)
    m = PosteriorModel(spec, PriorSpec.isotropic(spec, 1.0), LikelihoodSpec())
    w0 = np.full(spec.n_params, 0.5 / np.sqrt(spec.n_params))
    lr = 0.5
    w, trace = smp.map_fit(m, w0, int(10 / lr), lr, return_trace=True)
    assert np.linalg.norm(w) < 1e-6
    assert np.all(np.diff(trace) >= 0)


def test_map_fit_zero_lr_returns_start():
    t = GaussianTarget(np.ones(3))
    w0 = np.array([0.1, 0.2, 0.3])
    assert np.array_equal(smp.map_fit(t, w0, 50, 0.0), w0)


def test_map_fit_conjugate_conditional():
    rng = np.random.default_rng(4)
    x = rng.uniform(-1, 1, 15)
    y = 0.7 * x + 0.1 * rng.standard_normal(15)
    b, d = 1.1, -0.6
    t = mdl.Conjugate121Conditional(b, d, x, y, 0.1)
    w = smp.map_fit(t, np.zeros(2), 5000, 0.01)
    mu, _ = mdl.conjugate_121_conditional(b, d, x, y, 0.1)
    assert np.max(np.abs(w - mu)) < 1e-4


def test_run_chains_identical_seeds_give_identical_chains():
    spec = NetworkSpec(1, (3,), 1)
    X = np.linspace(-1, 1, 10)[:, None]
    m = PosteriorModel(spec, PriorSpec.isotropic(spec), LikelihoodSpec("gaussian", 0.1), X, np.sin(3 * X))
    cfg = smp.ChainConfig(n_chains=2, warmup_steps=50, n_samples=40, step_size=0.05, leapfrog_steps=5,
                          init="map_warmstart", map_steps=50, map_learning_rate=0.01, seed=3)
    store = smp.run_chains(m, cfg, chain_seeds=[11, 11])
    assert np.array_equal(store.samples[0], store.samples[1])
    again = smp.run_chains(m, cfg)
    assert np.array_equal(again.samples, smp.run_chains(m, cfg).samples)
    assert not np.array_equal(again.samples[0], again.samples[1])


def test_run_chains_grouping_does_not_change_results():
    t = GaussianTarget(np.zeros(3), np.diag([1.0, 4.0, 0.25]))
    cfg = smp.ChainConfig(n_chains=4, warmup_steps=30, n_samples=30, kernel="mala", init="prior_draw", seed=9)
    a = smp.run_chains(t, cfg, threads=1)
    b = smp.run_chains(t, cfg, threads=3)
    assert np.array_equal(a.samples, b.samples)
    assert a.chain_meta == b.chain_meta


def test_pure_prior_variance():
    spec = NetworkSpec(3, (4,), 1)
    tau = 0.7
    m = PosteriorModel(spec, PriorSpec.isotropic(spec, tau), LikelihoodSpec())
    cfg = smp.ChainConfig(n_chains=4, warmup_steps=200, n_samples=5000, step_size=0.3, leapfrog_steps=7,
                          init="prior_draw", seed=2)
    store = smp.run_chains(m, cfg)
    var = store.pooled().var(0)
    assert np.all(np.abs(var / tau**2 - 1) < 0.05)
    assert all(0.5 < c["acceptance_rate"] <= 1 for c in store.chain_meta)


def test_chain_ordering_does_not_change_pooled_stats():
    t = GaussianTarget(np.zeros(2))
    cfg = smp.ChainConfig(n_chains=3, warmup_steps=10, n_samples=50, kernel="mala", init="prior_draw", seed=1)
    s = smp.run_chains(t, cfg).samples
    assert np.allclose(s.reshape(-1, 2).mean(0), s[::-1].reshape(-1, 2).mean(0), rtol=0, atol=1e-15)


@pytest.fixture(scope="module")
def conj_data():
    rng = np.random.default_rng(7)
    x = np.linspace(0.1, 1.0, 20)
    y = x + 0.1 * rng.standard_normal(20)
    return x, y, 0.01


@pytest.fixture(scope="module")
def conj_quadrature(conj_data):
    x, y, s2 = conj_data
    t = mdl.Conjugate121Marginal(x, y, s2)
    g = np.linspace(-6, 6, 400)
    B, D = np.meshgrid(g, g, indexing="ij")
    lp = t.log_prob(np.stack([B, D], -1))
    wt = np.exp(lp - lp.max())
    wt /= wt.sum()
    mean = np.array([(wt * B).sum(), (wt * D).sum()])
    second = np.array([(wt * B * B).sum(), (wt * D * D).sum()])
    return mean, second


@pytest.mark.parametrize("kernel,step,L", [("hmc", 0.3, 8), ("mala", 0.6, 1)])
def test_conjugate_marginal_moments_match_quadrature(conj_data, conj_quadrature, kernel, step, L):
    x, y, s2 = conj_data
    t = mdl.Conjugate121Marginal(x, y, s2)
    cfg = smp.ChainConfig(n_chains=10, warmup_steps=300, n_samples=4000, step_size=step, leapfrog_steps=L,
                          kernel=kernel, init="prior_draw", seed=5)
    s = smp.run_chains(t, cfg).samples
    mean, se = batch_stats(s)
    m2, se2 = batch_stats(s**2)
    qmean, qsecond = conj_quadrature
    assert np.all(np.abs(mean - qmean) < 3 * se), (mean, qmean, se)
    assert np.all(np.abs(m2 - qsecond) < 3 * se2), (m2, qsecond, se2)


def test_trap_probability():
    rng = np.random.default_rng(0)
    for M, expected in [(1, 0.5), (3, 0.125)]:
        p, se = smp.trap_probability(lambda r, n: r.standard_normal((n, M)), 1.0, 100_000, rng)
        assert abs(p - expected) < 3 * se
    p, se = smp.trap_probability(lambda r, n: np.full((n, 2), 0.5), 2.0, 1000, rng)
    assert p == 0.0
    with pytest.raises(ValueError):
        smp.trap_probability(lambda r, n: np.zeros((n, 1)), 1.0, 0, rng)
