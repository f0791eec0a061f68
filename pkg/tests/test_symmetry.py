import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from pglab import network as nw
from pglab import symmetry as sym
from pglab.network import NetworkSpec


def max_forward_gap(spec_a, wa, spec_b, wb, X):
    return np.max(np.abs(nw.forward(spec_a, wa, X) - nw.forward(spec_b, wb, X)))


def test_identity_and_inverse_permutation(rng):
    spec = NetworkSpec(3, (5, 4), 2, "relu", (True, True, False))
    w = rng.standard_normal(spec.n_params)
    assert np.array_equal(sym.permute_neurons(spec, w, 0, np.arange(5)), w)
    perm = rng.permutation(5)
    back = sym.permute_neurons(spec, sym.permute_neurons(spec, w, 0, perm), 0, np.argsort(perm))
    assert np.array_equal(back, w)
    with pytest.raises(ValueError):
        sym.permute_neurons(spec, w, 0, [0, 0, 1, 2, 3])


def test_swap_units_of_121(rng):
    spec = NetworkSpec(1, (2,), 1)
    w = rng.standard_normal(4)
    X = rng.standard_normal((100, 1))
    v = sym.permute_neurons(spec, w, 0, [1, 0])
    assert np.array_equal(v, w[[1, 0, 3, 2]])
    assert max_forward_gap(spec, w, spec, v, X) < 1e-12


def test_rescale_unit_examples(rng):
    lin = NetworkSpec(1, (1,), 1, "identity")
    assert np.array_equal(sym.rescale_unit(lin, [2.0, 3.0], 0, 0, 1.0), [2.0, 3.0])
    assert np.allclose(sym.rescale_unit(lin, [2.0, 3.0], 0, 0, 3.0), [6.0, 1.0])
    spec = NetworkSpec(3, (6, 4), 1, "relu", (True, True, True))
    w = rng.standard_normal(spec.n_params)
    X = rng.standard_normal((100, 3))
    for l, m in [(0, 2), (1, 3)]:
        assert max_forward_gap(spec, w, spec, sym.rescale_unit(spec, w, l, m, 2.0), X) < 1e-12
    with pytest.raises(ValueError):
        sym.rescale_unit(spec, w, 0, 0, 0.0)


def test_sign_flip():
    lin = NetworkSpec(1, (1,), 1, "identity")
    v = sym.sign_flip_pair(lin, [2.0, 3.0], 0)
    assert np.array_equal(v, [-2.0, -3.0])
    assert nw.forward(lin, v, [1.5]) == pytest.approx([9.0])
    assert np.array_equal(sym.sign_flip_pair(lin, v, 0), [2.0, 3.0])
    with pytest.raises(sym.UnsupportedSymmetryError):
        sym.sign_flip_pair(NetworkSpec(1, (2,), 1, "relu"), np.ones(4), 0)


def _norms(spec, w, l):
    layers = nw.unflatten(spec, w)
    return np.linalg.norm(layers[l][0]), np.linalg.norm(layers[l + 1][0])


def test_balance_pair_geometric_mean():
    spec = NetworkSpec(1, (4,), 1, "identity")
    w = np.array([1.0, 1.0, 1.0, 1.0, 4.0, 4.0, 4.0, 4.0])  # norms 2 and 8
    v = sym.balance_pair(spec, w, 0, 1.0, 1.0)
    assert np.allclose(_norms(spec, v, 0), [4.0, 4.0])


def test_balance_pair_unequal_weights_against_scalar_minimiser():
    spec = NetworkSpec(1, (4,), 1, "relu")
    w = np.full(8, 1.0)  # both norms 2
    v = sym.balance_pair(spec, w, 0, 1.0, 4.0)
    n1, n2 = _norms(spec, v, 0)
    res = minimize_scalar(lambda a: 1.0 * a * a * 4 + 4.0 * 4 / (a * a), bounds=(0.1, 10), method="bounded",
                          options={"xatol": 1e-10})
    assert n1 == pytest.approx(2 * res.x, rel=1e-6) and n2 == pytest.approx(2 / res.x, rel=1e-6)
    assert n1 == pytest.approx(2 * np.sqrt(2), rel=1e-12) and n2 == pytest.approx(np.sqrt(2), rel=1e-12)
    assert abs(n1 / n2 - 2.0) < 1e-10


def test_balance_pair_fixed_point_and_function(rng):
    spec = NetworkSpec(3, (5, 5), 1, "relu", (True, False, False))
    X = rng.standard_normal((100, 3))
    for _ in range(10):
        w = rng.standard_normal(spec.n_params)
        once = sym.balance_pair(spec, w, 0, 0.7, 2.0)
        twice = sym.balance_pair(spec, once, 0, 0.7, 2.0)
        assert np.max(np.abs(twice - once)) < 1e-12
        assert max_forward_gap(spec, w, spec, once, X) < 1e-10
        n1, n2 = _norms(spec, once, 0)
        assert abs(n1 / n2 - np.sqrt(2.0 / 0.7)) < 1e-10


def test_balance_pair_zero_norm_warns():
    spec = NetworkSpec(1, (2,), 1)
    w = np.array([0.0, 0.0, 1.0, 2.0])
    with pytest.warns(sym.ZeroNormWarning):
        v = sym.balance_pair(spec, w, 0, 1.0, 1.0)
    assert np.array_equal(v, w)


def test_penalty():
    lin = NetworkSpec(1, (1,), 1, "identity")
    assert sym.penalty(lin, [0.0, 0.0], 0.5) == 0.0
    assert sym.penalty(lin, [2.0, 3.0], 0.5) == pytest.approx(6.5)
    spec = NetworkSpec(2, (3,), 1, "relu", (True, False))
    w = np.arange(spec.n_params, dtype=float)
    p = sym.penalty(spec, w, [0.3, 0.9])
    assert p == pytest.approx(sym.penalty(spec, sym.permute_neurons(spec, w, 0, [2, 0, 1]), [0.3, 0.9]))
    # biases only count when asked for
    assert sym.penalty(spec, w, [0.3, 0.9], bias_lam=1.0) == pytest.approx(p + 6**2 + 7**2 + 8**2)


def test_assignment_validation():
    a = sym.Assignment.from_sizes([3, 1, 2])
    assert a.m == 6 and a.sizes == [3, 1, 2]
    with pytest.raises(ValueError):
        sym.Assignment(3, (0, 0, 1))
    with pytest.raises(ValueError):
        sym.SimplexCoords([np.array([0.5, 0.6])])


def test_split_neuron_equal_halves(rng):
    spec = NetworkSpec(1, (1,), 1, "relu")
    w = np.array([0.6, 0.8])  # |omega*|^2 = 1
    new_spec, v = sym.split_neuron(spec, w, 0, [0.5, 0.5])
    assert new_spec.widths == (2,)
    assert np.allclose(sym.unit_norms(new_spec, v), [0.5, 0.5])
    X = rng.standard_normal((100, 1))
    assert max_forward_gap(spec, w, new_spec, v, X) < 1e-12
    assert abs(sym.penalty(new_spec, v, 1.0) - sym.penalty(spec, w, 1.0)) < 1e-12
    same_spec, same = sym.split_neuron(spec, w, 0, [1.0])
    assert same_spec == spec and np.array_equal(same, w)
    with pytest.raises(ValueError):
        sym.split_neuron(spec, w, 0, [0.5, 0.6])


def test_split_preserves_function_and_penalty(rng):
    X = rng.standard_normal((100, 3))
    for _ in range(50):
        spec = NetworkSpec(3, (int(rng.integers(1, 5)),), 2, "relu", (bool(rng.integers(2)), True))
        w = rng.standard_normal(spec.n_params)
        sizes = rng.integers(1, 4, size=spec.widths[0])
        a = sym.Assignment.from_sizes(sizes)
        coords = sym.SimplexCoords([rng.dirichlet(np.ones(k)) for k in sizes])
        new_spec, v = sym.split_network(spec, w, a, coords)
        assert max_forward_gap(spec, w, new_spec, v, X) <= 1e-10
        lam = [0.4, 1.3]
        bl = 0.7 if spec.layer_bias[0] else None
        assert abs(sym.penalty(new_spec, v, lam, bl) - sym.penalty(spec, w, lam, bl)) <= 1e-10


def test_sample_manifold_beta_half_moments(rng):
    spec = NetworkSpec(2, (1,), 1)
    w = rng.standard_normal(spec.n_params)
    a = sym.Assignment.from_sizes([2])
    n = 100_000
    new_spec, v, coords = sym.sample_manifold(spec, w, a, rng, n=n)
    r = coords.rho[0][:, 0]
    se_mean = r.std(ddof=1) / np.sqrt(n)
    assert abs(r.mean() - 0.5) < 3 * se_mean
    dev = (r - r.mean()) ** 2
    se_var = dev.std(ddof=1) / np.sqrt(n)
    assert abs(dev.mean() - 0.125) < 3 * se_var
    assert v.shape == (n, new_spec.n_params)


def test_sample_manifold_points_preserve_function(rng):
    spec = NetworkSpec(2, (2,), 1, "relu", (True, False))
    w = rng.standard_normal(spec.n_params)
    a = sym.Assignment.from_sizes([3, 5])
    new_spec, v, _ = sym.sample_manifold(spec, w, a, rng, n=20)
    X = rng.standard_normal((100, 2))
    ref = nw.forward(spec, w, X)
    assert np.max(np.abs(nw.forward(new_spec, v, X) - ref)) <= 1e-10
    assert np.max(np.abs(sym.penalty(new_spec, v, 1.0, 1.0) - sym.penalty(spec, w, 1.0, 1.0))) <= 1e-10


def test_extract_rho_recovers_planted_coefficients(rng):
    spec = NetworkSpec(2, (2,), 1)
    w = rng.standard_normal(spec.n_params)
    a = sym.Assignment.from_sizes([4, 4])
    new_spec, v, coords = sym.sample_manifold(spec, w, a, rng, n=50)
    got = sym.extract_rho(new_spec, v, a)
    for r, g in zip(coords.rho, got.rho):
        assert np.max(np.abs(r - g)) < 1e-12
