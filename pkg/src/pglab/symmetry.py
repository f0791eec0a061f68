"""Function-preserving weight transforms, neuron splitting and minimum-norm manifold sampling.

Hidden layers are indexed from 0: hidden layer ``l`` receives affine layer
``l`` and feeds affine layer ``l + 1``. All transforms accept a batch of flat
weight vectors ``(..., d)`` and return new arrays.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .network import NetworkSpec, ShapeError, flatten, unflatten

SIMPLEX_TOL = 1e-9


class UnsupportedSymmetryError(ValueError):
    """The requested symmetry does not hold for this architecture."""


class ZeroNormWarning(RuntimeWarning):
    pass


def _hidden(spec: NetworkSpec, l: int) -> int:
    if not 0 <= l < len(spec.widths):
        raise ShapeError(f"hidden layer {l} out of range for {len(spec.widths)} hidden layers", layer=l)
    return spec.widths[l]


def _copy_layers(spec, w):
    return [(W.copy(), None if b is None else b.copy()) for W, b in unflatten(spec, w)]


def permute_neurons(spec: NetworkSpec, w, l: int, perm) -> np.ndarray:
    """Reorder the units of hidden layer ``l``: new unit ``i`` is old unit ``perm[i]``."""
    M = _hidden(spec, l)
    perm = np.asarray(perm)
    if perm.shape != (M,) or not np.array_equal(np.sort(perm), np.arange(M)):
        raise ValueError(f"not a permutation of {M} units: {perm.tolist()}")
    layers = _copy_layers(spec, w)
    W_in, b_in = layers[l]
    W_out, b_out = layers[l + 1]
    layers[l] = (W_in[..., perm, :], None if b_in is None else b_in[..., perm])
    layers[l + 1] = (W_out[..., :, perm], b_out)
    return flatten(spec, layers)


def rescale_unit(spec: NetworkSpec, w, l: int, m: int, c: float) -> np.ndarray:
    """Scale unit ``m``'s incoming weights (and bias) by ``c`` and outgoing weights by ``1/c``."""
    M = _hidden(spec, l)
    if not c > 0:
        raise ValueError(f"rescaling factor must be positive, got {c}")
    if not 0 <= m < M:
        raise ShapeError(f"unit {m} out of range for width {M}", layer=l)
    layers = _copy_layers(spec, w)
    W_in, b_in = layers[l]
    W_in[..., m, :] *= c
    if b_in is not None:
        b_in[..., m] *= c
    layers[l + 1][0][..., :, m] /= c
    return flatten(spec, layers)


def sign_flip_pair(spec: NetworkSpec, w, m: int) -> np.ndarray:
    """Flip the signs of unit ``m``'s incoming and outgoing weights in a linear one-hidden-layer net."""
    if spec.activation != "identity" or len(spec.widths) != 1:
        raise UnsupportedSymmetryError(
            f"sign flips preserve the function only for identity-activation one-hidden-layer "
            f"networks, not {spec.activation} with {len(spec.widths)} hidden layers")
    M = _hidden(spec, 0)
    if not 0 <= m < M:
        raise ShapeError(f"unit {m} out of range for width {M}", layer=0)
    layers = _copy_layers(spec, w)
    W_in, b_in = layers[0]
    W_in[..., m, :] *= -1
    if b_in is not None:
        b_in[..., m] *= -1
    layers[1][0][..., :, m] *= -1
    return flatten(spec, layers)


def balance_pair(spec: NetworkSpec, w, l: int, lam_l: float, lam_next: float) -> np.ndarray:
    """Rescale affine layers ``l`` and ``l + 1`` by ``a`` and ``1/a`` to minimise the pair penalty.

    The optimum ``a**4 = lam_next |W_{l+1}|^2 / (lam_l |W_l|^2)`` leaves the
    Frobenius ratio ``|W_l| / |W_{l+1}| = sqrt(lam_next / lam_l)``. A bias on
    layer ``l`` is scaled with its weights so the function is unchanged.
    Zero-norm layers are left untouched and a :class:`ZeroNormWarning` is issued.
    """
    if not 0 <= l < spec.n_layers - 1:
        raise ShapeError(f"no affine pair starting at layer {l}", layer=l)
    if lam_l <= 0 or lam_next <= 0:
        raise ValueError("penalty weights must be positive")
    layers = _copy_layers(spec, w)
    W_in, b_in = layers[l]
    W_out = layers[l + 1][0]
    n_in = np.sum(W_in**2, axis=(-2, -1))
    n_out = np.sum(W_out**2, axis=(-2, -1))
    zero = (n_in == 0) | (n_out == 0)
    if np.any(zero):
        warnings.warn(f"zero-norm layer in pair ({l}, {l + 1}); left unbalanced", ZeroNormWarning, stacklevel=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(zero, 1.0, (lam_next * n_out / (lam_l * np.where(zero, 1.0, n_in))) ** 0.25)
    W_in *= a[..., None, None]
    if b_in is not None:
        b_in *= a[..., None]
    W_out /= a[..., None, None]
    return flatten(spec, layers)


def penalty(spec: NetworkSpec, w, lam, bias_lam=None) -> np.ndarray:
    """Weighted squared norm ``sum_l lam_l |W_l|^2``; biases count only when ``bias_lam`` is given."""
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (spec.n_layers,))
    total = 0.0
    for l, (W, b) in enumerate(unflatten(spec, w)):
        total = total + lam[l] * np.sum(W**2, axis=(-2, -1))
        if b is not None and bias_lam is not None:
            total = total + bias_lam * np.sum(b**2, axis=-1)
    return total


# --- overparametrized copies of a reference network ---

@dataclass(frozen=True)
class Assignment:
    """Surjective map ``sigma: [M] -> [M*]`` sending each unit to the reference unit it copies."""

    m_star: int
    sigma: tuple[int, ...]

    def __post_init__(self):
        sigma = tuple(int(s) for s in self.sigma)
        object.__setattr__(self, "sigma", sigma)
        if self.m_star < 1:
            raise ValueError("reference width must be >= 1")
        if any(s < 0 or s >= self.m_star for s in sigma):
            raise ValueError(f"assignment values must lie in [0, {self.m_star})")
        missing = set(range(self.m_star)) - set(sigma)
        if missing:
            raise ValueError(f"assignment is not surjective; reference units {sorted(missing)} unused")

    @classmethod
    def from_sizes(cls, sizes) -> "Assignment":
        """Contiguous groups: the first ``sizes[0]`` units copy reference unit 0, and so on."""
        sizes = [int(k) for k in sizes]
        return cls(len(sizes), tuple(np.repeat(np.arange(len(sizes)), sizes)))

    @property
    def m(self) -> int:
        return len(self.sigma)

    @property
    def groups(self) -> list[np.ndarray]:
        s = np.asarray(self.sigma)
        return [np.flatnonzero(s == g) for g in range(self.m_star)]

    @property
    def sizes(self) -> list[int]:
        return [len(g) for g in self.groups]


@dataclass
class SimplexCoords:
    """Reallocation coefficients, one array ``(..., k_g)`` per group, each row on the simplex."""

    rho: list[np.ndarray]

    def __post_init__(self):
        self.rho = [np.asarray(r, dtype=np.float64) for r in self.rho]
        for g, r in enumerate(self.rho):
            if np.any(r < 0) or np.max(np.abs(r.sum(-1) - 1.0), initial=0.0) > SIMPLEX_TOL:
                raise ValueError(f"group {g} coefficients are not on the simplex")

    def per_unit(self, assignment: Assignment) -> np.ndarray:
        """Scatter back to unit order, shape ``(..., M)``."""
        batch = self.rho[0].shape[:-1]
        out = np.empty(batch + (assignment.m,))
        for idx, r in zip(assignment.groups, self.rho):
            out[..., idx] = r
        return out


def split_network(spec: NetworkSpec, w_star, assignment: Assignment, rho, layer: int = 0):
    """Replace hidden layer ``layer`` of the reference net by ``M`` scaled copies.

    Unit ``m`` copies reference unit ``sigma(m)`` with incoming weights (and
    bias) and outgoing weights both scaled by ``sqrt(rho_m)``, which keeps the
    function and the weighted squared norm. ``rho`` is a per-unit array
    ``(..., M)`` or a :class:`SimplexCoords`. Returns ``(new_spec, w)``.
    """
    if _hidden(spec, layer) != assignment.m_star:
        raise ShapeError(f"reference width {spec.widths[layer]} != assignment M* {assignment.m_star}", layer=layer)
    if isinstance(rho, SimplexCoords):
        rho = rho.per_unit(assignment)
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape[-1] != assignment.m:
        raise ShapeError(f"need {assignment.m} coefficients, got {rho.shape[-1]}", layer=layer)
    sigma = np.asarray(assignment.sigma)
    for g, idx in enumerate(assignment.groups):
        r = rho[..., idx]
        if np.any(r < -SIMPLEX_TOL) or np.max(np.abs(r.sum(-1) - 1.0)) > SIMPLEX_TOL:
            raise ValueError(f"coefficients of group {g} are off the simplex")
    scale = np.sqrt(np.clip(rho, 0.0, None))
    widths = list(spec.widths)
    widths[layer] = assignment.m
    new_spec = NetworkSpec(spec.input_dim, tuple(widths), spec.output_dim, spec.activation, spec.layer_bias)
    layers = list(unflatten(spec, w_star))
    batch = np.broadcast_shapes(np.shape(w_star)[:-1], rho.shape[:-1])
    W_in, b_in = layers[layer]
    W_out, b_out = layers[layer + 1]
    W_in = np.broadcast_to(W_in[..., sigma, :], batch + (assignment.m, W_in.shape[-1])) * scale[..., :, None]
    if b_in is not None:
        b_in = b_in[..., sigma] * scale
    W_out = np.broadcast_to(W_out[..., :, sigma], batch + (W_out.shape[-2], assignment.m)) * scale[..., None, :]
    layers[layer] = (W_in, b_in)
    layers[layer + 1] = (W_out, b_out)
    layers = [(np.broadcast_to(W, batch + W.shape[-2:]), None if b is None else np.broadcast_to(b, batch + b.shape[-1:]))
              for W, b in layers]
    return new_spec, flatten(new_spec, layers)


def split_neuron(spec: NetworkSpec, w_star, unit: int, rho, layer: int = 0):
    """Split a single reference unit into ``len(rho)`` copies placed where it stood."""
    rho = np.asarray(rho, dtype=np.float64)
    sizes = [1] * _hidden(spec, layer)
    if not 0 <= unit < len(sizes):
        raise ShapeError(f"unit {unit} out of range", layer=layer)
    sizes[unit] = rho.shape[-1]
    a = Assignment.from_sizes(sizes)
    full = np.ones(rho.shape[:-1] + (a.m,))
    full[..., unit:unit + rho.shape[-1]] = rho
    return split_network(spec, w_star, a, full, layer)


def sample_reallocation(assignment: Assignment, rng: np.random.Generator, n: int | None = None) -> SimplexCoords:
    """Draw ``rho = v**2 / |v|^2`` per group from standard normal ``v``; marginally Dirichlet(1/2)."""
    shape = () if n is None else (n,)
    rho = []
    for k in assignment.sizes:
        v = rng.standard_normal(shape + (k,))
        s = np.sum(v * v, -1)
        # |v| = 0 has probability zero, but redraw if it ever happens
        while np.any(s == 0):
            bad = s == 0
            v[bad] = rng.standard_normal((int(bad.sum()), k))
            s = np.sum(v * v, -1)
        rho.append(v * v / s[..., None])
    return SimplexCoords(rho)


def sample_manifold(spec: NetworkSpec, w_star, assignment: Assignment, rng: np.random.Generator,
                    n: int | None = None, layer: int = 0):
    """Random point(s) of the minimum-norm manifold built from ``w_star``.

    Returns ``(new_spec, w, coords)`` with ``w`` of shape ``(d,)`` or ``(n, d)``.
    """
    coords = sample_reallocation(assignment, rng, n)
    new_spec, w = split_network(spec, w_star, assignment, coords, layer)
    return new_spec, w, coords


def unit_norms(spec: NetworkSpec, w, layer: int = 0) -> np.ndarray:
    """Squared norm of each unit's incoming weights, bias and outgoing weights, shape ``(..., M)``."""
    _hidden(spec, layer)
    layers = unflatten(spec, w)
    W_in, b_in = layers[layer]
    W_out = layers[layer + 1][0]
    out = np.sum(W_in**2, -1) + np.sum(W_out**2, -2)
    if b_in is not None:
        out = out + b_in**2
    return out


def extract_rho(spec: NetworkSpec, w, assignment: Assignment, layer: int = 0) -> SimplexCoords:
    """Group-norm shares ``|omega_m|^2 / sum_{m' in group} |omega_m'|^2``; exact on the manifold."""
    if _hidden(spec, layer) != assignment.m:
        raise ShapeError(f"width {spec.widths[layer]} != assignment M {assignment.m}", layer=layer)
    norms = unit_norms(spec, w, layer)
    rho = []
    for idx in assignment.groups:
        g = norms[..., idx]
        tot = g.sum(-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            rho.append(np.where(tot > 0, g / np.where(tot > 0, tot, 1.0), 1.0 / len(idx)))
    return SimplexCoords(rho)
