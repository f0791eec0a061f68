"""Fully-connected networks evaluated over flat parameter vectors.

Parameters are stored as one flat float64 vector per network (the
"weight vector"). The layout is layer-major; within an affine layer the
weight matrix comes first in row-major order, followed by the bias if the
layer has one. Every function accepts leading batch dimensions on ``w``,
so a stack of ``K`` chains with shape ``(K, d)`` is evaluated in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

ACTIVATIONS = ("relu", "identity")


class ShapeError(ValueError):
    """Raised when arrays do not match a :class:`NetworkSpec`."""

    def __init__(self, message: str, layer: int | None = None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
        self.layer = layer


class LayerSlice(NamedTuple):
    rows: int
    cols: int
    weight: slice
    bias: slice | None


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of a fully-connected network.

    ``widths`` lists the hidden layer sizes, so a 5-16-16-1 network is
    ``NetworkSpec(5, (16, 16), 1)``. ``layer_bias`` holds one flag per
    affine layer (``len(widths) + 1`` entries); the default is no biases.
    """

    input_dim: int
    widths: tuple[int, ...]
    output_dim: int = 1
    activation: str = "relu"
    layer_bias: tuple[bool, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(m) for m in self.widths))
        n_affine = len(self.widths) + 1
        if self.layer_bias is None:
            object.__setattr__(self, "layer_bias", (False,) * n_affine)
        else:
            object.__setattr__(self, "layer_bias", tuple(bool(b) for b in self.layer_bias))
        if len(self.layer_bias) != n_affine:
            raise ShapeError(f"layer_bias needs {n_affine} entries, got {len(self.layer_bias)}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")
        dims = (self.input_dim, *self.widths, self.output_dim)
        if any(int(m) < 1 for m in dims):
            raise ShapeError(f"all dimensions must be >= 1, got {dims}")

    @property
    def n_layers(self) -> int:
        """Number of affine layers ``L``."""
        return len(self.widths) + 1

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.widths, self.output_dim)

    @property
    def shapes(self) -> list[tuple[int, int]]:
        d = self.dims
        return [(d[l + 1], d[l]) for l in range(self.n_layers)]

    @property
    def layout(self) -> tuple[LayerSlice, ...]:
        out = []
        pos = 0
        for (rows, cols), has_bias in zip(self.shapes, self.layer_bias):
            wsl = slice(pos, pos + rows * cols)
            pos += rows * cols
            bsl = None
            if has_bias:
                bsl = slice(pos, pos + rows)
                pos += rows
            out.append(LayerSlice(rows, cols, wsl, bsl))
        return tuple(out)

    @property
    def n_params(self) -> int:
        return sum(r * c + (r if b else 0) for (r, c), b in zip(self.shapes, self.layer_bias))

    @property
    def weight_counts(self) -> list[int]:
        """Per-layer weight counts ``d_l`` (biases excluded)."""
        return [r * c for r, c in self.shapes]

    def weight_mask(self) -> np.ndarray:
        """Boolean mask over the flat vector selecting weights (not biases)."""
        mask = np.zeros(self.n_params, dtype=bool)
        for ls in self.layout:
            mask[ls.weight] = True
        return mask


class ActivationMatrix(NamedTuple):
    values: np.ndarray
    layer: int


def _check_w(spec: NetworkSpec, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 0 or w.shape[-1] != spec.n_params:
        raise ShapeError(f"weight vector has trailing size {w.shape[-1:]}, expected {spec.n_params}")
    return w


def _check_x(spec: NetworkSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"input has shape {x.shape}, expected (n, {spec.input_dim})", layer=0)
    return x, single


def unflatten(spec: NetworkSpec, w) -> list[tuple[np.ndarray, np.ndarray | None]]:
    """Split a flat vector into ``[(W_l, b_l), ...]`` views (batch dims kept)."""
    w = _check_w(spec, w)
    batch = w.shape[:-1]
    layers = []
    for ls in spec.layout:
        W = w[..., ls.weight].reshape(*batch, ls.rows, ls.cols)
        b = w[..., ls.bias] if ls.bias is not None else None
        layers.append((W, b))
    return layers


def flatten(spec: NetworkSpec, layers: Sequence[tuple[np.ndarray, np.ndarray | None]]) -> np.ndarray:
    """Inverse of :func:`unflatten`."""
    if len(layers) != spec.n_layers:
        raise ShapeError(f"expected {spec.n_layers} layers, got {len(layers)}")
    parts = []
    batch = None
    for l, ((W, b), ls) in enumerate(zip(layers, spec.layout)):
        W = np.asarray(W, dtype=np.float64)
        if W.shape[-2:] != (ls.rows, ls.cols):
            raise ShapeError(f"weight shape {W.shape[-2:]} != {(ls.rows, ls.cols)}", layer=l)
        batch = W.shape[:-2]
        parts.append(W.reshape(*batch, -1))
        if ls.bias is not None:
            if b is None or np.shape(b)[-1] != ls.rows:
                raise ShapeError("missing or misshaped bias", layer=l)
            parts.append(np.asarray(b, dtype=np.float64).reshape(*batch, ls.rows))
        elif b is not None:
            raise ShapeError("bias given for a layer without bias", layer=l)
    return np.concatenate(parts, axis=-1)


def _act(spec: NetworkSpec, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if spec.activation == "relu" else z


def _act_grad(spec: NetworkSpec, z: np.ndarray) -> np.ndarray:
    # ReLU derivative at exactly 0 is taken as 0.
    return (z > 0.0).astype(np.float64) if spec.activation == "relu" else np.ones_like(z)


def _affine(a: np.ndarray, W: np.ndarray, b: np.ndarray | None) -> np.ndarray:
    z = a @ np.swapaxes(W, -1, -2)
    if b is not None:
        z = z + b[..., None, :]
    return z


def _forward_pass(spec, layers, X):
    """Return (pre-activations per hidden layer, activations incl. input, output)."""
    zs = []
    acts = [X]
    a = X
    for W, b in layers[:-1]:
        z = _affine(a, W, b)
        zs.append(z)
        a = _act(spec, z)
        acts.append(a)
    W, b = layers[-1]
    return zs, acts, _affine(a, W, b)


def forward(spec: NetworkSpec, w, x) -> np.ndarray:
    """Network output.

    ``x`` may be a single input of length ``p`` (returns shape ``(..., o)``)
    or a matrix of ``n`` inputs (returns ``(..., n, o)``).
    """
    X, single = _check_x(spec, x)
    _, _, out = _forward_pass(spec, unflatten(spec, w), X)
    return out[..., 0, :] if single else out


def preactivations(spec: NetworkSpec, w, x) -> list[np.ndarray]:
    """Pre-activations ``z_l = W_l a_{l-1} + b_l`` of every hidden layer."""
    X, single = _check_x(spec, x)
    zs, _, _ = _forward_pass(spec, unflatten(spec, w), X)
    return [z[..., 0, :] for z in zs] if single else zs


def activation_matrix(spec: NetworkSpec, w, X, layer: int) -> ActivationMatrix:
    """Hidden-unit outputs ``Xi_l`` (n x M_l) of hidden layer ``layer`` (0-based)."""
    if not 0 <= layer < len(spec.widths):
        raise ShapeError(f"hidden layer index {layer} out of range [0, {len(spec.widths)})")
    X, _ = _check_x(spec, X)
    _, acts, _ = _forward_pass(spec, unflatten(spec, w), X)
    return ActivationMatrix(acts[layer + 1], layer)


def _backward(spec, layers, zs, acts, G):
    """Backpropagate output seeds ``G`` (..., n, o); returns per-layer (dW, db)."""
    grads = [None] * spec.n_layers
    for l in range(spec.n_layers - 1, -1, -1):
        W, b = layers[l]
        dW = np.swapaxes(G, -1, -2) @ acts[l]
        db = G.sum(axis=-2) if b is not None else None
        grads[l] = (dW, db)
        if l > 0:
            G = (G @ W) * _act_grad(spec, zs[l - 1])
    return grads


def gradient(spec: NetworkSpec, w, X, residual_weights) -> np.ndarray:
    """Exact gradient of ``sum_i <r_i, f(x_i; w)>`` with respect to ``w``.

    ``residual_weights`` has shape ``(..., n, o)`` and carries the
    per-example derivative of the loss with respect to the output.
    """
    w = _check_w(spec, w)
    X, _ = _check_x(spec, X)
    G = np.asarray(residual_weights, dtype=np.float64)
    if G.shape[-2:] != (X.shape[0], spec.output_dim):
        raise ShapeError(f"residual weights shape {G.shape} does not match (n={X.shape[0]}, o={spec.output_dim})")
    layers = unflatten(spec, w)
    zs, acts, _ = _forward_pass(spec, layers, X)
    return flatten(spec, _backward(spec, layers, zs, acts, G))


def batch_jacobian(spec: NetworkSpec, w, X) -> np.ndarray:
    """Per-example Jacobian, shape ``(n * o, d)``; row ``i * o + k`` is d f_k(x_i) / d w."""
    w = _check_w(spec, w)
    if w.ndim != 1:
        raise ShapeError("batch_jacobian takes a single weight vector")
    X, _ = _check_x(spec, X)
    n, o = X.shape[0], spec.output_dim
    layers = unflatten(spec, w)
    zs, acts, _ = _forward_pass(spec, layers, X)
    J = np.zeros((n, o, spec.n_params))
    # delta[i, k, :] = d f_k(x_i) / d z_l for the current layer l
    delta = np.broadcast_to(np.eye(o), (n, o, o)).copy()
    for l in range(spec.n_layers - 1, -1, -1):
        ls = spec.layout[l]
        J[:, :, ls.weight] = (delta[:, :, :, None] * acts[l][:, None, None, :]).reshape(n, o, -1)
        if ls.bias is not None:
            J[:, :, ls.bias] = delta
        if l > 0:
            W, _ = layers[l]
            delta = (delta @ W) * _act_grad(spec, zs[l - 1])[:, None, :]
    return J.reshape(n * o, spec.n_params)
