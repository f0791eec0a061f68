"""Jacobian kernels, Gauss-Newton restriction, kernel projections and the flat-direction probe."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.stats import norm

from .network import NetworkSpec, activation_matrix

DEFAULT_REL_TOL = 1e-8


@dataclass
class JacobianBundle:
    """SVD split of a Jacobian into kernel (``Z``, d x r) and image (d x rank) bases."""

    J: np.ndarray
    singular_values: np.ndarray
    Z: np.ndarray
    image: np.ndarray
    rel_tol: float

    @property
    def r(self) -> int:
        return self.Z.shape[1]

    @property
    def rank(self) -> int:
        return self.image.shape[1]

    def kernel_projector(self) -> np.ndarray:
        return self.Z @ self.Z.T


def kernel_basis(J, rel_tol: float = DEFAULT_REL_TOL) -> JacobianBundle:
    """Orthonormal bases of ker(J) and its complement from a full SVD.

    Singular values at or below ``rel_tol * sigma_max`` count as zero; an
    all-zero ``J`` has the whole space as kernel.
    """
    J = np.atleast_2d(np.asarray(J, dtype=np.float64))
    if not np.all(np.isfinite(J)):
        raise ValueError("Jacobian has non-finite entries")
    d = J.shape[1]
    _, s, Vt = np.linalg.svd(J, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > rel_tol * smax)) if smax > 0 else 0
    return JacobianBundle(J, s, Vt[rank:].T.copy().reshape(d, d - rank), Vt[:rank].T.copy(), rel_tol)


@dataclass
class GaussNewtonRestriction:
    H: np.ndarray
    restricted_cov: np.ndarray
    tau2: float
    max_deviation: float


def gauss_newton_restriction(J, upsilon, lam: float, rel_tol: float = DEFAULT_REL_TOL,
                             check_tol: float | None = 1e-8) -> GaussNewtonRestriction:
    """Gauss-Newton precision ``H = J^T Upsilon J + 2 lam I`` and ``Z^T H^{-1} Z`` on ker(J).

    ``upsilon`` is a scalar, a per-row vector or a full PSD matrix. On the
    kernel ``H`` acts as ``2 lam``, so the restricted covariance is
    ``tau^2 I`` with ``tau^2 = 1 / (2 lam)``; a deviation above ``check_tol``
    raises ``ArithmeticError``.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    J = np.atleast_2d(np.asarray(J, dtype=np.float64))
    U = np.asarray(upsilon, dtype=np.float64)
    if U.ndim == 0:
        JtUJ = U * (J.T @ J)
    elif U.ndim == 1:
        JtUJ = J.T @ (U[:, None] * J)
    else:
        JtUJ = J.T @ U @ J
    H = JtUJ + 2.0 * lam * np.eye(J.shape[1])
    Z = kernel_basis(J, rel_tol).Z
    restricted = Z.T @ np.linalg.inv(H) @ Z
    tau2 = 1.0 / (2.0 * lam)
    dev = float(np.max(np.abs(restricted - tau2 * np.eye(Z.shape[1])), initial=0.0))
    if check_tol is not None and dev > check_tol:
        raise ArithmeticError(f"restricted covariance deviates from tau^2 I by {dev:.3g}")
    return GaussNewtonRestriction(H, restricted, tau2, dev)


def project_samples(samples, w_ref, Z) -> np.ndarray:
    """Kernel coordinates ``Z^T (w_s - w_ref)`` of every draw, shape ``(N, r)``.

    ``samples`` is ``(N, d)`` or ``(K, S, d)``; for the latter ``w_ref`` may be
    one reference per chain ``(K, d)``, and rows are pooled chain by chain.
    """
    samples = np.asarray(getattr(samples, "samples", samples), dtype=np.float64)
    w_ref = np.asarray(w_ref, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    d = samples.shape[-1]
    if Z.ndim != 2 or w_ref.shape[-1] != d or Z.shape[0] != d:
        raise ValueError(f"dimension mismatch: samples d={d}, w_ref {w_ref.shape}, Z {Z.shape}")
    if samples.ndim == 3 and w_ref.ndim == 2:
        if w_ref.shape[0] != samples.shape[0]:
            raise ValueError("need one reference point per chain")
        diff = samples - w_ref[:, None, :]
    else:
        diff = samples - w_ref
    return diff.reshape(-1, d) @ Z


# --- flat-direction probe ---

@dataclass
class ProbeResult:
    """Clusters of near-collinear units in one hidden layer and their flatness ``S``.

    ``clusters`` holds multi-unit index sets; ``S[i]`` is the smallest singular
    value of the raw activations of cluster ``i`` over zero-sum reweightings.
    """

    clusters: list[np.ndarray]
    S: np.ndarray
    threshold: float
    dropped: np.ndarray
    all_dead: bool = False

    @property
    def median_S(self) -> float:
        return float(np.median(self.S)) if self.S.size else float("nan")


@dataclass
class ProbeSummary:
    results: list[ProbeResult]
    median_S: np.ndarray = field(init=False)

    def __post_init__(self):
        self.median_S = np.array([r.median_S for r in self.results])

    @property
    def n_clusters(self) -> np.ndarray:
        return np.array([len(r.clusters) for r in self.results])


def bonferroni_threshold(n: int, n_units: int, alpha: float = 0.05) -> float:
    """Correlation cutoff for the largest of ``M(M-1)/2`` null pairs at family-wise level ``alpha``.

    Uses the Fisher transform: under independence ``atanh(r) sqrt(n - 3)`` is
    approximately standard normal. Only positive similarity is tested since
    redundant units have aligned activations.
    """
    pairs = n_units * (n_units - 1) // 2
    if pairs == 0:
        return 1.0
    if n < 4:
        # too few rows for the approximation; only exact collinearity counts
        return 1.0 - 1e-12
    z = norm.isf(alpha / pairs)
    return float(np.tanh(z / np.sqrt(n - 3)))


def permutation_threshold(Xs: np.ndarray, alpha: float, rng: np.random.Generator, n_perm: int = 200) -> float:
    """Family-wise cutoff from the max off-diagonal correlation of row-shuffled columns."""
    n, M = Xs.shape
    maxima = np.empty(n_perm)
    iu = np.triu_indices(M, 1)
    for i in range(n_perm):
        P = np.column_stack([Xs[rng.permutation(n), j] for j in range(M)])
        maxima[i] = np.max((P.T @ P / n)[iu])
    return float(np.quantile(maxima, 1 - alpha))


def _zero_sum_basis(c: int) -> np.ndarray:
    # orthonormal basis of the complement of the all-ones vector
    Q, _ = np.linalg.qr(np.column_stack([np.ones(c), np.eye(c)[:, : c - 1]]))
    return Q[:, 1:]


def probe_activations(Xi, alpha: float = 0.05, null: str = "bonferroni",
                      rng: np.random.Generator | None = None, n_perm: int = 200,
                      const_tol: float = 1e-12) -> ProbeResult:
    """Run the probe on an activation matrix ``Xi`` of shape ``(n, M)``."""
    Xi = np.asarray(Xi, dtype=np.float64)
    n, M = Xi.shape
    if n < 2:
        raise ValueError("the probe needs at least two inputs")
    sd = Xi.std(axis=0)
    scale = np.max(np.abs(Xi), axis=0)
    keep = sd > const_tol * np.maximum(scale, 1.0)
    dropped = np.flatnonzero(~keep)
    kept = np.flatnonzero(keep)
    if kept.size == 0:
        return ProbeResult([], np.empty(0), float("nan"), dropped, all_dead=True)
    Xs = (Xi[:, kept] - Xi[:, kept].mean(0)) / sd[kept]
    C = Xs.T @ Xs / n
    if null == "bonferroni":
        thr = bonferroni_threshold(n, kept.size, alpha)
    elif null == "permutation":
        thr = permutation_threshold(Xs, alpha, rng if rng is not None else np.random.default_rng(0), n_perm)
    else:
        raise ValueError(f"unknown null {null!r}")
    adj = C >= thr
    np.fill_diagonal(adj, False)
    _, labels = connected_components(adj, directed=False)
    clusters, S = [], []
    for lab in np.unique(labels):
        members = kept[labels == lab]
        if members.size < 2:
            continue
        B = _zero_sum_basis(members.size)
        S.append(np.linalg.svd(Xi[:, members] @ B, compute_uv=False)[-1])
        clusters.append(members)
    return ProbeResult(clusters, np.asarray(S), thr, dropped)


def flat_direction_probe(spec: NetworkSpec, w, X, alpha: float = 0.05, layer: int = 0, **kw):
    """Probe hidden layer ``layer`` at weights ``w``; a batch of weights gives a :class:`ProbeSummary`."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 1:
        return probe_activations(activation_matrix(spec, w, X, layer).values, alpha, **kw)
    flat = w.reshape(-1, w.shape[-1])
    return ProbeSummary([probe_activations(activation_matrix(spec, v, X, layer).values, alpha, **kw) for v in flat])
