"""Priors, likelihoods and differentiable log-posteriors.

Log-prior constants are dropped; the likelihood keeps its normalising
constant so that per-example log densities can be reused for predictive
scores. Every density accepts batched weights ``(..., d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import network as nw
from .network import NetworkSpec
from .rng import generator

LOG_2PI = float(np.log(2.0 * np.pi))


class NonFiniteError(ArithmeticError):
    """A log-density term evaluated to a non-finite value."""

    def __init__(self, term: str):
        super().__init__(f"non-finite {term} term")
        self.term = term


@dataclass(frozen=True)
class PriorSpec:
    """Zero-mean Gaussian weight prior with one scale ``tau_l`` per affine layer.

    ``bias`` is ``"gaussian"`` (scale ``bias_tau``) or ``"flat"`` (improper,
    contributes nothing).
    """

    tau: tuple[float, ...]
    bias: str = "gaussian"
    bias_tau: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "tau", tuple(float(t) for t in self.tau))
        if any(t <= 0 for t in self.tau):
            raise ValueError("prior scales must be positive")
        if self.bias not in ("gaussian", "flat"):
            raise ValueError(f"bias prior must be 'gaussian' or 'flat', got {self.bias!r}")
        if self.bias_tau <= 0:
            raise ValueError("bias prior scale must be positive")

    @classmethod
    def isotropic(cls, spec: NetworkSpec, tau: float = 1.0, bias: str = "gaussian", bias_tau: float | None = None):
        return cls((tau,) * spec.n_layers, bias, tau if bias_tau is None else bias_tau)

    @property
    def lam(self) -> tuple[float, ...]:
        """Penalty weights ``lambda_l = 1 / (2 tau_l^2)``."""
        return tuple(1.0 / (2.0 * t * t) for t in self.tau)

    def precision_vector(self, spec: NetworkSpec) -> np.ndarray:
        """Diagonal prior precision over the flat layout (0 for flat biases)."""
        if len(self.tau) != spec.n_layers:
            raise nw.ShapeError(f"prior has {len(self.tau)} scales for {spec.n_layers} layers")
        prec = np.zeros(spec.n_params)
        for ls, t in zip(spec.layout, self.tau):
            prec[ls.weight] = 1.0 / t**2
            if ls.bias is not None and self.bias == "gaussian":
                prec[ls.bias] = 1.0 / self.bias_tau**2
        return prec

    def sample(self, spec: NetworkSpec, rng: np.random.Generator) -> np.ndarray:
        """Draw from the prior; flat-prior biases are drawn from N(0, bias_tau^2)."""
        scale = np.empty(spec.n_params)
        for ls, t in zip(spec.layout, self.tau):
            scale[ls.weight] = t
            if ls.bias is not None:
                scale[ls.bias] = self.bias_tau
        return scale * rng.standard_normal(spec.n_params)


def log_prior(spec: NetworkSpec, prior: PriorSpec, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    prec = prior.precision_vector(spec)
    return -0.5 * np.sum(prec * w * w, axis=-1)


def grad_log_prior(spec: NetworkSpec, prior: PriorSpec, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    return -prior.precision_vector(spec) * w


@dataclass(frozen=True)
class LikelihoodSpec:
    """Observation model. ``sigma2`` is only used by the Gaussian family."""

    family: str = "gaussian"
    sigma2: float = 1.0

    def __post_init__(self):
        if self.family not in ("gaussian", "bernoulli_logit", "categorical_logit"):
            raise ValueError(f"unknown likelihood family {self.family!r}")
        if self.family == "gaussian" and not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    @property
    def upsilon(self) -> float:
        """Gauss-Newton output weight (scalar multiple of the identity)."""
        if self.family != "gaussian":
            raise ValueError("upsilon is only a constant for the gaussian family")
        return 1.0 / self.sigma2

    def log_density(self, f: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Per-example ``log p(y_i | f_i)``, shape ``(..., n)``."""
        if self.family == "gaussian":
            r = y - f
            return -0.5 * np.sum(r * r, axis=-1) / self.sigma2 - 0.5 * f.shape[-1] * (LOG_2PI + np.log(self.sigma2))
        if self.family == "bernoulli_logit":
            z = f[..., 0]
            t = y[..., 0] if y.ndim > 1 else y
            return t * z - np.logaddexp(0.0, z)
        labels = _labels(y)
        zmax = f.max(axis=-1, keepdims=True)
        lse = zmax[..., 0] + np.log(np.sum(np.exp(f - zmax), axis=-1))
        return np.take_along_axis(f, labels[..., None], axis=-1)[..., 0] - lse

    def output_grad(self, f: np.ndarray, y: np.ndarray) -> np.ndarray:
        """``d log p(y | f) / d f``, shape of ``f``."""
        if self.family == "gaussian":
            return (y - f) / self.sigma2
        if self.family == "bernoulli_logit":
            t = y if y.ndim == f.ndim else y[..., None]
            return t - 1.0 / (1.0 + np.exp(-f))
        labels = _labels(y)
        zmax = f.max(axis=-1, keepdims=True)
        p = np.exp(f - zmax)
        p /= p.sum(axis=-1, keepdims=True)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, np.broadcast_to(labels[..., None], p.shape[:-1] + (1,)), 1.0, axis=-1)
        return onehot - p


def _labels(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    return y.astype(np.int64)


@dataclass
class Dataset:
    """A train/val/test split with recorded standardisation parameters.

    ``x_mean``/``x_scale`` (and ``y_mean``/``y_scale`` for regression) map
    raw values to the stored standardised ones via ``(v - mean) / scale``.
    """

    X: dict[str, np.ndarray]
    y: dict[str, np.ndarray]
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    y_mean: np.ndarray | None = None
    y_scale: np.ndarray | None = None
    columns: list[str] = field(default_factory=list)

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name not in self.X:
            raise KeyError(f"dataset has no {name!r} split")
        return self.X[name], self.y[name]

    def unstandardize_x(self, Xs: np.ndarray) -> np.ndarray:
        if self.x_mean is None:
            return Xs
        return Xs * self.x_scale + self.x_mean


@dataclass(frozen=True)
class SyntheticLinearTask:
    """``y_i = slope * x_i + noise_sd * eps_i`` with ``x_i`` evenly spaced on [-1, 1]."""

    slope: float = 1.0
    noise_sd: float = 0.05
    n: int = 20
    seed: int = 0
    x_low: float = -1.0
    x_high: float = 1.0

    def generate(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.linspace(self.x_low, self.x_high, self.n)
        eps = generator(self.seed, "data/synthetic").standard_normal(self.n)
        y = self.slope * x + self.noise_sd * eps
        return x[:, None], y[:, None]


class PosteriorModel:
    """Unnormalised log-posterior ``log p(y | X, w) + log p(w)`` of a network.

    Immutable after construction. ``y`` is ``(n, o)`` for Gaussian outputs,
    ``(n,)`` or ``(n, 1)`` labels for the logit families.
    """

    def __init__(self, spec: NetworkSpec, prior: PriorSpec, likelihood: LikelihoodSpec, X=None, y=None):
        self.spec = spec
        self.prior = prior
        self.likelihood = likelihood
        if X is None:
            X = np.zeros((0, spec.input_dim))
            y = np.zeros((0, spec.output_dim))
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if likelihood.family == "gaussian" and y.ndim == 1:
            y = y[:, None]
        if X.ndim != 2 or X.shape[1] != spec.input_dim or len(y) != len(X):
            raise nw.ShapeError(f"data shapes X{X.shape}, y{y.shape} do not fit the network")
        self.X = X
        self.y = y
        self._prec = prior.precision_vector(spec)
        for arr in (self.X, self.y, self._prec):
            arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.spec.n_params

    @property
    def n(self) -> int:
        return len(self.X)

    def sample_prior(self, rng: np.random.Generator) -> np.ndarray:
        return self.prior.sample(self.spec, rng)

    def log_likelihood(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if self.n == 0:
            return np.zeros(w.shape[:-1])
        f = nw.forward(self.spec, w, self.X)
        return self.likelihood.log_density(f, self.y).sum(axis=-1)

    def log_prior(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        return -0.5 * np.sum(self._prec * w * w, axis=-1)

    def log_prob(self, w) -> np.ndarray:
        return self.logp_and_grad(w, need_grad=False)[0]

    def grad_log_prob(self, w) -> np.ndarray:
        return self.logp_and_grad(w)[1]

    def logp_and_grad(self, w, need_grad: bool = True, check: bool = False):
        """Log-posterior and its gradient for weights of shape ``(..., d)``.

        With ``check=True`` a non-finite value raises :class:`NonFiniteError`
        naming the offending term.
        """
        w = np.asarray(w, dtype=np.float64)
        if w.shape[-1] != self.dim:
            raise nw.ShapeError(f"weights have size {w.shape[-1]}, expected {self.dim}")
        lp_prior = -0.5 * np.sum(self._prec * w * w, axis=-1)
        g = -self._prec * w if need_grad else None
        if self.n == 0:
            lp_lik = np.zeros(w.shape[:-1])
        else:
            layers = nw.unflatten(self.spec, w)
            zs, acts, f = nw._forward_pass(self.spec, layers, self.X)
            lp_lik = self.likelihood.log_density(f, self.y).sum(axis=-1)
            if need_grad:
                seed = self.likelihood.output_grad(f, self.y)
                g = g + nw.flatten(self.spec, nw._backward(self.spec, layers, zs, acts, seed))
        if check:
            if not np.all(np.isfinite(lp_lik)):
                raise NonFiniteError("likelihood")
            if not np.all(np.isfinite(lp_prior)):
                raise NonFiniteError("prior")
        return lp_lik + lp_prior, g


class GaussianTarget:
    """Analytic ``N(mean, cov)`` log-density; used to validate samplers."""

    def __init__(self, mean, cov=None):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        d = self.mean.size
        self.cov = np.eye(d) if cov is None else np.asarray(cov, dtype=np.float64)
        self.prec = np.linalg.inv(self.cov)
        self._chol = np.linalg.cholesky(self.cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample_prior(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self._chol @ rng.standard_normal(self.dim)

    def logp_and_grad(self, w, need_grad: bool = True):
        r = np.asarray(w, dtype=np.float64) - self.mean
        pr = r @ self.prec
        return -0.5 * np.sum(pr * r, axis=-1), (-pr if need_grad else None)

    def log_prob(self, w):
        return self.logp_and_grad(w, need_grad=False)[0]


# --- conjugate 1-2-1 model: f(x) = a ReLU(b x) + c ReLU(d x), all N(0, 1) ---

def conjugate_121_design(b, d, x) -> np.ndarray:
    """ReLU design matrix ``Phi(b, d)`` of shape ``(..., n, 2)``."""
    b = np.asarray(b, dtype=np.float64)[..., None]
    d = np.asarray(d, dtype=np.float64)[..., None]
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return np.stack([np.maximum(b * x, 0.0), np.maximum(d * x, 0.0)], axis=-1)


def conjugate_121_conditional(b, d, x, y, sigma2: float):
    """Gaussian conditional of ``(a, c)`` given ``(b, d)``: returns ``(mean, cov)``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    Phi = conjugate_121_design(b, d, x)
    P = np.eye(2) + np.swapaxes(Phi, -1, -2) @ Phi / sigma2
    if np.any(np.linalg.cond(P) > 1e12):
        raise np.linalg.LinAlgError("conditional precision is ill-conditioned (cond > 1e12)")
    cov = np.linalg.inv(P)
    mean = (cov @ (np.swapaxes(Phi, -1, -2) @ y[:, None]))[..., 0] / sigma2
    return mean, cov


def conjugate_121_marginal(b, d, x, y, sigma2: float) -> np.ndarray:
    """``log N(y; 0, sigma2 I + Phi Phi^T)`` with (a, c) integrated out."""
    return _marginal_and_grad(b, d, x, y, sigma2, need_grad=False)[0]


def _marginal_and_grad(b, d, x, y, sigma2, need_grad=True):
    # Woodbury with the 2x2 capacitance A = sigma2 I + Phi^T Phi.
    b = np.asarray(b, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    # positions whose design overflows (e.g. from a divergent trajectory) get -inf
    xmax = float(np.max(np.abs(x))) if np.size(x) else 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        bad = ~((np.abs(b) * xmax < 1e100) & (np.abs(d) * xmax < 1e100))
    if np.any(bad):
        logm, g = _marginal_and_grad(np.where(bad, 0.0, b), np.where(bad, 0.0, d), x, y, sigma2, need_grad)
        logm = np.where(bad, -np.inf, logm)
        return logm, (np.where(bad[..., None], np.nan, g) if need_grad else None)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = x.size
    if n == 0:
        zero = np.zeros(np.broadcast(b, d).shape)
        return zero, (np.stack([zero, zero], -1) if need_grad else None)
    Phi = conjugate_121_design(b, d, x)
    PtP = np.swapaxes(Phi, -1, -2) @ Phi
    A = sigma2 * np.eye(2) + PtP
    # far in the prior tail sigma2 is lost against a rank-one Phi^T Phi
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    singular = ~(det > 1e-12 * A[..., 0, 0] * A[..., 1, 1])
    if np.any(singular):
        logm, g = _marginal_and_grad(np.where(singular, 0.0, b), np.where(singular, 0.0, d), x, y, sigma2, need_grad)
        logm = np.where(singular, -np.inf, logm)
        return logm, (np.where(singular[..., None], np.nan, g) if need_grad else None)
    Pty = np.swapaxes(Phi, -1, -2) @ y
    sol = np.linalg.solve(A, Pty[..., None])[..., 0]
    quad = (y @ y - np.sum(Pty * sol, axis=-1)) / sigma2
    _, logdetA = np.linalg.slogdet(A)
    logdet = (n - 2) * np.log(sigma2) + logdetA
    logm = -0.5 * (n * LOG_2PI + logdet + quad)
    if not need_grad:
        return logm, None

    def cinv(v):
        # C^{-1} v for v of shape (..., n)
        Ptv = np.swapaxes(Phi, -1, -2) @ v[..., None]
        return (v - (Phi @ np.linalg.solve(A, Ptv))[..., 0]) / sigma2

    alpha = cinv(np.broadcast_to(y, Phi.shape[:-1]).copy())
    grads = []
    for j, s in enumerate((b, d)):
        u = x * (np.asarray(s)[..., None] * x > 0)  # d phi_j / d s
        phi = Phi[..., j]
        g = np.sum(alpha * u, -1) * np.sum(alpha * phi, -1) - np.sum(phi * cinv(u), -1)
        grads.append(g)
    return logm, np.stack(grads, axis=-1)


class Conjugate121Marginal:
    """Exact 2-D target ``log p(b, d | y)`` (up to a constant) of the 1-2-1 model."""

    dim = 2

    def __init__(self, x, y, sigma2: float):
        self.x = np.asarray(x, dtype=np.float64).reshape(-1)
        self.y = np.asarray(y, dtype=np.float64).reshape(-1)
        self.sigma2 = float(sigma2)

    def sample_prior(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(2)

    def logp_and_grad(self, w, need_grad: bool = True):
        w = np.asarray(w, dtype=np.float64)
        lm, g = _marginal_and_grad(w[..., 0], w[..., 1], self.x, self.y, self.sigma2, need_grad)
        lp = lm - 0.5 * np.sum(w * w, axis=-1)
        return lp, (g - w if need_grad else None)

    def log_prob(self, w):
        return self.logp_and_grad(w, need_grad=False)[0]


class Conjugate121Conditional:
    """Quadratic target over ``(a, c)`` with ``(b, d)`` held fixed."""

    dim = 2

    def __init__(self, b: float, d: float, x, y, sigma2: float):
        self.Phi = conjugate_121_design(b, d, x)
        self.y = np.asarray(y, dtype=np.float64).reshape(-1)
        self.sigma2 = float(sigma2)

    def sample_prior(self, rng):
        return rng.standard_normal(2)

    def logp_and_grad(self, w, need_grad: bool = True):
        w = np.asarray(w, dtype=np.float64)
        r = self.y - w @ self.Phi.T
        lp = -0.5 * np.sum(r * r, -1) / self.sigma2 - 0.5 * np.sum(w * w, -1)
        return lp, ((r @ self.Phi) / self.sigma2 - w if need_grad else None)


def conjugate_121_spec() -> NetworkSpec:
    """The 1-2-1 ReLU network matching the conjugate model, flat order (b, d, a, c)."""
    return NetworkSpec(1, (2,), 1, "relu")


def conjugate_121_quadrature(x, y, sigma2: float, grid: int = 400, limit: float = 6.0):
    """Exact posterior moments of ``(a, b, c, d)`` by quadrature over ``(b, d)``.

    The (b, d) marginal is evaluated on a ``grid x grid`` box ``[-limit, limit]^2``
    and (a, c) moments come from the Gaussian conditional in closed form.
    Returns ``(mean, cov, marginal_bd)`` in the flat order ``(b, d, a, c)`` of
    :func:`conjugate_121_spec`; ``marginal_bd`` holds the grid axis and the
    normalised quadrature weights.
    """
    g = np.linspace(-limit, limit, grid)
    B, D = np.meshgrid(g, g, indexing="ij")
    target = Conjugate121Marginal(x, y, sigma2)
    lp = target.log_prob(np.stack([B, D], -1))
    wgt = np.exp(lp - lp.max())
    wgt /= wgt.sum()
    mu, cov = conjugate_121_conditional(B, D, x, y, sigma2)
    Ea, Ec = mu[..., 0], mu[..., 1]
    m = np.array([(wgt * Ea).sum(), (wgt * B).sum(), (wgt * Ec).sum(), (wgt * D).sum()])
    E2 = np.empty((4, 4))
    second_ac = cov + mu[..., :, None] * mu[..., None, :]
    cols = {0: Ea, 1: B, 2: Ec, 3: D}
    for i in range(4):
        for j in range(4):
            if i in (0, 2) and j in (0, 2):
                E2[i, j] = (wgt * second_ac[..., i // 2, j // 2]).sum()
            else:
                E2[i, j] = (wgt * cols[i] * cols[j]).sum()
    order = [1, 3, 0, 2]
    cov_all = E2 - np.outer(m, m)
    return m[order], cov_all[np.ix_(order, order)], {"axis": g, "weights": wgt}
