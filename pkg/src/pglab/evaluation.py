"""Predictive evaluation of sample ensembles: LPPD, RMSE, accuracy and cumulative LPPD curves.

LPPD sums use :func:`math.fsum`, which rounds the exact sum once, so results
do not depend on the order of chains or samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import LikelihoodSpec
from .network import NetworkSpec, forward
from .rng import generator

CHUNK = 2048


def _draws(samples) -> np.ndarray:
    x = np.asarray(getattr(samples, "samples", samples), dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[0] * x.shape[1] == 0:
        raise ValueError("empty store")
    return x


def _prep_y(likelihood: LikelihoodSpec, y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if likelihood.family == "gaussian" and y.ndim == 1:
        y = y[:, None]
    if len(y) != n:
        raise ValueError(f"{len(y)} targets for {n} inputs")
    return y


def log_density_matrix(spec: NetworkSpec, likelihood: LikelihoodSpec, samples, X, y) -> np.ndarray:
    """``log p(y_i | x_i, w_s)`` for every draw, shape ``(K, S, n_test)``."""
    x = _draws(samples)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("empty test set")
    y = _prep_y(likelihood, y, len(X))
    flat = x.reshape(-1, x.shape[-1])
    out = np.empty((flat.shape[0], len(X)))
    for i in range(0, flat.shape[0], CHUNK):
        out[i:i + CHUNK] = likelihood.log_density(forward(spec, flat[i:i + CHUNK], X), y)
    return out.reshape(x.shape[0], x.shape[1], len(X))


def lppd_from_logdens(ld) -> float:
    """Mean over test points of ``log(mean_s exp(ld[s, i]))`` for ``ld`` of shape ``(..., n_test)``."""
    ld = np.asarray(ld, dtype=np.float64)
    ld = ld.reshape(-1, ld.shape[-1])
    N, n = ld.shape
    if N == 0 or n == 0:
        raise ValueError("empty store or test set")
    m = ld.max(axis=0)
    e = np.exp(ld - m)
    per_point = [m[i] + math.log(math.fsum(e[:, i]) / N) for i in range(n)]
    return math.fsum(per_point) / n


def lppd(spec: NetworkSpec, likelihood: LikelihoodSpec, samples, X, y) -> float:
    return lppd_from_logdens(log_density_matrix(spec, likelihood, samples, X, y))


def predictive_mean(spec: NetworkSpec, samples, X) -> np.ndarray:
    """Mean network output over all draws, shape ``(n, o)``."""
    flat = _draws(samples).reshape(-1, spec.n_params)
    X = np.asarray(X, dtype=np.float64)
    total = np.zeros((len(X), spec.output_dim))
    for i in range(0, flat.shape[0], CHUNK):
        total += forward(spec, flat[i:i + CHUNK], X).sum(axis=0)
    return total / flat.shape[0]


def rmse(spec: NetworkSpec, samples, X, y) -> float:
    """RMSE of the posterior-mean prediction (on whatever scale ``y`` is given)."""
    y = np.asarray(y, dtype=np.float64).reshape(len(X), -1)
    r = predictive_mean(spec, samples, X) - y
    return float(np.sqrt(np.mean(r * r)))


def class_probabilities(spec: NetworkSpec, likelihood: LikelihoodSpec, samples, X) -> np.ndarray:
    """Posterior-mean class probabilities, ``(n, C)``."""
    flat = _draws(samples).reshape(-1, spec.n_params)
    X = np.asarray(X, dtype=np.float64)
    total = None
    for i in range(0, flat.shape[0], CHUNK):
        f = forward(spec, flat[i:i + CHUNK], X)
        if likelihood.family == "bernoulli_logit":
            p1 = 1.0 / (1.0 + np.exp(-f[..., 0]))
            p = np.stack([1 - p1, p1], axis=-1)
        elif likelihood.family == "categorical_logit":
            z = np.exp(f - f.max(-1, keepdims=True))
            p = z / z.sum(-1, keepdims=True)
        else:
            raise ValueError("accuracy needs a classification likelihood")
        total = p.sum(0) if total is None else total + p.sum(0)
    return total / flat.shape[0]


def accuracy(spec: NetworkSpec, likelihood: LikelihoodSpec, samples, X, y) -> float:
    labels = np.asarray(y).reshape(-1).astype(np.int64)
    pred = np.argmax(class_probabilities(spec, likelihood, samples, X), axis=-1)
    return float(np.mean(pred == labels))


@dataclass
class CumulativeCurve:
    k: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    curves: np.ndarray  # (n_orderings, K)

    def csv(self) -> str:
        rows = ["k,lppd_mean,lppd_sd"]
        rows += [f"{k},{m!r},{s!r}" for k, m, s in zip(self.k.tolist(), self.mean.tolist(), self.sd.tolist())]
        return "\n".join(rows) + "\n"


def cumulative_lppd_from_logdens(ld, n_orderings: int = 5, seed: int = 0) -> CumulativeCurve:
    """LPPD of the first ``j`` chains under random chain orderings; ``ld`` is ``(K, S, n_test)``."""
    ld = np.asarray(ld, dtype=np.float64)
    K = ld.shape[0]
    if n_orderings < 1:
        raise ValueError("need at least one ordering")
    if K < 2:
        raise ValueError("need at least two chains")
    rng = generator(seed, "eval/orderings")
    curves = np.empty((n_orderings, K))
    for r in range(n_orderings):
        order = rng.permutation(K)
        for j in range(1, K + 1):
            curves[r, j - 1] = lppd_from_logdens(ld[order[:j]])
    mean = curves.mean(0)
    sd = curves.std(0, ddof=1) if n_orderings > 1 else np.zeros(K)
    # every ordering ends on the full chain set; averaging equal floats can still drift by an ulp
    mean[-1], sd[-1] = curves[0, -1], 0.0
    return CumulativeCurve(np.arange(1, K + 1), mean, sd, curves)


def cumulative_lppd(spec: NetworkSpec, likelihood: LikelihoodSpec, samples, X, y,
                    n_orderings: int = 5, seed: int = 0) -> CumulativeCurve:
    return cumulative_lppd_from_logdens(log_density_matrix(spec, likelihood, samples, X, y), n_orderings, seed)


def saturation_ratio(curve: CumulativeCurve) -> tuple[float, float, float]:
    """Mean slopes over the first and last quarter of the curve and their ratio."""
    K = len(curve.k)
    q = max(1, K // 4)
    first = (curve.mean[q] - curve.mean[0]) / q
    last = (curve.mean[-1] - curve.mean[-1 - q]) / q
    return float(first), float(last), float(last / first) if first != 0 else float("inf")
