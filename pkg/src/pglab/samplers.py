"""MAP warmstart and gradient-based MCMC over batches of independent chains.

A *target* is any object with ``dim``, ``sample_prior(rng)`` and
``logp_and_grad(w)`` accepting weights of shape ``(K, d)``.
Chain states are always 2-D: row ``k`` belongs to chain ``k`` and consumes
random numbers only from ``rngs[k]``, so every chain is reproducible on its
own regardless of how many chains share the batch.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import rng as rngmod
from .store import SampleStore

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1000.0


@dataclass(frozen=True)
class ChainConfig:
    n_chains: int = 10
    warmup_steps: int = 500
    n_samples: int = 1000
    thinning: int = 1
    step_size: float = 0.05
    leapfrog_steps: int = 10
    kernel: str = "hmc"
    init: str = "map_warmstart"
    map_steps: int = 1000
    map_learning_rate: float = 1e-3
    map_method: str = "adam"
    adapt_step_size: bool = True
    target_accept: float | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("n_chains", "n_samples", "thinning", "leapfrog_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.warmup_steps < 0 or self.map_steps < 0:
            raise ValueError("warmup_steps and map_steps must be >= 0")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.kernel not in ("hmc", "mala"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.init not in ("prior_draw", "map_warmstart"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.map_method not in ("gd", "adam"):
            raise ValueError(f"unknown map_method {self.map_method!r}")

    @property
    def accept_target(self) -> float:
        if self.target_accept is not None:
            return self.target_accept
        return 0.8 if self.kernel == "hmc" else 0.6


class ChainState(NamedTuple):
    w: np.ndarray      # (K, d)
    logp: np.ndarray   # (K,)
    grad: np.ndarray   # (K, d)


class StepInfo(NamedTuple):
    accepted: np.ndarray
    accept_prob: np.ndarray
    divergent: np.ndarray


def init_state(target, w) -> ChainState:
    w = np.atleast_2d(np.asarray(w, dtype=np.float64)).copy()
    lp, g = target.logp_and_grad(w)
    return ChainState(w, np.asarray(lp, dtype=np.float64), np.asarray(g))


def _as_rngs(rngs, K) -> Sequence[np.random.Generator]:
    if isinstance(rngs, np.random.Generator):
        rngs = [rngs]
    if len(rngs) != K:
        raise ValueError(f"need one generator per chain ({K}), got {len(rngs)}")
    return rngs


def _normals(rngs, d) -> np.ndarray:
    return np.stack([g.standard_normal(d) for g in rngs])


def _uniforms(rngs) -> np.ndarray:
    return np.array([g.random() for g in rngs])


def _col(x, K) -> np.ndarray:
    return np.broadcast_to(np.asarray(x, dtype=np.float64), (K,))[:, None]


def _mh(state, prop_w, prop_lp, prop_g, log_ratio, rngs):
    log_ratio = np.where(np.isfinite(log_ratio), log_ratio, -np.inf)
    accept_prob = np.exp(np.minimum(log_ratio, 0.0))
    accepted = np.log(_uniforms(rngs)) < log_ratio
    w = np.where(accepted[:, None], prop_w, state.w)
    lp = np.where(accepted, prop_lp, state.logp)
    g = np.where(accepted[:, None], prop_g, state.grad)
    return ChainState(w, lp, g), accepted, accept_prob


def mala_step(state: ChainState, target, step_size, rngs):
    """One Metropolis-adjusted Langevin step per chain.

    Proposal ``w' = w + (h^2 / 2) grad log pi(w) + h xi``; the MH ratio
    includes both (asymmetric) proposal densities. Non-finite proposals are
    rejected.
    """
    K, d = state.w.shape
    rngs = _as_rngs(rngs, K)
    h = _col(step_size, K)
    xi = _normals(rngs, d)
    with np.errstate(over="ignore", invalid="ignore"):
        prop = state.w + 0.5 * h * h * state.grad + h * xi
        lp, g = target.logp_and_grad(prop)
        fwd = prop - state.w - 0.5 * h * h * state.grad
        bwd = state.w - prop - 0.5 * h * h * g
        log_q_ratio = (np.sum(fwd * fwd, -1) - np.sum(bwd * bwd, -1)) / (2.0 * h[:, 0] ** 2)
        log_ratio = lp - state.logp + log_q_ratio
    new, accepted, prob = _mh(state, prop, lp, g, log_ratio, rngs)
    return new, StepInfo(accepted, prob, np.zeros(K, dtype=bool))


def leapfrog(target, w, p, grad, step_size, n_steps: int):
    """Leapfrog integration with identity mass; returns ``(w, p, logp, grad)``."""
    eps = _col(step_size, w.shape[0])
    w = w.copy()
    p = p + 0.5 * eps * grad
    lp = None
    for i in range(n_steps):
        w = w + eps * p
        lp, grad = target.logp_and_grad(w)
        if i < n_steps - 1:
            p = p + eps * grad
    p = p + 0.5 * eps * grad
    return w, p, lp, grad


def hmc_step(state: ChainState, target, step_size, n_leapfrog: int, rngs):
    """One HMC transition per chain: full momentum refresh, leapfrog, MH on the energy error.

    Trajectories with ``|dH| > 1000`` (or non-finite energy) are rejected and
    flagged as divergent.
    """
    K, d = state.w.shape
    rngs = _as_rngs(rngs, K)
    p0 = _normals(rngs, d)
    with np.errstate(over="ignore", invalid="ignore"):
        w, p, lp, g = leapfrog(target, state.w, p0, state.grad, step_size, n_leapfrog)
        h0 = -state.logp + 0.5 * np.sum(p0 * p0, -1)
        h1 = -lp + 0.5 * np.sum(p * p, -1)
        dH = h1 - h0
    divergent = ~np.isfinite(dH) | (np.abs(dH) > DIVERGENCE_THRESHOLD)
    log_ratio = np.where(divergent, -np.inf, -dH)
    new, accepted, prob = _mh(state, w, lp, g, log_ratio, rngs)
    return new, StepInfo(accepted, prob, divergent)


class DualAveraging:
    """Per-chain dual-averaging step-size adaptation (Hoffman & Gelman 2014)."""

    def __init__(self, step_size, target: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.log_eps = np.log(np.asarray(step_size, dtype=np.float64)).copy()
        self.mu = np.log(10.0) + self.log_eps
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.hbar = np.zeros_like(self.log_eps)
        self.log_eps_bar = np.zeros_like(self.log_eps)
        self.t = 0

    @property
    def step_size(self) -> np.ndarray:
        return np.exp(self.log_eps)

    @property
    def final_step_size(self) -> np.ndarray:
        return np.exp(self.log_eps_bar) if self.t else np.exp(self.log_eps)

    def update(self, accept_prob) -> np.ndarray:
        self.t += 1
        t = self.t
        eta = 1.0 / (t + self.t0)
        self.hbar = (1 - eta) * self.hbar + eta * (self.target - accept_prob)
        self.log_eps = self.mu - np.sqrt(t) / self.gamma * self.hbar
        w = t ** (-self.kappa)
        self.log_eps_bar = w * self.log_eps + (1 - w) * self.log_eps_bar
        return self.step_size


def map_fit(target, w0, steps: int, lr: float, method: str = "gd", return_trace: bool = False):
    """Maximise the log-posterior from ``w0`` (shape ``(d,)`` or ``(K, d)``).

    ``method="gd"`` is fixed-step gradient ascent; ``"adam"`` uses Adam with
    the same learning rate. Returns the best iterate seen per chain, and with
    ``return_trace`` also the best-so-far log-posterior trace (monotone).
    A non-finite gradient stops the affected chain at its last finite iterate.
    """
    single = np.ndim(w0) == 1
    w = np.atleast_2d(np.asarray(w0, dtype=np.float64)).copy()
    lp, g = target.logp_and_grad(w)
    if not np.all(np.isfinite(lp)):
        raise ValueError("initial log-posterior is not finite")
    best_w, best_lp = w.copy(), lp.copy()
    active = np.ones(len(w), dtype=bool)
    trace = [best_lp.copy()]
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for t in range(1, steps + 1):
        if method == "adam":
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            upd = lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        else:
            upd = lr * g
        w = np.where(active[:, None], w + upd, w)
        with np.errstate(over="ignore", invalid="ignore"):
            lp, g = target.logp_and_grad(w)
        bad = ~(np.isfinite(lp) & np.all(np.isfinite(g), axis=-1))
        if np.any(bad & active):
            warnings.warn("non-finite gradient during MAP fit; stopping affected chains", RuntimeWarning)
            active &= ~bad
            w = np.where(bad[:, None], best_w, w)
            g = np.where(bad[:, None], 0.0, g)
        improved = active & (lp > best_lp)
        best_w[improved] = w[improved]
        best_lp[improved] = lp[improved]
        if return_trace:
            trace.append(best_lp.copy())
        if not active.any():
            break
    out = best_w[0] if single else best_w
    if return_trace:
        tr = np.array(trace)
        return out, (tr[:, 0] if single else tr)
    return out


def _run_group(target, cfg: ChainConfig, chains: Sequence[int], rngs, store: SampleStore):
    K = len(chains)
    init = np.stack([target.sample_prior(g) for g in rngs])
    warm = None
    if cfg.init == "map_warmstart" and cfg.map_steps > 0:
        init = map_fit(target, init, cfg.map_steps, cfg.map_learning_rate, cfg.map_method)
        warm = init.copy()
    state = init_state(target, init)
    failed = ~np.isfinite(state.logp)
    step = np.full(K, cfg.step_size)

    def transition(state, eps):
        if cfg.kernel == "hmc":
            return hmc_step(state, target, eps, cfg.leapfrog_steps, rngs)
        return mala_step(state, target, eps, rngs)

    da = DualAveraging(step, cfg.accept_target) if cfg.adapt_step_size and cfg.warmup_steps else None
    warm_acc = np.zeros(K)
    for _ in range(cfg.warmup_steps):
        state, info = transition(state, da.step_size if da else step)
        warm_acc += info.accepted
        if da:
            da.update(info.accept_prob)
    if da:
        step = da.final_step_size
    n_acc = np.zeros(K)
    n_div = np.zeros(K, dtype=int)
    draws = np.full((K, cfg.n_samples, target.dim), np.nan)
    for s in range(cfg.n_samples):
        for _ in range(cfg.thinning):
            state, info = transition(state, step)
            n_acc += info.accepted
            n_div += info.divergent
        failed |= ~np.isfinite(state.logp)
        draws[:, s] = np.where(failed[:, None], np.nan, state.w)
    n_iter = cfg.n_samples * cfg.thinning
    for i, k in enumerate(chains):
        store.write_chain(k, draws[i])
        meta = {
            "chain": int(k),
            "acceptance_rate": float(n_acc[i] / n_iter),
            "warmup_acceptance_rate": float(warm_acc[i] / cfg.warmup_steps) if cfg.warmup_steps else None,
            "warmup_steps": cfg.warmup_steps,
            "init": cfg.init,
            "step_size": float(step[i]),
            "divergences": int(n_div[i]),
            "failed": bool(failed[i]),
        }
        if warm is not None:
            meta["warmstart"] = warm[i].tolist()
        store.chain_meta[k] = meta


def run_chains(target, cfg: ChainConfig, layer_shapes=None, chain_seeds=None, threads: int = 1,
               config_hash: bytes | None = None) -> SampleStore:
    """Run ``cfg.n_chains`` independent chains and collect them in a :class:`SampleStore`.

    Chain ``k`` draws from the ``"chains"`` random stream with index ``k``
    of ``cfg.seed`` (see :mod:`pglab.rng`), or from ``chain_seeds[k]`` as
    master seed if given. ``threads > 1`` splits the chains into groups run
    concurrently; results do not depend on the grouping.
    """
    if layer_shapes is None:
        spec = getattr(target, "spec", None)
        if spec is not None:
            layer_shapes = [(r, c, b) for (r, c), b in zip(spec.shapes, spec.layer_bias)]
        else:
            layer_shapes = [(1, target.dim, False)]
    store = SampleStore.empty(cfg.n_chains, cfg.n_samples, layer_shapes, seed=cfg.seed,
                              **({"config_hash": config_hash} if config_hash else {}))
    if chain_seeds is None:
        rngs = rngmod.chain_generators(cfg.seed, cfg.n_chains)
    else:
        rngs = [rngmod.generator(s, "chains", 0) for s in chain_seeds]
    chains = list(range(cfg.n_chains))
    threads = max(1, min(int(threads), cfg.n_chains))
    groups = [chains[i::threads] for i in range(threads)]
    if threads == 1:
        _run_group(target, cfg, chains, rngs, store)
    else:
        with ThreadPoolExecutor(threads) as pool:
            futs = [pool.submit(_run_group, target, cfg, g, [rngs[k] for k in g], store) for g in groups]
            for f in futs:
                f.result()
    for k in store.failed_chains:
        log.warning("chain %d failed (non-finite log-posterior)", k)
    return store


def config_dict(cfg: ChainConfig) -> dict:
    return asdict(cfg)


def trap_probability(first_layer_sampler, x: float, n_draws: int, rng: np.random.Generator):
    """Monte-Carlo probability that every first-layer pre-activation is negative.

    ``first_layer_sampler(rng, n)`` returns an ``(n, M)`` array of first-layer
    weights for a scalar input ``x > 0``. Returns ``(estimate, binomial SE)``.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    if not x > 0:
        raise ValueError("x must be positive")
    W = np.asarray(first_layer_sampler(rng, n_draws), dtype=np.float64)
    if W.ndim == 1:
        W = W[:, None]
    trapped = np.all(W * x < 0.0, axis=1)
    p = float(trapped.mean())
    se = float(np.sqrt(max(p * (1 - p), 0.0) / n_draws))
    return p, se
