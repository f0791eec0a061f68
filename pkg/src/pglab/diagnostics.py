"""Statistical checks over posterior draws with chain-batched Monte-Carlo errors.

Draws are ``(K, S, d)`` arrays (or a :class:`SampleStore`). Standard errors
come from the spread of per-chain means: ``sd(chain means) / sqrt(K)``. With
a single chain (or iid draws given as ``(N, d)``) the draws are cut into
contiguous batches instead.

Every reported number is a leaf ``{"value", "se" | "tol", "pass"}``. ``pass``
is ``|value - target| <= max(3 se, tol)`` when a target exists and ``None``
for purely descriptive leaves.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import norm

from .network import NetworkSpec, unflatten
from .special import beta_cdf, ks_test

N_BATCHES = 20
SECTIONS = ("balancedness", "dirichlet", "moments", "conformity", "covariance", "marginals")


# --- plumbing ---

def as_chains(samples, n_batches: int = N_BATCHES) -> np.ndarray:
    """View draws as ``(K, S, ...)`` with ``K >= 2`` batches suitable for SEs."""
    x = np.asarray(getattr(samples, "samples", samples), dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.shape[0] >= 2:
        return x
    S = x.shape[1]
    B = min(n_batches, S)
    if B < 2:
        raise ValueError("need at least two draws for a standard error")
    usable = (S // B) * B
    return x[0, :usable].reshape(B, S // B, *x.shape[2:])


def batch_mean(values) -> tuple[np.ndarray, np.ndarray]:
    """Mean of a ``(K, S, ...)`` quantity and its between-batch standard error."""
    v = np.asarray(values, dtype=np.float64)
    cm = v.mean(axis=1)
    K = cm.shape[0]
    return cm.mean(axis=0), cm.std(axis=0, ddof=1) / math.sqrt(K)


def jackknife(stat, batches: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full-sample statistic and delete-one-batch jackknife SE; ``batches`` is ``(B, n, ...)``."""
    B = batches.shape[0]
    pooled = batches.reshape(-1, *batches.shape[2:])
    full = np.asarray(stat(pooled))
    loo = np.stack([stat(np.delete(batches, b, axis=0).reshape(-1, *batches.shape[2:])) for b in range(B)])
    se = np.sqrt((B - 1) / B * np.sum((loo - loo.mean(0)) ** 2, axis=0))
    return full, se


def leaf(value, se=None, tol=None, target=None) -> dict:
    """One report entry; scalars only."""
    value = float(value)
    out = {"value": value}
    if se is not None:
        out["se"] = float(se)
    if tol is not None:
        out["tol"] = float(tol)
    if se is None and tol is None:
        out["tol"] = 0.0
    if target is None:
        out["pass"] = None
    else:
        out["target"] = float(target)
        allowed = max(3.0 * (se or 0.0), tol or 0.0)
        out["pass"] = bool(np.isfinite(value) and abs(value - target) <= allowed)
    return out


def band_leaf(value, lo, hi) -> dict:
    """Deterministic interval check, e.g. a slope range."""
    return {"value": float(value), "tol": float((hi - lo) / 2), "target": float((hi + lo) / 2),
            "pass": bool(lo <= value <= hi)}


def iter_leaves(node):
    if isinstance(node, dict):
        if "value" in node and "pass" in node:
            yield node
        else:
            for v in node.values():
                yield from iter_leaves(v)
    elif isinstance(node, list):
        for v in node:
            yield from iter_leaves(v)


def all_pass(node) -> bool:
    """Conjunction of every non-null pass flag below ``node``."""
    return all(l["pass"] for l in iter_leaves(node) if l["pass"] is not None)


def build_report(meta: dict, sections: dict) -> dict:
    report = {"meta": dict(meta)}
    for name in SECTIONS:
        report[name] = sections.get(name, {"status": "not_run"})
    report["meta"]["all_pass"] = all_pass({k: v for k, v in report.items() if k != "meta"})
    return report


def _tau(prior, n_layers):
    return np.broadcast_to(np.asarray(getattr(prior, "tau", prior), dtype=np.float64), (n_layers,))


# --- balancedness ---

def layer_sq_norms(spec: NetworkSpec, samples) -> np.ndarray:
    """``|W_l|_F^2`` for every draw and affine layer, shape ``(K, S, L)``."""
    x = as_chains(samples)
    return np.stack([np.sum(W**2, axis=(-2, -1)) for W, _ in unflatten(spec, x)], axis=-1)


def balancedness_report(spec: NetworkSpec, samples, prior, pure_prior: bool = False) -> dict:
    """Layer balance ``B_l = tau_l^-2 E|W_l|^2 - d_l`` and adjacent residuals ``B_l - B_{l+1}``.

    Residuals should vanish for any stationary posterior of a bias-free
    homogeneous network; the ``B_l`` themselves vanish only under the prior,
    so they are tested only when ``pure_prior`` is set. With equal ``tau``
    the raw Frobenius gaps ``E|W_l|^2 - E|W_{l+1}|^2`` are compared with
    ``tau^2 (d_l - d_{l+1})``.
    """
    L = spec.n_layers
    tau = _tau(prior, L)
    d = np.asarray(spec.weight_counts, dtype=np.float64)
    sq = layer_sq_norms(spec, samples)
    B = sq / tau**2 - d
    mean_B, se_B = batch_mean(B)
    out = {"layers": [leaf(mean_B[l], se_B[l], target=0.0 if pure_prior else None) for l in range(L)],
           "residuals": []}
    if L < 2:
        return out
    diff = B[..., :-1] - B[..., 1:]
    mr, sr = batch_mean(diff)
    out["residuals"] = [leaf(mr[l], sr[l], target=0.0) for l in range(L - 1)]
    if np.allclose(tau, tau[0]):
        gap = sq[..., :-1] - sq[..., 1:]
        mg, sg = batch_mean(gap)
        out["frobenius_gaps"] = [leaf(mg[l], sg[l], target=tau[0] ** 2 * (d[l] - d[l + 1])) for l in range(L - 1)]
    return out


def neuronwise_balance(spec: NetworkSpec, samples, prior) -> list[dict]:
    """Per-unit residuals ``tau_l^-2 E|a_j|^2 - tau_{l+1}^-2 E|v_j|^2 - (d_in - d_out)``.

    One entry per hidden layer with the per-unit leaves and the raw
    ``(K, S, M)`` values used, so layer sums can be cross-checked.
    """
    tau = _tau(prior, spec.n_layers)
    x = as_chains(samples)
    layers = unflatten(spec, x)
    out = []
    for l in range(len(spec.widths)):
        W_in, W_out = layers[l][0], layers[l + 1][0]
        d_in, d_out = W_in.shape[-1], W_out.shape[-2]
        r = np.sum(W_in**2, -1) / tau[l] ** 2 - np.sum(W_out**2, -2) / tau[l + 1] ** 2 - (d_in - d_out)
        m, s = batch_mean(r)
        out.append({"layer": l, "units": [leaf(m[j], s[j], target=0.0) for j in range(r.shape[-1])], "raw": r})
    return out


# --- Dirichlet reallocation ---

def dirichlet_gof(rho, alpha: float, batches: int = N_BATCHES, assert_fit: bool = True) -> dict:
    """KS fit of each simplex coordinate to ``Beta(alpha, (k-1) alpha)`` plus pairwise dependence.

    The symmetric Dirichlet has pairwise covariance ``-alpha^2 / (a0^2 (a0 + 1))``
    and correlation ``-1 / (k - 1)`` with ``a0 = k alpha``; both are reported
    against pooled pair estimates with batch SEs. With ``assert_fit`` off the
    pass flags are cleared so the fit is reported without being asserted.
    """
    rho = np.asarray(rho, dtype=np.float64)
    if rho.ndim != 2:
        raise ValueError("rho must be (N, k)")
    N, k = rho.shape
    if k < 2:
        raise ValueError("need k >= 2")
    if np.any(rho < -1e-12) or np.max(np.abs(rho.sum(1) - 1)) > 1e-9:
        raise ValueError("rows are not on the simplex")
    cdf = beta_cdf(alpha, (k - 1) * alpha)
    ks = [ks_test(rho[:, j], cdf) for j in range(k)]
    a0 = k * alpha
    cov_t = -alpha**2 / (a0**2 * (a0 + 1))
    corr_t = -1.0 / (k - 1)
    x = as_chains(rho[None], batches)

    def pair_stats(sub):
        c = sub - sub.mean(0)
        C = c.T @ c / sub.shape[0]
        sd = np.sqrt(np.diag(C))
        iu = np.triu_indices(k, 1)
        return np.array([C[iu].mean(), (C / np.outer(sd, sd))[iu].mean()])

    full, se = jackknife(pair_stats, x)
    out = {
        "alpha": alpha,
        "k": k,
        "ks": [{"D": leaf(D, tol=0.0), "p_value": {"value": float(p), "tol": 0.01, "pass": bool(p > 0.01)}}
               for D, p in ks],
        "pair_covariance": leaf(full[0], se[0], target=cov_t),
        "pair_correlation": leaf(full[1], se[1], tol=1e-12, target=corr_t),
    }
    if not assert_fit:
        for l in iter_leaves(out):
            l["pass"] = None
    return out


def compare_alphas(rho, alphas) -> dict:
    """Fit against several concentrations and name the one with the smallest worst-coordinate KS distance."""
    fits = {f"{a:g}": dirichlet_gof(rho, a, assert_fit=False) for a in alphas}
    worst = {k: max(c["D"]["value"] for c in v["ks"]) for k, v in fits.items()}
    return {"fits": fits, "better_fit": min(worst, key=worst.get), "max_ks": worst}


# --- constrained moments of 1-M-1 linear nets ---

def constrained_moments(samples, M: int, beta: float, tau: float = 1.0) -> dict:
    """Moments of ``(w_1m, w_2m)`` for the 1-M-1 product network.

    The exact posterior mean is zero (sign flips), so variances and
    covariances are raw second moments, which stay unbiased when chains sit
    unevenly in sign-flipped modes. Leaves are per unit and pooled over units.
    """
    x = as_chains(samples)
    if x.shape[-1] != 2 * M:
        raise ValueError(f"expected d = 2M = {2 * M}, got {x.shape[-1]}")
    w1, w2 = x[..., :M], x[..., M:]
    m1, s1 = batch_mean(w1)
    m2, s2 = batch_mean(w2)
    v1, sv1 = batch_mean(w1**2)
    v2, sv2 = batch_mean(w2**2)
    c, sc = batch_mean(w1 * w2)
    pooled_var, pooled_var_se = batch_mean(np.concatenate([w1**2, w2**2], -1).mean(-1))
    pooled_cov, pooled_cov_se = batch_mean((w1 * w2).mean(-1))
    return {
        "M": M,
        "mean_in": [leaf(m1[j], s1[j], target=0.0) for j in range(M)],
        "mean_out": [leaf(m2[j], s2[j], target=0.0) for j in range(M)],
        "var_in": [leaf(v1[j], sv1[j]) for j in range(M)],
        "var_out": [leaf(v2[j], sv2[j]) for j in range(M)],
        "cov": [leaf(c[j], sc[j], target=beta / M) for j in range(M)],
        "var_pooled": leaf(pooled_var, pooled_var_se),
        "var_excess": leaf(abs(pooled_var - tau**2), pooled_var_se),
        # the unit sum is the fitted slope, which carries data noise the MC SE omits
        "cov_pooled": leaf(pooled_cov, pooled_cov_se),
    }


def monotone_decrease(values, ses=None) -> dict:
    values = [float(v) for v in values]
    ok = all(b < a for a, b in zip(values, values[1:]))
    return {"value": values[-1], "tol": 0.0, "sequence": values, "pass": bool(ok)}


# --- moment scaling over the manifold ---

def _sqrt_rho_stats(sr: np.ndarray):
    # sr: (B, n, 2, k) square-root coefficients of two independent blocks
    k = sr.shape[-1]
    mean = sr.mean(axis=(1, 2, 3))
    var1 = sr.var(axis=1).mean(axis=(-2, -1))
    total = sr.sum(-1)
    var_tot = total.var(axis=1).mean(-1)
    within = (var_tot - k * var1) / (k * (k - 1))
    c = total - total.mean(axis=1, keepdims=True)
    between = np.mean(c[..., 0] * c[..., 1], axis=1) / k**2
    return mean, within, between


def loglog_slope(Ms, values, ses) -> tuple[float, float]:
    """Weighted least-squares slope of ``log |values|`` on ``log M`` and its standard error."""
    x = np.log(np.asarray(Ms, dtype=np.float64))
    v = np.abs(np.asarray(values, dtype=np.float64))
    y = np.log(v)
    w = (v / np.asarray(ses, dtype=np.float64)) ** 2  # delta method: sd(log v) = se / v
    W = np.diag(w)
    A = np.column_stack([np.ones_like(x), x])
    cov = np.linalg.inv(A.T @ W @ A)
    coef = cov @ A.T @ W @ y
    return float(coef[1]), float(math.sqrt(cov[1, 1]))


def block_moment_scaling(M_grid, n_draws: int, rng: np.random.Generator, omega_norm: float = 1.0,
                         batches: int = N_BATCHES, chunk: int = 20_000) -> dict:
    """Scaling of weight moments on the manifold as the block size ``k = M`` grows.

    Each ``M`` uses two independent blocks of ``M`` copies with Gaussian
    normalised reallocations. A copy's weight magnitude is
    ``sqrt(rho) |omega*|``; reported per ``M`` are its mean, the within-block
    pair covariance (pooled over pairs through the variance of the block sum)
    and the between-block covariance, each with batch SEs, plus log-log
    slopes of the first two.
    """
    Ms = [int(m) for m in M_grid]
    if len(Ms) < 3:
        raise ValueError("need at least three grid points")
    per_batch = n_draws // batches
    rows = []
    for M in Ms:
        stats = []
        for b in range(batches):
            parts = []
            left = per_batch
            while left:
                n = min(chunk, left)
                v = rng.standard_normal((n, 2, M))
                parts.append(np.abs(v) / np.sqrt(np.sum(v * v, -1, keepdims=True)))
                left -= n
            stats.append(_sqrt_rho_stats(np.concatenate(parts)[None]))
        mean, within, between = (np.concatenate(s) for s in zip(*stats))
        mean = mean * omega_norm
        within = within * omega_norm**2
        between = between * omega_norm**2
        se = lambda a: a.std(ddof=1) / math.sqrt(batches)
        rows.append({"M": M, "mean": leaf(mean.mean(), se(mean)), "within_cov": leaf(within.mean(), se(within)),
                     "between_cov": leaf(between.mean(), se(between), target=0.0)})
    ms, mse = loglog_slope(Ms, [r["mean"]["value"] for r in rows], [r["mean"]["se"] for r in rows])
    cs, cse = loglog_slope(Ms, [r["within_cov"]["value"] for r in rows], [r["within_cov"]["se"] for r in rows])
    return {
        "grid": rows,
        "mean_slope": {**band_leaf(ms, -0.6, -0.4), "ci95": [ms - 1.96 * mse, ms + 1.96 * mse]},
        "cov_slope": {**band_leaf(cs, -2.3, -1.7), "ci95": [cs - 1.96 * cse, cs + 1.96 * cse]},
    }


# --- prior conformity ---

def prior_conformity_test(coords, tau: float, band=None) -> dict:
    """Variance ratios ``Var / tau^2`` and KS normality of kernel coordinates.

    ``coords`` is ``(N, r)`` or ``(K, S, r)``. Each ratio is tested against 1
    at 3 SE; ``band=(lo, hi)`` adds a deterministic interval check per ratio.
    Per-coordinate ratios depend on the chosen kernel basis, so the
    eigenvalues of the coordinate covariance (the extreme variances over all
    unit kernel directions) are reported too, with jackknife SEs and the same
    band check.
    """
    x = as_chains(coords)
    r = x.shape[-1]
    if r == 0:
        raise ValueError("no kernel directions to test")
    pooled_mean = x.reshape(-1, r).mean(0)
    ratio, se = batch_mean((x - pooled_mean) ** 2 / tau**2)
    flat = x.reshape(-1, r)
    out = {"tau": tau, "dims": []}
    for j in range(r):
        D, p = ks_test(flat[:, j], lambda t: norm.cdf(t, scale=tau))
        entry = {"ratio": leaf(ratio[j], se[j], target=1.0), "ks_D": leaf(D, tol=0.0),
                 "ks_p": {"value": p, "tol": 0.0, "pass": None}}
        if band is not None:
            entry["in_band"] = band_leaf(ratio[j], *band)
        out["dims"].append(entry)

    def spectrum(v):
        c = v - v.mean(0)
        return np.linalg.eigvalsh(c.T @ c / len(c)) / tau**2

    eig, eig_se = jackknife(spectrum, x)
    out["spectrum"] = []
    for j in range(r):
        entry = {"eigenvalue": leaf(eig[j], eig_se[j])}
        if band is not None:
            entry["in_band"] = band_leaf(eig[j], *band)
        out["spectrum"].append(entry)
    return out


# --- covariance and marginals ---

def sample_covariance(samples, subset=None) -> dict:
    """Pooled covariance and correlation with chain-batched SEs of the covariance entries.

    Zero-variance coordinates get correlation 0 and are listed in ``zero_var``.
    """
    x = as_chains(samples)
    if subset is not None:
        x = x[..., list(subset)]
    if x.shape[0] * x.shape[1] < 2:
        raise ValueError("need at least two samples")
    c = x - x.reshape(-1, x.shape[-1]).mean(0)
    prods = c[..., :, None] * c[..., None, :]
    cov, se = batch_mean(prods)
    sd = np.sqrt(np.diag(cov))
    zero = sd == 0
    denom = np.outer(np.where(zero, 1.0, sd), np.where(zero, 1.0, sd))
    corr = np.where(zero[:, None] | zero[None, :], 0.0, cov / denom)
    return {"cov": cov, "cov_se": se, "corr": corr, "zero_var": np.flatnonzero(zero)}


def covariance_section(samples, subset=None, planted=None) -> dict:
    res = sample_covariance(samples, subset)
    n = res["cov"].shape[0]
    return {"entries": [[leaf(res["cov"][i, j], res["cov_se"][i, j],
                              target=None if planted is None else planted[i][j]) for j in range(n)] for i in range(n)],
            "corr": res["corr"].tolist(), "zero_var": res["zero_var"].tolist()}


def marginal_grids(samples, singles=(), pairs=(), bins: int = 50, ranges=None) -> dict:
    """Normalised 1-D and 2-D histograms ``counts / (N_in * bin area)``.

    ``ranges`` maps a flat index to ``(lo, hi)``; by default the pooled data
    range is used so every draw is counted. Counts are integers, so grids do
    not depend on the order of chains.
    """
    x = np.asarray(getattr(samples, "samples", samples), dtype=np.float64)
    flat = x.reshape(-1, x.shape[-1])
    if not singles and not pairs:
        raise ValueError("empty selection")
    ranges = dict(ranges or {})

    def edges(i):
        lo, hi = ranges.get(i, (flat[:, i].min(), flat[:, i].max()))
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        return np.linspace(lo, hi, bins + 1)

    out = {"singles": {}, "pairs": {}}
    for i in singles:
        e = edges(i)
        counts, _ = np.histogram(flat[:, i], bins=e)
        n_in = counts.sum()
        out["singles"][str(i)] = {"edges": e, "density": counts / (max(n_in, 1) * np.diff(e)),
                                  "coverage": n_in / flat.shape[0]}
    for i, j in pairs:
        ex, ey = edges(i), edges(j)
        counts, _, _ = np.histogram2d(flat[:, i], flat[:, j], bins=[ex, ey])
        n_in = counts.sum()
        area = np.outer(np.diff(ex), np.diff(ey))
        out["pairs"][f"{i},{j}"] = {"x_edges": ex, "y_edges": ey, "density": counts / (max(n_in, 1) * area),
                                    "coverage": n_in / flat.shape[0]}
    return out


def grid_integral(grid: dict) -> float:
    if "edges" in grid:
        return float(np.sum(grid["density"] * np.diff(grid["edges"])))
    area = np.outer(np.diff(grid["x_edges"]), np.diff(grid["y_edges"]))
    return float(np.sum(grid["density"] * area))


def grid_rows(grid: dict) -> list[tuple]:
    """Long-format rows for CSV export: ``(x, density)`` or ``(x, y, density)`` at bin centres."""
    if "edges" in grid:
        c = 0.5 * (grid["edges"][1:] + grid["edges"][:-1])
        return list(zip(c.tolist(), grid["density"].tolist()))
    cx = 0.5 * (grid["x_edges"][1:] + grid["x_edges"][:-1])
    cy = 0.5 * (grid["y_edges"][1:] + grid["y_edges"][:-1])
    return [(cx[a], cy[b], grid["density"][a, b]) for a in range(cx.size) for b in range(cy.size)]


def to_jsonable(node):
    """Convert numpy containers in a report to plain JSON types."""
    if isinstance(node, dict):
        return {str(k): to_jsonable(v) for k, v in node.items()}
    if isinstance(node, (list, tuple)):
        return [to_jsonable(v) for v in node]
    if isinstance(node, np.ndarray):
        return to_jsonable(node.tolist())
    if isinstance(node, (np.floating, float)):
        v = float(node)
        return v if math.isfinite(v) else str(v)
    if isinstance(node, (np.integer,)):
        return int(node)
    if isinstance(node, np.bool_):
        return bool(node)
    return node
