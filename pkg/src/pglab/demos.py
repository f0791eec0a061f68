"""Self-contained desk-scale experiments behind ``pglab demo <name>``.

Every demo writes into ``<base>/demo-<name>-s<seed>/`` a ``demo.json``
summary plus CSV tables or grids, and keeps any sampled runs as ordinary
run directories underneath so ``pglab diagnose`` and ``pglab eval`` work on
them too.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import diagnostics as dg
from . import model as mdl
from . import runs
from . import store as stmod
from . import symmetry as sym
from .geometry import kernel_basis, project_samples
from .network import NetworkSpec, batch_jacobian
from .rng import generator
from .samplers import ChainConfig, run_chains, trap_probability

DEMOS = ("onemone", "kernel-projection", "manifold-dirichlet", "balancedness", "trap")


class UnknownDemoError(ValueError):
    def __init__(self, name: str):
        super().__init__(f"unknown demo {name!r}; available demos: {', '.join(DEMOS)}")


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header] + [",".join(v if isinstance(v, str) else repr(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _config(text: str, seed: int) -> cfgmod.RunConfig:
    return cfgmod.parse(text).with_seed(seed)


# --- onemone ---

ONEMONE = """
network.widths = {M}
network.activation = identity
prior.tau = {tau}
likelihood.sigma2 = 0.01
data.source = synthetic
data.slope = 1.0
data.noise_sd = 0.1
data.n = 20
sampler.n_chains = 4
sampler.warmup_steps = 1000
sampler.n_samples = 2500
sampler.leapfrog_steps = 10
sampler.init = prior_draw
diagnostics.sections = moments, marginals
diagnostics.bins = 60
"""


def onemone(out: Path, seed: int, threads: int, echo) -> dict:
    rows, summary = [], {}
    for M in (1, 4, 16):
        for tau in (0.25, 1.0):
            cfg = _config(ONEMONE.format(M=M, tau=tau), seed)
            run_dir = runs.sample(cfg, out, threads, echo=lambda *_: None)
            report = runs.diagnose(run_dir)
            run = runs.load_run(run_dir)
            grid = dg.marginal_grids(run.store.samples, pairs=[(0, M)], bins=60,
                                     ranges={0: (-3.0, 3.0), M: (-3.0, 3.0)})["pairs"][f"0,{M}"]
            name = f"onemone_M{M}_tau{tau}.csv"
            runs.write_grid_csv(out / name, grid)
            mom = report["moments"]
            rows.append((M, tau, mom["var_pooled"]["value"], mom["cov_pooled"]["value"], run_dir.name, name))
            summary[f"M{M}_tau{tau}"] = {"run": run_dir.name, "grid": name, "var_pooled": mom["var_pooled"],
                                         "cov_pooled": mom["cov_pooled"]}
            echo(f"M={M:2d} tau={tau:<4}  E[w1 w2]={mom['cov_pooled']['value']:.4f}  "
                 f"E[w^2]={mom['var_pooled']['value']:.4f}  grid {name}")
    _write_csv(out / "onemone_summary.csv", "M,tau,var_pooled,cov_pooled,run,grid", rows)
    return summary


# --- kernel projection on the conjugate 1-2-1 model ---

CONJUGATE = """
network.widths = 2
prior.tau = 1.0
likelihood.sigma2 = 0.01
data.source = synthetic
data.slope = 1.0
data.noise_sd = 0.1
data.n = 20
data.x_low = 0.1
data.x_high = 1.0
sampler.n_chains = 10
sampler.warmup_steps = 500
sampler.n_samples = 4000
sampler.leapfrog_steps = 10
sampler.init = prior_draw
diagnostics.sections = conformity, covariance, marginals
"""


def symmetric_map(x, y, sigma2: float) -> np.ndarray:
    """Mode of the 1-2-1 posterior on the symmetric ray ``a = b = c = d = s > 0`` for inputs ``x > 0``.

    There ``f(x) = 2 s^2 x`` and the stationarity condition gives
    ``s^2 = (x.y - sigma2) / (2 x.x)``.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    s2 = (x @ y - sigma2) / (2 * (x @ x))
    if not s2 > 0:
        raise ValueError("no symmetric mode with positive weights for this data")
    return np.full(4, np.sqrt(s2))


def conjugate_posterior_samples(x, y, sigma2: float, cfg: ChainConfig, threads: int = 1) -> stmod.SampleStore:
    """Exact-conditional posterior draws of the 1-2-1 model in flat order ``(b, d, a, c)``.

    ``(b, d)`` are sampled by MCMC on their marginal; ``(a, c)`` are then
    drawn from the Gaussian conditional using the ``conjugate/conditional``
    stream, one generator per chain.
    """
    target = mdl.Conjugate121Marginal(x, y, sigma2)
    bd = run_chains(target, cfg, threads=threads)
    K, S, _ = bd.samples.shape
    mu, cov = mdl.conjugate_121_conditional(bd.samples[..., 0], bd.samples[..., 1], x, y, sigma2)
    L = np.linalg.cholesky(cov)
    z = np.stack([generator(cfg.seed, "conjugate/conditional", k).standard_normal((S, 2)) for k in range(K)])
    ac = mu + (L @ z[..., None])[..., 0]
    spec = mdl.conjugate_121_spec()
    st = stmod.SampleStore.for_spec(spec, np.concatenate([bd.samples, ac], -1), seed=cfg.seed,
                                    chain_meta=bd.chain_meta)
    return st


def kernel_projection_check(x, y, sigma2: float, samples, tau: float = 1.0, band=(0.8, 1.2)) -> dict:
    """Project conjugate-model draws on ker J at the symmetric mode and compare with quadrature.

    Returns the conformity report, the quadrature agreement leaves and the
    basis used.
    """
    spec = mdl.conjugate_121_spec()
    w_ref = symmetric_map(x, y, sigma2)
    bundle = kernel_basis(batch_jacobian(spec, w_ref, np.asarray(x).reshape(-1, 1)))
    Z = bundle.Z
    samples = np.asarray(getattr(samples, "samples", samples))
    coords = project_samples(samples, w_ref, Z).reshape(samples.shape[0], samples.shape[1], -1)
    conformity = dg.prior_conformity_test(coords, tau, band)
    _, cov_q, _ = mdl.conjugate_121_quadrature(x, y, sigma2)
    proj = Z.T @ cov_q @ Z / tau**2
    oracle, oracle_eig = np.diag(proj), np.linalg.eigvalsh(proj)
    agreement = [dg.leaf(d["ratio"]["value"], d["ratio"]["se"], target=o) for d, o in zip(conformity["dims"], oracle)]
    agreement += [dg.leaf(e["eigenvalue"]["value"], e["eigenvalue"]["se"], target=o)
                  for e, o in zip(conformity["spectrum"], oracle_eig)]
    return {"w_ref": w_ref, "Z": Z, "rank": bundle.rank, "coords": coords, "conformity": conformity,
            "oracle_ratio": oracle, "oracle_eigenvalues": oracle_eig, "oracle_agreement": agreement}


def kernel_projection(out: Path, seed: int, threads: int, echo) -> dict:
    cfg = _config(CONJUGATE, seed)
    X, y = cfg.synthetic_task().generate()
    x = X[:, 0]
    sigma2 = cfg["likelihood"]["sigma2"]
    store = conjugate_posterior_samples(x, y, sigma2, cfg.chain_config(), threads)
    resolved = runs.resolve(cfg, runs.load_data(cfg))
    run_dir = out / resolved.run_id()
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(resolved.serialize(), encoding="utf-8")
    store.config_hash = resolved.hash()
    stmod.save(store, run_dir / "samples.bnns")
    runs.write_json(run_dir / "chains.json", store.chain_meta)
    chk = kernel_projection_check(x, y, sigma2, store.samples)
    np.savez(run_dir / "projection.npz", w_ref=chk["w_ref"], Z=chk["Z"], tau=1.0, band=np.array([0.8, 1.2]))
    report = runs.diagnose(run_dir)
    # image direction(s) complete the basis; emit both coordinate sets per draw
    spec = mdl.conjugate_121_spec()
    J = batch_jacobian(spec, chk["w_ref"], X)
    img = kernel_basis(J).image
    img_c = project_samples(store.samples, chk["w_ref"], img)
    ker_c = chk["coords"].reshape(-1, chk["Z"].shape[1])
    K, S = store.n_chains, store.n_samples
    header = "chain,draw," + ",".join(f"image_{i}" for i in range(img.shape[1])) + "," + \
        ",".join(f"kernel_{i}" for i in range(ker_c.shape[1]))
    rows = [(str(k), str(s), *img_c[k * S + s].tolist(), *ker_c[k * S + s].tolist()) for k in range(K) for s in range(S)]
    _write_csv(out / "projection_coords.csv", header, rows)
    for j, (d, o) in enumerate(zip(report["conformity"]["dims"], chk["oracle_ratio"])):
        echo(f"kernel dir {j}: Var/tau^2 = {d['ratio']['value']:.3f} +- {d['ratio']['se']:.3f}  "
             f"quadrature {o:.3f}  in [0.8, 1.2]: {d['in_band']['pass']}")
    for j, (e, o) in enumerate(zip(report["conformity"]["spectrum"], chk["oracle_eigenvalues"])):
        echo(f"eigenvalue {j}: {e['eigenvalue']['value']:.3f} +- {e['eigenvalue']['se']:.3f}  "
             f"quadrature {o:.3f}  in [0.8, 1.2]: {e['in_band']['pass']}")
    return {"run": run_dir.name, "kernel_rank": chk["rank"], "conformity": report["conformity"],
            "oracle_agreement": chk["oracle_agreement"], "coordinates": "projection_coords.csv"}


# --- manifold Dirichlet ---

MANIFOLD = """
network.input_dim = 2
network.widths = 8
data.source = none
diagnostics.sections = dirichlet
"""

REFERENCE_221 = np.array([1.0, -0.5, -0.3, 0.8, 1.2, -0.7])  # W1 (2x2) then W2 (1x2)


def manifold_dirichlet(out: Path, seed: int, threads: int, echo, n: int = 20_000) -> dict:
    ref_spec = NetworkSpec(2, (2,), 1)
    assignment = sym.Assignment.from_sizes([4, 4])
    p = ref_spec.input_dim
    alphas = [0.5, (p + 1) / 2]
    new_spec, w, _ = sym.sample_manifold(ref_spec, REFERENCE_221, assignment, generator(seed, "chains", 0), n)
    cfg = _config(MANIFOLD, seed)
    run_dir = out / cfg.run_id()
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(cfg.serialize(), encoding="utf-8")
    K = 10
    store = stmod.SampleStore.for_spec(new_spec, w.reshape(K, n // K, -1), seed=seed, config_hash=cfg.hash())
    stmod.save(store, run_dir / "samples.bnns")
    (run_dir / "manifold.json").write_text(json.dumps({"sizes": assignment.sizes, "alphas": alphas, "layer": 0}),
                                           encoding="utf-8")
    report = runs.diagnose(run_dir)
    rows = []
    for g, group in enumerate(report["dirichlet"]["groups"]):
        for a_key, fit in group["comparison"]["fits"].items():
            for j, c in enumerate(fit["ks"]):
                rows.append((str(g), a_key, str(j), c["D"]["value"], c["p_value"]["value"]))
        echo(f"group {g}: better fit alpha = {group['comparison']['better_fit']}")
    _write_csv(out / "dirichlet_gof.csv", "group,alpha,coordinate,ks_D,p_value", rows)
    return {"run": run_dir.name, "alphas": alphas, "dirichlet": report["dirichlet"], "table": "dirichlet_gof.csv"}


# --- balancedness ---

BALANCE = """
network.widths = 16, 16, 16
prior.tau = 1.0
sampler.n_chains = 10
sampler.warmup_steps = {warmup}
sampler.n_samples = {S}
sampler.leapfrog_steps = 10
sampler.init = {init}
diagnostics.sections = balancedness
"""


def regression_csv(path: Path, n: int, p: int, seed: int, noise_sd: float = 0.1) -> None:
    """Bundled synthetic table: ``y = sum_j x_j / sqrt(p) + noise`` with standard normal features."""
    g = generator(seed, "data/synthetic", 2)
    X = g.standard_normal((n, p))
    y = X.sum(1) / np.sqrt(p) + noise_sd * g.standard_normal(n)
    header = ",".join([f"x{j}" for j in range(p)] + ["y"])
    _write_csv(path, header, [tuple(r) for r in np.column_stack([X, y]).tolist()])


def balancedness(out: Path, seed: int, threads: int, echo, S: int = 1000) -> dict:
    prior_cfg = _config(BALANCE.format(warmup=200, S=S, init="prior_draw") +
                        "data.source = none\nnetwork.input_dim = 5\n", seed)
    csv_path = out / "regression.csv"
    regression_csv(csv_path, 100, 5, seed)
    post_cfg = _config(BALANCE.format(warmup=500, S=S, init="map_warmstart") +
                       f"data.source = csv\ndata.path = {csv_path.resolve()}\nlikelihood.sigma2 = 0.01\n", seed)
    result = {}
    for name, cfg in (("prior", prior_cfg), ("posterior", post_cfg)):
        run_dir = runs.sample(cfg, out, threads, echo=lambda *_: None)
        rep = runs.diagnose(run_dir)
        result[name] = {"run": run_dir.name, "balancedness": rep["balancedness"]}
        res = ", ".join(f"{r['value']:.3f}+-{r['se']:.3f}" for r in rep["balancedness"]["residuals"])
        echo(f"{name}: residuals B_l - B_l+1 = [{res}]  all pass: {rep['meta']['all_pass']}")
    return result


# --- trap probability ---

def trap(out: Path, seed: int, threads: int, echo, n_draws: int = 100_000) -> dict:
    rows, leaves = [], []
    for M in (1, 2, 3, 5, 8):
        est, se = trap_probability(lambda g, n: g.standard_normal((n, M)), 1.0, n_draws,
                                   generator(seed, "chains", M))
        rows.append((M, est, 2.0**-M, se))
        leaves.append({"M": M, "estimate": dg.leaf(est, se, target=2.0**-M)})
        echo(f"M={M}: {est:.5f} +- {se:.5f}  (2^-M = {2.0 ** -M:.5f})")
    _write_csv(out / "trap.csv", "M,estimate,exact,se", rows)
    return {"table": "trap.csv", "rows": leaves}


DEMO_FUNCS = {
    "onemone": onemone,
    "kernel-projection": kernel_projection,
    "manifold-dirichlet": manifold_dirichlet,
    "balancedness": balancedness,
    "trap": trap,
}


def run_demo(name: str, base="runs", seed: int = 0, threads: int = 1, echo=print) -> tuple[Path, dict]:
    if name not in DEMO_FUNCS:
        raise UnknownDemoError(name)
    out = Path(base) / f"demo-{name}-s{seed}"
    out.mkdir(parents=True, exist_ok=True)
    body = DEMO_FUNCS[name](out, seed, threads, echo)
    summary = {"demo": name, "seed": seed, **body}
    summary["all_pass"] = dg.all_pass(body)
    runs.write_json(out / "demo.json", summary)
    return out, summary
