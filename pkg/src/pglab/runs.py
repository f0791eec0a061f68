"""Run directories: sampling, diagnosing and evaluating a configured experiment.

A run directory ``<base>/<run-id>/`` is named by the first 16 hex digits of
the SHA-256 of the resolved configuration and holds

``config.txt``      resolved configuration (re-parses to the same run)
``samples.bnns``    the sample store
``chains.json``     per-chain metadata (acceptance, warmup, init, failures)
``report.json``     diagnostics report
``marginal_*.csv``  density grids
``eval.json``, ``cumulative_lppd.csv``  predictive evaluation

Optional markers written by demos make extra diagnostics applicable:
``manifold.json`` (reallocation groups) enables ``dirichlet`` and
``projection.npz`` (reference point and kernel basis) enables ``conformity``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import diagnostics as dg
from . import evaluation as ev
from . import store as stmod
from . import symmetry as sym
from .data import DataError, load_csv, synthetic_dataset
from .geometry import project_samples
from .model import Dataset, PosteriorModel
from .network import NetworkSpec
from .samplers import run_chains


class NumericFailure(ArithmeticError):
    """A chain diverged to a non-finite log-posterior."""


@dataclass
class Run:
    path: Path
    config: cfgmod.RunConfig
    store: stmod.SampleStore

    @property
    def spec(self) -> NetworkSpec:
        return spec_for(self.config)


def load_data(cfg: cfgmod.RunConfig) -> Dataset | None:
    d = cfg["data"]
    if d["source"] == "none":
        return None
    if d["source"] == "synthetic":
        return synthetic_dataset(cfg.synthetic_task())
    classification = cfg["likelihood"]["family"] != "gaussian"
    return load_csv(d["path"], d["target"], tuple(d["split"]), d["standardize"], cfg.seed, classification)


def resolve(cfg: cfgmod.RunConfig, data: Dataset | None, base: Path | None = None) -> cfgmod.RunConfig:
    """Fill data-derived network dimensions and make the CSV path absolute."""
    values = {s: dict(v) for s, v in cfg.values.items()}
    if data is not None:
        X, y = data.split("train")
        values["network"]["input_dim"] = X.shape[1]
        family = cfg["likelihood"]["family"]
        if family == "gaussian":
            values["network"]["output_dim"] = y.shape[1]
        elif family == "bernoulli_logit":
            values["network"]["output_dim"] = 1
        else:
            labels = np.concatenate([v.reshape(-1) for v in data.y.values()])
            values["network"]["output_dim"] = int(labels.max()) + 1
    if values["data"]["source"] == "csv":
        p = Path(values["data"]["path"])
        if not p.is_absolute() and base is not None:
            p = base / p
        values["data"]["path"] = str(p.resolve())
    return cfgmod.RunConfig(values, cfg.seed)


def spec_for(cfg: cfgmod.RunConfig) -> NetworkSpec:
    return cfg.network_spec()


def build_model(cfg: cfgmod.RunConfig, data: Dataset | None) -> PosteriorModel:
    spec = spec_for(cfg)
    if data is None:
        return PosteriorModel(spec, cfg.prior_spec(), cfg.likelihood_spec())
    X, y = data.split("train")
    return PosteriorModel(spec, cfg.prior_spec(), cfg.likelihood_spec(), X, y)


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(dg.to_jsonable(obj), indent=2) + "\n", encoding="utf-8")


def sample(cfg: cfgmod.RunConfig, base="runs", threads: int = 1, config_dir: Path | None = None,
           echo=print) -> Path:
    """Sample a configured posterior into ``<base>/<run-id>`` and return that directory.

    Chains with a non-finite log-posterior are kept in the store (as NaN
    rows, flagged in ``chains.json``) and reported by :class:`NumericFailure`.
    """
    data = load_data(cfg if config_dir is None else resolve(cfg, None, config_dir))
    cfg = resolve(cfg, data, config_dir)
    text = cfg.serialize()
    run_dir = Path(base) / cfg.run_id()
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(text, encoding="utf-8")
    model = build_model(cfg, data)
    store = run_chains(model, cfg.chain_config(), threads=threads, config_hash=cfg.hash())
    stmod.save(store, run_dir / "samples.bnns")
    write_json(run_dir / "chains.json", store.chain_meta)
    for m in store.chain_meta:
        echo(f"chain {m['chain']:3d}  acceptance {m['acceptance_rate']:.3f}  step {m['step_size']:.4g}"
             f"  divergences {m['divergences']}{'  FAILED' if m['failed'] else ''}")
    if store.failed_chains:
        raise NumericFailure(f"chains {store.failed_chains} failed; partial store kept in {run_dir}")
    return run_dir


def load_run(run_dir) -> Run:
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.txt"
    if not cfg_path.exists():
        raise FileNotFoundError(f"{cfg_path} not found")
    cfg = cfgmod.load(cfg_path)
    store = stmod.load(run_dir / "samples.bnns")
    meta_path = run_dir / "chains.json"
    if meta_path.exists():
        store.chain_meta = json.loads(meta_path.read_text(encoding="utf-8"))
    return Run(run_dir, cfg, store)


# --- diagnose ---

def _not_applicable(reason: str) -> dict:
    return {"status": "not_applicable", "reason": reason}


def _is_onemone(spec: NetworkSpec) -> bool:
    return (spec.activation == "identity" and len(spec.widths) == 1 and spec.input_dim == 1
            and spec.output_dim == 1 and not any(spec.layer_bias))


def _balancedness(run: Run) -> dict:
    spec = run.spec
    if any(spec.layer_bias):
        return _not_applicable("layer identities assume a bias-free network")
    pure = run.config["data"]["source"] == "none"
    return dg.balancedness_report(spec, run.store.samples, run.config.prior_spec().tau, pure_prior=pure)


def _dirichlet(run: Run) -> dict:
    marker = run.path / "manifold.json"
    if not marker.exists():
        return _not_applicable("not a manifold run (no manifold.json)")
    info = json.loads(marker.read_text(encoding="utf-8"))
    assignment = sym.Assignment.from_sizes(info["sizes"])
    coords = sym.extract_rho(run.spec, run.store.pooled(), assignment, info.get("layer", 0))
    alphas = info["alphas"]
    out = {"sizes": info["sizes"], "groups": []}
    for g, rho in enumerate(coords.rho):
        entry = {"fit": dg.dirichlet_gof(rho, alphas[0])}
        if len(alphas) > 1:
            entry["comparison"] = dg.compare_alphas(rho, alphas)
        out["groups"].append(entry)
    return out


def _moments(run: Run) -> dict:
    spec = run.spec
    if not _is_onemone(spec):
        return _not_applicable("moments need a bias-free 1-M-1 identity network")
    tau = run.config.prior_spec().tau
    if tau[0] != tau[1]:
        return _not_applicable("moments need equal prior scales")
    return dg.constrained_moments(run.store.samples, spec.widths[0], run.config["diagnostics"]["beta"], tau[0])


def _conformity(run: Run) -> dict:
    marker = run.path / "projection.npz"
    if not marker.exists():
        return _not_applicable("no kernel projection recorded (no projection.npz)")
    with np.load(marker) as z:
        w_ref, Z, tau = z["w_ref"], z["Z"], float(z["tau"])
        band = tuple(z["band"]) if "band" in z else None
    coords = project_samples(run.store.samples, w_ref, Z).reshape(run.store.n_chains, run.store.n_samples, -1)
    return dg.prior_conformity_test(coords, tau, band)


def _selection(run: Run) -> tuple[list[int], list[tuple[int, int]]]:
    spec = run.spec
    k = min(spec.n_params, run.config["diagnostics"]["max_marginals"])
    singles = list(range(k))
    if _is_onemone(spec):
        M = spec.widths[0]
        pairs = [(m, M + m) for m in range(min(M, max(1, k // 2)))]
    else:
        pairs = [(i, i + 1) for i in range(0, k - 1, 2)]
    return singles, pairs


def _covariance(run: Run) -> dict:
    singles, _ = _selection(run)
    return {"indices": singles, **dg.covariance_section(run.store.samples, singles)}


def write_grid_csv(path: Path, grid: dict) -> None:
    rows = dg.grid_rows(grid)
    header = "x,density" if "edges" in grid else "x,y,density"
    lines = [header] + [",".join(repr(float(v)) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _marginals(run: Run) -> dict:
    singles, pairs = _selection(run)
    grids = dg.marginal_grids(run.store.samples, singles, pairs, bins=run.config["diagnostics"]["bins"])
    out = {"singles": {}, "pairs": {}}
    for key, g in grids["singles"].items():
        name = f"marginal_{key}.csv"
        write_grid_csv(run.path / name, g)
        out["singles"][key] = {"file": name, "coverage": dg.leaf(g["coverage"])}
    for key, g in grids["pairs"].items():
        name = f"marginal_{key.replace(',', '_')}.csv"
        write_grid_csv(run.path / name, g)
        out["pairs"][key] = {"file": name, "coverage": dg.leaf(g["coverage"])}
    return out


SECTION_FUNCS = {
    "balancedness": _balancedness,
    "dirichlet": _dirichlet,
    "moments": _moments,
    "conformity": _conformity,
    "covariance": _covariance,
    "marginals": _marginals,
}


def diagnose(run_dir, sections=None) -> dict:
    """Compute the selected report sections and write ``report.json``."""
    run = load_run(run_dir)
    sections = list(sections or run.config["diagnostics"]["sections"])
    for s in sections:
        if s not in SECTION_FUNCS:
            raise cfgmod.ConfigError(f"unknown section {s!r}; choose from {dg.SECTIONS}")
    meta = {
        "run_id": run.path.name,
        "config_hash": run.store.config_hash.hex(),
        "seed": run.store.seed,
        "store_id": f"{stmod.fnv1a64(np.ascontiguousarray(run.store.samples, dtype='<f8')):016x}",
        "n_chains": run.store.n_chains,
        "n_samples": run.store.n_samples,
        "sections": sections,
    }
    report = dg.build_report(meta, {s: SECTION_FUNCS[s](run) for s in sections})
    write_json(run.path / "report.json", report)
    return report


# --- eval ---

def evaluate(run_dir, split: str = "test") -> dict:
    """Predictive metrics on a data split plus the cumulative LPPD curve over chains."""
    run = load_run(run_dir)
    data = load_data(run.config)
    if data is None:
        raise DataError(f"run {run.path} has no data, so there is no {split!r} split")
    X, y = data.split(split)
    if len(X) == 0:
        raise DataError(f"the {split!r} split is empty")
    spec, lik = run.spec, run.config.likelihood_spec()
    ld = ev.log_density_matrix(spec, lik, run.store, X, y)
    out = {"split": split, "n": len(X), "lppd": ev.lppd_from_logdens(ld)}
    if lik.family == "gaussian":
        out["rmse"] = ev.rmse(spec, run.store, X, y)
    else:
        out["accuracy"] = ev.accuracy(spec, lik, run.store, X, y)
    if run.store.n_chains >= 2:
        curve = ev.cumulative_lppd_from_logdens(ld, run.config["diagnostics"]["n_orderings"], run.config.seed)
        (run.path / "cumulative_lppd.csv").write_text(curve.csv(), encoding="utf-8")
        first, last, ratio = ev.saturation_ratio(curve)
        out["cumulative"] = {"file": "cumulative_lppd.csv", "first_quarter_slope": first,
                             "last_quarter_slope": last, "ratio": ratio}
    write_json(run.path / "eval.json", out)
    return out
