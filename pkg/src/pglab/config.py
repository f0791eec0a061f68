"""Run configuration in a line-oriented ``section.key = value`` text format.

Grammar::

    file    := line*
    line    := blank | comment | entry
    comment := optional spaces, then "#" and any text
    entry   := name "=" value          (spaces around "=" are ignored)
    name    := section "." key | "seed"
    value   := scalar | scalar ("," scalar)+

Scalars are integers, reals, ``true``/``false`` or bare words. A comma
makes the value a list. Keys may appear at most once, unknown sections or
keys are rejected, and every error carries its 1-based line number.
:func:`serialize` writes every key in schema order, so
``parse(serialize(parse(text)))`` equals ``parse(text)``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .model import LikelihoodSpec, PriorSpec, SyntheticLinearTask
from .network import NetworkSpec
from .samplers import ChainConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).lower()
    if s in ("true", "yes", "1"):
        return True
    if s in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true/false, got {v!r}")


def _list(conv):
    def f(v):
        items = v if isinstance(v, list) else [v]
        return [conv(x) for x in items]
    return f


def _str(v):
    if isinstance(v, list):
        raise ValueError("expected a single value")
    return str(v)


def _opt_float(v):
    return None if str(v).lower() == "none" else float(v)


# section -> key -> (converter, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "network": {
        "input_dim": (int, 1),
        "widths": (_list(int), [4]),
        "output_dim": (int, 1),
        "activation": (_str, "relu"),
        "biases": (_list(_bool), [False]),
    },
    "prior": {
        "tau": (_list(float), [1.0]),
        "bias": (_str, "gaussian"),
        "bias_tau": (float, 1.0),
    },
    "likelihood": {
        "family": (_str, "gaussian"),
        "sigma2": (float, 0.0025),
    },
    "data": {
        "source": (_str, "synthetic"),
        "path": (_str, ""),
        "target": (_str, ""),
        "split": (_list(float), [0.7, 0.1, 0.2]),
        "standardize": (_bool, True),
        "slope": (float, 1.0),
        "noise_sd": (float, 0.05),
        "n": (int, 20),
        "x_low": (float, -1.0),
        "x_high": (float, 1.0),
    },
    "sampler": {
        "n_chains": (int, 10),
        "warmup_steps": (int, 500),
        "n_samples": (int, 1000),
        "thinning": (int, 1),
        "step_size": (float, 0.05),
        "leapfrog_steps": (int, 10),
        "kernel": (_str, "hmc"),
        "init": (_str, "map_warmstart"),
        "map_steps": (int, 1000),
        "map_learning_rate": (float, 1e-3),
        "map_method": (_str, "adam"),
        "adapt_step_size": (_bool, True),
        "target_accept": (_opt_float, None),
    },
    "diagnostics": {
        "sections": (_list(_str), ["balancedness", "moments", "covariance", "marginals"]),
        "bins": (int, 50),
        "max_marginals": (int, 8),
        "n_orderings": (int, 5),
        "beta": (float, 1.0),
    },
}
SEED_DEFAULT = 0

DATA_SOURCES = ("synthetic", "csv", "none")


def _scalar(text: str):
    t = text.strip()
    if t.lower() in ("true", "false"):
        return t.lower() == "true"
    if not t:
        return ""
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


def _raw_value(text: str):
    if not text:
        return ""
    if "," in text:
        items = [p.strip() for p in text.split(",")]
        if any(not p for p in items):
            raise ValueError("empty list element")
        return [_scalar(p) for p in items]
    return _scalar(text)


def _format(v) -> str:
    if isinstance(v, list):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class RunConfig:
    values: dict[str, dict] = field(default_factory=dict)
    seed: int = SEED_DEFAULT

    def __post_init__(self):
        full = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
        for s, keys in self.values.items():
            if s not in SCHEMA:
                raise ConfigError(f"unknown section {s!r}")
            for k, v in keys.items():
                if k not in SCHEMA[s]:
                    raise ConfigError(f"unknown key {s}.{k}")
                full[s][k] = v
        self.values = full
        self.validate()

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def validate(self) -> None:
        split = self["data"]["split"]
        if len(split) != 3 or any(f < 0 for f in split) or abs(sum(split) - 1.0) > 1e-9:
            raise ConfigError(f"data.split must be three non-negative fractions summing to 1, got {split}")
        if self["data"]["source"] not in DATA_SOURCES:
            raise ConfigError(f"data.source must be one of {DATA_SOURCES}")
        if self["data"]["source"] == "csv" and not self["data"]["path"]:
            raise ConfigError("data.path is required for csv data")
        from .diagnostics import SECTIONS
        for s in self["diagnostics"]["sections"]:
            if s not in SECTIONS:
                raise ConfigError(f"unknown diagnostics section {s!r}; choose from {SECTIONS}")
        try:
            self.network_spec()
            self.prior_spec()
            self.likelihood_spec()
            self.chain_config()
        except (ValueError, TypeError) as e:
            raise ConfigError(str(e)) from e

    def network_spec(self, input_dim: int | None = None, output_dim: int | None = None) -> NetworkSpec:
        n = self["network"]
        widths = tuple(n["widths"])
        biases = n["biases"]
        if len(biases) == 1:
            biases = biases * (len(widths) + 1)
        return NetworkSpec(input_dim or n["input_dim"], widths, output_dim or n["output_dim"], n["activation"],
                           tuple(biases))

    def prior_spec(self) -> PriorSpec:
        p = self["prior"]
        n_layers = len(self["network"]["widths"]) + 1
        tau = p["tau"]
        if len(tau) == 1:
            tau = tau * n_layers
        if len(tau) != n_layers:
            raise ValueError(f"prior.tau needs 1 or {n_layers} entries, got {len(tau)}")
        return PriorSpec(tuple(tau), p["bias"], p["bias_tau"])

    def likelihood_spec(self) -> LikelihoodSpec:
        return LikelihoodSpec(self["likelihood"]["family"], self["likelihood"]["sigma2"])

    def chain_config(self) -> ChainConfig:
        return ChainConfig(**self["sampler"], seed=self.seed)

    def synthetic_task(self) -> SyntheticLinearTask:
        d = self["data"]
        return SyntheticLinearTask(d["slope"], d["noise_sd"], d["n"], self.seed, d["x_low"], d["x_high"])

    def with_seed(self, seed: int) -> "RunConfig":
        return RunConfig({s: dict(v) for s, v in self.values.items()}, int(seed))

    def serialize(self) -> str:
        lines = [f"seed = {self.seed}"]
        for s, keys in SCHEMA.items():
            lines.append("")
            for k in keys:
                v = self.values[s][k]
                if isinstance(v, list) and len(v) == 1:
                    # a lone scalar converts back to the same one-element list
                    v = v[0]
                lines.append(f"{s}.{k} = {_format(v)}".rstrip())
        return "\n".join(lines) + "\n"

    def hash(self) -> bytes:
        return hashlib.sha256(self.serialize().encode("utf-8")).digest()

    def run_id(self) -> str:
        return self.hash().hex()[:16]


def parse(text: str) -> RunConfig:
    values: dict[str, dict] = {}
    seen: set[str] = set()
    seed = SEED_DEFAULT
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'section.key = value', got {raw!r}", i)
        name, _, value = line.partition("=")
        name, value = name.strip(), value.strip()
        if name in seen:
            raise ConfigError(f"duplicate key {name!r}", i)
        seen.add(name)
        try:
            raw_value = _raw_value(value)
        except ValueError as e:
            raise ConfigError(f"{name}: {e}", i) from None
        if name == "seed":
            if not isinstance(raw_value, int) or isinstance(raw_value, bool) or raw_value < 0:
                raise ConfigError(f"seed must be a non-negative integer, got {value!r}", i)
            seed = raw_value
            continue
        section, dot, key = name.partition(".")
        if not dot or not key:
            raise ConfigError(f"expected 'section.key', got {name!r}", i)
        if section not in SCHEMA:
            raise ConfigError(f"unknown section {section!r}", i)
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {name!r}", i)
        conv = SCHEMA[section][key][0]
        try:
            values.setdefault(section, {})[key] = conv(raw_value)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"{name}: {e}", i) from None
    return RunConfig(values, seed)


def load(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())
