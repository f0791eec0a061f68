"""
How many chains does the predictive density need?
==================================================

Twenty short chains on a 1-4-1 ReLU network, each warm-started from its own
MAP fit. Adding chains to the mixture raises the test LPPD quickly, then
the curve flattens.
"""

# ## Imports

import tempfile

from pglab import config, runs

# ## Sample and evaluate

cfg = config.parse("""seed = 0
network.widths = 4
likelihood.sigma2 = 0.0025
data.source = synthetic
sampler.n_chains = 20
sampler.warmup_steps = 100
sampler.n_samples = 200
diagnostics.n_orderings = 100
""")
run_dir = runs.sample(cfg, tempfile.mkdtemp(), echo=lambda *_: None)
out = runs.evaluate(run_dir)
print({k: out[k] for k in ("n", "lppd", "rmse")})
print(out["cumulative"])

# ## The curve

print(open(f"{run_dir}/cumulative_lppd.csv").read())
