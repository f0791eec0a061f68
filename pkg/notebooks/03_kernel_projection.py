"""
Posterior spread along likelihood-flat directions
=================================================

On the 1-2-1 model with inputs of one sign the Jacobian at the symmetric mode
has rank one, leaving a three-dimensional kernel. Projected posterior draws
are compared with the prior scale per kernel coordinate and through the
eigenvalues of the projected covariance, which do not depend on the basis.
"""

# ## Imports

import numpy as np

from pglab import config, demos

# ## Exact-conditional posterior draws

cfg = config.parse(demos.CONJUGATE)
X, y = cfg.synthetic_task().generate()
sigma2 = cfg["likelihood"]["sigma2"]
store = demos.conjugate_posterior_samples(X[:, 0], y, sigma2, cfg.chain_config())
chk = demos.kernel_projection_check(X[:, 0], y, sigma2, store.samples)
print("kernel dimension", chk["Z"].shape[1])

# ## Coordinates in the SVD kernel basis

for d, q in zip(chk["conformity"]["dims"], chk["oracle_ratio"]):
    print(f"Var/tau^2 {d['ratio']['value']:.3f} +- {d['ratio']['se']:.3f}   quadrature {q:.3f}")

# ## The same covariance, basis-free

for e, q in zip(chk["conformity"]["spectrum"], chk["oracle_eigenvalues"]):
    print(f"eigenvalue {e['eigenvalue']['value']:.3f} +- {e['eigenvalue']['se']:.3f}   quadrature {q:.3f}")

# ## A rotated kernel basis changes the per-coordinate picture

theta = 0.7
R = np.eye(3)
R[:2, :2] = [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
c = chk["coords"].reshape(-1, 3) @ R
print("rotated coordinate variances", np.round(c.var(0), 3))
