"""
Reallocation coefficients on the minimum-norm manifold
======================================================

A 2-2-1 ReLU reference network is widened to eight units by splitting each
reference unit into four copies. The squared-norm shares of the copies follow
a symmetric Dirichlet; its concentration is compared at 1/2 and (p+1)/2.
"""

# ## Imports

import numpy as np

from pglab import diagnostics as dg
from pglab import network as nw
from pglab import symmetry as sym
from pglab.demos import REFERENCE_221
from pglab.network import NetworkSpec
from pglab.rng import generator

# ## Sample the manifold

ref = NetworkSpec(2, (2,), 1)
assignment = sym.Assignment.from_sizes([4, 4])
wide, W, _ = sym.sample_manifold(ref, REFERENCE_221, assignment, generator(0, "chains", 0), 20_000)
X = generator(0, "chains", 1).standard_normal((50, 2))
print("function gap", np.max(np.abs(nw.forward(wide, W[:100], X) - nw.forward(ref, REFERENCE_221, X))))

# ## Goodness of fit per group

coords = sym.extract_rho(wide, W, assignment)
for g, rho in enumerate(coords.rho):
    cmp = dg.compare_alphas(rho, [0.5, 1.5])
    print(f"group {g}: worst KS distance {cmp['max_ks']}  better fit alpha={cmp['better_fit']}")
