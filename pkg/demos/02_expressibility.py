"""
How much of state space does a circuit reach?
=============================================

Sample random angles, prepare U(theta)|0...0>, and histogram the fidelities
between independent pairs of such states.  Haar-random states have the
fidelity density (N - 1)(1 - F)^(N - 2) for N = 2^n; the KL divergence between
the sampled histogram and that density scores the circuit (lower means it
covers state space more uniformly).

Run with ``python3 demos/02_expressibility.py``.
"""

import numpy as np

from qrnn import diagnostics as diag
from qrnn.ansatz import build_ansatz14, build_ry_layer

spec = diag.ExpressibilitySpec(n_qubits=4, pairs=5000, bins=75, seed=0)

# %%
# Three reference points: Haar states themselves (the KL should be sampling
# noise only), the RY + CRX ring template, and a bare RY layer, which can
# only make product states with real amplitudes.

for name, layout in (("haar", None), ("ansatz-14", build_ansatz14(4)),
                     ("ansatz-14 x2", build_ansatz14(4, layers=2)), ("RY only", build_ry_layer(4))):
    res = diag.expressibility(spec, layout)
    print(f"{name:<14} KL = {res.kl:.4f}")

# %%
# The histograms themselves.  Mass piles up near F = 0 for an expressive
# circuit; the RY layer's states overlap far more often.

res_ry = diag.expressibility(spec, build_ry_layer(4))
res_14 = diag.expressibility(spec, build_ansatz14(4))
print("\n bin    haar   ansatz-14  RY-only")
for i in range(0, 75, 8):
    print(f"{res_14.edges[i]:.2f}  {res_14.haar[i]:.4f}   {res_14.empirical[i]:.4f}    {res_ry.empirical[i]:.4f}")

# %%
# Sanity check on the reference: the mean fidelity of Haar pairs is 1/N.
fids = diag.sample_fidelities(diag.ExpressibilitySpec(n_qubits=4, pairs=20000, seed=1))
print(f"\nmean Haar fidelity {fids.mean():.4f} vs 1/16 = {1 / 16:.4f}")
