"""Node-local convergence test on loopy scalar models.

Each node builds its rows of the mean-update matrix from quantities it holds
(its own J entries and the information messages on its edges) and checks
rho(Q_j Q_j^T) < 1. We sweep the coupling of a 3x3 grid and compare with the
walk-summability test, which needs the whole matrix.
"""

import numpy as np

from gabp import certify, generate_gmrf, FixedPointNotCertified

print(" r     max local rho   verdict   rho(|R|)  rho(Q)")
for r in np.linspace(0.05, 0.35, 7):
    model = generate_gmrf(9, "grid", float(r), seed=1)
    try:
        rep = certify(model, centralized=True)
    except FixedPointNotCertified as exc:
        print(f"{r:.2f}  {exc}")
        continue
    worst = max(rep.local_radii.values())
    print(f"{r:.2f}  {worst:14.6f}   {str(rep.verdict):7s}  {rep.rho_abs_r:8.4f}  {rep.rho_q:.4f}")

# the classic divergent example: 4-cycle with r = 0.6 has no real fixed point
model = generate_gmrf(4, "cycle", 0.6, seed=0)
try:
    certify(model, max_iter=2000)
except FixedPointNotCertified as exc:
    print("4-cycle, r = 0.6:", exc)
