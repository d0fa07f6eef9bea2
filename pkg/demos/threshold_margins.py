"""
Where the threshold criterion switches on
=========================================

Scale an odd bump in three dimensions by lam and watch the two ground-state
comparisons for the cubic equation.  Small multiples sit below the gradient
threshold, moderate ones are above it but have too much energy, and past
the energy crossing both hold, with margins delta1 and delta2.
"""

import numpy as np

from exterior_nls import criteria as crit
from exterior_nls import field as fld
from exterior_nls.geometry import ball, build_grid
from exterior_nls.ground_state import solve_ground_state

q = solve_ground_state(3, 3.0)
grid = build_grid(ball(1.0, dim=3), 5.0, 1 / 8)
bump = fld.symmetrize(fld.gaussian_bump(grid, (1.0, 1.0, 1.0), 0.3), fld.SymmetryClass.full(3))
lam_star = crit.scaling_threshold(bump, 3.0)
print(f"energy changes sign at lam = {lam_star:.3f}")

print("\n   lam    M*E          M*E_Q     |u||grad u|   Q value   verdict   delta1   delta2")
for lam in (1.0, 10.0, 20.0, 40.0, 0.99 * lam_star, 1.01 * lam_star, 100.0):
    rep = crit.check_threshold(bump.scaled(lam), q, 3, 3.0)
    me, gn = rep.get("mass_energy"), rep.get("mass_gradient")
    d1 = rep.margins.get("delta1", np.nan)
    d2 = rep.margins.get("delta2", np.nan)
    print(
        f"{lam:7.2f}  {me.value:11.4g}  {me.bound:9.4g}  {gn.value:10.4f}  {gn.bound:8.4f}  "
        f"{str(rep.verdict):7s}  {d1:7.4f}  {d2:7.4f}"
    )

# f is the function that links the two thresholds; its maximum sits at x1
f, x1 = crit.threshold_function(q)
x = np.linspace(0.25, 2.0, 8) * x1
print("\n x/x1   f(x)")
for xi, fi in zip(x / x1, f(x)):
    print(f"{xi:5.2f}  {fi:10.4f}")
