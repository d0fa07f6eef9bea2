"""
The exterior grid
=================

Build the grid around a disc, solve a Helmholtz-type problem with a known
answer to see the second-order error, then watch the integration by parts
identities behind the virial formulas close as h shrinks.
"""

import numpy as np
from scipy.sparse import identity
from scipy.sparse.linalg import spsolve

from exterior_nls import field as fld
from exterior_nls import virial as vir
from exterior_nls.geometry import ball, build_grid, ellipsoid

g = build_grid(ball(1.0), 6.0, 1 / 16)
print(f"{g.n_fluid} fluid nodes, {len(g.faces.weights)} boundary faces")
print(f"perimeter from the faces {g.faces.weights.sum():.5f} (2 pi = {2 * np.pi:.5f})")
print(f"C for the symmetric variance: {vir.recommended_C(g):.4f}")

e = build_grid(ellipsoid(1.5, 1.0), 6.0, 1 / 16)
print(f"ellipse M/m = {e.obstacle.M / e.obstacle.m:.2f}, C = {vir.recommended_C(e):.4f}")


# u = sin(4(r-1)) exp(-(r-1)^2) xy/r^2 vanishes on the unit circle; solve
# (lap - 1) v = lap u - u and compare
def manufactured_error(h):
    grid = build_grid(ball(1.0), 5.0, h)
    x, r = grid.positions, grid.radius
    s = r - 1
    g = np.sin(4 * s) * np.exp(-s * s)
    dg = np.exp(-s * s) * (4 * np.cos(4 * s) - 2 * s * np.sin(4 * s))
    d2g = np.exp(-s * s) * (-16 * np.sin(4 * s) - 16 * s * np.cos(4 * s) + (4 * s * s - 2) * np.sin(4 * s))
    ang = x[:, 0] * x[:, 1] / r**2
    exact = ang * g
    lap = ang * (d2g + dg / r - 4 * g / r**2)
    v = spsolve((grid.laplacian - identity(grid.n_fluid)).tocsc(), lap - exact)
    return np.max(np.abs(v - exact))


print("\n   h       max error")
for h in (1 / 8, 1 / 16, 1 / 32):
    print(f"{h:.5f}  {manufactured_error(h):.3e}")

print("\n   h       dilation identity   radial identity")
for h in (1 / 8, 1 / 16, 1 / 32):
    grid = build_grid(ball(1.0), 8.0, h)
    u = fld.gaussian_bump(grid, (3.0, 2.5), 0.45, momentum=(1.0, -0.5))
    r1, r2 = vir.pohozaev_residuals(u)
    print(f"{h:.5f}  {r1:.3e}           {r2:.3e}")
