"""
Ground states and the constants built from them
===============================================

Solve for Q in a few (d, p) pairs, print its norms, and check that the
sharp Gagliardo-Nirenberg constant really bounds the quotient for other
functions.
"""

import numpy as np

from exterior_nls.ground_state import critical_regularity, solve_ground_state, threshold_quantities

for d, p in [(1, 3.0), (2, 3.0), (2, 5.0), (3, 3.0)]:
    q = solve_ground_state(d, p)
    worst = max(q.identity_residuals().values())
    print(f"d={d} p={p:g}  Q(0)={q.q0:.10f}  mass={q.mass:.8f}  energy={q.energy:+.6f}  C_GN={q.c_gn:.6f}  identities {worst:.1e}")

# in one dimension the cubic profile is sqrt(2) sech(r)
q1 = solve_ground_state(1, 3.0)
r = np.linspace(0, 12, 7)
print("\n  r      Q(r)            sqrt(2) sech(r)")
for ri, qi in zip(r, q1(r)):
    print(f"{ri:5.1f}  {qi:.12f}  {np.sqrt(2) / np.cosh(ri):.12f}")

# the quotient ||f||_4^4 / (||grad f||^2 ||f||^2) stays below C_GN for Gaussians
# of any width, since it is scale invariant it is 1/(2 pi) for all of them
q2 = solve_ground_state(2, 3.0)
print(f"\nGaussian quotient {1 / (2 * np.pi):.6f} <= C_GN {q2.c_gn:.6f}")

# the intercritical pairs have threshold products
for d, p in [(2, 5.0), (3, 3.0)]:
    q = solve_ground_state(d, p)
    t = threshold_quantities(q)
    print(f"d={d} p={p:g}  s_c={critical_regularity(d, p):.3f}  ME_Q={t['ME_Q']:.6f}  GN_Q={t['GN_Q']:.6f}")
