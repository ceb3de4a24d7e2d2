"""
Non-flatness: small bumps curve the exponent quadratically
==========================================================

Deform the linear automorphism by a rotational bump of radius r.  The
first derivative of the exponent vanishes (the linear map is critical),
but the second derivative scales like -K r^2 on the expanding bundle
and +K r^2 on the contracting one, with K a pure profile constant.
"""

import numpy as np

from lyaplab.derivatives import bump_second_derivative
from lyaplab.families import BumpField, BumpSpec, bump_K
from lyaplab.field_calculus import TorusMap
from lyaplab.splitting import exact_splitting

cat = TorusMap(np.array([[2, 1], [1, 1]]))
center = (1.0, 2.1)   # generic point, away from short periodic orbits

# the distinguished slot picks which exponent we differentiate
split_up = exact_splitting(cat, (1, 1, 0), resolution=32)    # expanding
split_down = exact_splitting(cat, (0, 1, 1), resolution=32)  # contracting

k_profile = bump_K(BumpSpec(2, 0.1, center=center))
print("profile constant K =", k_profile)
print()
print(f"{'r':>6} {'ratio (expanding)':>20} {'ratio (contracting)':>20}")
for r in (0.20, 0.14, 0.10, 0.07):
    bump = BumpField(BumpSpec(2, r, center=center))
    up = bump_second_derivative(cat, split_up, bump)
    down = bump_second_derivative(cat, split_down, bump)
    print(f"{r:>6} {up.value / r**2:>20.12f} {down.value / r**2:>20.12f}")
print()
print("expected limits: -K and +K ->", -k_profile, "and", k_profile)
