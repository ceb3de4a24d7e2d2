"""
Hölder regularity of convolved lacunary series
==============================================

The exponent's modulus of continuity in the low-regularity regime is
governed by convolutions h = 2*pi*f-hat*g-hat of rough circle functions.
This demo estimates Hölder exponents from dyadic coefficient blocks and
shows the borderline case: a convolution that is Zygmund-regular but not
Lipschitz.
"""

from lyaplab.regularity import (convolve, difference_quotient_test,
                                estimate_holder, weierstrass)

# sum rule: conv(C^alpha, C^beta) lands in C^(alpha+beta) when the sum
# stays below 1
for alpha, beta in [(0.3, 0.4), (0.2, 0.5), (0.6, 0.3)]:
    h = convolve(weierstrass(alpha), weierstrass(beta))
    est = estimate_holder(h)
    print(f"alpha={alpha}, beta={beta}: estimated exponent "
          f"{est.holder_exponent:.4f} (target {alpha + beta})")

# the borderline pair: exponents sum to exactly 1
print()
h = convolve(weierstrass(0.5), weierstrass(0.5))
est = estimate_holder(h)
print("alpha = beta = 0.5:")
print("  estimated exponent:", round(est.holder_exponent, 4))
print("  zygmund flag:      ", est.zygmund)
print("  lipschitz check:   ", est.lipschitz)
print("  weighted blocks (level, not decaying -> not Lipschitz):")
for k, w in est.weighted_blocks:
    print(f"    block {k}: {w:.12f}")

# past the borderline the convolution is differentiable; its derivative
# retains the excess regularity
print()
h = convolve(weierstrass(0.6), weierstrass(0.6))
deriv = h.derivative()
print("alpha = beta = 0.6 -> exponent sum 1.2:")
print("  derivative exponent estimate:",
      round(estimate_holder(deriv).holder_exponent, 4))
quot = difference_quotient_test(deriv, 0.2)
print("  C^0.2 difference-quotient test on the derivative:",
      "passed" if quot.passed else "failed",
      f"(quotient growth slope {quot.slope:.3f})")
