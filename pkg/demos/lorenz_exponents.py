"""Lyapunov spectrum of Lorenz-63 from exact RK4 step Jacobians.

The largest exponent should land near 0.906 and the three should sum to
-(sigma + 1 + beta) = -13.667. Takes about ten seconds.
"""

import numpy as np

from lnpsnn.data import lorenz_rhs
from lnpsnn.lyapunov import lyapunov_spectrum, rk4_tangent_jacobians


def lorenz_jac(s, sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    x, y, z = s
    return np.array([[-sigma, sigma, 0.0], [rho - z, -1.0, -x], [y, x, -beta]])


dt = 0.01
seq = rk4_tangent_jacobians(lorenz_rhs(), lorenz_jac, (12.0, 2.0, 9.0), dt, 100_000, transient=1000)
rep = lyapunov_spectrum(seq)
lam = rep.spectrum / dt
print("spectrum per unit time:", np.round(lam, 4))
print("sum:", round(float(lam.sum()), 4), "(expected -13.667)")
