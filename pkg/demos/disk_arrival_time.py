"""Arrival time of the unit disk, built up rung by rung.

Solves the regularized problem on a shrinking epsilon ladder, compares each
rung with the radial shooting profile, and reads off the extinction time and
the level-set lengths.  Run with ``python demos/disk_arrival_time.py``.
"""

import math
import warnings

import numpy as np

from mcfarrival.brakke import brakke_residual, extinction_time
from mcfarrival.domain import GridSpec, ShapeSpec, build_domain
from mcfarrival.measures import measure_mu, phi_catalog
from mcfarrival.radial import oracle_field, solve_radial
from mcfarrival.solver import EpsilonLadder, epsilon_continuation

warnings.simplefilter("ignore", RuntimeWarning)

shape = ShapeSpec.ball(1.0, 2)
domain = build_domain(shape, GridSpec.around(shape, 129))
ladder = EpsilonLadder((0.2, 0.1, 0.05, 0.02, 0.01, 0.005))
cont = epsilon_continuation(domain, ladder)

print("eps      sup|u_eps - radial|")
for f, eps in zip(cont.fields, ladder.values):
    ref = oracle_field(solve_radial(1.0, 1, eps), domain)
    print(f"{eps:<8} {np.abs(f.values - ref.values)[domain.mask].max():.2e}")

u = cont.u
T = extinction_time(u).value
print(f"\nextinction time {T:.5f}  (circle shrinking at unit speed: 0.5)")

print("\nt      length(u = t)   2 pi sqrt(1 - 2t)")
one = phi_catalog("one", domain)
for t in (0.0, 0.1, 0.2, 0.3, 0.4):
    print(f"{t:<6} {measure_mu(u, t, one):<15.5f} {2 * math.pi * math.sqrt(1 - 2 * t):.5f}")

rep = brakke_residual(u, one, 0.0, 0.25)
print(f"\nlength drop over [0, 0.25]: {rep.lhs:.5f}; curvature integral: {rep.rhs:.5f}")
