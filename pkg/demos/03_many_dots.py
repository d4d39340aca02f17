"""Trapped entanglement for three or more dots.

With N dots only the N - 1 states decoupled from the plasmon survive.  For
couplings g_1, x g_1, ..., x g_1 the common ratio x controls how the
surviving excitation is shared between QD1 and the others.
"""

import math

import numpy as np

from plasmonqd.analytic import ndark_optimal_ratio, ratio_contour

r = np.round(np.arange(0.9, 1.21, 0.01), 3)
rows = ratio_contour(r, r)
best = min(rows, key=lambda row: row[2])
print("three dots, best grid point (g2/g1, g3/g1, fom, C12, C13, C23):")
print(tuple(round(float(v), 4) for v in best))

print("\n   N    x* sqrt(N)   C_maj sqrt(N)   C_min N")
for n in (3, 5, 10, 30, 100):
    x, c_maj, c_min = ndark_optimal_ratio(n)
    print(f"{n:4d}   {x * math.sqrt(n):9.4f}   {c_maj * math.sqrt(n):12.4f}   {c_min * n:8.4f}")
print("large-N limits: 1.09, 0.54, 0.50")
