"""Two quantum dots sharing one lossy plasmon, with no laser.

QD1 starts excited.  Without loss the excitation cycles through the
plasmon and the pair periodically passes through an entangled state.
With loss, the part of the state that does not couple to the plasmon
survives forever and carries a fixed amount of entanglement.
"""

import math

import numpy as np

from plasmonqd.analytic import ThreeStateModel, three_state_asymptotic, three_state_lossless
from plasmonqd.dynamics import IntegratorConfig, dark_observables, initial_state, propagate
from plasmonqd.model import SystemSpec

g2 = 25.0

# Lossless: at g1/g2 = sqrt(2) - 1 the excitation fully converts into |A;0>.
model = ThreeStateModel(g2 * (math.sqrt(2) - 1), g2)
t = np.linspace(0, 160, 16001)
amp = three_state_lossless(model, t=t)
k = int(np.argmax(np.abs(amp.aA[: len(t) // 2]) ** 2))
print(f"lossless: P_A peaks at {abs(amp.aA[k]) ** 2:.6f} after {t[k]:.2f} fs")

# The same run through the full master equation.
spec = SystemSpec.create([model.g1, g2], gamma_s=0.0, gamma_d=0.0, gamma_p=0.0)
traj = propagate(initial_state("excited", spec), spec,
                 integ=IntegratorConfig(t_end=160.0, stride=0.1), observables=dark_observables(spec))
print(f"master equation: max C = {traj.max_concurrence()[0, 1]:.6f} at {traj.time_of_max():.1f} fs")

# Lossy: the long-time concurrence depends only on x = (g1 - g2)/(g1 + g2).
print("\n g2/g1   C(inf)")
for ratio in (1.0, 1.5, math.sqrt(3), 2.0, 3.0):
    c = three_state_asymptotic(ThreeStateModel.from_gamma(10.0, 10.0 * ratio, 100.0))[2]
    print(f"{ratio:6.3f}  {c:.4f}")
print("g2/g1 = sqrt(3) is the optimum, 3 sqrt(3)/8 =", round(3 * math.sqrt(3) / 8, 4))

spec = SystemSpec.create([10.0, 10.0 * math.sqrt(3)], gamma_s=100.0, gamma_d=0.0, gamma_p=0.0)
traj = propagate(initial_state("excited", spec), spec, integ=IntegratorConfig(t_end=1000.0, stride=5.0))
print(f"master equation at 1000 fs: C = {traj.pair_series(0, 1)[-1]:.4f}")

# Pure dephasing slowly destroys the trapped entanglement.
spec = SystemSpec.create([10.0, 10.0 * math.sqrt(3)], gamma_s=100.0, gamma_d=2.0)
traj = propagate(initial_state("excited", spec), spec, integ=IntegratorConfig(t_end=1000.0, stride=5.0))
print(f"with 2 meV dephasing at 1000 fs: C = {traj.pair_series(0, 1)[-1]:.4f}")
