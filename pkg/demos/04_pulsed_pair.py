"""Creating entanglement from the ground state with a short laser pulse.

The pulse mainly drives the plasmon, whose large dipole makes it act as a
local field amplifier.  Strong pulses populate many plasmon levels, so the
truncation is sized from the driven classical amplitude first.
"""

import warnings

from plasmonqd.dynamics import (
    IntegratorConfig,
    PulseSpec,
    TruncationWarning,
    initial_state,
    peak_plasmon_number,
    propagate,
    suggest_levels,
)
from plasmonqd.model import SystemSpec

pulse = PulseSpec(fluence=263.4, tau=12.5)
spec = SystemSpec.create([12.8, 24.9], gamma_s=186.0, gamma_d=0.0)
print(f"peak mean plasmon number {peak_plasmon_number(spec, pulse):.1f}, "
      f"suggested levels {suggest_levels(spec, pulse)}")

for gamma_d, levels in ((0.0, 25), (0.0, suggest_levels(spec, pulse)), (2.0, 25)):
    spec = SystemSpec.create([12.8, 24.9], gamma_s=186.0, gamma_d=gamma_d, n_levels=levels)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", TruncationWarning)
        traj = propagate(initial_state("ground", spec), spec, pulse, IntegratorConfig(t_end=2000.0))
    note = " (truncation flagged)" if caught else ""
    print(f"gamma_d = {gamma_d} meV, {levels} levels: max C = {traj.max_concurrence()[0, 1]:.4f} "
          f"at {traj.time_of_max():.0f} fs, top level weight {traj.top_level_population.max():.1e}{note}")
