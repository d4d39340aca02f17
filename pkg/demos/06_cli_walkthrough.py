"""Driving the command line interface from Python.

Every run reads a ``key = value`` config and writes CSV files that start
with a provenance header (package version, mode, config hash, seed).
"""

import tempfile
from pathlib import Path

from plasmonqd import cli

work = Path(tempfile.mkdtemp(prefix="plasmonqd-demo-"))
config = work / "lossy.cfg"
config.write_text(
    """
mode = simulate
qd.1.g_mev = 10
qd.2.g_mev = 17.32
qd.all.gamma_d_mev = 0
plasmon.gamma_s_mev = 100
initial.state = excited
integrator.t_end_fs = 800
integrator.stride_fs = 2
"""
)
code = cli.main(["simulate", "--config", str(config), "--out", str(work / "run")])
print("exit code", code)
print((work / "run" / "summary.csv").read_text())

config = work / "contour.cfg"
config.write_text("mode = analytic-dark\nanalytic.n_qds = 3\n")
cli.main(["analytic", "--config", str(config), "--out", str(work / "contour")])
print((work / "contour" / "summary.csv").read_text())

# Configuration mistakes give exit code 2 and write nothing.
bad = work / "bad.cfg"
bad.write_text("mode = simulate\nqd.1.colour = red\n")
print("bad config exit code", cli.main(["simulate", "--config", str(bad), "--out", str(work / "bad")]))
print("outputs in", work)
