"""Resolve the reference configuration, run one seed, print the verdict.

Usage: python demos/quickstart.py [seed]
"""

import sys

from planesync.harness import reference_scenario, run_once

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
sc = reference_scenario()
rp = sc.resolved

print("derived constants")
for name, val in [
    ("cycle T (ticks)", rp.T),
    ("precision target eps0", rp.eps0),
    ("stability window eps1", rp.eps1),
    ("weak window eps2", rp.eps2),
    ("grandmaster lifetime g0", rp.dv.g0),
    ("coin rate q0", rp.dv.q0),
    ("averaging branch p0", rp.dv.p0),
    ("per-attempt bound q1", float(rp.dv.q1_bound)),
    ("observation window T_max (ticks)", float(rp.dv.T_max)),
]:
    print(f"  {name:<34} {val}")

print(f"\nrunning seed {seed} from a random initial state ...")
r = run_once(sc, seed)
print(f"  stabilized at window     {r.stabilization_window}")
print(f"  windows simulated        {r.windows_run}")
print(f"  worst deviation (ticks)  {r.max_precision}")
print(f"  worst after stabilizing  {r.max_precision_after_stb}")
print(f"  resynchronization points {r.resync_point_count}")
