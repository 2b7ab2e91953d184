"""Small campaign per built-in adversary, printed side by side.

Usage: python demos/adversary_gallery.py [n_seeds]
"""

import sys
from dataclasses import replace

from planesync.harness import reference_scenario, run_monte_carlo

n = int(sys.argv[1]) if len(sys.argv) > 1 else 10
sc = reference_scenario(horizon=200)

print(f"{'adversary':<14} {'stabilized':>10} {'mean stb':>9} "
      f"{'max stb':>8} {'worst dev':>10}")
for adv in ("silent", "random_noise", "max_skew", "split_brain"):
    summary, _ = run_monte_carlo(replace(sc, adversary=adv), list(range(n)))
    mean = f"{summary.stab_mean:.1f}" if summary.stab_mean is not None else "-"
    print(f"{adv:<14} {summary.n_stabilized:>7}/{summary.n_runs:<2} {mean:>9} "
          f"{str(summary.stab_max):>8} {str(summary.max_precision_after_stb):>10}")
