"""Record a traced run through the CLI, then replay and diff it.

Usage: python demos/record_and_replay.py [seed]
"""

import sys
import tempfile

from planesync.cli import main

seed = sys.argv[1] if len(sys.argv) > 1 else "42"
with tempfile.TemporaryDirectory() as out:
    print(f"$ planesync run --seed {seed} --trace-level core --out {out}")
    main(["run", "--seed", seed, "--trace-level", "core", "--out", out])
    trace = f"{out}/trace_seed{seed}.jsonl"
    print(f"\n$ planesync replay --seed {seed} --trace {trace}")
    rc = main(["replay", "--seed", seed, "--trace", trace])
    sys.exit(rc)
