#!/usr/bin/env python3
"""Command line entry point for the space-time POD benchmarks.

Usage:
    python3 scripts/run_experiment.py --experiment single-run
    python3 scripts/run_experiment.py --config configs/distribution.toml --out dist.csv
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from stgpod.cli_bench import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
