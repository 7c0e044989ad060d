"""Run every config in ``configs/`` through the CLI, then aggregate with ``report``.

    python scripts/run_experiments.py [--out runs] [--skip-lp]

The LP train/eval configs read ``runs/lp/dataset``; they run after lp-generate.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from fixpoint_lab import cli

ORDER = ["reciprocal_demo", "regular_op", "manifold", "lipschitz_curve", "solver_bench",
         "lp_generate", "lp_train", "lp_eval"]


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--configs", default=str(Path(__file__).resolve().parent.parent / "configs"))
    p.add_argument("--skip-lp", action="store_true", help="skip dataset generation and GNN training")
    args = p.parse_args(argv)
    for name in ORDER:
        if args.skip_lp and name.startswith("lp_"):
            continue
        cfg = Path(args.configs) / f"{name}.json"
        kind = name.replace("_", "-")
        print(f"== {kind}", flush=True)
        code = cli.main([kind, "--config", str(cfg), "--verbose"])
        if code:
            return code
    return cli.main(["report", "--out", "runs"])


if __name__ == "__main__":
    sys.exit(main())
