"""Reduced-scale LP study: dataset, implicit and explicit GNNs over three seeds,
Lipschitz/error curves for the first implicit seed, and a study.json verdict.

    python scripts/run_lp_study.py --out runs/lp_study [--seeds 0 1 2]
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from fixpoint_lab.experiments import LpStudyConfig, lp_study
from fixpoint_lab.util import write_json


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/lp_study")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = p.parse_args(argv)
    out = Path(args.out)
    study = lp_study(LpStudyConfig(seeds=args.seeds), out, log=lambda m: print(m, flush=True))
    write_json(out / "study.json", study)
    print(json.dumps({k: v for k, v in study.items() if k.endswith("pass")}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
