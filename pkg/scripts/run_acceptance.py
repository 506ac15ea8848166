"""Run the named reproduction experiments and record their checks under results/.

    python scripts/run_acceptance.py                 # every experiment
    python scripts/run_acceptance.py kpp-table allen-cahn --log-every 500

Trajectories are cached in $LENO_CACHE (default ~/.cache/leno), so reruns only
pay for training.
"""

import argparse
import json
import sys
import time
from pathlib import Path

from leno.experiments import REPRO, format_checks, run_repro

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", default=sorted(REPRO))
    ap.add_argument("--out", default=str(ROOT / "results"))
    ap.add_argument("--log-every", type=int, default=0)
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failed = []
    for name in args.names:
        checks, info = run_repro(name, args.log_every)
        for line in format_checks(name, checks):
            print(line, flush=True)
        print(f"{name}: {info['seconds']:.0f} s", flush=True)
        record = {"checks": checks, "seconds": info["seconds"],
                  "finished": time.strftime("%Y-%m-%d %H:%M:%S")}
        (out / f"repro-{name}.json").write_text(json.dumps(record, indent=2))
        if not all(c["ok"] for c in checks):
            failed.append(name)
    if failed:
        print("failing: " + ", ".join(failed))
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
