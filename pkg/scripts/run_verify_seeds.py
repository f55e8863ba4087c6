"""Run the verification suite over several root seeds and summarise.

    python3 scripts/run_verify_seeds.py --seeds 0 1 2 --out results/verify
"""

import argparse
from pathlib import Path

from perturbtrain import verify


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default="results/verify")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failed = 0
    for seed in args.seeds:
        reports = verify.run_suite(seed)
        verify.write_jsonl(reports, out / f"verify_seed{seed}.jsonl")
        bad = [r.check for r in reports if r.hard and not r.passed]
        t1 = next(r for r in reports if r.check == "constructed_multiplier")
        print(
            f"seed {seed}: {len(reports) - len(bad)}/{len(reports)} passed"
            f"  constructed-multiplier gap {t1.details['gap']:+.4g}"
            f"  masked {t1.details['masked_fraction']:.2%}"
            + (f"  FAILED: {', '.join(bad)}" if bad else "")
        )
        failed += bool(bad)
    raise SystemExit(1 if failed else 0)


if __name__ == "__main__":
    main()
