"""SGD vs DAMP on the desk-scale robustness config, with a per-seed breakdown.

    python3 scripts/run_desk_robustness.py [--config configs/desk_robustness.ini] [--data-seeds 100 200]

With several ``--data-seeds`` the whole experiment is repeated per data seed
and the overall DAMP win rate is reported.
"""

import argparse
import re
from pathlib import Path

import numpy as np

from perturbtrain.cli import run_benchmark
from perturbtrain.config import parse_config_text
from perturbtrain.corrupt import CORRUPTIONS
from perturbtrain.metrics import mean_error, read_records

ROOT = Path(__file__).resolve().parent.parent


def one_run(text, out):
    cfg = parse_config_text(text)
    run_benchmark(cfg, out, force=True)
    records = read_records(Path(out) / "records.csv")
    rows = []
    for seed in cfg.seeds:
        per = {
            c: mean_error([r for r in records if r.corruption == c], "DAMP", seed)
            - mean_error([r for r in records if r.corruption == c], "SGD", seed)
            for c in CORRUPTIONS
        }
        rows.append(
            dict(
                seed=seed,
                sgd=mean_error(records, "SGD", seed),
                damp=mean_error(records, "DAMP", seed),
                clean_gap=mean_error(records, "DAMP", seed, clean=True) - mean_error(records, "SGD", seed, clean=True),
                per=per,
            )
        )
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(ROOT / "configs" / "desk_robustness.ini"))
    ap.add_argument("--out", default=str(ROOT / "results" / "desk_robustness"))
    ap.add_argument("--data-seeds", type=int, nargs="*")
    args = ap.parse_args()
    text = Path(args.config).read_text()
    data_seeds = args.data_seeds or [None]
    wins = total = 0
    for ds in data_seeds:
        run_text = text if ds is None else re.sub(r"^data_seed = .*$", f"data_seed = {ds}", text, flags=re.M)
        out = args.out if ds is None else f"{args.out}_data{ds}"
        rows = one_run(run_text, out)
        print(f"== {out}")
        print("seed  SGD_corr  DAMP_corr  clean_gap_pp  " + " ".join(c[:6] for c in CORRUPTIONS))
        for r in rows:
            print(
                f"{r['seed']:>4}  {r['sgd']:.4f}    {r['damp']:.4f}     {100 * r['clean_gap']:+.2f}        "
                + " ".join(f"{v:+.3f}" for v in r["per"].values())
            )
        w = sum(r["damp"] < r["sgd"] for r in rows)
        print(f"DAMP wins {w}/{len(rows)}; mean clean gap {100 * np.mean([r['clean_gap'] for r in rows]):+.2f} pp")
        wins += w
        total += len(rows)
    if len(data_seeds) > 1:
        print(f"overall DAMP win rate {wins}/{total}")


if __name__ == "__main__":
    main()
