"""FGSM error of SGD- and DAMP-trained nets on 64-d blobs.

    python3 scripts/run_fgsm.py --seeds 0 1 2 --eps 0.01 0.02 0.05
"""

import argparse

import numpy as np

from perturbtrain.corrupt import fgsm
from perturbtrain.data import split, synth_blobs
from perturbtrain.network import predict
from perturbtrain.train import fit, make_run_config


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--eps", type=float, nargs="+", default=[0.01, 0.02, 0.05])
    ap.add_argument("--epochs", type=int, default=10)
    args = ap.parse_args()
    print("method  seed  " + "  ".join(f"eps={e:g}" for e in args.eps))
    for seed in args.seeds:
        train, test = split(synth_blobs(5000, 10, 64, 0.25, 100 + seed), 0.3, 100 + seed)
        for method in ("SGD", "DAMP"):
            cfg = make_run_config(
                method, sigma=0.2, epochs=args.epochs, sub_batches=8 if method == "DAMP" else 1, seed=seed
            )
            net, _ = fit(cfg, train)
            errs = []
            for eps in args.eps:
                adv = np.stack([fgsm(net, x, y, eps) for x, y in zip(test.inputs, test.labels)])
                errs.append(float(np.mean(predict(net, adv) != test.labels)))
            print(f"{method:6s}  {seed:4d}  " + "  ".join(f"{e:.4f}" for e in errs))


if __name__ == "__main__":
    main()
