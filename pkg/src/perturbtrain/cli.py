"""Command line entry point: train, eval, benchmark, verify, report."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import verify
from .config import ExperimentConfig, parse_config
from .corrupt import CorruptionSpec, corrupt_dataset
from .data import load_cifar10_bin, load_idx, split, synth_blobs
from .errors import ConfigError, PerturbTrainError
from .metrics import (
    MetricsRecord,
    aggregate,
    predictive_error,
    read_records,
    write_aggregate,
    write_records,
)
from .network import backward, load_checkpoint, save_checkpoint
from .train import default_threads, fit

log = logging.getLogger("perturbtrain")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def load_data(cfg: ExperimentConfig, seed: int):
    """(train, test) for one seed. Synthetic blobs are redrawn per seed."""
    d = cfg.data
    kind = d["kind"]
    if kind == "blobs":
        ds = synth_blobs(d["n"], d["classes"], d["dim"], d["spread"], d["data_seed"] + seed)
        return split(ds, d["test_fraction"], d["data_seed"] + seed)
    if kind == "idx":
        try:
            train = load_idx(d["train_images"], d["train_labels"])
        except KeyError as exc:
            raise ConfigError(f"idx data needs {exc.args[0]} in [data]") from None
        if "test_images" in d:
            return train, load_idx(d["test_images"], d["test_labels"])
        return split(train, d["test_fraction"], d["data_seed"])
    try:
        train = load_cifar10_bin(d["train_path"])
    except KeyError:
        raise ConfigError("cifar10 data needs train_path in [data]") from None
    if "test_path" in d:
        return train, load_cifar10_bin(d["test_path"])
    return split(train, d["test_fraction"], d["data_seed"])


def evaluate(net, test, method: str, seed: int, corruptions, severities) -> list[MetricsRecord]:
    """Clean error (severity 0) plus one record per (corruption, severity).

    Errors are rounded to the 6 decimals the CSV keeps, so tables built from
    fresh, cached or re-read records agree exactly.
    """
    records = [MetricsRecord(method, "None", 0, round(predictive_error(net, test), 6), seed)]
    draw = 0
    for kind in corruptions:
        for sev in severities:
            draw += 1
            corrupted = corrupt_dataset(CorruptionSpec(kind, sev), test, seed, draw)
            records.append(MetricsRecord(method, kind, sev, round(predictive_error(net, corrupted), 6), seed))
    return records


def _threads(arg):
    return default_threads() if arg is None else max(1, arg)


def train_and_evaluate(cfg: ExperimentConfig, method: str, seed: int, threads=1, log_dir=None):
    train, test = load_data(cfg, seed)
    net, tlog = fit(cfg.run_config(method, seed), train, threads=threads)
    if log_dir is not None:
        tlog.write_csv(Path(log_dir) / f"{method}_{seed}.csv")
    return net, evaluate(net, test, method, seed, cfg.corruptions, cfg.severities)


def run_benchmark(cfg: ExperimentConfig, out=None, force: bool = False, threads=None, baseline_records=None) -> int:
    """Train every (method, seed), evaluate all corruption cells, write CSVs.

    Results per (method, seed) are cached under ``out/cache`` by a config
    fingerprint, so reruns never retrain an unchanged baseline.
    """
    out = Path(out or cfg.output)
    if threads is None:
        threads = cfg.threads if cfg.threads > 1 else default_threads()
    baseline = None
    if baseline_records is not None:
        baseline = [r for r in read_records(baseline_records) if r.method == "SGD" and r.seed in cfg.seeds]
        if {r.seed for r in baseline} != set(cfg.seeds):
            raise ConfigError(f"{baseline_records} lacks SGD records for every seed")
    elif "SGD" not in cfg.methods:
        raise ConfigError("benchmark needs the SGD baseline in methods (or a baseline records file)")
    records_path = out / "records.csv"
    if records_path.exists() and not force:
        raise FileExistsError(f"{records_path} exists; pass --force to overwrite")
    (out / "cache").mkdir(parents=True, exist_ok=True)
    (out / "logs").mkdir(exist_ok=True)

    records = list(baseline or [])
    for seed in cfg.seeds:
        for method in cfg.methods:
            cached = out / "cache" / f"{method}_{seed}_{cfg.fingerprint(method, seed)}.csv"
            if cached.exists():
                log.info("cached: %s seed %d", method, seed)
                recs = read_records(cached)
            else:
                log.info("training %s seed %d", method, seed)
                _, recs = train_and_evaluate(cfg, method, seed, threads, out / "logs")
                write_records(recs, cached)
            records.extend(recs)
    write_records(records, records_path)
    write_aggregate(aggregate(records), out / "aggregate.csv")
    (out / "config_echo.txt").write_text(cfg.echo())
    return EXIT_OK


def run_verify(seed: int = 0, out=None, backward_fn=backward) -> int:
    """Run the verification suite; exit status 0 iff every hard check passes."""
    reports = verify.run_suite(seed, backward_fn)
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.check:32s} measured={r.measured:.6g} threshold={r.threshold:.3g}")
    if out is not None:
        out = Path(out)
        target = out / "verify.jsonl" if out.suffix != ".jsonl" else out
        target.parent.mkdir(parents=True, exist_ok=True)
        verify.write_jsonl(reports, target)
    return EXIT_OK if verify.suite_passed(reports) else EXIT_FAIL


def _cmd_train(args):
    cfg = parse_config(args.config)
    method = args.method or cfg.methods[0]
    seed = cfg.seeds[0] if args.seed is None else args.seed
    out = Path(args.out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / f"{method}_{seed}.ptnn"
    if ckpt.exists() and not args.force:
        raise FileExistsError(f"{ckpt} exists; pass --force to overwrite")
    train, _ = load_data(cfg, seed)
    net, tlog = fit(cfg.run_config(method, seed), train, threads=_threads(args.threads))
    save_checkpoint(net, ckpt)
    tlog.write_csv(out / f"{method}_{seed}_log.csv")
    print(ckpt)
    return EXIT_OK


def _cmd_eval(args):
    cfg = parse_config(args.config)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    net = load_checkpoint(args.checkpoint)
    _, test = load_data(cfg, seed)
    label = args.method or Path(args.checkpoint).stem.split("_")[0]
    out = Path(args.out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"eval_{label}_{seed}.csv"
    if path.exists() and not args.force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")
    write_records(evaluate(net, test, label, seed, cfg.corruptions, cfg.severities), path)
    print(path)
    return EXIT_OK


def _cmd_benchmark(args):
    cfg = parse_config(args.config)
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seeds=(args.seed,))
    return run_benchmark(cfg, args.out, args.force, args.threads, args.baseline)


def _cmd_verify(args):
    return run_verify(0 if args.seed is None else args.seed, args.out)


def _cmd_report(args):
    records = read_records(args.records)
    rows = aggregate(records)
    out = Path(args.out) if args.out else Path(args.records).with_name("aggregate.csv")
    if out.exists() and not args.force:
        raise FileExistsError(f"{out} exists; pass --force to overwrite")
    write_aggregate(rows, out)
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perturbtrain", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--force", action="store_true")
        p.add_argument("--threads", type=int)

    p = sub.add_parser("train", help="train one method and save a checkpoint")
    common(p)
    p.add_argument("--method")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on clean and corrupted test data")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--method", help="label written to the records (default: checkpoint name)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("benchmark", help="train, evaluate and tabulate corruption errors")
    common(p)
    p.add_argument("--baseline", help="records CSV holding SGD baseline results")
    p.set_defaults(func=_cmd_benchmark)

    p = sub.add_parser("verify", help="run the numerical verification suite")
    common(p, config=False)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("report", help="aggregate a records CSV into a CE table")
    common(p, config=False)
    p.add_argument("--records", required=True)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PerturbTrainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
