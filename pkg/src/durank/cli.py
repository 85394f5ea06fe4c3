"""Command-line entry point: ``durank <command> [flags]``.

Commands: synth, train, eval, gradcheck, sweep, report. Exit codes: 0 on
success, 2 config errors, 3 data errors, 4 numeric errors (including a failed
gradient check), 5 format errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings
from dataclasses import fields, replace
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import METHODS, TrainConfig, config_hash
from .data import load_manifest
from .errors import ConfigError, DurankError, NumericError
from .experiments import SWEEP_AXES, evaluate, run_sweep
from .gradcheck import TOLERANCE, run_gradcheck
from .plotting import line_chart, read_series_csv, render_report
from .sampler import PER_DOMAIN, POOLED
from .synth import SyntheticSpec, generate, oracle_valid_fraction, read_labels, write_corpus
from .sampler import SamplerConfig, build_pairs
from .trainer import train

log = logging.getLogger("durank")

PATH_KEYS = ("manifest", "features", "eval_manifest", "eval_features", "out")
_TRAIN_FLAGS = {
    "method": "method", "n": "n", "t": "t", "batch_size": "batch_size", "lr": "lr",
    "momentum": "momentum", "weight_decay": "weight_decay", "epochs": "epochs", "margin": "margin",
    "p": "p", "seed": "seed", "domain": "domain", "pairs": "target_pairs",
}


def _add_train_flags(p):
    p.add_argument("--config", help="JSON run config; flags override its values")
    p.add_argument("--manifest")
    p.add_argument("--features")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--n", type=int, help="pairs per softmax group")
    p.add_argument("--t", type=int, help="groups per batch")
    p.add_argument("--batch-size", type=int, help="pairs per batch (b = n*t)")
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--p", type=float, help="EM noise prior (default 1/n)")
    p.add_argument("--short-lo", type=float)
    p.add_argument("--short-hi", type=float)
    p.add_argument("--long-lo", type=float)
    p.add_argument("--long-hi", type=float)
    p.add_argument("--seed", type=int, help="falls back to $DURANK_SEED, then 0")
    p.add_argument("--domain", help="train on one domain only")
    p.add_argument("--pooled", action="store_true", help="pairs may cross domains")
    p.add_argument("--pairs", type=int, help="number of training pairs to sample")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")


def run_config(args):
    """Merge ``--config`` JSON, flags and ``$DURANK_SEED`` into (TrainConfig, paths)."""
    doc = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    paths = {k: doc.pop(k, None) for k in PATH_KEYS}
    train_keys = {f.name for f in fields(TrainConfig)}
    unknown = set(doc) - train_keys
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    cfg = TrainConfig.from_json(doc)
    over = {}
    for flag, key in _TRAIN_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            over[key] = v
    if getattr(args, "pooled", False):
        over["domain_scope"] = POOLED
    s_lo, s_hi = cfg.short_range
    l_lo, l_hi = cfg.long_range
    s_lo = args.short_lo if getattr(args, "short_lo", None) is not None else s_lo
    s_hi = args.short_hi if getattr(args, "short_hi", None) is not None else s_hi
    l_lo = args.long_lo if getattr(args, "long_lo", None) is not None else l_lo
    l_hi = args.long_hi if getattr(args, "long_hi", None) is not None else l_hi
    over["short_range"], over["long_range"] = (s_lo, s_hi), (l_lo, l_hi)
    if "seed" not in over and "seed" not in doc and os.environ.get("DURANK_SEED"):
        try:
            over["seed"] = int(os.environ["DURANK_SEED"])
        except ValueError:
            raise ConfigError("DURANK_SEED must be an integer") from None
    cfg = replace(cfg, **over)
    cfg.resolve()
    for k in PATH_KEYS:
        if getattr(args, k, None) is not None:
            paths[k] = getattr(args, k)
    return cfg, paths


def _require(paths, *keys):
    missing = [k for k in keys if not paths.get(k)]
    if missing:
        raise ConfigError("missing " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _out_dir(path, force, names):
    out = Path(path)
    clash = [out / n for n in names if (out / n).exists()]
    if clash and not force:
        raise ConfigError(f"{clash[0]} exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args):
    spec = SyntheticSpec()
    if args.spec:
        spec = SyntheticSpec.from_json(json.loads(Path(args.spec).read_text()))
    over = {k: getattr(args, k) for k in ("num_short", "num_long", "cluster_sep", "noise_sigma",
                                           "highlight_frac_short", "highlight_frac_long",
                                           "num_domains", "domain_sep", "num_eval")
            if getattr(args, k) is not None}
    if args.seed is not None:
        over["seed"] = args.seed
    elif os.environ.get("DURANK_SEED"):
        over["seed"] = int(os.environ["DURANK_SEED"])
    spec = replace(spec, **over)
    corpus = generate(spec)
    write_corpus(corpus, args.out, force=args.force)
    pairs = build_pairs(corpus.train, SamplerConfig(target_pairs=max(10000, corpus.train.total_segments),
                                                    seed=spec.seed, domain_scope=POOLED,
                                                    short_range=spec.short_range, long_range=spec.long_range))
    frac = oracle_valid_fraction(pairs, corpus.train, corpus.labels)
    summary = {"videos": {k: len(getattr(corpus, k)) for k in ("train", "heldout", "eval")},
               "segments": {k: getattr(corpus, k).total_segments for k in ("train", "heldout", "eval")},
               "expected_valid_fraction": spec.expected_valid_fraction,
               "sampled_valid_fraction": frac, "pairs_checked": len(pairs),
               "spec_hash": config_hash(spec.to_json())}
    Path(args.out, "synth_report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_train(args):
    cfg, paths = run_config(args)
    _require(paths, "manifest", "features", "out")
    names = ("checkpoint.drnk", "history.csv", "history.jsonl", "config.json")
    out = _out_dir(paths["out"], args.force or bool(args.resume), names)
    dataset = load_manifest(paths["manifest"], paths["features"])
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
    ckpt_path = out / "checkpoint.drnk"
    effective = {"train": cfg.to_json(), "paths": paths, "config_hash": cfg.hash()}
    (out / "config.json").write_text(json.dumps(effective, indent=2, sort_keys=True) + "\n")

    def checkpoint_epoch(result):
        save_checkpoint(result.checkpoint(), ckpt_path)

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = train(cfg, dataset, resume=resume, stop_after=args.stop_after,
                       on_epoch_end=checkpoint_epoch)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    save_checkpoint(result.checkpoint(), ckpt_path)
    result.history.write_jsonl(out / "history.jsonl")
    result.history.write_csv(out / "history.csv")
    xlabel, x, series = read_series_csv(out / "history.csv")
    line_chart(x, series, out / "history.svg", xlabel=xlabel, ylabel="value", title=f"{cfg.method} training")
    print(json.dumps({"checkpoint": str(ckpt_path), "epochs": result.epoch,
                      "final_loss": result.history.losses[-1] if len(result.history) else None,
                      "config_hash": cfg.hash()}, sort_keys=True))
    return 0


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    cfg = TrainConfig.from_json(ckpt.config)
    dataset = load_manifest(args.manifest, args.features)
    oracle = read_labels(args.oracle_labels) if args.oracle_labels else None
    report = evaluate(args.protocol, dataset, scorer=ckpt.scorer, validity=ckpt.validity,
                      classifier=ckpt.classifier, oracle_labels=oracle, num_pairs=args.pairs,
                      seed=args.seed, short_range=cfg.short_range, long_range=cfg.long_range,
                      config=ckpt.config, config_hash=ckpt.config_hash)
    out = _out_dir(args.out, args.force, ("report.json", "report.csv"))
    report.write_json(out / "report.json")
    report.write_csv(out / "report.csv", {r.id: r.domain for r in dataset})
    print(json.dumps({"protocol": report.protocol, "overall": report.overall,
                      "success_rate": report.success_rate,
                      "weighted_success_rate": report.weighted_success_rate,
                      "config_hash": report.config_hash}, sort_keys=True))
    return 0


def cmd_gradcheck(args):
    results = run_gradcheck(args.seed, args.trials, corrupt=args.corrupt_backward)
    rows = [("trial_seed", "max_rel_error", "worst_network", "worst_tensor", "worst_index", "checked", "status")]
    for r in results:
        rows.append((r.seed, f"{r.max_rel_error:.3e}", *r.worst, r.checked, "pass" if r.passed else "FAIL"))
    widths = [max(len(str(row[i])) for row in rows) for i in range(len(rows[0]))]
    for row in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))
    worst = max(results, key=lambda r: r.max_rel_error)
    failed = sum(not r.passed for r in results)
    print(f"worst: seed {worst.seed} {worst.worst[0]}/{worst.worst[1]}[{worst.worst[2]}] "
          f"rel_error {worst.max_rel_error:.3e} (tolerance {TOLERANCE:g}); {failed} of {len(results)} failed")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
    if failed:
        raise NumericError(f"gradient check failed on {failed} trial(s)")
    return 0


def cmd_sweep(args):
    cfg, paths = run_config(args)
    _require(paths, "manifest", "features", "eval_manifest", "eval_features", "out")
    out = _out_dir(paths["out"], args.force, (f"sweep_{args.axis}.csv",))
    train_ds = load_manifest(paths["manifest"], paths["features"])
    eval_ds = load_manifest(paths["eval_manifest"], paths["eval_features"])
    grid = [g for g in args.grid.split(",") if g]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    rows = run_sweep(args.axis, grid, train_ds, eval_ds, cfg, seeds)
    keys = list(rows[0]) if rows else ["setting", "metric"]
    keys = ["setting", "metric"] + [k for k in keys if k not in ("setting", "metric")]
    target = out / f"sweep_{args.axis}.csv"
    with open(target, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for row in rows:
            w.writerow([row.get(k, "") if not isinstance(row.get(k), float) else repr(row[k]) for k in keys])
    x = [r["setting"] for r in rows]
    line_chart(x, {"median mAP": [r["metric"] for r in rows]}, out / f"sweep_{args.axis}.svg",
               xlabel=args.axis, ylabel="held-out mAP", title=f"sweep over {args.axis}")
    (out / f"sweep_{args.axis}.config.json").write_text(
        json.dumps({"train": cfg.to_json(), "config_hash": cfg.hash(), "grid": grid, "seeds": seeds},
                   indent=2, sort_keys=True) + "\n")
    print(target)
    return 0


def cmd_report(args):
    for p in args.inputs:
        if not Path(p).exists():
            raise ConfigError(f"input {p} does not exist")
    written = render_report(args.inputs, args.out, fmt=args.format)
    for p in written:
        print(p)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="durank", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-truth synthetic corpus")
    p.add_argument("--spec", help="JSON synthetic spec")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true")
    p.add_argument("--num-short", type=int)
    p.add_argument("--num-long", type=int)
    p.add_argument("--num-eval", type=int)
    p.add_argument("--cluster-sep", type=float)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--highlight-frac-short", type=float)
    p.add_argument("--highlight-frac-long", type=float)
    p.add_argument("--num-domains", type=int)
    p.add_argument("--domain-sep", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model, write checkpoint and history")
    _add_train_flags(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-after", type=int, help="stop after this many completed epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--protocol", choices=("map", "top5map", "successrate"), default="map")
    p.add_argument("--pairs", type=int, default=10000, help="test pairs for successrate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle-labels", help="score with planted labels instead of the model")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--out", help="optional CSV of the table")
    p.add_argument("--corrupt-backward", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="ablation sweep over n, thresholds or training-set size")
    _add_train_flags(p)
    p.add_argument("--eval-manifest")
    p.add_argument("--eval-features")
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--grid", required=True, help="comma-separated settings, e.g. 1,2,8,64 or 8:15:45:60")
    p.add_argument("--seeds", help="comma-separated seeds; median metric is reported")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="render CSVs to charts and a summary table")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("svg", "png", "pdf"), default="svg")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DurankError as exc:
        print(f"durank {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
