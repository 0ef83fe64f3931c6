"""Command-line front end: ``kgad inject | train | eval | score | baseline | gradcheck | bench``.

Exit codes are 0 on success, 1 on runtime failures (I/O, corrupt inputs,
vocabulary mismatches, diverging training) and 2 on usage errors (bad flags,
out-of-range values, unknown config keys). Every command that writes files
also writes a ``*.manifest.json`` next to its main output.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .baselines import METHODS, BaselineConfig, score_baseline, train_baseline
from .checkpoint import CheckpointError, check_vocab, load_checkpoint, save_checkpoint
from .corruption import CorruptionError, inject_anomalies, read_labeled, write_labeled
from .evaluation import MetricError, build_report, run_metrics, score_all, write_csv, write_report
from .graph import TripleFormatError, load_triples
from .trainer import ConfigError, TrainConfig, TrainingError, parse_value, read_config_file, train

log = logging.getLogger("kgad")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SEED_ENV = "KGAD_SEED"


class UsageError(Exception):
    """Bad flag values detected after argument parsing."""


# -- manifests -------------------------------------------------------------------


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(path: str | Path, command: str, config: dict, inputs: Sequence[str | Path],
                   outputs: Sequence[str | Path], seeds: Sequence[int], started: str) -> dict:
    """Write a run manifest and return it.

    ``fingerprint`` hashes everything except the timestamps, so two runs with
    identical inputs and flags share it.
    """
    body = {
        "command": command,
        "config": config,
        "inputs": {str(p): file_sha256(p) for p in inputs},
        "outputs": {str(p): file_sha256(p) for p in outputs},
        "seeds": [int(s) for s in seeds],
        "version": __version__,
    }
    body["fingerprint"] = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
    manifest = {**body, "started": started, "finished": _now()}
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def manifest_path(output: str | Path) -> Path:
    output = Path(output)
    if output.is_dir():
        return output / "manifest.json"
    return output.with_name(output.name + ".manifest.json")


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


# -- argument types -------------------------------------------------------------


def _ratio(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"ratio must lie in (0, 1), got {v}")
    return v


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a value >= 0, got {v}")
    return v


def _pos_int(text: str) -> int:
    v = _nonneg_int(text)
    if v == 0:
        raise argparse.ArgumentTypeError("expected a value >= 1")
    return v


def _key_value(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


# -- commands -------------------------------------------------------------------


def cmd_inject(args) -> int:
    started = _now()
    seed = default_seed() if args.seed is None else args.seed
    clean = load_triples(args.input)
    corpus = inject_anomalies(clean, args.ratio, np.random.default_rng(seed))
    write_labeled(corpus, args.output)
    write_manifest(manifest_path(args.output), "inject", {"ratio": args.ratio}, [args.input],
                   [args.output], [seed], started)
    print(f"wrote {len(corpus)} triples ({len(corpus) - corpus.n_clean} anomalies) to {args.output}")
    return EXIT_OK


def resolve_train_config(args) -> TrainConfig:
    """Defaults, then the config file, then ``--set`` pairs, then dedicated flags."""
    values: dict = {}
    if args.config:
        values.update(read_config_file(args.config))
    for key, text in args.set or []:
        if key not in TrainConfig.keys():
            raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(TrainConfig.keys())}")
        values[key] = parse_value(key, text)
    for key in ("runs", "epochs", "dim", "seed"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if "seed" not in values:
        values["seed"] = default_seed()
    return TrainConfig.from_dict(values)


def cmd_train(args) -> int:
    started = _now()
    config = resolve_train_config(args)
    if args.show_config:
        for key, value in config.to_dict().items():
            print(f"{key} = {value}")
        return EXIT_OK
    if not args.corpus:
        raise UsageError("--corpus is required unless --show-config is given")
    corpus = read_labeled(args.corpus)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(
        "".join(f"{k} = {v}\n" for k, v in config.to_dict().items()), encoding="utf-8")
    outputs = [out / "config.txt"]
    seeds = []
    for k in range(config.runs):
        seed = config.seed + k
        t0 = time.perf_counter()
        store, history = train(corpus, config, seed=seed)
        ckpt = out / f"run{k}.ckpt"
        save_checkpoint(ckpt, store, corpus.graph, config.to_dict(),
                        extra={"seed": seed, "best_epoch": history.best_epoch})
        hist = out / f"run{k}.history.json"
        hist.write_text(history.to_json() + "\n", encoding="utf-8")
        outputs += [ckpt, hist]
        seeds.append(seed)
        final = history.epochs[-1].loss if history.epochs else float("nan")
        print(f"run {k}: seed {seed}, {len(history.epochs)} epochs, final loss {final:.6f}, "
              f"best epoch {history.best_epoch} ({time.perf_counter() - t0:.1f}s)")
    write_manifest(manifest_path(out), "train", config.to_dict(), [args.corpus], outputs, seeds, started)
    return EXIT_OK


def _load_checkpoints(paths, graph):
    loaded = []
    for path in paths:
        store, header = load_checkpoint(path)
        check_vocab(header, graph)
        loaded.append((store, header))
    return loaded


def _score_kwargs(header: dict, args) -> dict:
    cfg = header.get("config", {})
    return {
        "m": args.neighbor_count or cfg.get("neighbor_count"),
        "alpha": cfg.get("alpha", TrainConfig.alpha),
        "use_sigmoid": bool(cfg.get("aggregation_sigmoid", False)),
    }


def cmd_eval(args) -> int:
    started = _now()
    corpus = read_labeled(args.corpus)
    blocks = []
    for store, header in _load_checkpoints(args.checkpoints, corpus.graph):
        ranked = score_all(store, corpus, **_score_kwargs(header, args))
        blocks.append(run_metrics(ranked, corpus.labels))
    report = build_report(blocks)
    write_report(report, args.out)
    outputs = [args.out]
    if args.csv:
        write_csv(report, args.csv)
        outputs.append(args.csv)
    write_manifest(manifest_path(args.out), "eval", {"neighbor_count": args.neighbor_count},
                   [args.corpus, *args.checkpoints], outputs, [], started)
    _print_summary(report)
    return EXIT_OK


def cmd_score(args) -> int:
    started = _now()
    corpus = read_labeled(args.corpus)
    (store, header), = _load_checkpoints([args.checkpoint], corpus.graph)
    ranked = score_all(store, corpus, **_score_kwargs(header, args))
    g = corpus.graph
    with Path(args.out).open("w", encoding="utf-8") as fh:
        for rank, (tid, s) in enumerate(zip(ranked.ids, ranked.scores), start=1):
            h, r, t = g.labeled(int(tid))
            fh.write(f"{rank}\t{h}\t{r}\t{t}\t{s:.17g}\n")
    write_manifest(manifest_path(args.out), "score", {"neighbor_count": args.neighbor_count},
                   [args.corpus, args.checkpoint], [args.out], [], started)
    print(f"ranked {len(ranked)} triples into {args.out}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    started = _now()
    seed = default_seed() if args.seed is None else args.seed
    corpus = read_labeled(args.corpus)
    blocks, seeds = [], []
    for k in range(args.runs):
        config = BaselineConfig(method=args.method, dim=args.dim, epochs=args.epochs, lr=args.lr,
                                gamma=args.gamma, batch_size=args.batch_size, seed=seed + k)
        store = train_baseline(corpus, config)
        blocks.append(run_metrics(score_baseline(store, corpus, args.method), corpus.labels))
        seeds.append(seed + k)
    report = build_report(blocks)
    write_report(report, args.out)
    config = BaselineConfig(method=args.method, dim=args.dim, epochs=args.epochs, lr=args.lr,
                            gamma=args.gamma, batch_size=args.batch_size, seed=seed).to_dict()
    write_manifest(manifest_path(args.out), "baseline", config, [args.corpus], [args.out],
                   seeds, started)
    _print_summary(report)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import gradcheck

    seed = default_seed() if args.seed is None else args.seed
    report = gradcheck(dim=args.dim, seed=seed)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_RUNTIME


def cmd_bench(args) -> int:
    from . import kernels
    from .bench import run_all

    print(f"kernel backend: {kernels.BACKEND}")
    for timing in run_all(dim=args.dim, batch=args.batch, m=args.m, repeat=args.repeat):
        print(timing.line())
    return EXIT_OK


def _print_summary(report: dict) -> None:
    p = report["precision_at"]
    print("P@K%: " + "  ".join(f"{k}:{p[k]:.4f}" for k in sorted(p, key=int)))
    print(f"AUC: {report['auc']:.4f}  anomaly mean {report['anomaly_mean_score']:.4f}  "
          f"clean mean {report['clean_mean_score']:.4f}")


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgad", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"kgad {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for progress, -vv for debug output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inject", help="add synthetic anomalies to a clean triple file")
    p.add_argument("--input", required=True, help="head<TAB>relation<TAB>tail file")
    p.add_argument("--ratio", required=True, type=_ratio, help="anomalies per clean triple")
    p.add_argument("--seed", type=int, help=f"defaults to ${SEED_ENV} or 0")
    p.add_argument("--output", required=True, help="labeled 4-column output file")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("train", help="train one or more detectors on a labeled corpus")
    p.add_argument("--corpus", help="labeled corpus (labels are not used for training)")
    p.add_argument("--config", help="file of 'key = value' lines")
    p.add_argument("--set", action="append", type=_key_value, metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--runs", type=_pos_int)
    p.add_argument("--epochs", type=_nonneg_int)
    p.add_argument("--dim", type=_pos_int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default="runs")
    p.add_argument("--show-config", action="store_true", help="print the resolved config and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank a corpus with trained checkpoints and report metrics")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoints", required=True, nargs="+")
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.add_argument("--csv", help="optional per-run CSV path")
    p.add_argument("--neighbor-count", type=_pos_int, help="override the sampled neighbour count")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="write every triple ranked by anomaly score")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="rank<TAB>head<TAB>relation<TAB>tail<TAB>score")
    p.add_argument("--neighbor-count", type=_pos_int)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("baseline", help="train and evaluate an embedding baseline")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--runs", type=_pos_int, default=1)
    p.add_argument("--epochs", type=_nonneg_int, default=BaselineConfig.epochs)
    p.add_argument("--dim", type=_pos_int, default=BaselineConfig.dim)
    p.add_argument("--lr", type=float, default=BaselineConfig.lr)
    p.add_argument("--gamma", type=float, default=BaselineConfig.gamma)
    p.add_argument("--batch-size", type=_pos_int, default=BaselineConfig.batch_size)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("gradcheck", help="finite-difference check of the training gradients")
    p.add_argument("--dim", type=_pos_int, default=8)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="time encoding and neighbour aggregation")
    p.add_argument("--dim", type=_pos_int, default=100)
    p.add_argument("--batch", type=_pos_int, default=512)
    p.add_argument("--m", type=_pos_int, default=204)
    p.add_argument("--repeat", type=_pos_int, default=3)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"kgad {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, TripleFormatError, CheckpointError, CorruptionError, MetricError,
            TrainingError, ValueError) as exc:
        print(f"kgad {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
