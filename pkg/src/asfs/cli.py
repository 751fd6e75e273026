"""Command-line entry point.

Subcommands: pretrain, select, evaluate, corrupt, sweep and verify. Every
command reads one YAML config (``--config``) plus ``--set a.b=value``
overrides. Outputs land under ``output_dir``::

    checkpoints/<run_id>/autoencoder.ckpt, selector.ckpt
    rankings/<run_id>/ranking.csv
    results/<run_id>/records.jsonl, table.tsv

Exit codes: 0 success, 1 verification mismatch, 2 bad config or input,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import functools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import checkpoint
from . import config as config_mod
from .data import LABELED, TEST, DataError, generate_synthetic, load_csv, minmax_scale, partition, save_csv
from .errors import ConfigError, DimensionError, NumericalError
from .harness import (ExperimentResult, build_autoencoder, cross_validate, downstream_eval,
                      label_budget_sweep, noise_robustness_sweep, noisy_copy, precision_at_k,
                      select_features)
from .pretext import AutoencoderModel, pretrain
from .selector import RANKING_MAGIC, read_ranking, write_ranking

log = logging.getLogger("asfs")

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3


class RankingError(ValueError):
    pass


# ------------------------------------------------------------- helpers


def load_dataset(cfg: config_mod.RunConfig, seed: int):
    """Source data, partitioned and scaled for ``seed``, without noise."""
    d = cfg.data
    if d.csv is not None:
        ds = load_csv(d.csv, d.label_column, d.header)
    else:
        spec = d.synthetic
        ds = generate_synthetic(replace(spec, seed=spec.seed + seed))
    ds = partition(ds, d.n_labeled, d.n_unlabeled, d.n_test, seed)
    return minmax_scale(ds)


def build_dataset(cfg: config_mod.RunConfig, seed: int):
    """Like :func:`load_dataset`, with the configured noise applied."""
    return noisy_copy(load_dataset(cfg, seed), cfg.noise_specs, seed)


def portable_config(cfg) -> dict:
    """The config as embedded in artifacts: everything except ``output_dir``."""
    d = cfg.to_dict()
    d.pop("output_dir", None)
    return d


def run_id(cfg) -> str:
    return f"{cfg.mode}-seed{cfg.seed}"


def out_path(cfg, kind, rid, name) -> Path:
    path = Path(cfg.output_dir) / kind / rid / name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def dump_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, allow_nan=True)


def append_record(path: Path, record: dict):
    """Append one JSON line and push it to disk before returning."""
    with open(path, "a") as fh:
        fh.write(dump_record(record) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def _say(args, msg):
    if not args.quiet:
        print(msg, flush=True)


# ------------------------------------------------------------ commands


def cmd_pretrain(cfg, args):
    if cfg.mode == "no-selfsup":
        raise ConfigError("mode no-selfsup does not use a pretrained autoencoder")
    ds = build_dataset(cfg, cfg.seed)
    model = build_autoencoder(ds.n_features, cfg.pretext, cfg.seed, use_location=(cfg.mode == "full"))

    def report(epoch, rec):
        _say(args, f"epoch {epoch:4d}  l_m {rec['l_m']:.6f}  l_r {rec['l_r']:.6f}  total {rec['total']:.6f}")

    pretrain(model, ds, cfg.pretext, seed=cfg.seed, on_epoch=report)
    path = out_path(cfg, "checkpoints", run_id(cfg), "autoencoder.ckpt")
    model.save(path, config_digest=cfg.digest(), config=portable_config(cfg))
    print(f"wrote {path}")
    return EXIT_OK


def _load_autoencoder(cfg, args, d):
    path = Path(args.checkpoint) if args.checkpoint else (
        Path(cfg.output_dir) / "checkpoints" / run_id(cfg) / "autoencoder.ckpt")
    if not path.is_file():
        raise ConfigError(f"mode {cfg.mode} needs a pretrained checkpoint; {path} not found "
                          "(run `asfs pretrain` or pass --checkpoint)")
    model, _ = AutoencoderModel.load(path)
    if model.d != d:
        raise DimensionError(f"checkpoint has d={model.d} but the dataset has d={d}")
    if model.use_location != (cfg.mode == "full"):
        raise ConfigError(f"checkpoint use_location={model.use_location} does not fit mode {cfg.mode}")
    return model


def cmd_select(cfg, args):
    ds = build_dataset(cfg, cfg.seed)
    ae = None if cfg.mode == "no-selfsup" else _load_autoencoder(cfg, args, ds.n_features)
    if not 1 <= cfg.k <= ds.n_features:
        raise ConfigError(f"k={cfg.k} outside [1, {ds.n_features}]")
    meta = {"config_digest": cfg.digest()}
    ranking, sel = select_features(ds, cfg.pipeline(), cfg.seed, cfg.mode, autoencoder=ae, metadata=meta)
    rid = run_id(cfg)
    sel_path = out_path(cfg, "checkpoints", rid, "selector.ckpt")
    sel.save(sel_path, config_digest=cfg.digest(), config=portable_config(cfg))
    rank_path = out_path(cfg, "rankings", rid, "ranking.csv")
    write_ranking(rank_path, ranking, ds.feature_names, k=cfg.k)
    top = ranking.top_k(cfg.k)
    print(f"top-{cfg.k}: " + ", ".join(f"{j}:{ds.feature_names[j]}" for j in top))
    _say(args, f"wrote {rank_path}\nwrote {sel_path}")
    return EXIT_OK


def cmd_evaluate(cfg, args):
    path = Path(args.ranking) if args.ranking else (
        Path(cfg.output_dir) / "rankings" / run_id(cfg) / "ranking.csv")
    if not path.is_file():
        raise RankingError(f"ranking file {path} not found")
    ranking, _ = read_ranking(path)
    ds = build_dataset(cfg, cfg.seed)
    if ranking.d != ds.n_features:
        raise DimensionError(f"ranking covers {ranking.d} features, dataset has {ds.n_features}")
    if ds.labels is None or ds.rows(TEST).size == 0:
        raise DataError("evaluation needs labeled test rows (data.n_test > 0 and a label column)")
    if ds.rows(LABELED).size == 0:
        raise DataError("evaluation needs labeled training rows")
    k = cfg.k if args.k is None else args.k
    if not 1 <= k <= ranking.d:
        raise ConfigError(f"k={k} outside [1, {ranking.d}]")
    subset = ranking.top_k(k)
    acc, f1 = downstream_eval(ds, subset, cfg.downstream, cfg.seed)
    metrics = {"seed": cfg.seed, "accuracy": acc, "macro_f1": f1}
    if ds.informative is not None:
        metrics["precision_at_k"] = precision_at_k(subset, ds.informative)
    params = {"experiment": "evaluate", "mode": cfg.mode, "k": k,
              "ranking_digest": ranking.metadata.get("config_digest", "")}
    result = ExperimentResult(f"evaluate-{run_id(cfg)}-k{k}", cfg.digest(), params, [metrics])
    rec_path = out_path(cfg, "results", run_id(cfg), "records.jsonl")
    append_record(rec_path, result.to_record())
    print(f"accuracy {acc:.4f}  macro_f1 {f1:.4f}")
    _say(args, f"appended {rec_path}")
    return EXIT_OK


def cmd_corrupt(cfg, args):
    ds = build_dataset(cfg, cfg.seed)
    path = Path(args.out) if args.out else out_path(cfg, "results", run_id(cfg), "corrupted.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_csv(path, ds)
    meta = {"config_digest": cfg.digest(), "seed": cfg.seed,
            "noise": [n.to_dict() for n in cfg.noise_specs]}
    path.with_suffix(".meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    print(f"wrote {path} ({ds.n_samples} rows, noise: "
          f"{' + '.join(s.label for s in cfg.noise_specs) or 'none'})")
    return EXIT_OK


def _sweep_cells(cfg):
    """Independent units of work, in output order. Each is (callable, kwargs)."""
    pipe, seeds, digest = cfg.pipeline(), cfg.seed_list, cfg.digest()
    dataset = functools.partial(load_dataset, cfg)
    sw = cfg.sweep
    cells = []
    if sw.kind == "noise":
        for setting in cfg.sweep_noise_settings() or [[]]:
            for mode in sw.modes:
                cells.append((noise_robustness_sweep, dict(
                    dataset=dataset, noise_specs=[setting], k_range=list(sw.k_range), cfg=pipe,
                    seeds=seeds, modes=(mode,), digest=digest, base_noise=cfg.noise_specs)))
    elif sw.kind == "budget":
        for budget in sw.budgets:
            for mode in sw.modes:
                cells.append((label_budget_sweep, dict(
                    dataset=dataset, budgets=[budget], cfg=pipe, k=cfg.k, seeds=seeds,
                    modes=(mode,), digest=digest, noise=cfg.noise_specs)))
    else:
        for mode in sw.modes:
            for seed in seeds:
                cells.append((_cv_cell, dict(cfg=cfg, mode=mode, seed=seed)))
    return cells


def _cv_cell(cfg, mode, seed):
    sw = cfg.sweep
    res = cross_validate(build_dataset(cfg, seed), cfg.pipeline(), sw.folds, sw.repeats, cfg.k,
                         mode, seed, cfg.digest(), sw.share_pretraining)
    res.run_id = f"{res.run_id}-seed{seed}"
    res.params["seed"] = seed
    return [res]


def _run_cell(cell):
    fn, kwargs = cell
    return fn(**kwargs)


def _table_row(res):
    agg = res.aggregate
    cols = [res.run_id, json.dumps(res.params, sort_keys=True)]
    for key in ("accuracy", "macro_f1", "precision_at_k"):
        v = agg.get(key)
        cols.append("" if v is None else f"{v['median']:.4f}")
        cols.append("" if v is None else f"{v['std']:.4f}")
    return "\t".join(cols)


TABLE_HEADER = "\t".join(["run_id", "params", "accuracy_median", "accuracy_std", "macro_f1_median",
                          "macro_f1_std", "precision_at_k_median", "precision_at_k_std"])


def cmd_sweep(cfg, args):
    if cfg.sweep.kind == "budget" and not cfg.sweep.budgets:
        raise ConfigError("budget sweep needs sweep.budgets")
    if cfg.sweep.kind == "noise" and not cfg.sweep.k_range:
        raise ConfigError("noise sweep needs sweep.k_range")
    rid = f"sweep-{cfg.sweep.kind}-{cfg.digest()}"
    rec_path = out_path(cfg, "results", rid, "records.jsonl")
    table_path = rec_path.with_name("table.tsv")
    rec_path.write_text("")
    cells = _sweep_cells(cfg)
    _say(args, f"{len(cells)} sweep cell(s), jobs={args.jobs}")
    rows = []

    def consume(results):
        for res in results:
            append_record(rec_path, res.to_record())
            rows.append(_table_row(res))
            _say(args, _table_row(res))

    if args.jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_run_cell, c) for c in cells]
            # consume in submission order so the record stream is deterministic
            for fut in futures:
                consume(fut.result())
    else:
        for cell in cells:
            consume(_run_cell(cell))
    table_path.write_text("\n".join([f"# config_digest: {cfg.digest()}", TABLE_HEADER, *rows]) + "\n")
    print(f"wrote {table_path} ({len(rows)} rows)")
    return EXIT_OK


def artifact_digest(path: Path):
    """Return ``(embedded_digest, recomputed_or_None)`` for one artifact file."""
    text = path.read_text()
    if text.startswith(checkpoint.MAGIC):
        header, _ = checkpoint.loads(text)
        embedded = header.get("config_digest")
        recomputed = None
        if "config" in header:
            recomputed = config_mod.from_dict(header["config"]).digest()
        return embedded, recomputed
    if text.startswith(RANKING_MAGIC):
        ranking, _ = read_ranking(path)
        return ranking.metadata.get("config_digest"), None
    if text.startswith("# config_digest: "):
        return text.splitlines()[0].split(": ", 1)[1], None
    if path.suffix == ".json":
        return json.loads(text).get("config_digest"), None
    if path.suffix == ".jsonl":
        digests = {json.loads(line)["config_digest"] for line in text.splitlines() if line.strip()}
        if len(digests) > 1:
            return "mixed:" + ",".join(sorted(digests)), None
        return (digests.pop() if digests else None), None
    return None, None


def _is_artifact(p: Path) -> bool:
    # exported CSV data carries its digest in the .meta.json sidecar
    if p.suffix == ".csv":
        return p.parent.parent.name == "rankings"
    return p.suffix in (".ckpt", ".jsonl", ".tsv", ".json")


def cmd_verify(cfg, args):
    expected = cfg.digest() if args.config or args.set else None
    paths = [Path(p) for p in args.paths] or sorted(
        p for p in Path(cfg.output_dir).rglob("*") if p.is_file() and _is_artifact(p))
    if not paths:
        raise ConfigError("no artifacts to verify")
    bad = 0
    for p in paths:
        if not p.is_file():
            raise ConfigError(f"{p} does not exist")
        embedded, recomputed = artifact_digest(p)
        problems = []
        if embedded is None:
            problems.append("no embedded digest")
        if recomputed is not None and recomputed != embedded:
            problems.append(f"embedded config hashes to {recomputed}, header says {embedded}")
        if expected is not None and embedded != expected:
            problems.append(f"digest {embedded} != config digest {expected}")
        bad += bool(problems)
        print(f"{'ok ' if not problems else 'BAD'} {p}" + (f": {'; '.join(problems)}" if problems else ""))
    return EXIT_MISMATCH if bad else EXIT_OK


# -------------------------------------------------------------- parser


def build_parser():
    parser = argparse.ArgumentParser(prog="asfs", description="Semi-supervised attention feature selection.")
    parser.add_argument("--quiet", action="store_true", help="only print final results")
    parser.add_argument("--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value by dotted path, e.g. pretext.alpha=1.5")
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", choices=["full", "no-selfsup", "no-location"])
        p.add_argument("--output-dir")
        p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                       help="only print final results")
        return p

    p = common(sub.add_parser("pretrain", help="train the pretext autoencoder"))
    p.add_argument("--epochs", type=int, help="pretext epochs")
    p = common(sub.add_parser("select", help="train the selector and write a ranking"))
    p.add_argument("--checkpoint", help="autoencoder checkpoint (not needed in no-selfsup mode)")
    p.add_argument("--epochs", type=int, help="selector epochs")
    p.add_argument("--k", type=int, help="subset size to echo")
    p = common(sub.add_parser("evaluate", help="score the top-k subset of a ranking"))
    p.add_argument("--ranking")
    p.add_argument("--k", type=int)
    p = common(sub.add_parser("corrupt", help="export the noisy dataset as CSV"))
    p.add_argument("--out")
    p = common(sub.add_parser("sweep", help="run a noise, budget or cross-validation sweep"))
    p.add_argument("--jobs", type=int, default=1, help="parallel sweep cells")
    p = common(sub.add_parser("verify", help="check config digests embedded in artifacts"))
    p.add_argument("paths", nargs="*")
    return parser


COMMANDS = {"pretrain": cmd_pretrain, "select": cmd_select, "evaluate": cmd_evaluate,
            "corrupt": cmd_corrupt, "sweep": cmd_sweep, "verify": cmd_verify}


def resolve_config(args) -> config_mod.RunConfig:
    overrides = list(args.set)
    for flag, key in (("seed", "seed"), ("mode", "mode"), ("output_dir", "output_dir")):
        if getattr(args, flag, None) is not None:
            overrides.append(f"{key}={getattr(args, flag)}")
    if getattr(args, "epochs", None) is not None:
        section = "pretext" if args.command == "pretrain" else "selector"
        overrides.append(f"{section}.epochs={args.epochs}")
    if args.command == "select" and args.k is not None:
        overrides.append(f"k={args.k}")
    cfg = config_mod.load(args.config, overrides)
    return cfg.validate()


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    level = logging.DEBUG if args.verbose else (logging.WARNING if args.quiet else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DataError, DimensionError, checkpoint.CheckpointError, RankingError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
