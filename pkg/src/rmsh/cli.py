"""Command-line pipeline: gen -> bounds -> train -> encode -> search / eval, plus sweep.

Every subcommand writes ``manifest-<subcommand>.json`` into ``--out-dir``.
Failures print ``{"error": {"code": ..., "message": ...}}`` on stderr and
exit with status 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import effective_delta_range
from .data import (
    Dataset,
    SyntheticConfig,
    build_similarity,
    generate_synthetic,
    load_dataset,
    load_features,
    load_labels,
    save_dataset,
    split_dataset,
)
from .errors import DimensionMismatchError, RMSHError, ValidationError
from .evaluation import evaluate
from .index import distance_histogram, load_codes, pack, rank_all, save_codes, search_topk
from .model import encode, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, fit, format_config, load_config

log = logging.getLogger("rmsh")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, subcommand: str, config: dict, inputs: dict, outputs: dict, seed) -> Path:
    manifest = {
        "subcommand": subcommand,
        "version": __version__,
        "config": config,
        "inputs": {k: {"path": str(p), "sha256": sha256(p)} for k, p in inputs.items()},
        "outputs": {k: {"path": str(p), "sha256": sha256(p)} for k, p in outputs.items()},
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "seed": seed,
    }
    path = out_dir / f"manifest-{subcommand}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _train_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    for key in ("K", "delta", "epochs", "batch_size", "hidden"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = "auto" if val == "auto" else int(val)
    return cfg.replace(**overrides) if overrides else cfg


def _dataset_paths(args, split: str) -> dict[str, Path]:
    base = Path(args.data_dir) if getattr(args, "data_dir", None) else None
    paths = {}
    for kind, ext in (("image", "feat"), ("text", "feat"), ("labels", "lbl")):
        explicit = getattr(args, f"{split}_{kind}", None) if split != "train" else getattr(args, kind, None)
        if explicit:
            paths[kind] = Path(explicit)
        elif base is not None:
            paths[kind] = base / f"{split}_{kind}.{ext}"
        else:
            raise ValidationError(f"missing {split} {kind} file (pass --data-dir or an explicit path)")
    return paths


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> dict:
    out = Path(args.out_dir)
    seed = 0 if args.seed is None else args.seed
    theta = [float(t) for t in args.theta.split(",")]
    cfg = SyntheticConfig(
        n=args.n + args.n_query, c=args.c, dim_image=args.dim_image, dim_text=args.dim_text,
        tag_probs=theta[0] if len(theta) == 1 else tuple(theta), noise=args.noise, seed=seed,
    )
    x, y, l = generate_synthetic(cfg)
    ds = Dataset(x, y, l)
    outputs = {}
    if args.n_query:
        train, query = split_dataset(ds, args.n_query, seed)
        outputs.update({f"query_{k}": v for k, v in save_dataset(out, "query", query).items()})
    else:
        train = ds
    outputs.update({f"train_{k}": v for k, v in save_dataset(out, "train", train).items()})
    conf = {"n": args.n, "n_query": args.n_query, "c": args.c, "dim_image": args.dim_image,
            "dim_text": args.dim_text, "theta": theta, "noise": args.noise}
    write_manifest(out, "gen", conf, {}, outputs, seed)
    return {"outputs": {k: str(v) for k, v in outputs.items()}}


def cmd_bounds(args) -> dict:
    labels = load_labels(args.labels)
    report = effective_delta_range(labels, args.bits, args.confidence, args.mode)
    out = Path(args.out_dir)
    path = out / "bounds.json"
    path.write_text(report.to_json(indent=2) + "\n")
    write_manifest(out, "bounds", {"K": args.bits, "confidence": args.confidence, "mode": args.mode},
                   {"labels": args.labels}, {"bounds": path}, args.seed)
    return report.to_dict()


def cmd_train(args) -> dict:
    cfg = _train_config(args)
    paths = _dataset_paths(args, "train")
    ds = load_dataset(paths["image"], paths["text"], paths["labels"])
    out = Path(args.out_dir)
    metrics = out / "metrics.jsonl"
    result = fit(ds, cfg, metrics_path=metrics)
    ckpt = out / "model.ckpt"
    save_checkpoint(ckpt, result.model)
    resolved = cfg.to_dict()
    resolved["delta_resolved"] = result.delta
    if result.bounds is not None:
        resolved["bounds"] = result.bounds.to_dict()
    (out / "config.resolved").write_text(format_config(cfg))
    write_manifest(out, "train", resolved, paths, {"checkpoint": ckpt, "metrics": metrics}, cfg.seed)
    summary = {"checkpoint": str(ckpt), "metrics": str(metrics), "delta": result.delta}
    if result.bounds is not None:
        summary["bounds"] = {"delta_min": result.bounds.delta_min, "delta_max": result.bounds.delta_max}
    return summary


def cmd_encode(args) -> dict:
    model = load_checkpoint(args.checkpoint)
    feats = load_features(args.features, args.modality)
    if args.bits is not None and args.bits != model.dims.K:
        raise DimensionMismatchError(f"requested K={args.bits} but checkpoint has K={model.dims.K}")
    codes = encode(model, args.modality, feats.rows)
    packed = pack(codes)
    out = Path(args.output) if args.output else Path(args.out_dir) / f"{args.modality}.code"
    save_codes(out, packed)
    write_manifest(out.parent, "encode", {"modality": args.modality, "K": model.dims.K},
                   {"checkpoint": args.checkpoint, "features": args.features}, {"codes": out}, args.seed)
    return {"codes": str(out), "n": packed.n, "K": packed.K}


def cmd_search(args) -> dict:
    db = load_codes(args.database)
    queries = load_codes(args.queries)
    if db.K != queries.K:
        raise DimensionMismatchError(f"database K={db.K} vs query K={queries.K}")
    wanted = [s.strip() for s in args.query_ids.split(",")] if args.query_ids else list(queries.ids)
    out = Path(args.output) if args.output else Path(args.out_dir) / "search.jsonl"
    with open(out, "w") as fh:
        for qid in wanted:
            res = search_topk(db, queries.row(queries.position(qid)), args.k)
            fh.write(json.dumps({"query": qid, "results": [{"id": i, "distance": d} for i, d in res.pairs()]}) + "\n")
    write_manifest(out.parent, "search", {"k": args.k, "query_ids": wanted},
                   {"database": args.database, "queries": args.queries}, {"results": out}, args.seed)
    return {"results": str(out), "queries": len(wanted)}


def cmd_eval(args) -> dict:
    qc, dc = load_codes(args.queries), load_codes(args.database)
    ql, dl = load_labels(args.query_labels), load_labels(args.database_labels)
    cutoffs = _ints(args.cutoffs)
    report = evaluate(qc, dc, ql, dl, cutoffs, task=args.task,
                      config={"queries": str(args.queries), "database": str(args.database), "cutoffs": cutoffs})
    out = Path(args.out_dir)
    outputs = {"report": out / "eval.json", "pr_csv": out / "pr.csv"}
    outputs["report"].write_text(report.to_json(indent=2) + "\n")
    report.write_pr_csv(outputs["pr_csv"])
    if args.distance_hist:
        hist = distance_histogram(qc, dc, build_similarity(ql, dl))
        outputs["distance_hist"] = out / "distance_hist.json"
        outputs["distance_hist"].write_text(json.dumps({k: v.tolist() for k, v in hist.items()}, indent=2) + "\n")
    inputs = {"queries": args.queries, "database": args.database,
              "query_labels": args.query_labels, "database_labels": args.database_labels}
    write_manifest(out, "eval", {"cutoffs": cutoffs, "task": args.task}, inputs, outputs, args.seed)
    return {"task": report.task, "ndcg_at": report.ndcg_at, "num_queries": report.num_queries,
            "num_skipped": report.num_skipped}


def train_and_score(train: Dataset, query: Dataset, cfg: TrainConfig, cutoff: int) -> dict:
    """Fit, encode both sides and return NDCG@cutoff for I->T and T->I."""
    res = fit(train, cfg)
    m = res.model
    db_img, db_txt = pack(encode(m, "image", train.image.rows)), pack(encode(m, "text", train.text.rows))
    q_img, q_txt = pack(encode(m, "image", query.image.rows)), pack(encode(m, "text", query.text.rows))
    i2t = evaluate(q_img, db_txt, query.labels, train.labels, (cutoff,), "I->T").ndcg_at[cutoff]
    t2i = evaluate(q_txt, db_img, query.labels, train.labels, (cutoff,), "T->I").ndcg_at[cutoff]
    return {"delta": res.delta, "ndcg_i2t": i2t, "ndcg_t2i": t2i, "ndcg_mean": (i2t + t2i) / 2}


def cmd_sweep(args) -> dict:
    base = _train_config(args)
    tp, qp = _dataset_paths(args, "train"), _dataset_paths(args, "query")
    train = load_dataset(tp["image"], tp["text"], tp["labels"])
    query = load_dataset(qp["image"], qp["text"], qp["labels"])
    seeds = _ints(args.seeds)
    raw_values = [v.strip() for v in args.values.split(",") if v.strip()]
    if args.param not in ("delta", "lambda1", "lambda2", "lambda3", "lambda4", "w_p"):
        raise ValidationError(f"cannot sweep over {args.param!r}")

    rows = []
    for raw in raw_values:
        if args.param == "delta":
            value = "auto" if raw == "auto" else int(raw)
        else:
            value = float(raw)
        for seed in seeds:
            cfg = base.replace(**{args.param: value, "seed": seed})
            scores = train_and_score(train, query, cfg, args.cutoff)
            rows.append({"param": args.param, "value": raw, "seed": seed, **scores})
            log.info("%s=%s seed=%d ndcg=%.4f", args.param, raw, seed, scores["ndcg_mean"])

    out = Path(args.out_dir)
    grid_csv, summary_csv = out / "sweep.csv", out / "sweep_summary.csv"
    fields = ["param", "value", "seed", "delta", "ndcg_i2t", "ndcg_t2i", "ndcg_mean"]
    with open(grid_csv, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    summary = []
    for raw in raw_values:
        sel = [r for r in rows if r["value"] == raw]
        summary.append({
            "param": args.param, "value": raw, "delta": sel[0]["delta"], "n_seeds": len(sel),
            "ndcg_i2t": float(np.mean([r["ndcg_i2t"] for r in sel])),
            "ndcg_t2i": float(np.mean([r["ndcg_t2i"] for r in sel])),
            "ndcg_mean": float(np.mean([r["ndcg_mean"] for r in sel])),
        })
    with open(summary_csv, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]))
        w.writeheader()
        w.writerows(summary)
    inputs = {f"train_{k}": v for k, v in tp.items()} | {f"query_{k}": v for k, v in qp.items()}
    write_manifest(out, "sweep", {"base": base.to_dict(), "param": args.param, "values": raw_values,
                                  "seeds": seeds, "cutoff": args.cutoff},
                   inputs, {"grid": grid_csv, "summary": summary_csv}, seeds)
    return {"grid": str(grid_csv), "summary": summary}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies use SUPPRESS so they never overwrite flags given before the subcommand
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=d(None), help="random seed (overrides config)")
    p.add_argument("--config", default=d(None), help="key = value training config file")
    p.add_argument("--out-dir", default=d("."), help="directory for outputs and the run manifest")
    p.add_argument("--quiet", action="store_true", default=d(False), help="suppress the JSON summary and log lines")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="rmsh", description=__doc__.splitlines()[0],
                                     parents=[_global_flags(suppress=False)])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="write a synthetic dataset")
    p.add_argument("--n", type=int, default=2000, help="training/database rows")
    p.add_argument("--n-query", type=int, default=200, help="held-out query rows (0 for none)")
    p.add_argument("--c", type=int, default=8, help="number of tags")
    p.add_argument("--dim-image", type=int, default=32)
    p.add_argument("--dim-text", type=int, default=24)
    p.add_argument("--theta", default="0.2", help="tag probability, or comma list of C values")
    p.add_argument("--noise", type=float, default=0.1)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("bounds", parents=[common], help="effective delta interval for a label file")
    p.add_argument("--labels", required=True)
    p.add_argument("--bits", "-K", type=int, required=True)
    p.add_argument("--confidence", type=float, default=0.9)
    p.add_argument("--mode", choices=("cardinality", "exact"), default="cardinality")
    p.set_defaults(func=cmd_bounds)

    def add_train_args(p):
        p.add_argument("--data-dir", default=None, help="directory holding gen outputs")
        p.add_argument("--image", default=None)
        p.add_argument("--text", default=None)
        p.add_argument("--labels", default=None)
        p.add_argument("--K", "--bits", dest="K", default=None)
        p.add_argument("--delta", default=None, help="integer or 'auto'")
        p.add_argument("--epochs", default=None)
        p.add_argument("--batch-size", dest="batch_size", default=None)
        p.add_argument("--hidden", default=None)

    p = sub.add_parser("train", parents=[common], help="fit a model; writes model.ckpt and metrics.jsonl")
    add_train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", parents=[common], help="binary codes for a feature file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--modality", choices=("image", "text"), required=True)
    p.add_argument("--bits", type=int, default=None, help="expected K; mismatch is an error")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("search", parents=[common], help="top-k Hamming search")
    p.add_argument("--database", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--query-ids", default=None, help="comma-separated ids (default: all)")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", parents=[common], help="NDCG@p and PR curve")
    p.add_argument("--queries", required=True)
    p.add_argument("--database", required=True)
    p.add_argument("--query-labels", required=True)
    p.add_argument("--database-labels", required=True)
    p.add_argument("--cutoffs", default="50")
    p.add_argument("--task", choices=("I->T", "T->I"), default="I->T")
    p.add_argument("--distance-hist", action="store_true", help="also write per-similarity distance histograms")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="train/evaluate over a parameter grid")
    add_train_args(p)
    for kind in ("image", "text", "labels"):
        p.add_argument(f"--query-{kind}", dest=f"query_{kind}", default=None)
    p.add_argument("--param", default="delta")
    p.add_argument("--values", required=True, help="comma list; delta accepts 'auto'")
    p.add_argument("--seeds", default="0")
    p.add_argument("--cutoff", type=int, default=50)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        summary = args.func(args)
    except RMSHError as exc:
        print(json.dumps({"error": exc.to_dict()}), file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        code = "io_error" if isinstance(exc, OSError) else "invalid_argument"
        print(json.dumps({"error": {"code": code, "message": str(exc)}}), file=sys.stderr)
        return 1
    if not args.quiet:
        print(json.dumps(summary, indent=2, default=str))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
