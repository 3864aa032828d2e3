"""Command line entry point.

Exit codes: 0 success, 2 configuration/usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import qtns
from .config import ConfigError, RunConfig, load_config
from .curves import CurveParams, LayerGrid, bits_for_layers, parse_bits
from .decision import pareto_front, rank_configs, build_ranked
from .dsconv import block_snr, quantize_weights, reconstruction_snr
from .explorer import Budget, CandidatePool, SearchConfig, read_history, run_search
from .mtgp import GPModel, TaskSet
from .networks import layer_bytes, load_network_spec
from .objective import ExternalObjective, SurrogateObjective, SyntheticObjective

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

OUTPUT_VERSION = "1.0"

log = logging.getLogger("nuqsearch")


class RuntimeFailure(RuntimeError):
    pass


def _csv_text(schema: str, header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    buf.write(f"# {schema} schema_version={OUTPUT_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _jsonl(schema: str, records: list[dict]) -> str:
    head = json.dumps({"schema": schema, "schema_version": OUTPUT_VERSION})
    return "\n".join([head] + [json.dumps(r) for r in records]) + "\n"


def build_objective(cfg: RunConfig):
    spec = cfg.objective
    kind = spec["kind"]
    if kind == "synthetic":
        params = {k: float(spec[k]) for k in ("a0", "c", "delta", "gamma") if k in spec}
        return SyntheticObjective(cfg.tasks, w_opt=spec.get("w_opt", [0.5] * cfg.dim), **params)
    if kind == "surrogate":
        params = {k: float(spec[k]) for k in ("ceiling", "snr_scale", "delta") if k in spec}
        return SurrogateObjective.from_files(cfg.tasks, spec["snapshot"], block_size=cfg.block_size, **params)
    return ExternalObjective(spec["command"], timeout=float(spec.get("timeout", 3600.0)), cwd=spec.get("cwd"))


def build_pool(cfg: RunConfig) -> CandidatePool:
    return CandidatePool.build(cfg.dim, cfg.pool_size, seed=cfg.seed)


def _checkpoint_extra(cfg: RunConfig) -> dict:
    return {
        "run": {
            "basis": cfg.basis.value,
            "degree": cfg.degree,
            "grid": cfg.grid.value,
            "n_layers": cfg.n_layers,
            "network": cfg.network.name,
            "seed": cfg.seed,
            "tasks": cfg.tasks.to_dict(),
        }
    }


# --- commands ----------------------------------------------------------------------


def cmd_search(args) -> int:
    cfg = load_config(args.config, seed=args.seed, out=args.out)
    cfg.out.mkdir(parents=True, exist_ok=True)
    history_path = cfg.out / "history.jsonl"
    resume = None
    if args.resume and history_path.exists():
        header, resume = read_history(history_path)
        if header.get("seed") != cfg.seed:
            raise ConfigError(f"{history_path}: recorded seed {header.get('seed')} differs from {cfg.seed}")
    t0 = time.perf_counter()
    result = run_search(
        build_objective(cfg), cfg.tasks, build_pool(cfg),
        Budget(cfg.budget, max_evaluations=cfg.max_evaluations), cfg.seed,
        SearchConfig(basis=cfg.basis, n_layers=cfg.n_layers, grid=cfg.grid, refit_every=cfg.refit_every,
                     restarts=cfg.restarts, learn_noise=cfg.learn_noise, history_path=history_path),
        resume=resume,
    )
    elapsed = time.perf_counter() - t0
    result.model.save(cfg.out / "model.json", extra=_checkpoint_extra(cfg))

    ok = [h for h in result.history if h["status"] == "OK"]
    target = [h for h in ok if h["task"] == cfg.tasks.target]
    best = max(target, key=lambda h: h["y"]) if target else None
    summary = {
        "schema": "nuqsearch.summary",
        "schema_version": OUTPUT_VERSION,
        "config": str(cfg.path),
        "seed": cfg.seed,
        "evaluations": len(result.history),
        "failed": len(result.history) - len(ok),
        "budget_total": cfg.budget,
        "budget_spent": result.budget.spent,
        "per_task": {str(l): sum(1 for h in result.history if h["task"] == l) for l in range(1, cfg.tasks.m + 1)},
        "best_target_observation": best,
        "log_marginal_likelihood": result.model.log_marginal_likelihood(),
    }
    _write(cfg.out / "summary.json", json.dumps(summary, indent=1) + "\n")
    print(f"search finished: {len(result.history)} evaluations, cost {result.budget.spent:g}/{cfg.budget:g} "
          f"in {elapsed:.1f}s")
    print(f"outputs in {cfg.out}")
    return EXIT_OK


def _load_checkpoint(path) -> tuple[GPModel, dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return GPModel.from_dict(raw), raw.get("run", {})
    except FileNotFoundError:
        raise ConfigError(f"{path}: checkpoint not found") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise RuntimeFailure(f"{path}: corrupt checkpoint ({exc})") from None


def cmd_rank(args) -> int:
    cfg = load_config(args.config, seed=args.seed, out=args.out)
    model, _ = _load_checkpoint(args.checkpoint)
    if model.dim != cfg.dim:
        raise ConfigError(f"checkpoint has {model.dim} curve weights but the config implies {cfg.dim}")
    pool = build_pool(cfg)
    top_k = args.top_k or cfg.top_k
    ranked = rank_configs(model, pool, cfg.network, cfg.basis, k=cfg.k, grid=cfg.grid,
                          block_size=cfg.block_size, beta=cfg.beta)
    cfg.out.mkdir(parents=True, exist_ok=True)

    head = ["rank", "weights", "bits", "bit_sum", "memory_MB", "pred_acc", "pred_std", "E"]
    records = [c.record(i + 1) for i, c in enumerate(ranked[:top_k])]
    rows = [[r["rank"], " ".join(f"{w:.6f}" for w in r["weights"]), r["bits"], r["bit_sum"],
             f"{r['memory_MB']:.4f}", f"{r['pred_acc']:.6f}", f"{r['pred_std']:.6f}", f"{r['E']:.6f}"]
            for r in records]
    _write(cfg.out / "ranked.csv", _csv_text("nuqsearch.ranked", head, rows))
    _write(cfg.out / "ranked.jsonl", _jsonl("nuqsearch.ranked", records))

    # scatter over every pool point, in pool order
    scatter = build_ranked(pool.points, *_mean_std(model, pool), cfg.network, cfg.basis, cfg.k, cfg.grid,
                           cfg.block_size, cfg.beta)
    front = set(pareto_front([(c.memory_bytes, c.predicted_accuracy) for c in scatter]))
    srows = [[f"{c.memory_mb:.4f}", f"{c.predicted_accuracy:.6f}", str(c.bits), int(i in front)]
             for i, c in enumerate(scatter)]
    _write(cfg.out / "scatter.csv",
           _csv_text("nuqsearch.scatter", ["memory_MB", "pred_acc", "bits", "pareto"], srows))
    prow = [[f"{scatter[i].memory_mb:.4f}", f"{scatter[i].predicted_accuracy:.6f}", str(scatter[i].bits)]
            for i in sorted(front, key=lambda i: scatter[i].memory_bytes)]
    _write(cfg.out / "pareto.csv", _csv_text("nuqsearch.pareto", ["memory_MB", "pred_acc", "bits"], prow))

    print(f"{'rank':>4}  {'bits':<24} {'sum':>4} {'MB':>8} {'acc':>7} {'std':>7} {'E':>7}")
    for r in records:
        print(f"{r['rank']:>4}  {r['bits']:<24} {r['bit_sum']:>4} {r['memory_MB']:>8.3f} "
              f"{r['pred_acc']:>7.4f} {r['pred_std']:>7.4f} {r['E']:>7.4f}")
    print(f"{len(front)} Pareto points; tables in {cfg.out}")
    return EXIT_OK


def _mean_std(model: GPModel, pool: CandidatePool):
    post = model.predict(pool.points, model.m)
    return post.mean, post.std


def cmd_predict(args) -> int:
    model, run = _load_checkpoint(args.checkpoint)
    try:
        w = [float(v) for v in args.weights.split(",")]
    except ValueError:
        raise ConfigError(f"cannot parse weights {args.weights!r}") from None
    if len(w) != model.dim:
        raise ConfigError(f"expected {model.dim} weights, got {len(w)}")
    task = args.task or model.m
    if not 1 <= task <= model.m:
        raise ConfigError(f"task must be in 1..{model.m}")
    post = model.predict(np.asarray([w]), task)
    out = {"weights": w, "task": task, "mean": float(post.mean[0]), "std": float(post.std[0])}
    if run.get("basis") and run.get("n_layers"):
        bits = bits_for_layers(CurveParams(run["basis"], tuple(w)), int(run["n_layers"]),
                               run.get("grid", LayerGrid.ENDPOINTS.value))
        out["bits"] = str(bits)
    print(json.dumps(out))
    return EXIT_OK


def cmd_quantize(args) -> int:
    try:
        w = qtns.read(args.file)
    except OSError as exc:
        raise RuntimeFailure(f"{args.file}: {exc.strerror}") from None
    except qtns.QtnsError as exc:
        raise RuntimeFailure(f"{args.file}: {exc}") from None
    try:
        layer = quantize_weights(w, args.bits, args.block)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    stem = Path(args.out) if args.out else Path(args.file).with_suffix("")
    qtns.write(f"{stem}.vqk.qtns", layer.vqk, dtype_code=2)
    qtns.write(f"{stem}.kds.qtns", layer.kds, dtype_code=3)
    snr = reconstruction_snr(w, layer)
    per_block = block_snr(w, layer)
    finite = per_block[np.isfinite(per_block)]
    report = {
        "bits": layer.bits,
        "block_size": layer.block_size,
        "shape": list(layer.source_shape),
        "blocks": int(per_block.size),
        "snr_db": _json_float(snr),
        "block_snr_db": {
            "min": _json_float(float(finite.min())) if finite.size else None,
            "median": _json_float(float(np.median(finite))) if finite.size else None,
            "max": _json_float(float(finite.max())) if finite.size else None,
            "exact": int(np.sum(np.isposinf(per_block))),
            "no_signal": int(np.sum(np.isnan(per_block))),
        },
        "vqk": f"{stem}.vqk.qtns",
        "kds": f"{stem}.kds.qtns",
    }
    print(json.dumps(report))
    return EXIT_OK


def _json_float(v: float):
    if math.isnan(v):
        return "no-signal"
    if math.isinf(v):
        return "exact"
    return v


def cmd_size(args) -> int:
    try:
        spec = load_network_spec(args.network)
    except FileNotFoundError:
        raise ConfigError(f"{args.network}: no such network spec file or bundled network") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        bits = parse_bits(args.bits)
        rows = layer_bytes(spec, bits, args.block)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    total = sum(b for _, _, b in rows)
    print(f"network {spec.name}: {spec.n_conv} conv layers, {spec.param_count} parameters")
    print(f"{'layer':<22} {'kind':<5} {'params':>10} {'bits':>5} {'bytes':>14}")
    for layer, b, nbytes in rows:
        bs = "fp32" if b is None else str(b)
        print(f"{layer.name:<22} {layer.kind.value:<5} {layer.param_count:>10} {bs:>5} {nbytes:>14.1f}")
    print(f"total bytes: {total:.1f}")
    print(f"total MB: {total / 1e6:.4f}")
    print(f"bit sum: {sum(bits)}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    try:
        header, records = read_history(out / "history.jsonl")
    except FileNotFoundError:
        raise ConfigError(f"{out}: no history.jsonl (run 'search' first)") from None
    tasks = TaskSet.from_dict(header["tasks"])
    print(f"run {out}  seed={header['seed']}  basis={header['basis']}  layers={header['n_layers']}")
    print(f"evaluations: {len(records)}  cost: {records[-1]['cumulative_cost'] if records else 0:g}"
          f"/{header['budget']:g}")
    for l in range(1, tasks.m + 1):
        rs = [r for r in records if r["task"] == l]
        okv = [r["y"] for r in rs if r["status"] == "OK"]
        best = f"{max(okv):.4f}" if okv else "-"
        print(f"  task {l} ({tasks.epochs[l - 1]:>3} epochs, cost {tasks.costs[l - 1]:g}): "
              f"{len(rs)} runs, {len(rs) - len(okv)} failed, best {best}")
    ranked = out / "ranked.jsonl"
    if ranked.exists():
        lines = ranked.read_text(encoding="utf-8").splitlines()[1:]
        print("top configurations:")
        for line in lines[: args.top_k or 5]:
            r = json.loads(line)
            print(f"  #{r['rank']:<3} {r['bits']:<24} {r['memory_MB']:.3f} MB  acc {r['pred_acc']:.4f}  E {r['E']:.4f}")
    return EXIT_OK


# --- argument parsing ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nuqsearch", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("search", help="run the budgeted multi-fidelity exploration")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--resume", action="store_true", help="continue from an existing history log")
    s.set_defaults(func=cmd_search)

    r = sub.add_parser("rank", help="rank pool configurations with a fitted model")
    r.add_argument("--config", required=True)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--top-k", type=int)
    r.set_defaults(func=cmd_rank)

    q = sub.add_parser("predict", help="query a checkpoint at one weight vector")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--weights", required=True, help="comma-separated curve weights")
    q.add_argument("--task", type=int)
    q.set_defaults(func=cmd_predict)

    z = sub.add_parser("quantize", help="quantize a QTNS weight tensor")
    z.add_argument("file")
    z.add_argument("--bits", type=int, required=True)
    z.add_argument("--block", type=int, default=32)
    z.add_argument("--out", help="output stem for the .vqk.qtns/.kds.qtns files")
    z.set_defaults(func=cmd_quantize)

    m = sub.add_parser("size", help="memory footprint of a bit configuration")
    m.add_argument("network", help="bundled network name or spec file")
    m.add_argument("bits", help="e.g. 6555443332211, 6,5,5,4 or 4x21,3x27,2x16")
    m.add_argument("--block", type=int, default=32)
    m.set_defaults(func=cmd_size)

    rp = sub.add_parser("report", help="summarise a finished run directory")
    rp.add_argument("--out", required=True)
    rp.add_argument("--top-k", type=int)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
