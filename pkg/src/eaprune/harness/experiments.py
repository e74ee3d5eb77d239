"""Experiment orchestration behind the CLI: search, flops, ablate, export, report."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..errors import ConfigError, FormatError
from ..evolve.metrics import compare_fronts, hypervolume
from ..evolve.search import evolve, random_search
from ..netgraph import (
    builtin, count_flops, init_weights, load_graph, load_weights,
    save_graph, save_weights, validate,
)
from ..netgraph.graph import HEAD_DIM, HEADS, HIDDEN, NetworkGraph
from ..prunespace import build_space, genome_from_text
from ..rng import rng_stream
from .config import RunConfig
from .data import load_dataset, make_splits
from .evaluate import ProxyEvaluator, pretrain, proxy_evaluate
from .plot import front_series, scatter_svg

log = logging.getLogger(__name__)

STREAM_MODEL = 4


def load_model(spec: str, model_args=None) -> NetworkGraph:
    """A built-in generator name or a model spec JSON path."""
    path = Path(spec)
    if path.suffix == ".json" or path.exists():
        return load_graph(path)
    try:
        return builtin(spec, **(model_args or {}))
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from exc
    except TypeError as exc:
        raise ConfigError(f"bad model_args for {spec!r}: {exc}") from exc


def _dataset(cfg: RunConfig):
    spec = dict(cfg.data)
    fmt = spec.pop("format")
    if fmt == "synthetic":
        return load_dataset(spec, "synthetic")
    if "source" not in spec:
        raise ConfigError(f"{fmt} data needs a \"source\" path")
    return load_dataset(spec["source"], fmt, labels=spec.get("labels"),
                        shape=spec.get("shape"), classes=spec.get("classes"))


@dataclass
class Context:
    """Everything one search needs: model, weights, space and data splits."""
    config: RunConfig
    graph: NetworkGraph
    weights: dict
    splits: object

    def space(self, mode=None):
        return build_space(self.graph, mode or self.config.space_mode, self.config.min_ratio)

    def evaluator(self, strategy=None, mode=None, seed=None) -> ProxyEvaluator:
        c = self.config
        return ProxyEvaluator(self.graph, self.weights, self.space(mode), self.splits,
                              strategy=strategy or c.strategy,
                              seed=c.seed if seed is None else seed,
                              patches=c.patches, tokens=c.tokens,
                              bn_recalibrate=c.bn_recalibrate)


def prepare(cfg: RunConfig, weights: dict | None = None) -> Context:
    """Build the model, obtain weights and draw the data splits.

    Without a weights file the model gets a seeded random init (``model_seed``)
    whose batchnorm statistics and readout are fit on a pretrain split.
    """
    graph = load_model(cfg.model, cfg.model_args)
    data = _dataset(cfg)
    if tuple(data.images.shape[1:]) != tuple(graph.input_shape):
        raise ConfigError(f"data samples have shape {tuple(data.images.shape[1:])}, "
                          f"model expects {tuple(graph.input_shape)}")
    if data.class_count != graph.class_count:
        raise ConfigError(f"data has {data.class_count} classes, model has {graph.class_count}")
    if weights is None and cfg.weights is not None:
        weights = load_weights(cfg.weights)
    fit = weights is None
    splits = make_splits(data, cfg.reconstruction, cfg.evaluation, cfg.seed or 0,
                         pretrain=cfg.pretrain if fit else 0)
    if fit:
        weights = init_weights(graph, rng_stream(cfg.model_seed, STREAM_MODEL))
        if splits.pretrain is not None:
            weights = pretrain(graph, weights, splits.pretrain)
    problems = validate(graph, weights)
    if problems:
        raise FormatError("model and weights do not match: " + "; ".join(problems[:5]))
    return Context(cfg, graph, weights, splits)


# ---------------------------------------------------------------- search

def _front_points(front):
    return [(m.flops, m.accuracy) for m in front]


def write_search(out: Path, ctx: Context, result, title="") -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "pareto.csv").write_text(result.front.to_csv())
    (out / "runlog.jsonl").write_text(result.archive.runlog())
    (out / "config.json").write_text(ctx.config.to_json())
    save_graph(ctx.graph, out / "model.json")
    save_weights(ctx.weights, out / "base.eapw")
    archive_pts = [(i.flops, i.accuracy) for i in result.archive.individuals]
    svg = scatter_svg([front_series("evaluated / front", archive_pts, _front_points(result.front))],
                      title=title or f"Pareto front, seed {ctx.config.seed}")
    (out / "pareto.svg").write_text(svg)


def cmd_search(cfg: RunConfig, ctx: Context | None = None) -> dict:
    cfg.check()
    ctx = ctx or prepare(cfg)
    space = ctx.space()
    result = evolve(space, ctx.evaluator(), cfg.search_config(),
                    on_generation=lambda g, pop, ar: log.info(
                        "generation %d: %d evaluated, population %d", g, ar.evaluations, len(pop)))
    out = Path(cfg.output)
    write_search(out, ctx, result)
    return {"output": str(out), "evaluations": result.archive.evaluations,
            "failures": result.archive.failures, "cache_hits": result.archive.cache_hits,
            "front_size": len(result.front)}


# ---------------------------------------------------------------- flops

def cmd_flops(model: str, genome=None, mode="cnn-channels", model_args=None, min_ratio=0.1) -> int:
    graph = load_model(model, model_args)
    if genome is None:
        return count_flops(graph)
    space = build_space(graph, mode, min_ratio)
    g = genome_from_text(genome) if isinstance(genome, str) else tuple(genome)
    space.check(g)
    return count_flops(graph, space.sizes(g))


# ---------------------------------------------------------------- ablations

ABLATIONS = ("nsga-vs-random", "l1-vs-random", "headnum-vs-headdim")


def normalized_points(individuals, full_flops):
    """``(1 - accuracy, flops / full)`` for hypervolume against reference (1, 1)."""
    return np.array([(i.objectives[0], i.objectives[1] / full_flops) for i in individuals],
                    dtype=np.float64).reshape(-1, 2)


def _fa(front):
    pts = np.array(_front_points(front), dtype=np.float64).reshape(-1, 2)
    return pts[:, 0], pts[:, 1]


def nsga_vs_random(ctx: Context) -> dict:
    cfg = ctx.config
    space = ctx.space()
    ev = ctx.evaluator()
    sc = cfg.search_config()
    nsga = evolve(space, ev, sc)
    budget = nsga.archive.evaluations
    rand = random_search(space, ev, budget, sc.seed, sc.threads)
    full = count_flops(ctx.graph)
    hv_n = hypervolume(normalized_points(nsga.front, full), (1.0, 1.0))
    hv_r = hypervolume(normalized_points(rand.front, full), (1.0, 1.0))
    return {"mode": "nsga-vs-random", "seed": cfg.seed, "budget": budget,
            "random_evaluations": rand.archive.evaluations,
            "hypervolume_nsga": hv_n, "hypervolume_random": hv_r,
            "nsga_at_least_random": hv_n >= hv_r,
            "fronts": {"nsga": nsga, "random": rand}}


def paired_search(ctx: Context, a: dict, b: dict, labels) -> dict:
    """Two searches that differ only in the evaluator keywords ``a`` / ``b``."""
    cfg = ctx.config
    runs = {}
    for label, kw in zip(labels, (a, b)):
        ev = ctx.evaluator(**kw)
        runs[label] = evolve(ev.space, ev, cfg.search_config())
    cmp = compare_fronts(_fa(runs[labels[0]].front), _fa(runs[labels[1]].front))
    return {"seed": cfg.seed, "comparison": cmp, "fronts": runs}


def l1_vs_random(ctx: Context) -> dict:
    res = paired_search(ctx, {"strategy": "l1norm"}, {"strategy": "random"}, ("l1norm", "random"))
    res["mode"] = "l1-vs-random"
    return res


def headnum_vs_headdim(ctx: Context) -> dict:
    res = paired_search(ctx, {"mode": "vit-head-count"}, {"mode": "vit-head-dim"},
                        ("head-count", "head-dim"))
    res["mode"] = "headnum-vs-headdim"
    return res


def cmd_ablate(cfg: RunConfig, mode: str, ctx: Context | None = None) -> dict:
    if mode not in ABLATIONS:
        raise ConfigError(f"ablation mode must be one of {ABLATIONS}, got {mode!r}")
    cfg.check()
    ctx = ctx or prepare(cfg)
    res = {"nsga-vs-random": nsga_vs_random, "l1-vs-random": l1_vs_random,
           "headnum-vs-headdim": headnum_vs_headdim}[mode](ctx)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    series = []
    for label, run in res["fronts"].items():
        (out / f"pareto_{label}.csv").write_text(run.front.to_csv())
        (out / f"runlog_{label}.jsonl").write_text(run.archive.runlog())
        series.append(front_series(label, [(i.flops, i.accuracy) for i in run.archive.individuals],
                                   _front_points(run.front)))
    (out / "comparison.svg").write_text(scatter_svg(series, title=f"{mode}, seed {cfg.seed}"))
    (out / "config.json").write_text(cfg.to_json())
    summary = {k: v for k, v in res.items() if k != "fronts"}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


# ---------------------------------------------------------------- export

def read_front(run_dir) -> list:
    path = Path(run_dir) / "pareto.csv"
    try:
        rows = list(csv.DictReader(io.StringIO(path.read_text())))
    except FileNotFoundError as exc:
        raise ConfigError(f"no pareto.csv in {run_dir}") from exc
    return [{"genome": genome_from_text(r["genome"]), "flops": int(r["flops"]),
             "proxy_accuracy": float(r["proxy_accuracy"])} for r in rows]


def load_run(run_dir):
    run_dir = Path(run_dir)
    try:
        cfg = RunConfig(**json.loads((run_dir / "config.json").read_text()))
    except FileNotFoundError as exc:
        raise ConfigError(f"{run_dir} is not a search output directory") from exc
    cfg = replace(cfg, model=str(run_dir / "model.json"), weights=str(run_dir / "base.eapw"))
    return cfg


def cmd_export(run_dir, index: int, out_dir=None) -> dict:
    """Rebuild Pareto row ``index`` of a search, save it, reload it and re-score it."""
    run_dir = Path(run_dir)
    rows = read_front(run_dir)
    if not 0 <= index < len(rows):
        raise ConfigError(f"front has {len(rows)} members, index {index} out of range")
    row = rows[index]
    cfg = load_run(run_dir)
    ctx = prepare(cfg)
    ev = ctx.evaluator()
    ev.space.check(row["genome"])
    sub, new, report = ev.build(row["genome"])
    out = Path(out_dir) if out_dir else run_dir / f"export-{index}"
    out.mkdir(parents=True, exist_ok=True)
    save_graph(sub.graph, out / "model.json")
    save_weights(new, out / "weights.eapw")
    (out / "reconstruction.jsonl").write_text(report.to_jsonl())
    graph = load_graph(out / "model.json")
    weights = load_weights(out / "weights.eapw")
    ev_set = ctx.splits.evaluation
    acc = proxy_evaluate(graph, weights, ev_set.images, ev_set.labels)
    return {"output": str(out), "genome": list(row["genome"]), "flops": count_flops(graph),
            "logged_accuracy": row["proxy_accuracy"], "reloaded_accuracy": acc,
            "match": acc == row["proxy_accuracy"]}


# ---------------------------------------------------------------- report

def retention_table(graph: NetworkGraph, space, genome) -> list:
    """Per transformer block: kept heads, head dim and MLP ratio (hidden / embed)."""
    sizes = space.sizes(genome)
    blocks = []
    for l in graph.layers:
        if l.kind != "attention":
            continue
        prefix = l.name.rsplit(".", 1)[0]
        mlp = graph.layer(f"{prefix}.mlp")
        heads = sizes.get(graph.axis_group(l.name, HEADS), l.hp("head_count"))
        dim = sizes.get(graph.axis_group(l.name, HEAD_DIM), l.hp("head_dim"))
        hidden = sizes.get(graph.axis_group(mlp.name, HIDDEN), mlp.hp("hidden_dim"))
        blocks.append({"block": prefix, "heads": heads, "head_dim": dim,
                       "mlp_ratio": hidden / mlp.hp("embed_dim")})
    return blocks


def cmd_report(run_dir) -> str:
    """Retention profile of every front member of a ViT search, as text; also
    written to ``retention.csv`` and ``retention.svg`` in the run directory."""
    run_dir = Path(run_dir)
    cfg = load_run(run_dir)
    graph = load_graph(cfg.model)
    if cfg.space_mode == "cnn-channels":
        raise ConfigError("report needs a transformer run (space_mode vit-head-count or vit-head-dim)")
    space = build_space(graph, cfg.space_mode, cfg.min_ratio)
    full = count_flops(graph)
    rows = read_front(run_dir)
    table = []
    for r in rows:
        for b in retention_table(graph, space, r["genome"]):
            table.append({"flops_ratio": r["flops"] / full, "proxy_accuracy": r["proxy_accuracy"], **b})
    buf = io.StringIO()
    if table:
        w = csv.DictWriter(buf, fieldnames=list(table[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(table)
    (run_dir / "retention.csv").write_text(buf.getvalue())
    names = list(dict.fromkeys(t["block"] for t in table))
    series = [{"label": f"{n} mlp ratio",
               "points": [(t["flops_ratio"], t["mlp_ratio"]) for t in table if t["block"] == n],
               "line": [(t["flops_ratio"], t["mlp_ratio"]) for t in table if t["block"] == n]}
              for n in names]
    (run_dir / "retention.svg").write_text(
        scatter_svg(series, title="MLP ratio per block", xlabel="FLOPs ratio", ylabel="MLP ratio"))
    lines = [f"{'flops':>7} {'acc':>6}  " + "  ".join(f"{n:>14}" for n in names)]
    for r in rows:
        cells = retention_table(graph, space, r["genome"])
        lines.append(f"{r['flops'] / full:7.3f} {r['proxy_accuracy']:6.3f}  " +
                     "  ".join(f"{c['heads']:>2}h x{c['head_dim']:<3} m{c['mlp_ratio']:.2f}"
                               for c in cells))
    return "\n".join(lines) + "\n"

