"""
Pruning a small CNN without finetuning
======================================

Slice half the channels of a toy CNN, rebuild the weights by least squares,
then let the evolutionary search trade accuracy against MACs.
"""

from eaprune.evolve.search import evolve
from eaprune.harness.config import RunConfig
from eaprune.harness.evaluate import proxy_evaluate
from eaprune.harness.experiments import prepare

# A seeded toy model "pretrained" on synthetic Gaussian clusters
cfg = RunConfig(seed=0, reconstruction=256, evaluation=512, initial=24, population=12,
                generations=4, threads=1).check()
ctx = prepare(cfg)
ev = ctx.evaluator()
test = ctx.splits.evaluation
print("full model accuracy:", proxy_evaluate(ctx.graph, ctx.weights, test.images, test.labels))

# Half of every channel group, chosen at random
genome = tuple(max(gn.lower, gn.upper // 2) for gn in ev.space.genes)
sub, rebuilt, report = ev.build(genome)
print("half width, sliced only:   ", proxy_evaluate(sub.graph, sub.weights, test.images, test.labels))
print("half width, reconstructed: ", proxy_evaluate(sub.graph, rebuilt, test.images, test.labels))
print("MACs kept:", sub.flops, "of", ev(ev.space.full())[1])

# Each row of the reconstruction report is one least-squares fit
for rec in report.records[:4]:
    print(f"  {rec.layer:20s} residual {rec.residual_before:9.3f} -> {rec.residual_after:9.3f}")

# A short NSGA-III run; the front is taken over everything evaluated
result = evolve(ev.space, ev, cfg.search_config())
print(f"\n{result.archive.evaluations} subnetworks evaluated, front of {len(result.front)}:")
for m in result.front:
    print(f"  {m.flops:8d} MACs  accuracy {m.accuracy:.3f}  widths {m.genome}")
