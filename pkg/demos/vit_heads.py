"""
Dropping attention heads
========================

Head-count pruning of a toy vision transformer, and which widths each
block keeps along the resulting front.
"""

from eaprune.evolve.search import evolve
from eaprune.harness.config import RunConfig
from eaprune.harness.experiments import prepare, retention_table
from eaprune.netgraph import count_flops

cfg = RunConfig(seed=1, model="toy_transformer", space_mode="vit-head-count",
                reconstruction=64, evaluation=256, pretrain=1024, initial=12, population=8,
                generations=2, threads=1).check()
ctx = prepare(cfg)
ev = ctx.evaluator()

# Genes alternate: kept heads of a block, then its MLP hidden width
print([(gn.lower, gn.upper, gn.step) for gn in ev.space.genes])

result = evolve(ev.space, ev, cfg.search_config())
full = count_flops(ctx.graph)

# Kept heads and MLP ratio per block for each front member
for m in result.front:
    blocks = retention_table(ctx.graph, ev.space, m.genome)
    cells = "  ".join(f"{b['heads']}h/{b['mlp_ratio']:.2f}" for b in blocks)
    print(f"{m.flops / full:6.1%} MACs  acc {m.accuracy:.3f}   {cells}")
