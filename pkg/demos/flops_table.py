"""
Counting multiply-accumulates
=============================

Full-width cost of the built-in networks, then what uniform width cuts do to it.
"""

from eaprune.netgraph import builtin, count_flops
from eaprune.prunespace import build_space

# Every builtin is a plain layer graph plus its dependency groups
for name in ("resnet50", "mobilenet_v1", "deit_base", "toy_cnn", "toy_transformer"):
    g = builtin(name)
    print(f"{name:16s} {count_flops(g) / 1e6:10.1f}M MACs  {len(g.layers):4d} layers  "
          f"{len(g.groups):3d} groups")

# Keeping a fraction of every group shows how cost scales with width.
# Convolutions between two cut groups shrink roughly with the square.
g = builtin("resnet50")
space = build_space(g)
full = count_flops(g)
print()
for frac in (1.0, 0.75, 0.5, 0.25):
    genome = tuple(max(gn.lower, round(gn.upper * frac)) for gn in space.genes)
    print(f"resnet50 at {frac:4.0%} width: {count_flops(g, space.sizes(genome)) / full:6.1%} of MACs")

# The search space encodes one integer per group
print(f"\nresnet50 genes: {len(space)}, encoding size {space.encoding_bits():.0f} bits")
