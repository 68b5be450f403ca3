"""
Degree-scaled and neighbor-averaged node features
=================================================

Walks through FDM and FANA on a five-node toy graph, then compares them
with the classic structural augmentations.
"""

import numpy as np

from graphaug import AugmenterSpec, Graph, apply, fana, fdm
from graphaug.graph import normalized_adjacency

np.set_printoptions(precision=3, suppress=True)

# A star (node 0 is the hub) with one extra edge on the rim.
g = Graph(5, [[0, 1], [0, 2], [0, 3], [0, 4], [3, 4]], np.eye(5)[:, :3] + 0.5)
print(g)
print("features:\n", g.features)

###############################################################################
# FDM multiplies every row by d * sigmoid(alpha * d). The hub gets the
# largest multiplier; alpha controls how fast the sigmoid saturates.
for alpha in (-1.0, 0.0, 1.0):
    out = fdm(g, alpha)
    print(f"alpha={alpha:+.0f}  row scale:", out.features[:, 2] / g.features[:, 2])

###############################################################################
# FANA swaps a row for its normalized neighborhood average with
# probability p. "expected" mode returns the average over draws.
print("normalized adjacency:\n", normalized_adjacency(g))
print("p=1:\n", fana(g, 1.0).features)
print("expected, p=0.5:\n", fana(g, 0.5, mode="expected").features)

# Different seeds give different subsets of replaced rows.
for seed in range(3):
    changed = (fana(g, 0.5, seed=seed).features != g.features).any(axis=1)
    print(f"seed {seed}: replaced rows {np.flatnonzero(changed).tolist()}")

###############################################################################
# Structural baselines go through the same dispatcher.
for spec in (AugmenterSpec("edge_remove", p=0.4), AugmenterSpec("feature_mask", p=0.4),
             AugmenterSpec("node_drop", p=0.4), AugmenterSpec("random_walk_sample", keep_ratio=0.6)):
    out = apply(spec, g, seed=1)
    print(f"{spec.label:5s} edges {g.num_edges}->{out.num_edges}  "
          f"zero rows {int((~out.features.any(axis=1)).sum())}")
