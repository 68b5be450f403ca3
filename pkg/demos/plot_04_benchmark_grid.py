"""
A small benchmark grid
======================

Runs models x augmentations on one synthetic dataset and renders the
mean±std table. The same grid runs from the command line with
``graphaug benchmark --config grid.json``.
"""

from graphaug.harness import benchmark_grid, parse_grid, render_table

grid = parse_grid({
    "datasets": [{"name": "sbm", "synthetic": {"n": 120, "classes": 3, "p_in": 0.15,
                                               "p_out": 0.02, "noise": 1.0}}],
    "models": [{"arch": "GCN"}, {"arch": "GAT", "gat_heads": 4}],
    "augmentations": [{"kind": "identity"}, {"kind": "edge_remove"}, {"kind": "fdm"},
                      {"kind": "fana", "p": 0.5}],
    "train": {"epochs": 60, "patience": 20},
    "num_seeds": 3,
})

reports = benchmark_grid(grid)
print(render_table(reports, "markdown"))

# Per-seed samples stay in the reports, so other estimators can be computed later.
best = max(reports, key=lambda r: r.mean)
print("best cell:", best.model, best.method, best.samples)
