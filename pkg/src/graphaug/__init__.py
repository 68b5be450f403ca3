"""Graph data augmentation with degree multiplication and normalized-adjacency aggregation.

Subpackages by layer:

* :mod:`graphaug.graph`       graphs, derived matrices, I/O, SBM generator
* :mod:`graphaug.augment`     FDM, FANA and baseline augmentations
* :mod:`graphaug.tensor`      reverse-mode differentiation and Adam
* :mod:`graphaug.models`      GCN / GraphSAGE / GAT / GIN and supervised training
* :mod:`graphaug.contrastive` view-pair contrastive pretraining and linear evaluation
* :mod:`graphaug.harness`     multi-seed experiments and result tables
"""
__version__ = "0.1.0"

from .augment import AugmenterSpec, apply, fana, fdm  # noqa: E402
from .graph import Graph, load_graph, save_graph, synthetic_sbm  # noqa: E402

__all__ = ["AugmenterSpec", "Graph", "apply", "fana", "fdm", "load_graph", "save_graph",
           "synthetic_sbm", "__version__"]
