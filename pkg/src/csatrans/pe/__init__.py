from .baselines import (
    TreePE,
    TripletPE,
    canonical_signs,
    laplacian_pe,
    normalized_laplacian,
    sequential_pe,
    tree_paths,
    triplets,
)
from .cse import CodeStructureEmbedder, CseConfig, CseLayer, RelationBatch, cse_forward
from .jacobi import jacobi_eigh

SCHEMES = ("csa", "sequential", "tree", "triplet", "laplacian")
