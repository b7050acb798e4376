"""Graph-convolutional autoencoder surrogates for surface fields on unstructured meshes."""
from . import _backend
from .mesh import (
    Graph,
    PropagationOperator,
    SurfaceMesh,
    build_graph,
    load_fields,
    load_mesh,
    normalize_adjacency,
    save_fields,
    save_mesh,
)

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "PropagationOperator",
    "SurfaceMesh",
    "build_graph",
    "load_fields",
    "load_mesh",
    "normalize_adjacency",
    "save_fields",
    "save_mesh",
    "backend",
]

backend = _backend
