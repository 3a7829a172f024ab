"""Incremental reconstruction of the mesh surrogate, objects, agents and places."""
from .esdf import Esdf, compute_esdf
from .gvd import GvdResult, extract_gvd
from .integration import Frontend, FrontendConfig, KeyframeResult, connect_interlayer
from .objects import ObjectTracker, euclidean_clusters, extract_objects
from .places import (GvdGraph, PlaceClusters, SparsifyResult, apply_gvd_update, cluster_representative,
                     sparsify_places, update_clusters)

__all__ = [
    "Esdf", "compute_esdf", "GvdResult", "extract_gvd", "Frontend", "FrontendConfig", "KeyframeResult",
    "connect_interlayer", "ObjectTracker", "euclidean_clusters", "extract_objects", "GvdGraph", "PlaceClusters",
    "SparsifyResult", "apply_gvd_update", "cluster_representative", "sparsify_places", "update_clusters",
]
