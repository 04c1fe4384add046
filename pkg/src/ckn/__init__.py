"""Campaign knowledge network: a provenance-backed campaign graph with
Hoarde-style lineage queries, run-data distillation and experiment similarity."""

from ckn.graph import Direction, EdgeRelation, GraphEdge, GraphNode, GraphStore, NodeKind
from ckn.provenance import DetailLevel, LineageGraph, ProvenanceRecord
from ckn.signature import Signature, SimilarityMatrix, SimilarityMetric

__all__ = [
    "DetailLevel",
    "Direction",
    "EdgeRelation",
    "GraphEdge",
    "GraphNode",
    "GraphStore",
    "LineageGraph",
    "NodeKind",
    "ProvenanceRecord",
    "Signature",
    "SimilarityMatrix",
    "SimilarityMetric",
]

__version__ = "0.1.0"
