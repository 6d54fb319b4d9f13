"""Scene-graph manipulation by autoregressive relationship prediction."""

from .scenegraph import DEFAULT_SCHEMA, Edge, NodeRef, SceneGraph, Schema

__all__ = ["DEFAULT_SCHEMA", "Edge", "NodeRef", "SceneGraph", "Schema"]
__version__ = "0.1.0"
