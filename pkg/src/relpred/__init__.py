"""Inductive relation prediction on directed enclosing subgraphs."""
from .graph import Graph, Vocab, load_graph
from .extract import Subgraph, extract
from .model import Model, ModelConfig
from .trainer import TrainConfig, fit

__all__ = ["Graph", "Vocab", "load_graph", "Subgraph", "extract", "Model", "ModelConfig", "TrainConfig", "fit"]
__version__ = "0.1.0"
