"""Network description, weight storage, FLOPs accounting and inference."""

from .flops import count_flops, layer_flops
from .forward import forward, run_layer
from .graph import (
    HEAD_DIM, HEADS, HIDDEN, IN, INPUT, OUT, DependencyGroup, LayerSpec, NetworkGraph,
    effective_hyperparams, graph_from_dict, graph_to_dict, infer_shapes, load_graph,
    save_graph, validate,
)
from .models import builtin, deit_base, init_weights, mobilenet_v1, resnet50, toy_cnn, toy_transformer, vision_transformer
from .weightio import load_weights, save_weights

__all__ = [
    "HEAD_DIM", "HEADS", "HIDDEN", "IN", "INPUT", "OUT", "DependencyGroup", "LayerSpec",
    "NetworkGraph", "builtin", "count_flops", "deit_base", "effective_hyperparams",
    "forward", "graph_from_dict", "graph_to_dict", "infer_shapes", "init_weights",
    "layer_flops", "load_graph", "load_weights", "mobilenet_v1", "resnet50", "run_layer",
    "save_graph", "save_weights", "toy_cnn", "toy_transformer", "validate",
    "vision_transformer",
]
