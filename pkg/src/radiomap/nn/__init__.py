from radiomap.nn.adam import AdamState, adam_step
from radiomap.nn.autodiff import Tensor
from radiomap.nn.checkpoint import load_checkpoint, save_checkpoint
from radiomap.nn.gat import (
    AttentionGraph,
    GatLayerParams,
    GatModel,
    attention_weights,
    gat_layer_forward,
)

__all__ = [
    "AdamState",
    "AttentionGraph",
    "GatLayerParams",
    "GatModel",
    "Tensor",
    "adam_step",
    "attention_weights",
    "gat_layer_forward",
    "load_checkpoint",
    "save_checkpoint",
]
