from dexgain.nets.checkpoint import load_checkpoint, save_checkpoint
from dexgain.nets.layers import (
    AttentionSpec,
    cross_attention_forward,
    init_cross_attention,
    init_mlp,
    init_self_attention,
    layer_norm,
    mlp_forward,
    self_attention_forward,
)
from dexgain.nets.optim import Adam, adam_update, clip_grad_norm
from dexgain.nets.params import ParamSet
from dexgain.nets.tensor import Tensor

__all__ = [
    "Adam",
    "AttentionSpec",
    "ParamSet",
    "Tensor",
    "adam_update",
    "clip_grad_norm",
    "cross_attention_forward",
    "init_cross_attention",
    "init_mlp",
    "init_self_attention",
    "layer_norm",
    "load_checkpoint",
    "mlp_forward",
    "save_checkpoint",
    "self_attention_forward",
]
