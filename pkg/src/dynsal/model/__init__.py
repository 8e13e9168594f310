"""Attentive CNN-convLSTM saliency model."""
from dynsal.model.checkpoint import load_checkpoint, save_checkpoint
from dynsal.model.network import (
    ConvLSTMState,
    GateMaps,
    SequenceOutput,
    attend_frame,
    attention_branch,
    attention_forward,
    attention_layers,
    convlstm_step,
    encode,
    encoder_layers,
    enhance,
    forward_sequence,
    predict_maps,
    readout,
    receptive_field,
)
from dynsal.model.params import (
    RECURRENT_PREFIXES,
    EncoderConfig,
    ModelConfig,
    ModelParams,
    init_params,
    parameter_shapes,
)

__all__ = [
    "RECURRENT_PREFIXES",
    "ConvLSTMState",
    "EncoderConfig",
    "GateMaps",
    "ModelConfig",
    "ModelParams",
    "SequenceOutput",
    "attend_frame",
    "attention_branch",
    "attention_forward",
    "attention_layers",
    "convlstm_step",
    "encode",
    "encoder_layers",
    "enhance",
    "forward_sequence",
    "init_params",
    "predict_maps",
    "load_checkpoint",
    "parameter_shapes",
    "readout",
    "receptive_field",
    "save_checkpoint",
]
