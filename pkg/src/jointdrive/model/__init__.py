from .attention import ConfigError, Encoder, EncoderLayer
from .global_transformer import GlobalTransformer, SceneSequence, assemble
from .interaction import VARIANTS, Batch, InteractionNet, ModelConfig, Output
from .local_transformer import LocalTransformer, accumulate_attention
from .waypoints import DeltaGRU, EgoDecoder, Embed, Refiner, accumulate

__all__ = ["Batch", "ConfigError", "DeltaGRU", "EgoDecoder", "Embed", "Encoder", "EncoderLayer",
           "GlobalTransformer", "InteractionNet", "LocalTransformer", "ModelConfig", "Output", "Refiner",
           "SceneSequence", "VARIANTS", "accumulate", "accumulate_attention", "assemble"]
