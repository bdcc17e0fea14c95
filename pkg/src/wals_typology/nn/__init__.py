from .layers import SequenceTooShort
from .model import FLAT, MULTITASK, Batch, Model, ModelConfig, init_params, make_batch

__all__ = ["SequenceTooShort", "FLAT", "MULTITASK", "Batch", "Model", "ModelConfig",
           "init_params", "make_batch"]
