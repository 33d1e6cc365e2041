"""Cross-layer tensor-ring adapters for fine-tuning a frozen dual encoder."""

from .autodiff import Tape, Variable, backward, finite_diff_check
from .data import Dataset, gen_data, load_dataset, save_dataset
from .model import (
    Combinator,
    DualEncoderModel,
    FrozenEncoder,
    ModelDims,
    combinator_gates,
    encode_image,
    encode_text,
    layer_forward,
)
from .ring import (
    FactorizationPlan,
    TRAdapterStack,
    adapter_forward,
    cyclic_shift,
    init_adapter,
    reconstruct_layer_weight,
    reconstruct_ring,
    trainable_param_count,
)
from .tensor import contract, cosine_similarity, tensorize, vectorize
from .training import (
    Batch,
    Metrics,
    TrainConfig,
    adam_step,
    evaluate,
    loss_cls,
    loss_reg,
    total_loss,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "Combinator",
    "Dataset",
    "DualEncoderModel",
    "FactorizationPlan",
    "FrozenEncoder",
    "Metrics",
    "ModelDims",
    "TRAdapterStack",
    "Tape",
    "TrainConfig",
    "Variable",
    "adam_step",
    "adapter_forward",
    "backward",
    "combinator_gates",
    "contract",
    "cosine_similarity",
    "cyclic_shift",
    "encode_image",
    "encode_text",
    "evaluate",
    "finite_diff_check",
    "gen_data",
    "init_adapter",
    "layer_forward",
    "load_dataset",
    "loss_cls",
    "loss_reg",
    "reconstruct_layer_weight",
    "reconstruct_ring",
    "save_dataset",
    "tensorize",
    "total_loss",
    "train",
    "trainable_param_count",
    "vectorize",
]
