"""Bag classifiers, training and ridge ranking."""
from .base import THRESHOLD, BagModel, load_model
from .baselines import (
    AttentionMilModel,
    DnnModel,
    InstanceMaxModel,
    attention_mil_forward,
    dnn_forward,
    instance_max_predict,
)
from .mimil import (
    MimilModel,
    attention_pool,
    classifier_logits,
    classify,
    embed_modality,
    fusion_affinity,
    mimil_forward,
    modality_fusion,
)
from .ridge import ridge_coefficients, ridge_rank
from .train import TrainConfig, build_model, class_weights, train

MODEL_REGISTRY = {
    cls.arch: cls for cls in (MimilModel, AttentionMilModel, InstanceMaxModel, DnnModel)
}

__all__ = [
    "MODEL_REGISTRY", "THRESHOLD", "AttentionMilModel", "BagModel", "DnnModel", "InstanceMaxModel",
    "MimilModel", "TrainConfig", "attention_mil_forward", "attention_pool", "build_model",
    "class_weights", "classifier_logits", "classify", "dnn_forward", "embed_modality",
    "fusion_affinity", "instance_max_predict", "load_model", "mimil_forward", "modality_fusion",
    "ridge_coefficients", "ridge_rank", "train",
]
