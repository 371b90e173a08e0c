"""Federated QoT-estimation toolkit: dense nets, FedAvg, synthetic data."""

from fedqot._core import (
    Dataset,
    FeatureSchema,
    FormatError,
    Hyperparams,
    ModelSpec,
    ParameterVector,
    SchemaError,
    UsageError,
    ValidationError,
    aggregate,
    centralized_train,
    default_schema,
    deserialize_params,
    ecn_update,
    evaluate_accuracy,
    forward,
    generate_synthetic,
    init_params,
    label_qot,
    loss_and_grad,
    run_training,
    serialize_params,
    sgd_step,
    train_test_split,
)

__all__ = [
    "Dataset",
    "FeatureSchema",
    "FormatError",
    "Hyperparams",
    "ModelSpec",
    "ParameterVector",
    "SchemaError",
    "UsageError",
    "ValidationError",
    "aggregate",
    "centralized_train",
    "default_schema",
    "deserialize_params",
    "ecn_update",
    "evaluate_accuracy",
    "forward",
    "generate_synthetic",
    "init_params",
    "label_qot",
    "loss_and_grad",
    "run_training",
    "serialize_params",
    "sgd_step",
    "train_test_split",
]

__version__ = "0.1.0"
