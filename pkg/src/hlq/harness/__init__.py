from .data import load_dataset, make_splits, synthetic_gratings, write_dataset
from .experiments import (
    ABLATION_ROWS,
    ablation,
    finite_difference_check,
    grad_check,
    path_strategy,
    quant_error_study,
)
from .layers import Conv2d, Flatten, Linear, MaxPool2d, ReLU, Tanh, col2im, im2col, softmax_cross_entropy
from .model import LayerSpec, Model, ModelSpec, desk_cnn_spec, mlp_spec
from .optim import SGD, AdamW, build_optimizer, scheduled_lr
from .train import (
    STRATEGY_NAMES,
    EpochMetrics,
    MetricsHistory,
    TrainConfig,
    calibrate_bases,
    strategy_from_config,
    train,
)
