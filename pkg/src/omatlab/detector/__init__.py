from .data import LabeledSet, split_train_val
from .model import Detector, PreprocessSpec, features, forward, init_detector, predict, predict_batched, preprocess
from .train import DetectorTrainConfig, EvalReport, SetMetrics, accuracy, evaluate, train_detector

__all__ = [
    "Detector",
    "DetectorTrainConfig",
    "EvalReport",
    "LabeledSet",
    "PreprocessSpec",
    "SetMetrics",
    "accuracy",
    "evaluate",
    "features",
    "forward",
    "init_detector",
    "predict",
    "predict_batched",
    "preprocess",
    "split_train_val",
    "train_detector",
]
