from .data import Dataset, DatasetError, load_csv_dataset, save_csv_dataset, synth_dataset
from .metrics import log_loss, roc_auc
from .model import FMClassifier, ModelConfig, TrainingDiverged, TrainReport, evaluate, forward, train

__all__ = [
    "Dataset",
    "DatasetError",
    "FMClassifier",
    "ModelConfig",
    "TrainReport",
    "TrainingDiverged",
    "evaluate",
    "forward",
    "load_csv_dataset",
    "log_loss",
    "roc_auc",
    "save_csv_dataset",
    "synth_dataset",
    "train",
]
