from .data import (Dataset, DatasetError, DatasetVersionError, CorruptDatasetError, EmptyDatasetError, Sample,
                   generate_dataset, make_batch, read_dataset, write_dataset)
from .losses import loss_jpp, loss_planning, loss_prediction, loss_seg, loss_total

__all__ = [
    "CorruptDatasetError", "Dataset", "DatasetError", "DatasetVersionError", "EmptyDatasetError", "Sample",
    "generate_dataset", "loss_jpp", "loss_planning", "loss_prediction", "loss_seg", "loss_total", "make_batch",
    "read_dataset", "write_dataset",
]
