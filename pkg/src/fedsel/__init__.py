"""Federated client-selection simulator with differential privacy and checkpoint recovery."""

from .data import Dataset, PartitionPlan, generate_synthetic, load_csv, normalize, partition
from .errors import (ConfigError, FedselError, IngestionError, IntegrityError, ParameterError, ShapeError,
                     StorageError)
from .model import Arch, EvalReport, GlobalModel, evaluate, init_model, loss_and_gradient
from .orchestrator import aggregate, local_train, run_experiment, run_round

__version__ = "0.1.0"
