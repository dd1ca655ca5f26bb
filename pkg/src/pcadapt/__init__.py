"""Backpropagation and predictive-coding training over a shared numpy network core."""

from .bp import accuracy, backward, bp_train_batch, bp_train_epoch, predict
from .checkpoint import load_checkpoint, save_checkpoint
from .data import apply_shift, load_cifar10, load_dataset, load_mnist
from .errors import CheckpointError, ConfigError, DataFormatError, NonFiniteError, PCAdaptError, ShapeMismatchError
from .harness import ExperimentConfig, RunRecord, measure_epoch_time, run_experiment, summarize
from .nn import Network, build_layers, init_network, network_forward
from .optim import AdamWConfig, AdamWOptimizer, SGDMomentumConfig, WarmupCosine, schedule_lr
from .pc import PCConfig, energy, forward_init, pc_test_forward, pc_train_batch, pc_train_epoch, run_inference

__version__ = "0.1.0"
