"""
CMixer Workbench Package
Channel mapping for MIMO-OFDM: synthetic multipath channels, a numpy
autodiff engine, the CMixer model and its experiment harness.
"""

__version__ = "1.0.0"

from .chanmodel import ScenarioConfig, SubsetSpec, assemble_csi, generate_dataset, q_h
from .cmixer import CMixerModel, ModelHyperparams, build_variant, count_flops, count_params
from .harness import ExperimentConfig, train
from .metrics import nmse, rho
from .utils import setup_logging, get_logger

__all__ = [
    'ScenarioConfig',
    'SubsetSpec',
    'assemble_csi',
    'generate_dataset',
    'q_h',
    'CMixerModel',
    'ModelHyperparams',
    'build_variant',
    'count_flops',
    'count_params',
    'ExperimentConfig',
    'train',
    'nmse',
    'rho',
    'setup_logging',
    'get_logger'
]
