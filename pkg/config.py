"""
Configuration module for the CMixer workbench
Centralized defaults for channel generation, the model, training and I/O.
"""

from pathlib import Path

# Project root directory
PROJECT_ROOT = Path(__file__).parent

# Speed of light (m/s)
SPEED_OF_LIGHT = 299_792_458.0

# Synthetic multipath scenario
SCENARIO_DEFAULTS = {
    'n_t': 32,
    'n_c': 32,
    'f0': 3.5e9,
    'bandwidth': 40e6,
    'path_count_range': (3, 8),
    # Delays and azimuths stay inside what the 5x5 known subset resolves:
    # max_delay well under 1 / (6 * 40 MHz / 32) = 133 ns, |cos(azimuth)| under 1/6.
    'max_delay': 60e-9,
    'delay_profile_decay': 20e-9,
    'azimuth_center': 1.5707963267948966,  # broadside (rad)
    'azimuth_width': 0.2,  # sector width (rad); 2 pi gives the full circle
    'antenna_spacing': None,  # None -> half wavelength at f0
    'rng_seed': 2024,
}

# Model setting row (K layers, widths, hidden sizes, known subset)
MODEL_DEFAULTS = {
    'variant': 'cmixer',
    'K': 5,
    'N_t': 32,
    'N_c': 32,
    'N_t_prime': 32,
    'N_c_prime': 32,
    'S_t': 128,
    'S_c': 128,
    'N_t0': 5,
    'N_c0': 5,
    'activation': 'gelu',
    'space_block': 'cmlp',
    'freq_block': 'cmlp',
    'layer_norm_affine': True,
}

# Full-scale training protocol
TRAINING_DEFAULTS = {
    'batch_size': 250,
    'epochs': 2000,
    'base_lr': 1e-3,
    'decay_factor': 0.2,
    'period': 500,
    'warm_period': 500,
    'split_ratio': (4, 1),
    'samples': 50_000,
    'precision': 'f32',
}

# Desk-scale budget used by the acceptance runs
TOY_TRAINING = {
    'train_samples': 2000,
    'test_samples': 500,
    'epochs': 300,
    'batch_size': 100,
    'period': 75,
    'warm_period': 75,
}

# Ablation settings
ABLATION_CONFIG = {
    'shuffle_permutations': 5,
    'known_sizes': [(4, 4), (5, 5), (6, 6), (7, 7)],
    'baseline_hidden_layers': 3,
}

# Serialized NMSE floor for perfect predictions (dB)
NMSE_DB_FLOOR = -120.0

# Export Configuration
EXPORT_CONFIG = {
    'default_dir': PROJECT_ROOT / 'runs',
    'report_name': 'report.json',
    'checkpoint_name': 'model.cmxw',
    'dataset_name': 'dataset.cmxd',
}

# Logging Configuration
LOGGING_CONFIG = {
    'file': 'cmixer.log',
    'level': 'INFO',
    'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
}
