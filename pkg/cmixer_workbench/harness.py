"""
Experiment harness for the CMixer workbench
Dataset splitting, the training loop, test evaluation and the ablation runners
(CMLP grid, target-shuffle study, known-size sweep).
"""

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import TRAINING_DEFAULTS, TOY_TRAINING, ABLATION_CONFIG, EXPORT_CONFIG
from . import storage
from .autodiff import AdamState, LrSchedule, Tape, Tensor, adam_step, backward, lr_at, mse_loss
from .chanmodel import ChannelDataset, SubsetSpec, extract_known, global_rms
from .cmixer import ModelHyperparams, ModelVariant, build_variant, count_flops, count_params
from .errors import ConfigurationError, TrainingDivergedError, ValidationError
from .metrics import NmseResult, nmse, rho
from .shuffle import ShuffleMode, ShuffleSpec
from .utils import get_logger, log_error, worker_count

PRECISIONS = {'f32': np.float32, 'f64': np.float64}
EVAL_BATCH = 500


# -------------------------
# Configuration
# -------------------------
@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one training run."""

    dataset_path: str = ''
    variant: str = ModelVariant.CMIXER.value
    model: ModelHyperparams = field(default_factory=ModelHyperparams)
    batch_size: int = TRAINING_DEFAULTS['batch_size']
    epochs: int = TRAINING_DEFAULTS['epochs']
    schedule: LrSchedule = field(default_factory=LrSchedule)
    seed: int = 0
    precision: str = TRAINING_DEFAULTS['precision']
    output_dir: str = str(EXPORT_CONFIG['default_dir'])
    split_ratio: Tuple[int, int] = TRAINING_DEFAULTS['split_ratio']
    allow_short_batch: bool = True
    train_samples: Optional[int] = None
    test_samples: Optional[int] = None
    shuffle: ShuffleSpec = field(default_factory=ShuffleSpec)
    shuffle_inputs: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'split_ratio', tuple(int(v) for v in self.split_ratio))
        problems = []
        try:
            object.__setattr__(self, 'variant', ModelVariant.parse(self.variant).value)
        except ConfigurationError as e:
            problems.append(str(e))
        if self.batch_size < 1:
            problems.append(f"batch_size must be positive, got {self.batch_size}")
        if self.epochs < 0:
            problems.append(f"epochs must be non-negative, got {self.epochs}")
        if self.precision not in PRECISIONS:
            problems.append(f"precision must be one of {sorted(PRECISIONS)}, got '{self.precision}'")
        if len(self.split_ratio) != 2 or self.split_ratio[0] < 1 or self.split_ratio[1] < 0:
            problems.append(f"split_ratio must be (train>=1, test>=0), got {self.split_ratio}")
        for name in ('train_samples', 'test_samples'):
            value = getattr(self, name)
            if value is not None and value < 1:
                problems.append(f"{name} must be positive when set, got {value}")
        if problems:
            log_error(f"Invalid experiment config: {'; '.join(problems)}")
            raise ConfigurationError("Invalid experiment config: " + "; ".join(problems))

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def to_dict(self) -> dict:
        return {
            'dataset_path': self.dataset_path,
            'variant': self.variant,
            'model': self.model.to_dict(),
            'batch_size': self.batch_size,
            'epochs': self.epochs,
            'schedule': {f.name: getattr(self.schedule, f.name) for f in fields(LrSchedule)},
            'seed': self.seed,
            'precision': self.precision,
            'output_dir': self.output_dir,
            'split_ratio': list(self.split_ratio),
            'allow_short_batch': self.allow_short_batch,
            'train_samples': self.train_samples,
            'test_samples': self.test_samples,
            'shuffle': self.shuffle.to_dict(),
            'shuffle_inputs': self.shuffle_inputs,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ExperimentConfig':
        """
        Build a config from its JSON form; absent keys take their defaults.

        Raises:
            ConfigurationError: On unknown keys or invalid values
        """
        if not isinstance(data, dict):
            raise ConfigurationError(f"Experiment config must be a JSON object, got {type(data).__name__}.")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            log_error(f"Unknown experiment config keys {sorted(unknown)}")
            raise ConfigurationError(f"Unknown experiment config keys: {sorted(unknown)}.")
        data = dict(data)
        try:
            if 'model' in data:
                data['model'] = ModelHyperparams.from_dict(data['model'])
            if 'schedule' in data:
                sched = data['schedule']
                extra = set(sched) - {f.name for f in fields(LrSchedule)}
                if extra:
                    raise ConfigurationError(f"Unknown schedule keys: {sorted(extra)}.")
                data['schedule'] = LrSchedule(**sched)
            if 'shuffle' in data:
                data['shuffle'] = ShuffleSpec.from_dict(data['shuffle'])
            return cls(**data)
        except ValidationError:
            raise
        except (TypeError, ValueError) as e:
            log_error(f"Malformed experiment config: {e}")
            raise ConfigurationError(f"Malformed experiment config: {e}.") from e

    def fingerprint(self) -> str:
        """Short stable hash of the configuration, git-style."""
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha1(canonical.encode('utf-8')).hexdigest()[:12]


def toy_experiment(dataset_path: str = '', seed: int = 0, **overrides) -> ExperimentConfig:
    """Desk-scale budget: 2000/500 samples, 300 epochs, batch 100, 75-epoch decay periods."""
    config = ExperimentConfig(
        dataset_path=dataset_path,
        batch_size=TOY_TRAINING['batch_size'],
        epochs=TOY_TRAINING['epochs'],
        schedule=LrSchedule(period=TOY_TRAINING['period'], warm_period=TOY_TRAINING['warm_period']),
        seed=seed,
        train_samples=TOY_TRAINING['train_samples'],
        test_samples=TOY_TRAINING['test_samples'],
    )
    return replace(config, **overrides)


# -------------------------
# Reports
# -------------------------
@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float


@dataclass
class MetricsReport:
    """Structured results of one run."""

    config: dict
    epochs: List[EpochRecord]
    nmse: NmseResult
    rho: float
    wallclock_s: float
    seed: int
    fingerprint: str
    params: int
    flops: int
    scale: float

    def to_dict(self) -> dict:
        return {
            'config': self.config,
            'epochs': [{'epoch': e.epoch, 'lr': e.lr, 'train_loss': e.train_loss} for e in self.epochs],
            'test': {
                'nmse_linear': self.nmse.linear,
                'nmse_db': self.nmse.serialized_db(),
                'rho': self.rho,
            },
            'wallclock_s': self.wallclock_s,
            'seed': self.seed,
            'fingerprint': self.fingerprint,
            'params': self.params,
            'flops': self.flops,
            'scale': self.scale,
        }


@dataclass
class TrainingResult:
    report: MetricsReport
    model: object


# -------------------------
# Data preparation
# -------------------------
def split_indices(n: int, ratio: Sequence[int], seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Shuffled train/test index partition with train share ratio[0] / sum(ratio).

    Raises:
        ValidationError: If a side with positive share ends up empty
    """
    if n < 1:
        log_error("split requested on an empty dataset")
        raise ValidationError("Cannot split an empty dataset.")
    train_share, test_share = (int(r) for r in ratio)
    if train_share < 1 or test_share < 0:
        raise ValidationError(f"Split ratio must be (train>=1, test>=0), got {tuple(ratio)}.")
    n_train = n * train_share // (train_share + test_share)
    if n_train == 0 or (test_share > 0 and n_train == n):
        log_error(f"Split {train_share}:{test_share} of {n} samples leaves one side empty")
        raise ValidationError(f"Split {train_share}:{test_share} of {n} samples leaves one side empty.")
    order = np.random.default_rng(seed).permutation(n)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def split_dataset(dataset, ratio: Sequence[int], seed: int):
    """
    Deterministic shuffled split of a dataset (or array) into train and test.

    Returns:
        Tuple (train, test) of the same kind as the input
    """
    channels = dataset.channels if isinstance(dataset, ChannelDataset) else np.asarray(dataset)
    train_idx, test_idx = split_indices(len(channels), ratio, seed)
    if isinstance(dataset, ChannelDataset):
        return (replace(dataset, channels=channels[train_idx]),
                replace(dataset, channels=channels[test_idx]))
    return channels[train_idx], channels[test_idx]


def to_model_layout(h: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Complex [..., n_t, n_c] -> real [..., n_c, n_t, 2]."""
    pairs = np.stack([h.real, h.imag], axis=-1)
    return np.ascontiguousarray(np.swapaxes(pairs, -3, -2), dtype=dtype)


def from_model_layout(x: np.ndarray) -> np.ndarray:
    """Real [..., n_c, n_t, 2] -> complex [..., n_t, n_c]."""
    x = np.swapaxes(np.asarray(x, dtype=np.float64), -3, -2)
    return x[..., 0] + 1j * x[..., 1]


@dataclass
class PreparedData:
    train_inputs: np.ndarray
    train_targets: np.ndarray
    test_inputs: np.ndarray
    test_targets: np.ndarray
    test_truth: np.ndarray  # complex, normalized, shuffled like the targets
    scale: float
    subset: SubsetSpec


def prepare_data(config: ExperimentConfig, dataset: ChannelDataset) -> PreparedData:
    """
    Split, normalize by the training RMS, extract known inputs and build targets.

    Inputs are extracted before any target shuffle unless shuffle_inputs is set.

    Raises:
        ConfigurationError: If the dataset size disagrees with the model
    """
    hp = config.model
    n_t, n_c = dataset.channels.shape[1:]
    if (n_t, n_c) != (hp.N_t, hp.N_c):
        log_error(f"Dataset is {n_t}x{n_c} but model expects {hp.N_t}x{hp.N_c}")
        raise ConfigurationError(f"Dataset is {n_t}x{n_c} but the model expects {hp.N_t}x{hp.N_c}.")
    train, test = split_dataset(dataset.channels, config.split_ratio, config.seed)
    if config.train_samples is not None:
        train = train[:config.train_samples]
    if config.test_samples is not None:
        test = test[:config.test_samples]
    if len(test) == 0:
        log_error("Experiment has no test samples")
        raise ValidationError("The test split is empty; use a split ratio with a test share.")

    scale = global_rms(train)
    if scale == 0:
        raise ValidationError("Training split has zero energy.")
    train, test = train / scale, test / scale

    subset = SubsetSpec.uniform(hp.N_t, hp.N_c, hp.N_t0, hp.N_c0)
    train_targets, test_targets = config.shuffle.apply(train), config.shuffle.apply(test)
    train_src = train_targets if config.shuffle_inputs else train
    test_src = test_targets if config.shuffle_inputs else test
    dtype = config.dtype
    return PreparedData(
        train_inputs=to_model_layout(extract_known(train_src, subset), dtype),
        train_targets=to_model_layout(train_targets, dtype),
        test_inputs=to_model_layout(extract_known(test_src, subset), dtype),
        test_targets=to_model_layout(test_targets, dtype),
        test_truth=test_targets,
        scale=scale,
        subset=subset,
    )


# -------------------------
# Training and evaluation
# -------------------------
def predict(model, inputs: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Run the model without recording gradients; returns model-layout predictions."""
    outputs = [model(Tensor(inputs[i:i + batch_size])).data for i in range(0, len(inputs), batch_size)]
    return np.concatenate(outputs, axis=0)


def evaluate(model, inputs: np.ndarray, truth: np.ndarray) -> Tuple[NmseResult, float]:
    """NMSE and cosine correlation of model predictions against complex truth."""
    predicted = from_model_layout(predict(model, inputs))
    return nmse(truth, predicted), rho(truth, predicted)


def train(config: ExperimentConfig, dataset: Optional[ChannelDataset] = None, model=None) -> TrainingResult:
    """
    Train a model per the config and evaluate it on the test split.

    Args:
        config: Experiment description
        dataset: Preloaded dataset; read from config.dataset_path when None
        model: Prebuilt model; built from the config when None

    Returns:
        TrainingResult with the metrics report and the trained model

    Raises:
        TrainingDivergedError: If the loss becomes non-finite
        ConfigurationError: If the config disagrees with the data
    """
    logger = get_logger()
    started = time.perf_counter()
    if dataset is None:
        dataset = storage.load_dataset(config.dataset_path)
    data = prepare_data(config, dataset)
    n_train = len(data.train_inputs)
    if not config.allow_short_batch and n_train % config.batch_size:
        log_error(f"{n_train} training samples do not divide into batches of {config.batch_size}")
        raise ConfigurationError(
            f"{n_train} training samples do not divide into batches of {config.batch_size}; "
            "set allow_short_batch to permit a short final batch."
        )
    if model is None:
        model = build_variant(config.variant, config.model, seed=config.seed, dtype=config.dtype)
    params = model.parameters()
    state = AdamState()
    rng = np.random.default_rng([config.seed, 1])
    fingerprint = config.fingerprint()
    logger.info(f"Run {fingerprint}: {config.variant}, {n_train} train / {len(data.test_inputs)} test, "
                f"{config.epochs} epochs, batch {config.batch_size}")

    history: List[EpochRecord] = []
    for epoch in range(1, config.epochs + 1):
        lr = lr_at(epoch, config.schedule)
        order = rng.permutation(n_train)
        total = 0.0
        for batch, start in enumerate(range(0, n_train, config.batch_size)):
            idx = order[start:start + config.batch_size]
            with Tape() as tape:
                pred = model(Tensor(data.train_inputs[idx]))
                loss = mse_loss(pred, data.train_targets[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                log_error(f"Non-finite loss {value} at epoch {epoch}, batch {batch}, lr {lr:g}")
                raise TrainingDivergedError(epoch, batch, lr, value)
            grads = backward(loss, tape)
            adam_step(params, {name: grads[p] for name, p in params.items() if p in grads}, state, lr)
            total += value * len(idx)
        record = EpochRecord(epoch=epoch, lr=lr, train_loss=total / n_train)
        history.append(record)
        logger.info(f"Run {fingerprint} epoch {epoch}: lr={lr:.3g} loss={record.train_loss:.6g}")

    result_nmse, result_rho = evaluate(model, data.test_inputs, data.test_truth)
    report = MetricsReport(
        config=config.to_dict(),
        epochs=history,
        nmse=result_nmse,
        rho=result_rho,
        wallclock_s=time.perf_counter() - started,
        seed=config.seed,
        fingerprint=fingerprint,
        params=count_params(model),
        flops=count_flops(model),
        scale=data.scale,
    )
    logger.info(f"Run {fingerprint} finished: NMSE {result_nmse.db:.2f} dB, rho {result_rho:.4f}")
    return TrainingResult(report=report, model=model)


# -------------------------
# Ablations
# -------------------------
@dataclass
class CellResult:
    label: str
    report: MetricsReport

    @property
    def nmse_db(self) -> float:
        return self.report.nmse.serialized_db()

    def row(self) -> list:
        return [self.label, self.nmse_db, self.report.rho, self.report.params]


CSV_HEADER = ['variant', 'nmse_db', 'rho', 'params']


def _run_cells(jobs: List[Tuple[str, ExperimentConfig]], dataset: ChannelDataset) -> List[CellResult]:
    workers = min(worker_count(), len(jobs))

    def run(job):
        label, cfg = job
        return CellResult(label, train(cfg, dataset).report)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, jobs))
    return [run(job) for job in jobs]


def run_cmlp_ablation(config: ExperimentConfig, dataset: Optional[ChannelDataset] = None) -> Dict[Tuple[str, str], CellResult]:
    """
    Train the four (space, frequency) in {mlp, cmlp}^2 mixer variants under one budget.

    Returns:
        Mapping (space_block, freq_block) -> CellResult
    """
    if dataset is None:
        dataset = storage.load_dataset(config.dataset_path)
    grid = [(s, f) for s in ('mlp', 'cmlp') for f in ('mlp', 'cmlp')]
    jobs = [(f"sm_{s}-fm_{f}",
             replace(config, variant=ModelVariant.CMIXER.value, model=config.model.with_blocks(s, f)))
            for s, f in grid]
    results = _run_cells(jobs, dataset)
    for cell in results:
        get_logger().info(f"CMLP ablation {cell.label}: {cell.nmse_db:.2f} dB")
    return dict(zip(grid, results))


@dataclass
class ShuffleSummary:
    mode: ShuffleMode
    cells: List[CellResult]

    @property
    def mean_db(self) -> float:
        return float(np.mean([c.nmse_db for c in self.cells]))

    @property
    def std_db(self) -> float:
        return float(np.std([c.nmse_db for c in self.cells]))


def run_shuffle_ablation(config: ExperimentConfig, dataset: Optional[ChannelDataset] = None,
                         permutations: int = ABLATION_CONFIG['shuffle_permutations'],
                         epochs: Optional[int] = None) -> Dict[ShuffleMode, ShuffleSummary]:
    """
    Train on unshuffled, interlaced-shuffled and non-interlaced-shuffled targets.

    Each shuffled mode uses `permutations` random permutations, fixed per run.

    Returns:
        Mapping mode -> ShuffleSummary (mean/std NMSE over its runs)
    """
    if dataset is None:
        dataset = storage.load_dataset(config.dataset_path)
    if epochs is not None:
        config = replace(config, epochs=epochs)
    hp = config.model
    jobs = [('origin', replace(config, shuffle=ShuffleSpec()))]
    for mode in (ShuffleMode.INTERLACED, ShuffleMode.NON_INTERLACED):
        for k in range(permutations):
            spec = ShuffleSpec.random(mode, hp.N_t, hp.N_c, seed=config.seed + 1000 * (k + 1))
            jobs.append((f"{mode.value}_{k}", replace(config, shuffle=spec)))
    results = _run_cells(jobs, dataset)

    summaries = {}
    for mode in ShuffleMode:
        cells = [c for c in results if c.label == mode.value or c.label.startswith(mode.value + '_')]
        summaries[mode] = ShuffleSummary(mode, cells)
        get_logger().info(f"Shuffle ablation {mode.value}: {summaries[mode].mean_db:.2f} "
                          f"+/- {summaries[mode].std_db:.2f} dB over {len(cells)} runs")
    return summaries


def run_mapping_sweep(config: ExperimentConfig, dataset: Optional[ChannelDataset] = None,
                      known_sizes: Sequence[Tuple[int, int]] = tuple(ABLATION_CONFIG['known_sizes'])) -> List[CellResult]:
    """Train CMixer and the parameter-matched MLP baseline for each known size."""
    if dataset is None:
        dataset = storage.load_dataset(config.dataset_path)
    jobs = []
    for n_t0, n_c0 in known_sizes:
        hp = config.model.with_known(n_t0, n_c0)
        for variant in (ModelVariant.CMIXER, ModelVariant.PURE_MLP):
            jobs.append((f"{variant.value}_{n_t0}x{n_c0}", replace(config, variant=variant.value, model=hp)))
    return _run_cells(jobs, dataset)
