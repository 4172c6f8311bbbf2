"""
Main entry point for the CMixer workbench
Parses the command line, validates the whole request, then dispatches to the
channel generator, the trainer, the ablation runners or the visualizer.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 validation error.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from config import EXPORT_CONFIG, ABLATION_CONFIG, LOGGING_CONFIG, TRAINING_DEFAULTS
from . import __version__
from . import storage
from .autodiff import Tensor
from .chanmodel import ScenarioConfig, SubsetSpec, extract_known, generate_dataset
from .cmixer import (
    FlopConvention,
    ModelVariant,
    build_from_descriptor,
    build_variant,
    count_flops,
    count_params,
    flop_breakdown,
    model_descriptor,
)
from .errors import ValidationError
from .harness import (
    CSV_HEADER,
    ExperimentConfig,
    MetricsReport,
    evaluate,
    from_model_layout,
    prepare_data,
    run_cmlp_ablation,
    run_mapping_sweep,
    run_shuffle_ablation,
    to_model_layout,
    toy_experiment,
    train,
)
from .utils import get_logger, log_error, parse_known_size, setup_logging, worker_count
from .visualize import export_grayscale

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3


class UsageError(Exception):
    """Unknown command, unknown flag or malformed flag value."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -------------------------
# Argument parsing
# -------------------------
def _common_flags():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--log-file', help=f"log file (default: {LOGGING_CONFIG['file']})")
    common.add_argument('--verbose', action='store_true', help="also log to stderr")
    return common


def _experiment_flags(parser):
    parser.add_argument('--config', help="experiment JSON file")
    parser.add_argument('--dataset', help="CMXD dataset file (overrides the config)")
    parser.add_argument('--seed', type=int, help="training seed")
    parser.add_argument('--epochs', type=int, help="number of epochs")
    parser.add_argument('--variant', help="cmixer, real_parallel or pure_mlp")
    parser.add_argument('--known', help="known subset size, e.g. 5x5")
    parser.add_argument('--precision', choices=('f32', 'f64'))
    parser.add_argument('--activation', help="gelu or relu")
    parser.add_argument('--toy', action='store_true', help="start from the desk-scale budget")
    parser.add_argument('--out', help="output directory")


def build_parser():
    common = _common_flags()
    parser = _Parser(prog='cmixer', description="CMixer channel-mapping workbench")
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', metavar='COMMAND', parser_class=_Parser)
    sub.required = True

    gen = sub.add_parser('generate', parents=[common], help="generate a synthetic CSI dataset")
    gen.add_argument('--config', help="scenario JSON file")
    gen.add_argument('--samples', type=int, default=TRAINING_DEFAULTS['samples'])
    gen.add_argument('--seed', type=int, help="scenario seed")
    gen.add_argument('--out', help="output directory")

    _experiment_flags(sub.add_parser('train', parents=[common], help="train a model and evaluate it"))

    ev = sub.add_parser('eval', parents=[common], help="evaluate a checkpoint on the test split")
    ev.add_argument('checkpoint')
    _experiment_flags(ev)

    _experiment_flags(sub.add_parser('ablate-cmlp', parents=[common], help="CMLP vs MLP mixing grid"))

    shuf = sub.add_parser('ablate-shuffle', parents=[common], help="target shuffle study")
    _experiment_flags(shuf)
    shuf.add_argument('--permutations', type=int, default=ABLATION_CONFIG['shuffle_permutations'])

    sweep = sub.add_parser('sweep', parents=[common], help="CMixer vs MLP baseline over known sizes")
    _experiment_flags(sweep)
    sweep.add_argument('--sizes', default=','.join(f"{t}x{c}" for t, c in ABLATION_CONFIG['known_sizes']))

    viz = sub.add_parser('viz', parents=[common], help="export grayscale CSI images")
    viz.add_argument('--dataset', required=True)
    viz.add_argument('--index', type=int, default=0)
    viz.add_argument('--checkpoint', help="also export the model's prediction")
    viz.add_argument('--transpose', action='store_true', help="rows are subcarriers")
    viz.add_argument('--shared-scale', action='store_true', help="one min/max across all images")
    viz.add_argument('--out', help="output directory")

    info = sub.add_parser('info', parents=[common], help="parameter and FLOP accounting")
    info.add_argument('checkpoint', nargs='?')
    info.add_argument('--variant', default=ModelVariant.CMIXER.value)
    info.add_argument('--known', help="known subset size, e.g. 5x5")
    info.add_argument('--activation')
    return parser


# -------------------------
# Validation helpers
# -------------------------
def _require_file(path, what):
    if path is None or not Path(path).is_file():
        log_error(f"{what} {path} not found")
        raise ValidationError(f"{what} {path} not found.")
    return Path(path)


def _experiment_from_args(args) -> ExperimentConfig:
    """Merge the config file with command-line overrides; raises before any write."""
    if args.config:
        config = ExperimentConfig.from_dict(storage.load_json(_require_file(args.config, 'Config file')))
        if args.toy:
            get_logger().warning("--toy ignored because --config was given")
    elif args.toy:
        config = toy_experiment()
    else:
        config = ExperimentConfig()

    overrides = {}
    if args.dataset:
        overrides['dataset_path'] = args.dataset
    if args.seed is not None:
        overrides['seed'] = args.seed
    if args.epochs is not None:
        overrides['epochs'] = args.epochs
    if args.variant:
        overrides['variant'] = args.variant
    if args.precision:
        overrides['precision'] = args.precision
    if args.out:
        overrides['output_dir'] = args.out
    model = config.model
    if args.known:
        model = model.with_known(*parse_known_size(args.known))
    if args.activation:
        model = replace(model, activation=args.activation.strip().lower())
    overrides['model'] = model
    config = replace(config, **overrides)
    _require_file(config.dataset_path or None, 'Dataset file')
    return config


def _load_checked_dataset(config: ExperimentConfig):
    dataset = storage.load_dataset(config.dataset_path)
    n_t, n_c = dataset.channels.shape[1:]
    if (n_t, n_c) != (config.model.N_t, config.model.N_c):
        raise ValidationError(
            f"Dataset is {n_t}x{n_c} but the model expects {config.model.N_t}x{config.model.N_c}."
        )
    return dataset


def _load_model(checkpoint, dtype=np.float32):
    """Rebuild a model from a checkpoint; returns (model, descriptor)."""
    tensors, descriptor = storage.load_checkpoint(_require_file(checkpoint, 'Checkpoint'))
    if descriptor is None:
        log_error(f"Checkpoint {checkpoint} has no descriptor")
        raise ValidationError(f"Checkpoint {checkpoint} has no model descriptor beside it.")
    model = build_from_descriptor(descriptor, dtype=dtype)
    model.load_state(tensors)
    return model, descriptor


def _write_report(path, report: MetricsReport):
    storage.save_json(path, report.to_dict())


def _save_cells(out_dir: Path, folder: str, cells):
    for cell in cells:
        _write_report(out_dir / folder / f"{cell.label}.json", cell.report)


# -------------------------
# Commands
# -------------------------
def cmd_generate(args):
    data = storage.load_json(_require_file(args.config, 'Config file')) if args.config else {}
    scenario = ScenarioConfig.from_dict(data)
    if args.seed is not None:
        scenario = replace(scenario, rng_seed=args.seed)
    if args.samples < 1:
        raise ValidationError(f"--samples must be positive, got {args.samples}.")
    out = Path(args.out or EXPORT_CONFIG['default_dir'])

    dataset = generate_dataset(scenario, args.samples, workers=worker_count())
    path = out / EXPORT_CONFIG['dataset_name']
    storage.save_dataset(path, dataset)
    print(f"Wrote {len(dataset)} samples ({scenario.n_t}x{scenario.n_c}) to {path}")
    return EXIT_OK


def cmd_train(args):
    config = _experiment_from_args(args)
    dataset = _load_checked_dataset(config)
    out = Path(config.output_dir)

    result = train(config, dataset)
    checkpoint = out / EXPORT_CONFIG['checkpoint_name']
    descriptor = model_descriptor(result.model, training_scale=result.report.scale)
    storage.save_checkpoint(checkpoint, result.model.state_dict(), descriptor)
    storage.save_json(out / 'config.json', config.to_dict())
    _write_report(out / EXPORT_CONFIG['report_name'], result.report)
    print(f"NMSE {result.report.nmse.serialized_db():.2f} dB, rho {result.report.rho:.4f}; "
          f"checkpoint {checkpoint}")
    return EXIT_OK


def cmd_eval(args):
    config = _experiment_from_args(args)
    model, _ = _load_model(args.checkpoint, config.dtype)
    config = replace(config, model=model.hp)
    dataset = _load_checked_dataset(config)
    data = prepare_data(config, dataset)

    result_nmse, result_rho = evaluate(model, data.test_inputs, data.test_truth)
    out = Path(config.output_dir)
    storage.save_json(out / 'eval.json', {
        'checkpoint': str(args.checkpoint),
        'dataset': config.dataset_path,
        'test_samples': len(data.test_inputs),
        'nmse_linear': result_nmse.linear,
        'nmse_db': result_nmse.serialized_db(),
        'rho': result_rho,
        'scale': data.scale,
    })
    print(f"NMSE {result_nmse.serialized_db():.2f} dB, rho {result_rho:.4f}")
    return EXIT_OK


def cmd_ablate_cmlp(args):
    config = _experiment_from_args(args)
    dataset = _load_checked_dataset(config)
    out = Path(config.output_dir)

    grid = run_cmlp_ablation(config, dataset)
    cells = list(grid.values())
    _save_cells(out, 'cmlp', cells)
    storage.save_csv(out / 'cmlp_ablation.csv', CSV_HEADER, [c.row() for c in cells])
    for (space, freq), cell in grid.items():
        print(f"SM {space:>4} / FM {freq:>4}: {cell.nmse_db:.2f} dB")
    return EXIT_OK


def cmd_ablate_shuffle(args):
    config = _experiment_from_args(args)
    if args.permutations < 1:
        raise ValidationError(f"--permutations must be positive, got {args.permutations}.")
    dataset = _load_checked_dataset(config)
    out = Path(config.output_dir)

    summaries = run_shuffle_ablation(config, dataset, permutations=args.permutations)
    rows = []
    for mode, summary in summaries.items():
        _save_cells(out, 'shuffle', summary.cells)
        rows.append([mode.value, summary.mean_db, summary.std_db, len(summary.cells)])
        print(f"{mode.value:>15}: {summary.mean_db:.2f} +/- {summary.std_db:.2f} dB")
    storage.save_csv(out / 'shuffle_ablation.csv', ['mode', 'mean_nmse_db', 'std_nmse_db', 'runs'], rows)
    return EXIT_OK


def cmd_sweep(args):
    config = _experiment_from_args(args)
    sizes = [parse_known_size(s) for s in args.sizes.split(',') if s.strip()]
    if not sizes:
        raise ValidationError("--sizes lists no known sizes.")
    for n_t0, n_c0 in sizes:
        config.model.with_known(n_t0, n_c0)
    dataset = _load_checked_dataset(config)
    out = Path(config.output_dir)

    cells = run_mapping_sweep(config, dataset, sizes)
    _save_cells(out, 'sweep', cells)
    rows = []
    for cell in cells:
        variant, known = cell.label.rsplit('_', 1)
        rows.append([known, variant, cell.nmse_db, cell.report.rho, cell.report.params])
        print(f"{known} {variant:>8}: {cell.nmse_db:.2f} dB, rho {cell.report.rho:.4f}")
    storage.save_csv(out / 'sweep.csv', ['known', 'variant', 'nmse_db', 'rho', 'params'], rows)
    return EXIT_OK


def cmd_viz(args):
    dataset = storage.load_dataset(_require_file(args.dataset, 'Dataset file'))
    if not 0 <= args.index < len(dataset):
        raise ValidationError(f"--index must lie in [0, {len(dataset)}), got {args.index}.")
    model, descriptor = _load_model(args.checkpoint, np.float64) if args.checkpoint else (None, None)
    if model is not None and dataset.channels.shape[1:] != (model.hp.N_t, model.hp.N_c):
        raise ValidationError(
            f"Dataset is {dataset.channels.shape[1]}x{dataset.channels.shape[2]} "
            f"but the checkpoint expects {model.hp.N_t}x{model.hp.N_c}."
        )
    out = Path(args.out or EXPORT_CONFIG['default_dir'])

    truth = dataset.channels[args.index]
    images = {'true': truth}
    if model is not None:
        scale = descriptor.get('training_scale')
        if scale is None:
            get_logger().warning(f"{args.checkpoint} records no training scale; using the dataset RMS")
            scale = dataset.scale or 1.0
        subset = SubsetSpec.uniform(model.hp.N_t, model.hp.N_c, model.hp.N_t0, model.hp.N_c0)
        known = to_model_layout(extract_known(truth / scale, subset)[None], np.float64)
        images['predicted'] = from_model_layout(model(Tensor(known)).data)[0] * scale
    value_range = None
    if args.shared_scale:
        magnitudes = [np.abs(h) for h in images.values()]
        value_range = (min(m.min() for m in magnitudes), max(m.max() for m in magnitudes))
    for name, h in images.items():
        path = out / f"sample{args.index}_{name}.pgm"
        image = export_grayscale(h, path, transpose=args.transpose, value_range=value_range)
        print(f"Wrote {image.width}x{image.height} image to {path}")
    return EXIT_OK


def cmd_info(args):
    if args.checkpoint:
        model, _ = _load_model(args.checkpoint)
    else:
        hp = ExperimentConfig().model
        if args.known:
            hp = hp.with_known(*parse_known_size(args.known))
        if args.activation:
            hp = replace(hp, activation=args.activation.strip().lower())
        model = build_variant(args.variant, hp)

    print(f"variant: {model.variant.value}")
    print(f"parameters: {count_params(model)}")
    for stage, count in model.param_breakdown().items():
        print(f"  {stage}: {count}")
    for convention in FlopConvention:
        print(f"flops ({convention.value}, {convention.per_mac} per multiply-accumulate): "
              f"{count_flops(model, convention)}")
        for stage, count in flop_breakdown(model, convention).items():
            print(f"  {stage}: {count}")
    return EXIT_OK


COMMANDS = {
    'generate': cmd_generate,
    'train': cmd_train,
    'eval': cmd_eval,
    'ablate-cmlp': cmd_ablate_cmlp,
    'ablate-shuffle': cmd_ablate_shuffle,
    'sweep': cmd_sweep,
    'viz': cmd_viz,
    'info': cmd_info,
}


def _fail(category: str, message: str, code: int) -> int:
    print(f"error: {category}: {message}", file=sys.stderr)
    return code


def run_cli(argv=None) -> int:
    """
    Run one workbench command.

    Args:
        argv: Argument list without the program name (default: sys.argv[1:])

    Returns:
        Process exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        return _fail('usage', str(e), EXIT_USAGE)
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)

    setup_logging(log_file=args.log_file, console=args.verbose)
    logger = get_logger()
    logger.info(f"Command '{args.command}' started")
    try:
        code = COMMANDS[args.command](args)
    except ValidationError as e:
        return _fail('validation', str(e), EXIT_VALIDATION)
    except Exception as e:
        log_error(f"Command '{args.command}' failed", e)
        return _fail('runtime', str(e).replace('\n', ' '), EXIT_RUNTIME)
    logger.info(f"Command '{args.command}' finished")
    return code


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
