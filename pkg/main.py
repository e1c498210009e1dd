"""Command-line entry point for simulation, estimation and evaluation."""
import os
import sys
import time
import yaml
import logging
import argparse
from datetime import datetime

from fusion.errors import ConfigError, InputError
from utils.validation import validate_config as collect_config_errors


OUTPUT_DIR_ENV = 'GVIO_OUTPUT_DIR'
DEFAULT_CONFIG = 'config.yaml'
EXAMPLE_CONFIG = 'config.example.yaml'

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_RUNTIME_ERROR = 2


def setup_logging(config, command='run'):
    """Setup logging configuration."""
    log_dir = config['paths']['log_dir']
    os.makedirs(log_dir, exist_ok=True)

    timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
    log_file = os.path.join(log_dir, f'{command}_{timestamp}.log')

    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file, encoding='utf-8'),
            logging.StreamHandler(sys.stdout)
        ],
        force=True,
    )

    return log_file


def load_config(config_file=DEFAULT_CONFIG):
    """Load configuration from YAML file, falling back to the example config."""
    if not os.path.exists(config_file) and config_file == DEFAULT_CONFIG and os.path.exists(EXAMPLE_CONFIG):
        print(f"[Config] '{config_file}' not found, fallback to '{EXAMPLE_CONFIG}'.")
        config_file = EXAMPLE_CONFIG
    if not os.path.exists(config_file):
        raise FileNotFoundError(f"Config file not found: {config_file}")
    try:
        with open(config_file, 'r', encoding='utf-8') as f:
            config = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise InputError(f"{config_file}: {exc}") from exc
    return config or {}


def validate_config(config, args=None):
    """Validate config and apply the output directory override.

    Raises ConfigError naming the first offending key.
    """
    config.setdefault('paths', {})
    override = os.environ.get(OUTPUT_DIR_ENV)
    if override:
        config['paths']['output_dir'] = override
    config['paths'].setdefault('output_dir', 'output')
    config['paths'].setdefault('log_dir', os.path.join(config['paths']['output_dir'], 'logs'))

    errors = collect_config_errors(config)
    if errors:
        key, _, message = errors[0].partition(': ')
        raise ConfigError(key, message or 'invalid')

    if args is not None and getattr(args, 'command', None) == 'run' and not os.path.isdir(args.dataset):
        raise FileNotFoundError(f"Dataset directory not found: {args.dataset}")
    return config


def build_parser():
    parser = argparse.ArgumentParser(description='GNSS-visual-inertial fusion toolkit')
    parser.add_argument('--config', default=DEFAULT_CONFIG, help='Config file path')
    sub = parser.add_subparsers(dest='command', required=True)

    p_sim = sub.add_parser('simulate', help='Generate a synthetic dataset')
    p_sim.add_argument('--output', help='Dataset directory')
    p_sim.add_argument('--seed', type=int, help='Override scenario.seed')
    p_sim.add_argument('--force', action='store_true', help='Overwrite an existing dataset')

    p_run = sub.add_parser('run', help='Estimate a trajectory from a dataset')
    p_run.add_argument('dataset', help='Dataset directory')
    p_run.add_argument('--output', help='Run output directory')
    p_run.add_argument('--mode', choices=['fused', 'vio', 'spp', 'loose'], default='fused')
    p_run.add_argument('--gating', choices=['gnss', 'mixed'], help='Override estimator.gating_method')
    p_run.add_argument('--force', action='store_true', help='Re-run even if an estimate exists')
    p_run.add_argument('--no-progress', action='store_true', help='Disable the progress bar')

    p_eval = sub.add_parser('evaluate', help='Compare estimates with ground truth')
    p_eval.add_argument('gt', help='Ground-truth TUM file')
    p_eval.add_argument('estimates', nargs='+', help='Estimate TUM files or run directories')
    p_eval.add_argument('--output', help='Results CSV path')
    p_eval.add_argument('--sequence', help='Sequence name for the results table')

    p_gate = sub.add_parser('compare-gating', help='Compare the two gating methods')
    p_gate.add_argument('--output', help='Report directory')
    p_gate.add_argument('--force', action='store_true', help='Recompute an existing report')
    return parser


def run_command(config, args):
    if args.command == 'simulate':
        from step1_simulate import run_step1
        return run_step1(config, args.output, force=args.force, seed=args.seed, config_path=args.config)
    if args.command == 'run':
        from step2_estimate import run_step2
        return run_step2(config, args.dataset, args.output, mode=args.mode, gating=args.gating,
                         force=args.force, progress=not args.no_progress, config_path=args.config)
    if args.command == 'evaluate':
        from step3_evaluate import run_step3
        return run_step3(config, args.estimates, args.gt, args.output, args.sequence)
    if args.command == 'compare-gating':
        from step4_gating_report import run_step4
        return run_step4(config, args.output, force=args.force, config_path=args.config)
    raise InputError(f"unknown command '{args.command}'")


def main(argv=None):
    """Parse arguments, run one command and return the exit code."""
    args = build_parser().parse_args(argv)

    try:
        config = load_config(args.config)
        validate_config(config, args)
    except (InputError, FileNotFoundError, ValueError) as e:
        print(f"[Config] {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    log_file = setup_logging(config, args.command)
    logger = logging.getLogger(__name__)
    logger.info(f"Logging to: {log_file}")
    logger.info(f"Config loaded from: {args.config}")

    start_time = time.time()
    try:
        logger.info("=" * 60)
        logger.info(f"Command: {args.command}")
        logger.info("=" * 60)
        result = run_command(config, args)
        logger.info(f"Finished in {time.time() - start_time:.1f} s: {result if isinstance(result, str) else result[0]}")
        return EXIT_OK

    except (InputError, FileNotFoundError, ValueError) as e:
        logger.error(f"Input error: {e}")
        return EXIT_INPUT_ERROR

    except KeyboardInterrupt:
        logger.warning("Interrupted by user")
        return EXIT_RUNTIME_ERROR

    except Exception as e:
        logger.error(f"Command failed: {e}", exc_info=True)
        return EXIT_RUNTIME_ERROR


if __name__ == '__main__':
    sys.exit(main())
