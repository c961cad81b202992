import argparse
import logging
import sys
from typing import Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from hyperrec.data_models import ExperimentConfig
from hyperrec.errors import INTERNAL_ERROR_EXIT, USER_ERROR_EXIT, HyperRecError
from hyperrec.experiments import cmd_compare, cmd_eval, cmd_prep, cmd_sweep, cmd_train, dataset_densities
from hyperrec.synthetic import SyntheticConfig

logger = logging.getLogger(__name__)


def _add_config_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group('experiment settings (override --config)')
    group.add_argument('--config', help="flat key=value experiment file")
    for name, field in ExperimentConfig.model_fields.items():
        group.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, metavar='VALUE',
                           help=field.description)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='hyperrec',
                                     description="Euclidean vs hyperbolic latent space recommenders")
    parser.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    parser.add_argument('--quiet', action='store_true', help="no progress bars")
    verbs = parser.add_subparsers(dest='verb', required=True)

    prep = verbs.add_parser('prep', help="parse a dataset and write its canonical files, splits and stats")
    _add_config_flags(prep)
    prep.add_argument('--synthetic', action='store_true', help="generate the hierarchical power-law dataset")
    prep.add_argument('--synthetic-users', type=int, default=2000)
    prep.add_argument('--synthetic-items', type=int, default=1000)

    train = verbs.add_parser('train', help="train one model per seed and test the best-validation checkpoint")
    _add_config_flags(train)

    evaluate = verbs.add_parser('eval', help="evaluate a checkpoint")
    _add_config_flags(evaluate)
    evaluate.add_argument('--checkpoint', required=True, help="checkpoint directory written by train")

    sweep = verbs.add_parser('sweep', help="train and test a (model x space x dim x seed) grid")
    _add_config_flags(sweep)

    compare = verbs.add_parser('compare', help="compare two report sets, or both spaces of one sweep")
    compare.add_argument('report_a')
    compare.add_argument('report_b', nargs='?')
    compare.add_argument('--output', default='compare')
    compare.add_argument('--dataset', help="prepared dataset directory whose density is listed")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {name: getattr(args, name) for name in ExperimentConfig.model_fields
                 if getattr(args, name, None) is not None}
    if args.verb == 'prep' and args.synthetic:
        overrides.setdefault('dataset', 'synthetic')
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig(**overrides)


def setup_logging(level: str):
    logging.basicConfig(level=getattr(logging, level), stream=sys.stderr,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def run(args: argparse.Namespace) -> int:
    progress = not args.quiet and sys.stderr.isatty()
    if args.verb == 'compare':
        densities = {}
        if args.dataset:
            densities = dataset_densities(ExperimentConfig(dataset=args.dataset))
        cmd_compare(args.report_a, args.report_b, args.output, densities)
        return 0

    config = load_config(args)
    if args.verb == 'prep':
        synthetic = None
        if args.synthetic:
            synthetic = SyntheticConfig(n_users=args.synthetic_users, n_items=args.synthetic_items,
                                        seed=config.seeds[0])
        cmd_prep(config, synthetic)
    elif args.verb == 'train':
        cmd_train(config, progress=progress)
    elif args.verb == 'eval':
        cmd_eval(config, args.checkpoint)
    elif args.verb == 'sweep':
        result = cmd_sweep(config)
        if result.failures:
            _report_error('SweepError', f"{len(result.failures)} sweep cells failed; see failures.csv")
            return USER_ERROR_EXIT
    return 0


def _report_error(kind: str, message: str):
    message = ' '.join(str(message).split()).replace('"', "'")
    print(f'error kind={kind} message="{message}"', file=sys.stderr)


def main(argv: Optional[list[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return run(args)
    except (HyperRecError, ValidationError, FileNotFoundError) as exc:
        _report_error(type(exc).__name__, exc)
        return USER_ERROR_EXIT
    except Exception as exc:
        logger.debug("Unhandled error", exc_info=True)
        _report_error(type(exc).__name__, exc)
        return INTERNAL_ERROR_EXIT
