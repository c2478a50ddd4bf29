"""
File: cli.py
Author: Chuncheng Zhang
Date: 2025-03-24
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    The command line of lka-depth.

    Subcommands: train, eval, infer, gradcheck, synth, ablate.
    Every subcommand takes --config PATH, --set key=value (repeatable) and --seed N.
    The library errors are logged and turned into the exit code 1.

Functions:
    1. Requirements and constants
    2. Function and class
    3. Play ground
    4. Pending
    5. Pending
"""


# %% ---- 2025-03-24 ------------------------
# Requirements and constants
import sys
import argparse
import pandas as pd

from pathlib import Path
from rich.console import Console
from rich.table import Table
from loguru import logger

from .errors import LkaDepthError
from .config import load_config, resolve_threads
from .gradcheck import SCOPES, run_suites
from .synthetic_scene import default_scene, make_sequence
from . import pipeline

LOG_FILE = 'log/lka-depth.log'

console = Console()


# %% ---- 2025-03-24 ------------------------
# Function and class
def show_frame(df: pd.DataFrame, title: str):
    '''Print the DataFrame as the rich table.'''
    table = Table(title=title)
    for col in df.columns:
        table.add_column(str(col))
    for _, row in df.iterrows():
        table.add_row(*[f'{v:.4g}' if isinstance(v, float) else str(v) for v in row])
    console.print(table)


def cmd_train(conf, args) -> int:
    result = pipeline.train(conf, args.dataset, args.out)
    show_frame(pipeline.profile_frame(result.depth_net, conf.height, conf.width),
               'Depth network profile')
    if len(result.history):
        show_frame(result.history.tail(5), 'Last steps')
    logger.info(f'Checkpoint {result.checkpoint}, loss curve {result.loss_csv}')
    return 0


def cmd_eval(conf, args) -> int:
    df, _, reference = pipeline.evaluate(conf, args.checkpoint, args.dataset,
                                         out_csv=args.out_csv, gt_as_pred=args.gt_as_pred)
    show_frame(df, 'Depth metrics')
    show_frame(reference, 'Reference only, not reproducible at this scale')
    return 0


def cmd_infer(conf, args) -> int:
    pipeline.infer(conf, args.checkpoint, args.image, args.out)
    return 0


def cmd_gradcheck(conf, args) -> int:
    scopes = [args.scope] if isinstance(args.scope, str) else args.scope
    rows = run_suites(scopes, seed=conf.seed)
    df = pd.DataFrame([dict(scope=scope, op=row.name, max_error=row.max_error,
                            threshold=row.threshold, passed=row.passed)
                       for scope, row in rows])
    show_frame(df, 'Gradient check')
    failed = df[~df.passed]
    for _, row in failed.iterrows():
        logger.error(f'Gradient check failed: {row.scope}/{row.op} {row.max_error:.3e}')
    return 1 if len(failed) else 0


def cmd_synth(conf, args) -> int:
    spec = default_scene(width=conf.width, height=conf.height, n_frames=args.frames,
                         seed=conf.seed, noise_sigma=args.noise, n_boxes=args.boxes)
    make_sequence(spec, args.out, threads=resolve_threads(conf))
    return 0


def cmd_ablate(conf, args) -> int:
    df = pipeline.ablate(conf, args.dataset, args.out, steps=args.steps)
    show_frame(df, 'Ablation (LKA x offset upsampler)')
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='YAML or key=value config file')
    common.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help='Override a config key, repeatable')
    common.add_argument('--seed', type=int, help='Override the seed')

    parser = argparse.ArgumentParser(
        prog='lka-depth', description='Self-supervised monocular depth with the LKA decoder')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('train', parents=[common], help='Train on a sequence directory')
    p.add_argument('dataset', help='The sequence directory')
    p.add_argument('--out', default='runs/train', help='The run directory')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('eval', parents=[common], help='Evaluate a checkpoint')
    p.add_argument('checkpoint', help='The checkpoint directory')
    p.add_argument('dataset', help='The sequence directory with depth_*.lkdt')
    p.add_argument('--out-csv', default='runs/eval/metrics.csv', help='The report CSV')
    p.add_argument('--gt-as-pred', action='store_true',
                   help='Bypass the network and evaluate the ground truth against itself')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('infer', parents=[common], help='Predict the depth of an image')
    p.add_argument('checkpoint', help='The checkpoint directory')
    p.add_argument('image', help='The image file')
    p.add_argument('--out', help='Output prefix, <image stem> by default')
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser('gradcheck', parents=[common], help='Run the gradient check suites')
    p.add_argument('scope', nargs='*', default='all', choices=SCOPES + ['all'],
                   help='The suites to run')
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser('synth', parents=[common], help='Write a synthetic sequence')
    p.add_argument('out', help='The output directory')
    p.add_argument('--frames', type=int, default=10, help='The frame count')
    p.add_argument('--noise', type=float, default=0.0, help='The pixel noise sigma')
    p.add_argument('--boxes', type=int, default=2, help='The box count, 1 to 3')
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('ablate', parents=[common],
                       help='Train the four LKA / upsampler combinations')
    p.add_argument('dataset', help='The sequence directory')
    p.add_argument('--out', default='runs/ablate', help='The run directory')
    p.add_argument('--steps', type=int, default=500, help='Optimizer steps per run')
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    Path(LOG_FILE).parent.mkdir(parents=True, exist_ok=True)
    sink = logger.add(LOG_FILE, rotation='5 MB')
    try:
        conf = load_config(args.config, args.set, args.seed)
        return args.func(conf, args)
    except LkaDepthError as err:
        logger.error(f'{type(err).__name__}: {err}')
        return 1
    finally:
        logger.remove(sink)


# %% ---- 2025-03-24 ------------------------
# Play ground
if __name__ == '__main__':
    sys.exit(main())


# %% ---- 2025-03-24 ------------------------
# Pending
