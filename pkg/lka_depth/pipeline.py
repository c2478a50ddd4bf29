"""
File: pipeline.py
Author: Chuncheng Zhang
Date: 2025-03-24
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    The runs behind the command line: train, evaluate, infer and the ablation.

Functions:
    1. Requirements and constants
    2. Function and class
    3. Play ground
    4. Pending
    5. Pending
"""


# %% ---- 2025-03-24 ------------------------
# Requirements and constants
import json
import itertools
import numpy as np
import pandas as pd

from pathlib import Path
from dataclasses import dataclass
from omegaconf import OmegaConf
from tqdm.auto import tqdm
from loguru import logger

from . import tensor as T
from .errors import DivergenceError, FormatError
from .tensor import Tape, backward, no_grad
from .config import save_config, resolve_threads, validate
from .depth_net import DepthNet, disp_to_depth
from .geometry import PoseNet
from .losses import total_loss
from .metrics import (compute_metrics, evaluate_pairs, merge_reports, reports_to_frame,
                      compare_to_published, write_report_csv)
from .dataset import (load_sequence, iterate_batches, read_ppm, write_ppm, center_crop,
                      inverse_depth_image)
from .optim import Adam, step_lr
from .checkpoint import save_checkpoint, load_checkpoint, apply_checkpoint
from .serialization import save_lkdt
from .timer import StepTimer

LOSS_COLUMNS = ['step', 'epoch', 'lr', 'total', 'photometric', 'smoothness',
                'masked_fraction']


# %% ---- 2025-03-24 ------------------------
# Function and class
@dataclass
class TrainResult:
    out_dir: Path
    checkpoint: Path
    loss_csv: Path
    history: pd.DataFrame
    depth_net: DepthNet
    pose_net: PoseNet


def prepare(conf):
    '''Apply the runtime settings before any tensor is made.'''
    T.set_default_dtype(conf.precision)
    if conf.debug:
        T.set_debug(True)


def build_nets(conf):
    return DepthNet.from_config(conf), PoseNet.from_config(conf)


def profile_frame(depth_net: DepthNet, height: int, width: int) -> pd.DataFrame:
    '''The parameter tallies and the multiply-accumulates of one forward.'''
    report = depth_net.param_report()
    rows = [dict(item=k, value=int(v)) for k, v in report.items()]
    rows.append(dict(item=f'macs@{height}x{width}', value=depth_net.mac_count(height, width)))
    return pd.DataFrame(rows)


def _batches(dataset, conf, rng):
    '''One epoch, steps_per_epoch > 0 cycles over the passes.'''
    if not conf.steps_per_epoch:
        yield from iterate_batches(dataset, conf.batch, rng)
        return
    done = 0
    while True:
        for batch in iterate_batches(dataset, conf.batch, rng):
            yield batch
            done += 1
            if done >= conf.steps_per_epoch:
                return


def _dump_batch(out_dir: Path, step: int, batch, row: dict) -> Path:
    dump = out_dir.joinpath('divergence', f'step_{step:06d}')
    for s in batch:
        save_lkdt(dump.joinpath(f'target_{s.index:04d}.lkdt'), s.target)
        for j, src in enumerate(s.sources):
            save_lkdt(dump.joinpath(f'source_{s.index:04d}_{j}.lkdt'), src)
    dump.joinpath('loss.json').write_text(json.dumps(row, sort_keys=True, indent=2))
    return dump


def train(conf, dataset_dir, out_dir) -> TrainResult:
    '''
    Train the depth and pose networks on the sequence.

    :param conf: the run config.
    :param dataset_dir: the sequence directory.
    :param out_dir: receives checkpoints/epoch_###, loss.csv and config.yaml.

    :return: the TrainResult.
    '''
    validate(conf)
    prepare(conf)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(out_dir.joinpath('config.yaml'), conf)

    dataset = load_sequence(dataset_dir, size=(conf.height, conf.width))
    depth_net, pose_net = build_nets(conf)
    named = {**depth_net.named_parameters(), **pose_net.named_parameters()}
    optimizer = Adam(list(named.values()), lr=conf.lr)

    profile = profile_frame(depth_net, conf.height, conf.width)
    logger.info(f'Depth net params {depth_net.param_count()}, '
                f'pose net params {pose_net.param_count()}, '
                f'MACs {profile.value.iloc[-1]}')

    rng = np.random.default_rng(conf.seed)
    loss_csv = out_dir.joinpath('loss.csv')
    history, step, checkpoint = [], 0, None
    timer = StepTimer('train')
    finished = False
    loss_kwargs = dict(ssim_weight=conf.ssim_weight, min_depth=conf.min_depth,
                       max_depth=conf.max_depth, jitter=conf.automask_jitter)

    for epoch in range(conf.epochs):
        optimizer.lr = step_lr(epoch, conf)
        batches = _batches(dataset, conf, rng)
        for batch in tqdm(batches, desc=f'Epoch {epoch}'):
            with Tape() as tape:
                loss = total_loss([(s.target, s.sources) for s in batch],
                                  depth_net, pose_net, [s.cam for s in batch],
                                  conf.smoothness_weight, **loss_kwargs)
            row = dict(step=step + 1, epoch=epoch, lr=optimizer.lr, **loss.as_row())
            if not np.isfinite(row['total']):
                batches.close()
                dump = _dump_batch(out_dir, step + 1, batch, row)
                logger.error(f'Loss diverged at step {step + 1}, batch dumped into {dump}')
                raise DivergenceError(step + 1, dump)

            optimizer.zero_grad()
            backward(tape, loss.total)
            optimizer.step()
            # The step's activations go with the graph.
            tape.reset()
            del loss
            step += 1
            history.append(row)
            timer.step()
            if conf.max_steps and step >= conf.max_steps:
                finished = True
                break
        batches.close()

        checkpoint = save_checkpoint(out_dir.joinpath('checkpoints', f'epoch_{epoch:03d}'),
                                     named, conf)
        pd.DataFrame(history, columns=LOSS_COLUMNS).to_csv(loss_csv, index=False)
        logger.info(f'Epoch {epoch} done, step {step}, '
                    f'loss {history[-1]["total"] if history else float("nan"):.6f}')
        if finished:
            break

    return TrainResult(out_dir, checkpoint, loss_csv,
                       pd.DataFrame(history, columns=LOSS_COLUMNS), depth_net, pose_net)


def predict_depth(depth_net: DepthNet, image, conf):
    '''The full-resolution depth [1, H, W] in meters.'''
    with no_grad():
        disp = depth_net.forward(image).disps[0]
        return disp_to_depth(disp, conf.min_depth, conf.max_depth)


def load_depth_net(conf, checkpoint_dir) -> DepthNet:
    prepare(conf)
    depth_net = DepthNet.from_config(conf)
    apply_checkpoint(depth_net.named_parameters(), load_checkpoint(checkpoint_dir, conf))
    return depth_net


def evaluate(conf, checkpoint_dir, dataset_dir, out_csv=None, gt_as_pred: bool = False,
             depth_net: DepthNet = None):
    '''
    Evaluate every frame against the ground truth depth.

    :param conf: the run config.
    :param checkpoint_dir: the checkpoint, ignored with gt_as_pred or depth_net.
    :param dataset_dir: the sequence with depth_*.lkdt.
    :param out_csv: the per-frame and aggregate report, the reference table goes
                    next to it as <stem>_reference.csv.
    :param gt_as_pred: bypass the network, evaluate the ground truth against itself.
    :param depth_net: the network in memory instead of the checkpoint.

    :return: (per-frame DataFrame with the aggregate row, aggregate MetricsReport,
              reference DataFrame).
    '''
    prepare(conf)
    dataset = load_sequence(dataset_dir, size=(conf.height, conf.width))
    if not dataset.depths:
        raise FormatError(f'{dataset_dir} has no ground truth depth')
    if not gt_as_pred and depth_net is None:
        depth_net = load_depth_net(conf, checkpoint_dir)

    pairs = []
    for frame, gt in tqdm(list(zip(dataset.frames, dataset.depths)), desc='Predict'):
        pred = gt if gt_as_pred else predict_depth(depth_net, frame, conf)
        pairs.append((pred, gt))

    cap = (conf.eval_min_depth, conf.eval_max_depth)
    reports = evaluate_pairs(pairs, conf.median_scaling, cap, resolve_threads(conf))
    aggregate = merge_reports(reports)
    names = [f'{k:04d}' for k in range(len(reports))] + ['aggregate']
    df = reports_to_frame(reports + [aggregate], names)
    reference = compare_to_published(aggregate)
    if out_csv is not None:
        out_csv = Path(out_csv)
        write_report_csv(out_csv, df)
        write_report_csv(out_csv.with_name(f'{out_csv.stem}_reference.csv'), reference)
    logger.info(f'AbsRel {aggregate.abs_rel:.4f}, d1 {aggregate.d1:.4f} '
                f'over {aggregate.n_pixels} pixels')
    return df, aggregate, reference


def infer(conf, checkpoint_dir, image_file, out_prefix=None):
    '''
    Predict the depth of the image.

    Writes <prefix>.lkdt and the inverse-depth visualization <prefix>_vis.ppm.

    :return: (depth path, visualization path).
    '''
    depth_net = load_depth_net(conf, checkpoint_dir)
    image, _ = center_crop(read_ppm(image_file))
    depth = predict_depth(depth_net, image, conf)
    prefix = Path(out_prefix) if out_prefix else Path(image_file).with_suffix('')
    depth_path = save_lkdt(prefix.with_name(f'{prefix.name}.lkdt'), depth)
    vis_path = write_ppm(prefix.with_name(f'{prefix.name}_vis.ppm'),
                         inverse_depth_image(depth))
    logger.info(f'Depth written into {depth_path} and {vis_path}')
    return depth_path, vis_path


def untrained_abs_rel(conf, dataset) -> float:
    '''Median-scaled AbsRel of the freshly initialized network.'''
    depth_net = DepthNet.from_config(conf)
    reports = [compute_metrics(predict_depth(depth_net, f, conf), d, True,
                               (conf.eval_min_depth, conf.eval_max_depth))
               for f, d in zip(dataset.frames, dataset.depths)]
    return merge_reports(reports).abs_rel


def ablate(conf, dataset_dir, out_dir, steps: int = 500) -> pd.DataFrame:
    '''
    Train the four LKA / upsampler combinations with the same seed.

    Each run is one epoch of the given steps, so the learning rate stays at conf.lr.

    :return: the table of params, MACs, final losses and AbsRel per combination.
    '''
    out_dir = Path(out_dir)
    rows = []
    for use_lka, use_up in itertools.product([False, True], [False, True]):
        run_conf = OmegaConf.merge(conf, dict(use_lka=use_lka, use_offset_upsampler=use_up,
                                              epochs=1, steps_per_epoch=steps,
                                              max_steps=steps))
        name = f'lka{int(use_lka)}_up{int(use_up)}'
        logger.info(f'Ablation run {name}')
        result = train(run_conf, dataset_dir, out_dir.joinpath(name))
        _, aggregate, _ = evaluate(run_conf, None, dataset_dir, depth_net=result.depth_net)
        last = result.history.iloc[-1] if len(result.history) else None
        rows.append(dict(use_lka=use_lka, use_offset_upsampler=use_up,
                         params=result.depth_net.param_count(),
                         macs=result.depth_net.mac_count(run_conf.height, run_conf.width),
                         steps=len(result.history),
                         photometric=float(last.photometric) if last is not None else np.nan,
                         total=float(last.total) if last is not None else np.nan,
                         abs_rel=aggregate.abs_rel))
    df = pd.DataFrame(rows)
    out_dir.mkdir(parents=True, exist_ok=True)
    df.to_csv(out_dir.joinpath('ablation.csv'), index=False)
    return df


# %% ---- 2025-03-24 ------------------------
# Play ground


# %% ---- 2025-03-24 ------------------------
# Pending
