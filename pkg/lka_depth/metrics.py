"""
File: metrics.py
Author: Chuncheng Zhang
Date: 2025-03-20
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    The seven depth metrics with range capping and median scaling.

Functions:
    1. Requirements and constants
    2. Function and class
    3. Play ground
    4. Pending
    5. Pending
"""


# %% ---- 2025-03-20 ------------------------
# Requirements and constants
import numpy as np
import pandas as pd

from pathlib import Path
from dataclasses import dataclass, asdict
from concurrent.futures import ThreadPoolExecutor
from loguru import logger

from .errors import DomainError, ContractError, ShapeError
from .tensor import as_tensor

METRIC_NAMES = ['abs_rel', 'sq_rel', 'rmse', 'rmse_log', 'd1', 'd2', 'd3']

# The published full-scale KITTI row, shown for context only.
PUBLISHED_ROW = dict(abs_rel=0.095, sq_rel=0.620, rmse=4.148, rmse_log=0.169,
                     d1=0.907, d2=0.969, d3=0.985)


# %% ---- 2025-03-20 ------------------------
# Function and class
@dataclass
class MetricsReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    d1: float
    d2: float
    d3: float
    n_pixels: int
    scaled: bool
    cap_min: float = 1e-3
    cap_max: float = 80.0

    def __post_init__(self):
        if not (0 <= self.d1 <= self.d2 <= self.d3 <= 1):
            raise ContractError(
                f'Accuracies must be ordered in [0, 1], got {self.d1}, {self.d2}, {self.d3}')
        if min(self.abs_rel, self.sq_rel, self.rmse, self.rmse_log) < 0:
            raise ContractError('Errors must be nonnegative')

    @property
    def cap(self):
        return (self.cap_min, self.cap_max)

    def values(self) -> list:
        return [getattr(self, k) for k in METRIC_NAMES]

    def as_row(self) -> dict:
        return asdict(self)


def compute_metrics(pred, gt, use_median_scaling: bool = True,
                    cap: tuple = (1e-3, 80.0)) -> MetricsReport:
    '''
    Compare the predicted depth with the ground truth.

    :param pred: Tensor or array [1, H, W], meters.
    :param gt: Tensor or array [1, H, W], meters, 0 means no measurement.
    :param use_median_scaling: scale pred by median(gt) / median(pred) over the valid pixels.
    :param cap: (min, max) meters, the valid gt range and the pred clamp.

    :return: the MetricsReport.
    '''
    p = np.asarray(as_tensor(pred).data, dtype=np.float64)
    g = np.asarray(as_tensor(gt).data, dtype=np.float64)
    if p.shape != g.shape:
        raise ShapeError(f'Prediction {p.shape} does not match ground truth {g.shape}')
    lo, hi = float(cap[0]), float(cap[1])
    if not 0 < lo < hi:
        raise ContractError(f'Invalid cap {cap}')

    valid = (g > 0) & (g >= lo) & (g <= hi)
    if not valid.any():
        raise DomainError('No valid ground truth pixels')
    p, g = p[valid], g[valid]

    if use_median_scaling:
        p = p * (np.median(g) / np.median(p))
    p = np.clip(p, lo, hi)

    thresh = np.maximum(g / p, p / g)
    diff = p - g
    report = MetricsReport(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff ** 2 / g)),
        rmse=float(np.sqrt(np.mean(diff ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        d1=float(np.mean(thresh < 1.25)),
        d2=float(np.mean(thresh < 1.25 ** 2)),
        d3=float(np.mean(thresh < 1.25 ** 3)),
        n_pixels=int(valid.sum()),
        scaled=bool(use_median_scaling),
        cap_min=lo,
        cap_max=hi)
    return report


def merge_reports(reports: list) -> MetricsReport:
    '''Pixel-weighted average of the per-frame reports.'''
    if not reports:
        raise DomainError('No reports to merge')
    weights = np.array([r.n_pixels for r in reports], dtype=np.float64)
    table = np.array([r.values() for r in reports])
    merged = (weights[:, None] * table).sum(axis=0) / weights.sum()
    first = reports[0]
    return MetricsReport(*(float(v) for v in merged),
                         n_pixels=int(weights.sum()), scaled=first.scaled,
                         cap_min=first.cap_min, cap_max=first.cap_max)


def evaluate_pairs(pairs: list, use_median_scaling: bool = True,
                   cap: tuple = (1e-3, 80.0), threads: int = 1) -> list:
    '''
    The reports of the (pred, gt) pairs, in the input order.

    :param threads: the worker count, the pairs are independent.
    '''
    def job(pair):
        return compute_metrics(pair[0], pair[1], use_median_scaling, cap)

    if threads <= 1:
        return [job(p) for p in pairs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, pairs))


def compare_to_published(report: MetricsReport) -> pd.DataFrame:
    '''
    Two-row table, this run and the published full-scale row.

    The published row is labeled reference only, it is not reproducible at this scale.
    '''
    rows = [dict(source='this run', **{k: getattr(report, k) for k in METRIC_NAMES}),
            dict(source='published KITTI (reference only)', **PUBLISHED_ROW)]
    return pd.DataFrame(rows, columns=['source'] + METRIC_NAMES)


def reports_to_frame(reports: list, names: list = None) -> pd.DataFrame:
    df = pd.DataFrame([r.as_row() for r in reports])
    if names is not None:
        df.insert(0, 'frame', names)
    return df


def write_report_csv(path, df: pd.DataFrame):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    logger.info(f'Wrote {path}')
    return path


def read_report_csv(path) -> pd.DataFrame:
    return pd.read_csv(path)


# %% ---- 2025-03-20 ------------------------
# Play ground
if __name__ == '__main__':
    gt = np.full((1, 4, 4), 10.0)
    logger.info(compute_metrics(gt * 2, gt, use_median_scaling=False))


# %% ---- 2025-03-20 ------------------------
# Pending
