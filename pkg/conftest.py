"""
File: conftest.py
Author: Chuncheng Zhang
Date: 2025-03-24
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    The shared fixtures, and the --runslow switch for the long training runs.
"""

import numpy as np
import pytest

from lka_depth import tensor as T


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='Run the slow end-to-end training tests')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip = pytest.mark.skip(reason='Needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(20250324)


@pytest.fixture(autouse=True)
def float64():
    '''Every test starts at 64-bit without the debug checks.'''
    T.set_default_dtype(64)
    T.set_debug(False)
    yield
    T.set_default_dtype(64)
    T.set_debug(False)
