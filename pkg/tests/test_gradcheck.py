import numpy as np
import pytest

from lka_depth import tensor as T
from lka_depth.errors import ContractError
from lka_depth.lka import LkaParams
from lka_depth.gradcheck import (SCOPES, OPS_COVERAGE, SUITES, CheckRow, run_suites,
                                 lka_oracle_error)


def failures(rows):
    return [(scope, row.name, row.max_error) for scope, row in rows if not row.passed]


@pytest.mark.parametrize('scope', ['ops', 'lka', 'upsampler', 'geometry'])
def test_suite_passes(scope):
    rows = run_suites([scope], seed=0)
    assert rows and not failures(rows)
    assert {s for s, _ in rows} == {scope}


@pytest.mark.slow
def test_full_suite_passes():
    assert not failures(run_suites(['full'], seed=0))


def test_ops_suite_covers_every_op():
    names = [row.name for row in SUITES['ops'](np.random.default_rng(0))]
    assert names == OPS_COVERAGE


def test_lka_oracle_row(rng):
    rows = dict((row.name, row) for _, row in run_suites(['lka']))
    oracle = rows['lka_effective_kernel_oracle']
    assert oracle.threshold == 1e-10 and oracle.passed
    params = LkaParams.create(2, rng, bias=False)
    assert lka_oracle_error(params, rng.normal(size=(2, 13, 9))) < 1e-10


def test_run_suites_contract():
    with pytest.raises(ContractError):
        run_suites(['nope'])
    assert SCOPES == ['ops', 'lka', 'upsampler', 'geometry', 'full']


def test_run_suites_restores_precision():
    T.set_default_dtype(32)
    run_suites(['upsampler'])
    assert T.DTYPE == np.float32


def test_check_row():
    assert CheckRow('x', 1e-5, 1e-4).passed
    assert not CheckRow('x', 2e-4, 1e-4).passed
    assert CheckRow('exact', 0.0, 0.0).passed
