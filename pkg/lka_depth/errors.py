"""
File: errors.py
Author: Chuncheng Zhang
Date: 2025-03-14
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    The exceptions raised by the depth toolkit.
    Every exception derives from LkaDepthError, so the CLI catches one type.
"""


class LkaDepthError(Exception):
    '''Root of the toolkit exceptions.'''


class ShapeError(LkaDepthError, ValueError):
    '''Shapes or extents do not agree.'''


class DomainError(LkaDepthError, ValueError):
    '''The value is outside the domain of the operation.'''


class ContractError(LkaDepthError, RuntimeError):
    '''The caller broke the contract of the API.'''


class NumericalError(LkaDepthError, FloatingPointError):
    '''NaN or Inf appeared, only raised in debug mode.'''


class FormatError(LkaDepthError, IOError):
    '''The file on disk is not in the expected format.'''


class ConfigMismatchError(LkaDepthError):
    '''
    The checkpoint was trained with another model structure.

    :param fields: {name: (checkpoint_value, config_value)} of the differing fields.
    '''

    def __init__(self, fields: dict):
        self.fields = dict(fields)
        detail = ', '.join(
            f'{k}: checkpoint={v[0]!r} config={v[1]!r}' for k, v in sorted(self.fields.items()))
        super().__init__(f'Checkpoint does not match config ({detail})')


class DivergenceError(LkaDepthError):
    '''The training loss became NaN, the last batch is dumped into dump_dir.'''

    def __init__(self, step: int, dump_dir):
        self.step = step
        self.dump_dir = dump_dir
        super().__init__(
            f'Loss diverged at step {step}, last batch dumped to {dump_dir}')
