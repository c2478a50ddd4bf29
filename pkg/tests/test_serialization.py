import numpy as np
import pytest

from numpy.testing import assert_array_equal

from lka_depth.errors import FormatError
from lka_depth.tensor import Tensor
from lka_depth.serialization import encode_lkdt, decode_lkdt, save_lkdt, load_lkdt


def test_header_layout():
    raw = encode_lkdt(Tensor(np.zeros((2, 3))))
    assert raw[:4] == b'LKDT'
    assert np.frombuffer(raw[4:16], dtype='<u4').tolist() == [2, 2, 3]
    assert len(raw) == 16 + 6 * 8


def test_file_roundtrip(tmp_path, rng):
    value = rng.normal(size=(1, 4, 5))
    path = save_lkdt(tmp_path.joinpath('nested', 'depth.lkdt'), value)
    assert_array_equal(load_lkdt(path), value)


@pytest.mark.parametrize('raw', [b'NOPE' + bytes(8), b'LKDT', b'LKDT' + bytes(4),
                                 encode_lkdt(np.ones(3))[:-1]])
def test_malformed(raw):
    with pytest.raises(FormatError):
        decode_lkdt(raw)


def test_missing_file(tmp_path):
    with pytest.raises(FormatError):
        load_lkdt(tmp_path.joinpath('absent.lkdt'))
