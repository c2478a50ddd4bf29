import numpy as np
import pytest

from loguru import logger
from numpy.testing import assert_allclose, assert_array_equal

from lka_depth.errors import FormatError, ShapeError
from lka_depth.tensor import Tensor
from lka_depth.geometry import CameraModel
from lka_depth.dataset import (read_ppm, write_ppm, to_uint8, quantize, inverse_depth_image,
                               center_crop, SequenceDataset, iterate_batches, load_sequence)


@pytest.fixture
def warnings():
    messages = []
    handler = logger.add(messages.append, level='WARNING', format='{message}')
    yield messages
    logger.remove(handler)


def toy_dataset(n=10, shape=(3, 4, 4)):
    frames = [Tensor(np.full(shape, k / n)) for k in range(n)]
    cam = CameraModel(fx=4.0, fy=4.0, cx=2.0, cy=2.0, width=shape[2], height=shape[1])
    return SequenceDataset(root=None, frames=frames, cam=cam)


def test_ppm_roundtrip(tmp_path, rng):
    image = Tensor(rng.uniform(size=(3, 5, 7)))
    path = write_ppm(tmp_path.joinpath('a', 'x.ppm'), image)
    assert path.read_bytes().startswith(b'P6')
    back = read_ppm(path)
    assert back.shape == (3, 5, 7)
    assert_array_equal(back.data, quantize(image).data)
    assert np.abs(back.data - image.data).max() <= 0.5 / 255 + 1e-12


def test_to_uint8_clips_and_expands_gray():
    out = to_uint8(Tensor(np.array([[[-1.0, 0.5, 2.0]]])))
    assert out.shape == (1, 3, 3)
    assert_array_equal(out[0, 0], [0, 0, 0])
    assert_array_equal(out[0, 1], [128, 128, 128])
    assert_array_equal(out[0, 2], [255, 255, 255])
    with pytest.raises(ShapeError):
        to_uint8(Tensor(np.zeros((2, 3, 3))))


def test_read_errors(tmp_path):
    with pytest.raises(FormatError):
        read_ppm(tmp_path.joinpath('missing.ppm'))
    bad = tmp_path.joinpath('bad.ppm')
    bad.write_bytes(b'P6\nnot an image')
    with pytest.raises(FormatError):
        read_ppm(bad)
    with pytest.raises(FormatError):
        load_sequence(tmp_path)


def test_inverse_depth_image():
    depth = Tensor(np.array([[[1.0, 2.0], [4.0, 8.0]]]))
    vis = inverse_depth_image(depth).data
    assert vis[0, 0, 0] == 1 and vis[0, 1, 1] == 0
    assert_array_equal(inverse_depth_image(Tensor(np.ones((1, 2, 2)))).data, 0)


def test_center_crop(warnings):
    cam = CameraModel(fx=30.0, fy=30.0, cx=35.0, cy=20.0, width=70, height=40)
    image = Tensor(np.arange(3 * 40 * 70, dtype=float).reshape(3, 40, 70))
    out, crop = center_crop(image, cam, multiple=16)
    assert out.shape == (3, 32, 64)
    assert_array_equal(out.data, image.data[:, 4:36, 3:67])
    assert (crop.cx, crop.cy, crop.width, crop.height) == (32.0, 16.0, 64, 32)
    assert any('Center-cropping' in m for m in warnings)

    same, same_cam = center_crop(out, crop, multiple=16)
    assert same is out and same_cam is crop
    with pytest.raises(ShapeError):
        center_crop(Tensor(np.zeros((3, 8, 8))), multiple=16)


def test_iterate_batches_covers_each_target_once():
    ds = toy_dataset()
    batches = list(iterate_batches(ds, 3, np.random.default_rng(0)))
    assert [len(b) for b in batches] == [3, 3, 2]
    indices = [s.index for b in batches for s in b]
    assert sorted(indices) == list(range(1, 9))
    for s in batches[0]:
        assert s.sources[0] is ds.frames[s.index - 1]
        assert s.sources[1] is ds.frames[s.index + 1]
        assert_allclose(s.target.data, s.index / 10)


def test_iterate_batches_is_deterministic():
    ds = toy_dataset()

    def order(seed):
        return [s.index for b in iterate_batches(ds, 2, np.random.default_rng(seed)) for s in b]

    assert order(4) == order(4)
    assert order(4) != order(5)


def test_iterate_batches_stops_early():
    ds = toy_dataset(n=40)
    for batch in iterate_batches(ds, 1, np.random.default_rng(0), prefetch=1):
        break
    assert len(batch) == 1


def test_iterate_batches_needs_three_frames():
    with pytest.raises(FormatError):
        next(iterate_batches(toy_dataset(n=2), 1, np.random.default_rng(0)))


def test_iterate_batches_forwards_any_producer_error(monkeypatch):
    ds = toy_dataset()

    def broken(k):
        raise RuntimeError(f'frame {k} unreadable')

    monkeypatch.setattr(ds, 'sample', broken)
    with pytest.raises(RuntimeError, match='unreadable'):
        list(iterate_batches(ds, 2, np.random.default_rng(0)))
