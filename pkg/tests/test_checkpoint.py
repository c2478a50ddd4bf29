import json
import numpy as np
import pytest

from numpy.testing import assert_array_equal

from lka_depth.errors import ConfigMismatchError, FormatError, ShapeError
from lka_depth.config import load_config, config_hash
from lka_depth.depth_net import DepthNet
from lka_depth.checkpoint import (MANIFEST, save_checkpoint, load_checkpoint, read_manifest,
                                  apply_checkpoint)

SMALL = ['channels=[4,8,8,8]']


def small_net(conf, seed=0):
    return DepthNet(channels=tuple(conf.channels), use_lka=conf.use_lka,
                    use_offset_upsampler=conf.use_offset_upsampler, seed=seed)


def test_save_and_load(tmp_path):
    conf = load_config(overrides=SMALL)
    params = small_net(conf, seed=1).named_parameters()
    directory = save_checkpoint(tmp_path.joinpath('epoch_000'), params, conf)

    manifest = read_manifest(directory)
    assert manifest['names'] == list(params)
    assert manifest['config_hash'] == config_hash(conf)
    assert manifest['structure']['channels'] == [4, 8, 8, 8]

    other = small_net(conf, seed=2).named_parameters()
    apply_checkpoint(other, load_checkpoint(directory, conf))
    for name, p in params.items():
        assert_array_equal(other[name].data, p.data)


def test_checkpoint_bytes_are_deterministic(tmp_path):
    conf = load_config(overrides=SMALL)
    a = save_checkpoint(tmp_path.joinpath('a'), small_net(conf).named_parameters(), conf)
    b = save_checkpoint(tmp_path.joinpath('b'), small_net(conf).named_parameters(), conf)
    for path in sorted(a.iterdir()):
        assert path.read_bytes() == b.joinpath(path.name).read_bytes(), path.name


def test_structure_mismatch(tmp_path):
    conf = load_config(overrides=SMALL)
    directory = save_checkpoint(tmp_path, small_net(conf).named_parameters(), conf)
    plain = load_config(overrides=SMALL + ['use_lka=false'])
    with pytest.raises(ConfigMismatchError) as info:
        load_checkpoint(directory, plain)
    assert info.value.fields == {'use_lka': (True, False)}
    assert 'use_lka' in str(info.value)

    # Training knobs are not structural.
    load_checkpoint(directory, load_config(overrides=SMALL + ['lr=3e-4']))


def test_broken_checkpoints(tmp_path):
    conf = load_config(overrides=SMALL)
    params = small_net(conf).named_parameters()
    directory = save_checkpoint(tmp_path.joinpath('ckpt'), params, conf)
    arrays = load_checkpoint(directory)

    first = next(iter(arrays))
    with pytest.raises(FormatError):
        apply_checkpoint(params, {k: v for k, v in arrays.items() if k != first})
    bad = dict(arrays)
    bad[first] = np.zeros((1,) + arrays[first].shape)
    with pytest.raises(ShapeError):
        apply_checkpoint(params, bad)

    manifest = json.loads(directory.joinpath(MANIFEST).read_text())
    manifest['shapes'][first] = [1]
    directory.joinpath(MANIFEST).write_text(json.dumps(manifest))
    with pytest.raises(FormatError):
        load_checkpoint(directory)

    directory.joinpath(MANIFEST).write_text('{')
    with pytest.raises(FormatError):
        read_manifest(directory)
    with pytest.raises(FormatError):
        read_manifest(tmp_path.joinpath('missing'))
