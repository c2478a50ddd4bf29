import numpy as np
import pytest

from numpy.testing import assert_allclose, assert_array_equal

from lka_depth.errors import ShapeError
from lka_depth.tensor import Tensor, Tape, backward, reduce
from lka_depth.depth_net import DepthNet, encoder_forward, disp_to_depth

SMALL = (4, 8, 8, 8)


def lka_params(C):
    return (25 * C + C) + (49 * C + C) + (C * C + C)


def test_encoder_shape_law():
    net = DepthNet()
    feats = encoder_forward(Tensor(np.zeros((3, 192, 640))), net)
    assert [f.shape for f in feats.levels] == [(16, 96, 320), (32, 48, 160),
                                               (64, 24, 80), (128, 12, 40)]


def test_encoder_rejects_indivisible():
    with pytest.raises(ShapeError):
        encoder_forward(Tensor(np.zeros((3, 40, 64))), DepthNet(channels=SMALL))


def test_zero_weights_give_constant_levels():
    net = DepthNet(channels=SMALL)
    for a, b in net.encoder:
        for p in a.parameters() + b.parameters():
            p.data[...] = 0
    feats = encoder_forward(Tensor(np.random.default_rng(0).uniform(size=(3, 32, 32))), net)
    for level in feats.levels:
        assert_array_equal(level.data, 0.0)


def test_encoder_param_count():
    net = DepthNet()
    convs, in_c = [], 3
    for c in net.channels:
        convs += [(in_c, c), (c, c)]
        in_c = c
    assert net.param_report()['encoder'] == sum(o * i * 9 + o for i, o in convs)


def test_pyramid_shapes_and_range(rng):
    net = DepthNet(channels=SMALL, seed=3)
    pyramid = net.forward(Tensor(rng.uniform(size=(3, 32, 64))))
    assert [d.shape for d in pyramid.disps] == [(1, 32, 64), (1, 16, 32), (1, 8, 16),
                                                 (1, 4, 8)]
    for d in pyramid.disps:
        assert np.all((d.data > 0) & (d.data < 1))


def test_forward_is_deterministic(rng):
    image = Tensor(rng.uniform(size=(3, 32, 32)))
    a = DepthNet(channels=SMALL, seed=5).forward(image).disps[0].data
    b = DepthNet(channels=SMALL, seed=5).forward(image).disps[0].data
    assert_array_equal(a, b)


def test_ablation_tallies():
    full = DepthNet(channels=SMALL)
    widths = full.decoder_widths()
    assert widths == {4: 8, 3: 16, 2: 24, 1: 28}

    report = full.param_report()
    assert report['lka'] == sum(lka_params(widths[s]) for s in (1, 2, 3))
    assert report['upsampler'] == sum(widths[s] * 8 + 8 for s in (1, 2, 3, 4))
    assert report['conv_replacement'] == 0

    plain = DepthNet(channels=SMALL, use_lka=False, use_offset_upsampler=False)
    other = plain.param_report()
    assert other['lka'] == 0 and other['upsampler'] == 0
    # The depthwise 3x3 replacement, 9 weights and 1 bias per channel.
    assert other['conv_replacement'] == sum(10 * widths[s] for s in (1, 2, 3))
    for key in ('encoder', 'fuse', 'heads'):
        assert other[key] == report[key]
    assert (report['total'] - other['total']
            == report['lka'] + report['upsampler'] - other['conv_replacement'])

    no_up = DepthNet(channels=SMALL, use_offset_upsampler=False)
    no_lka = DepthNet(channels=SMALL, use_lka=False)
    assert no_up.param_count() < full.param_count()
    assert no_lka.param_count() < full.param_count()
    assert plain.param_count() < min(no_up.param_count(), no_lka.param_count())


def test_shared_layers_identical_across_ablations():
    full = DepthNet(channels=SMALL, seed=7).named_parameters()
    plain = DepthNet(channels=SMALL, seed=7, use_lka=False).named_parameters()
    for name in ('encoder.1.a.weight', 'decoder.fuse.2.weight', 'decoder.head.0.weight'):
        assert_array_equal(full[name].data, plain[name].data)


def test_mac_count_sums_every_conv():
    net = DepthNet(channels=SMALL)
    first = 4 * 3 * 9 * 16 * 16
    assert net.mac_count(32, 32) > first
    assert net.mac_count(64, 64) == 4 * net.mac_count(32, 32)


def test_every_parameter_receives_gradient(rng):
    net = DepthNet(channels=SMALL, seed=1)
    image = Tensor(rng.uniform(size=(3, 32, 32)))
    with Tape() as tape:
        pyramid = net.forward(image)
        loss = None
        for d in pyramid.disps:
            term = reduce(d * Tensor(rng.normal(size=d.shape)), 'sum')
            loss = term if loss is None else loss + term
    backward(tape, loss)
    for name, p in net.named_parameters().items():
        assert p.grad is not None and np.any(p.grad != 0), name


def test_disp_to_depth():
    assert_allclose(disp_to_depth(Tensor([0.5])).item(), 1 / (0.01 + 9.99 * 0.5))
    ends = disp_to_depth(Tensor([1e-12, 1 - 1e-12])).data
    assert_allclose(ends, [100.0, 0.1], rtol=1e-6)
    disp = np.linspace(0.05, 0.95, 10)
    assert np.all(np.diff(disp_to_depth(Tensor(disp)).data) < 0)
