import gc
import weakref
import numpy as np
import pandas as pd
import pytest

from numpy.testing import assert_allclose

from lka_depth.errors import DivergenceError, ConfigMismatchError
from lka_depth.config import load_config
from lka_depth.serialization import load_lkdt
from lka_depth.dataset import read_ppm, load_sequence
from lka_depth.synthetic_scene import default_scene, make_sequence
from lka_depth import pipeline

SMALL = ['width=64', 'height=32', 'channels=[4,8,8,8]', 'pose_channels=[4,4,4,4,4]',
         'batch=1', 'epochs=1']


@pytest.fixture(scope='module')
def sequence(tmp_path_factory):
    out = tmp_path_factory.mktemp('seq')
    return make_sequence(default_scene(width=64, height=32, n_frames=4, seed=1), out)


def small_conf(*extra):
    return load_config(overrides=SMALL + list(extra))


def test_train_smoke(tmp_path, sequence):
    result = pipeline.train(small_conf(), sequence, tmp_path.joinpath('run'))
    assert len(result.history) == 2
    assert list(result.history.columns) == pipeline.LOSS_COLUMNS
    assert np.all(np.isfinite(result.history.total))
    assert result.checkpoint == tmp_path.joinpath('run', 'checkpoints', 'epoch_000')
    assert result.checkpoint.joinpath('manifest.json').is_file()
    assert tmp_path.joinpath('run', 'config.yaml').is_file()
    saved = pd.read_csv(result.loss_csv)
    assert_allclose(saved.total, result.history.total, rtol=1e-12)


def test_same_seed_gives_same_run(tmp_path, sequence):
    a = pipeline.train(small_conf(), sequence, tmp_path.joinpath('a'))
    b = pipeline.train(small_conf(), sequence, tmp_path.joinpath('b'))
    assert a.loss_csv.read_bytes() == b.loss_csv.read_bytes()

    names = sorted(p.name for p in a.checkpoint.iterdir())
    assert 'manifest.json' in names and len(names) > 1
    assert names == sorted(p.name for p in b.checkpoint.iterdir())
    for name in names:
        assert a.checkpoint.joinpath(name).read_bytes() == \
            b.checkpoint.joinpath(name).read_bytes(), name

    c = pipeline.train(small_conf('seed=7'), sequence, tmp_path.joinpath('c'))
    assert any(a.checkpoint.joinpath(name).read_bytes() !=
               c.checkpoint.joinpath(name).read_bytes()
               for name in names if name.endswith('.lkdt'))


def test_lr_schedule_and_step_limit(tmp_path, sequence):
    conf = small_conf('epochs=3', 'lr_decay_epoch=1', 'max_steps=5')
    result = pipeline.train(conf, sequence, tmp_path)
    assert list(result.history.step) == [1, 2, 3, 4, 5]
    assert list(result.history.lr) == [1e-4, 1e-4, 1e-5, 1e-5, 1e-5]
    assert result.checkpoint.name == 'epoch_002'


def test_steps_per_epoch_cycles(tmp_path, sequence):
    result = pipeline.train(small_conf('steps_per_epoch=5'), sequence, tmp_path)
    assert len(result.history) == 5


def test_divergence_dumps_the_batch(tmp_path, sequence, monkeypatch):
    real = pipeline.total_loss

    def diverging(*args, **kwargs):
        loss = real(*args, **kwargs)
        loss.total.data[...] = np.nan
        return loss

    monkeypatch.setattr(pipeline, 'total_loss', diverging)
    with pytest.raises(DivergenceError) as info:
        pipeline.train(small_conf(), sequence, tmp_path)
    assert info.value.step == 1
    assert info.value.dump_dir.joinpath('loss.json').is_file()
    assert len(list(info.value.dump_dir.glob('source_*.lkdt'))) == 2


def test_each_step_releases_its_graph(tmp_path, sequence, monkeypatch):
    real = pipeline.total_loss
    refs = []

    def tracked(*args, **kwargs):
        loss = real(*args, **kwargs)
        refs.append(weakref.ref(loss.total))
        return loss

    monkeypatch.setattr(pipeline, 'total_loss', tracked)
    gc.disable()
    try:
        pipeline.train(small_conf(), sequence, tmp_path)
        assert len(refs) == 2
        assert all(ref() is None for ref in refs)
    finally:
        gc.enable()


def test_eval_ground_truth_against_itself(tmp_path, sequence):
    out_csv = tmp_path.joinpath('eval', 'metrics.csv')
    df, aggregate, reference = pipeline.evaluate(small_conf(), None, sequence, out_csv,
                                                 gt_as_pred=True)
    assert aggregate.values() == [0, 0, 0, 0, 1, 1, 1]
    assert list(df.frame) == ['0000', '0001', '0002', '0003', 'aggregate']
    assert out_csv.is_file()
    assert tmp_path.joinpath('eval', 'metrics_reference.csv').is_file()
    assert len(reference) == 2


def test_eval_and_infer_from_checkpoint(tmp_path, sequence):
    conf = small_conf()
    result = pipeline.train(conf, sequence, tmp_path.joinpath('run'))
    _, aggregate, _ = pipeline.evaluate(conf, result.checkpoint, sequence)
    assert aggregate.n_pixels > 0 and np.isfinite(aggregate.abs_rel)

    image = sequence.joinpath('frame_0001.ppm')
    paths = [pipeline.infer(conf, result.checkpoint, image, tmp_path.joinpath(name, 'pred'))
             for name in ('a', 'b')]
    depth_path, vis_path = paths[0]
    depth = load_lkdt(depth_path)
    assert depth.shape == (1, 32, 64)
    assert np.all((depth >= 0.1) & (depth <= 100))
    vis = read_ppm(vis_path).data
    assert vis.min() == 0 and vis.max() == 1
    for a, b in zip(*paths):
        assert a.read_bytes() == b.read_bytes()

    with pytest.raises(ConfigMismatchError):
        pipeline.evaluate(small_conf('use_lka=false'), result.checkpoint, sequence)


def test_profile_frame():
    conf = small_conf()
    depth_net, _ = pipeline.build_nets(conf)
    df = pipeline.profile_frame(depth_net, 32, 64)
    values = dict(zip(df['item'], df['value']))
    assert values['total'] == depth_net.param_count()
    assert values['macs@32x64'] == depth_net.mac_count(32, 64)


# Desk-scale acceptance: the default scene at 64x192, batch 2, 500 steps,
# a narrower channel plan and a higher rate keep it within minutes.
ACCEPTANCE = ['width=192', 'height=64', 'batch=2', 'epochs=1', 'steps_per_epoch=500',
              'max_steps=500', 'lr=1e-3', 'lr_final=1e-4', 'channels=[8,16,32,64]',
              'pose_channels=[8,16,32,32,32]']


@pytest.mark.slow
def test_training_learns_the_scene(tmp_path):
    sequence = make_sequence(default_scene(), tmp_path.joinpath('seq'))
    conf = load_config(overrides=ACCEPTANCE)
    before = pipeline.untrained_abs_rel(conf, load_sequence(sequence, size=(64, 192)))
    result = pipeline.train(conf, sequence, tmp_path.joinpath('run'))
    assert len(result.history) == 500
    photometric = result.history.photometric
    # The batches differ in content, the ends are averaged.
    assert photometric.tail(20).mean() < 0.5 * photometric.head(10).mean()
    _, aggregate, _ = pipeline.evaluate(conf, None, sequence, depth_net=result.depth_net)
    assert aggregate.abs_rel <= 0.7 * before


@pytest.mark.slow
def test_ablation_runs_every_combination(tmp_path):
    sequence = make_sequence(default_scene(), tmp_path.joinpath('seq'))
    conf = load_config(overrides=['width=192', 'height=64', 'batch=2', 'channels=[8,16,32,64]',
                                  'pose_channels=[8,16,32,32,32]'])
    df = pipeline.ablate(conf, sequence, tmp_path.joinpath('ablate'), steps=500)
    assert len(df) == 4 and list(df.steps) == [500] * 4
    params = {(r.use_lka, r.use_offset_upsampler): r.params for r in df.itertuples()}
    assert params[(True, True)] > params[(True, False)]
    assert params[(False, True)] > params[(False, False)]
    assert params[(True, False)] > params[(False, False)]
    assert params[(True, True)] > params[(False, True)]
    assert tmp_path.joinpath('ablate', 'ablation.csv').is_file()
