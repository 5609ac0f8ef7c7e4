import numpy as np
import pytest

from vtseg.nets import (NetConfig, TrainConfig, TrainingDiverged, build, freeze_prefix,
                        grid_search, load_checkpoint, predict, predict_slicewise, predict_volume,
                        save_checkpoint, train)
from vtseg.nets.train import grad_errors, to_input, to_target
from vtseg.synth import make_airway_phantom, random_airway_spec
from vtseg.volume import LabelMap, Volume

D = (8, 8, 8)
SMALL = NetConfig("unet3d", D, (2, 4, 8), seed=1)


def phantoms(dims, seeds):
    return [make_airway_phantom(random_airway_spec(dims, s)) for s in seeds]


@pytest.fixture(scope="module")
def data8():
    return phantoms(D, [0, 1])


def same_params(a, b, names=None):
    names = a.params if names is None else names
    return all(np.array_equal(a.params[n], b.params[n]) for n in names)


def test_zero_learning_rate_leaves_parameters(data8):
    net = build(SMALL)
    out, hist = train(net, data8, TrainConfig(learning_rate=0.0, epochs=1, steps_per_epoch=1))
    assert same_params(net, out) and len(hist) == 1


def test_train_config_rejects_zero_steps():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(steps_per_epoch=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1e-3)


def test_training_is_deterministic(data8):
    tc = TrainConfig(learning_rate=1e-3, epochs=2, steps_per_epoch=3, dropout_rate=0.1, seed=4)
    a, ha = train(build(SMALL), data8, tc)
    b, hb = train(build(SMALL), data8, tc)
    assert ha == hb and same_params(a, b) and a.step == b.step == 6
    c, hc = train(build(SMALL), data8, TrainConfig(1e-3, 2, 3, 0.1, seed=5))
    assert hc != ha


def test_train_leaves_input_state_untouched(data8):
    net = build(SMALL)
    before = net.copy()
    train(net, data8, TrainConfig(1e-2, 1, 2))
    assert same_params(net, before) and net.step == 0


def test_freeze_three_layers_for_fifty_steps(data8):
    pre = build(SMALL)
    frozen = freeze_prefix(pre, 3)
    names = [n for _, ns in pre.layers[:3] for n in ns]
    assert frozen.frozen == set(names)
    out, _ = train(frozen, data8, TrainConfig(1e-2, 1, 50))
    assert same_params(out, pre, names)
    assert any(not np.array_equal(out.params[n], pre.params[n])
               for n in pre.params if n not in names)


def test_freeze_bounds(data8):
    net = build(SMALL)
    assert freeze_prefix(net, 0).frozen == set()
    everything = freeze_prefix(net, net.layer_count)
    out, _ = train(everything, data8, TrainConfig(1e-2, 1, 3))
    assert same_params(out, net)
    for n in (-1, net.layer_count + 1):
        with pytest.raises(ValueError):
            freeze_prefix(net, n)


def test_frozen_entries_report_zero_gradient(data8):
    net = freeze_prefix(build(NetConfig("unet3d", D, (2, 4), seed=1, precision="double")), 2)
    v, lab = data8[0]
    errs = grad_errors(net, to_input(v, net.config), to_target(lab, net.config), per_layer=5)
    frozen = [e for e in errs if e.param in net.frozen]
    assert frozen and all(e.analytic == 0.0 for e in frozen)


def test_divergence_is_reported(data8):
    net = build(SMALL)
    net.params["head.b"][:] = np.nan
    with pytest.raises(TrainingDiverged) as exc:
        train(net, data8, TrainConfig(3e-4, 1, 2))
    assert exc.value.step == 1 and exc.value.learning_rate == 3e-4


def test_dims_mismatch(data8):
    with pytest.raises(ValueError):
        train(build(NetConfig("unet3d", (16, 16, 16), (2, 4))), data8, TrainConfig())
    with pytest.raises(ValueError):
        train(build(SMALL), [], TrainConfig())


def test_predict_volume_thresholds(data8):
    net = build(SMALL)
    v = data8[0][0]
    assert predict_volume(net, v, 0.0).count == v.meta.size
    assert predict_volume(net, v, 1.0).count == 0
    a, b = predict_volume(net, v), predict_volume(net, v)
    assert a == b and a.meta == v.meta
    assert set(np.unique(a.data)) <= {0, 1}


def test_predict_ignores_dropout(data8):
    net = build(NetConfig("unet3d", D, (2, 4, 8), dropout_rate=0.5))
    v = data8[0][0]
    assert predict(net, v) == predict(net, v)


def test_slicewise_contracts(rng):
    net = build(NetConfig("unet2d", (16, 16), (4, 8), seed=3))
    slab = rng.uniform(0, 255, (16, 16, 1))
    same = Volume.from_array(np.repeat(slab, 5, axis=2))
    pred = predict_slicewise(net, same, 0.4)
    assert pred.meta.dims == (16, 16, 5)
    assert all(np.array_equal(pred.data[:, :, 0], pred.data[:, :, k]) for k in range(5))

    v = Volume.from_array(rng.uniform(0, 255, (16, 16, 6)))
    perm = rng.permutation(6)
    a = predict_slicewise(net, v, 0.45)
    b = predict_slicewise(net, v.with_data(v.data[:, :, perm].copy()), 0.45)
    np.testing.assert_array_equal(b.data, a.data[:, :, perm])
    with pytest.raises(ValueError):
        predict_volume(net, v)
    with pytest.raises(ValueError):
        predict_slicewise(net, Volume.from_array(np.zeros((8, 16, 2))))


def test_slicewise_training_runs(rng):
    net = build(NetConfig("unet2d", (16, 16), (4, 8)))
    data = phantoms((16, 16, 4), [0])
    out, hist = train(net, data, TrainConfig(1e-2, 1, 3))
    assert len(hist) == 3 and not same_params(out, net)
    assert isinstance(predict(out, data[0][0]), LabelMap)


def test_checkpoint_roundtrip(tmp_path, data8):
    net, _ = train(freeze_prefix(build(SMALL), 2), data8, TrainConfig(1e-3, 1, 2))
    p1 = save_checkpoint(net, tmp_path / "a.zip", {"seed": 1})
    back, prov = load_checkpoint(p1)
    assert prov == {"seed": 1}
    assert back.config == net.config and back.layers == net.layers
    assert back.frozen == net.frozen and back.step == net.step
    assert list(back.params) == list(net.params) and same_params(back, net)
    p2 = save_checkpoint(back, tmp_path / "b.zip", {"seed": 1})
    assert p1.read_bytes() == p2.read_bytes()
    # resuming from the checkpoint continues exactly like the live state
    tc = TrainConfig(1e-3, 1, 2, seed=9)
    assert same_params(train(net, data8, tc)[0], train(back, data8, tc)[0])


def test_grid_search_single_cell(data8):
    res = grid_search({"learning_rate": [1e-3]}, data8[:1], data8[1:], 5, SMALL, max_steps=2)
    assert len(res) == 1 and res[0].rank == 1 and res[0].train_steps == 2


def test_grid_search_ranks_trained_above_untrained():
    tr = phantoms((16, 16, 16), [0, 1])
    va = phantoms((16, 16, 16), [10, 11])
    cfg = NetConfig("unet3d", (16, 16, 16), (4, 8), seed=0)
    res = grid_search({"learning_rate": [0.0, 1e-2], "epochs": [60], "steps_per_epoch": [50]},
                      tr, va, 2, cfg, max_steps=30)
    assert [r.rank for r in res] == [1, 2]
    assert res[0].params["learning_rate"] == 1e-2 and res[0].val_dice > res[1].val_dice


def test_grid_search_budget_and_errors(data8):
    grids = {"learning_rate": [1e-4, 3e-4, 3e-5, 1e-5], "dropout_rate": [0.0, 0.1, 0.5]}
    res = grid_search(grids, data8[:1], data8[1:], 3, SMALL, max_steps=1)
    assert len(res) == 3 and len({r.cell for r in res}) == 3
    again = grid_search(grids, data8[:1], data8[1:], 3, SMALL, max_steps=1)
    assert res == again
    with pytest.raises(ValueError):
        grid_search({}, data8, data8, 1, SMALL)
    with pytest.raises(ValueError):
        grid_search({"learning_rate": []}, data8, data8, 1, SMALL)
    with pytest.raises(ValueError):
        grid_search({"momentum": [0.9]}, data8, data8, 1, SMALL)


def test_grid_search_with_pretrained_freezing(data8):
    pre = build(SMALL)
    res = grid_search({"frozen_layers": [3, 100], "learning_rate": [1e-3]}, data8[:1],
                      data8[1:], 2, SMALL, pretrained=pre, max_steps=2)
    assert sorted(r.params["frozen_layers"] for r in res) == [3, 100]
