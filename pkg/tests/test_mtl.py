import numpy as np
import pytest

from malmtl import mtl
from malmtl.codec import PixelGrid
from malmtl.nn import LabelOutOfRange, softmax_cross_entropy
from malmtl.nn.gradcheck import rel_error

CFG = mtl.desk_config()


def img(rng, h=16, w=16):
    return rng.integers(0, 256, (h, w, 3), dtype=np.uint8)


@pytest.fixture(scope="module")
def tasks():
    return mtl.default_tasks()


@pytest.fixture
def net(tasks):
    return mtl.build_network(CFG, tasks, seed=7)


def test_default_tasks(tasks):
    assert [t.task_id for t in tasks] == [f"t{i}" for i in range(1, 8)]
    assert [t.n_classes for t in tasks] == [2, 2, 2, 25, 2, 2, 2]
    assert tasks[3].class_names == mtl.MALIMG_FAMILIES


def test_task_spec_validation():
    with pytest.raises(ValueError):
        mtl.TaskSpec("x", "binary", ("a", "b", "c"))
    with pytest.raises(ValueError):
        mtl.TaskSpec("x", "family", ("a", "a"))
    with pytest.raises(ValueError):
        mtl.TaskSpec("x", "regression", ("a", "b"))
    assert mtl.TaskSpec("x", "binary", ("benign", "malware")).label_index("malware") == 1


def test_trunk_config_validation():
    with pytest.raises(ValueError):
        mtl.TrunkConfig(kernel_sizes=(3, 3, 3), channels=(4, 4, 4))
    with pytest.raises(ValueError):
        mtl.TrunkConfig(pool_after=(0, 1, 2, 4))
    with pytest.raises(ValueError):
        mtl.TrunkConfig(fc_widths=(10,))
    with pytest.raises(ValueError):
        mtl.TrunkConfig(activation="gelu")
    with pytest.raises(ValueError):
        mtl.TrunkConfig(input_policy="resize")
    assert mtl.TrunkConfig.from_dict(CFG.to_dict()) == CFG


def test_topology(net):
    assert mtl.count_trunk_stages(CFG) == 11
    assert mtl.count_trunk_stages(mtl.TrunkConfig()) == 11
    assert len(net.heads) == 7
    assert net.heads["t4"].weight.shape[0] == 25
    assert all(h.weight.shape[1] == CFG.fc_widths[-1] for h in net.heads.values())


def test_min_input_size():
    assert mtl.min_input_size(CFG) == (16, 16)
    lo = mtl.min_input_size(mtl.TrunkConfig())
    net = mtl.build_network(CFG, mtl.default_tasks()[:1])
    net.logits([img(np.random.default_rng(0), *mtl.min_input_size(CFG))], "t1")
    assert lo[0] >= 16


def test_trunk_is_shared(net, rng):
    trunk = net.trunk_params()
    for tid in net.tasks:
        mtl.joint_loss(net, [(img(rng), tid, 0)])
        # every trunk parameter receives gradient from every task
        assert all(np.any(p.grad) for p in trunk)
        touched = {t for t, h in net.heads.items() if any(np.any(p.grad) for p in h.params())}
        assert touched == {tid}


def test_same_seed_same_params(tasks):
    a = mtl.build_network(CFG, tasks, seed=3).state_dict()
    b = mtl.build_network(CFG, tasks, seed=3).state_dict()
    c = mtl.build_network(CFG, tasks, seed=4).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not all(np.array_equal(a[k], c[k]) for k in a)


def test_variable_input_sizes(net, rng):
    for h, w in [(16, 16), (25, 26), (40, 17)]:
        assert mtl.forward(net, img(rng, h, w), "t4").shape == (25,)


def test_errors(net, rng, tasks):
    with pytest.raises(mtl.UnknownTask):
        mtl.forward(net, img(rng), "t9")
    with pytest.raises(mtl.InputTooSmall):
        mtl.forward(net, img(rng, 15, 40), "t1")
    with pytest.raises(mtl.DuplicateTask):
        mtl.build_network(CFG, [tasks[0], tasks[0]])
    with pytest.raises(ValueError):
        mtl.build_network(CFG, [])
    with pytest.raises(LabelOutOfRange):
        mtl.joint_loss(net, [(img(rng), "t1", 2)])
    with pytest.raises(mtl.EmptyDataset):
        mtl.joint_loss(net, [])


def test_resize_policy(tasks, rng):
    cfg = mtl.desk_config(input_policy="resize", resize_to=(16, 16))
    net = mtl.build_network(cfg, tasks, seed=0)
    assert mtl.forward(net, img(rng, 5, 9), "t1").shape == (2,)


def test_pixel_grid_input(net, rng):
    arr = img(rng)
    grid = PixelGrid(arr)
    np.testing.assert_array_equal(mtl.forward(net, grid, "t2"), mtl.forward(net, arr, "t2"))
    x = mtl.image_array(arr)
    assert x.shape == (3, 16, 16) and x.min() >= -0.5 and x.max() <= 0.5


def test_predict_tie_goes_to_lowest_index(tasks, rng):
    net = mtl.build_network(CFG, tasks, seed=0)
    head = net.heads["t4"]
    head.weight.value[...] = 0.0
    head.bias.value[...] = 0.0
    head.bias.value[[3, 9]] = 1.0
    label, probs = mtl.predict(net, img(rng), "t4")
    assert label == 3
    assert probs.sum() == pytest.approx(1.0)


def test_predict_batch_matches_single(net, rng):
    ims = [img(rng), img(rng, 20, 18), img(rng)]
    labels, probs = mtl.predict_batch(net, ims, "t1")
    for i, im in enumerate(ims):
        lab, p = mtl.predict(net, im, "t1")
        assert lab == labels[i]
        np.testing.assert_allclose(p, probs[i], atol=1e-12)


# -- joint loss ----------------------------------------------------------------

def test_single_task_loss_is_cross_entropy(net, rng):
    ims = [img(rng) for _ in range(3)]
    labels = [0, 1, 1]
    res = mtl.joint_loss(net, [(im, "t3", lab) for im, lab in zip(ims, labels)])
    expected, _ = softmax_cross_entropy(net.logits(ims, "t3"), labels)
    assert res.loss == pytest.approx(expected, abs=1e-12)
    assert res.task_count == {"t3": 3}


def test_duplicating_batch_changes_nothing(net, rng):
    batch = [(img(rng), "t1", 0), (img(rng), "t4", 7), (img(rng, 20, 20), "t1", 1)]
    a = mtl.joint_loss(net, batch)
    ga = [p.grad.copy() for p in net.params()]
    b = mtl.joint_loss(net, batch + batch)
    assert b.loss == pytest.approx(a.loss, abs=1e-12)
    for p, g in zip(net.params(), ga):
        np.testing.assert_allclose(p.grad, g, atol=1e-12)


def test_trunk_gradient_is_sum_over_tasks(net, rng):
    b1 = [(img(rng), "t1", 1), (img(rng), "t1", 0)]
    b4 = [(img(rng), "t4", 11)]
    weights = {"t1": 0.7, "t4": 1.3}
    total = mtl.joint_loss(net, b1 + b4, weights)
    g_joint = [p.grad.copy() for p in net.trunk_params()]
    l1 = mtl.joint_loss(net, b1, weights).loss
    g1 = [p.grad.copy() for p in net.trunk_params()]
    l4 = mtl.joint_loss(net, b4, weights).loss
    g4 = [p.grad.copy() for p in net.trunk_params()]
    assert total.loss == pytest.approx(l1 + l4, abs=1e-12)
    for gj, a, b in zip(g_joint, g1, g4):
        np.testing.assert_allclose(gj, a + b, atol=1e-12)


def test_joint_loss_gradient_numeric(rng):
    tasks = mtl.default_tasks()[:2]
    net = mtl.build_network(CFG, tasks, seed=1)
    batch = [(img(rng), "t1", 1), (img(rng), "t2", 0)]
    mtl.joint_loss(net, batch)
    for p in [net.trunk_params()[0], net.trunk_params()[-1], net.head_params("t2")[0]]:
        analytic = p.grad.copy()
        flat = p.value.reshape(-1)
        pick = np.arange(0, flat.size, max(1, flat.size // 6))
        sub = np.zeros(len(pick))
        num = np.zeros(len(pick))
        for j, i in enumerate(pick):
            orig = flat[i]
            flat[i] = orig + 1e-6
            up = mtl.joint_loss(net, batch).loss
            flat[i] = orig - 1e-6
            dn = mtl.joint_loss(net, batch).loss
            flat[i] = orig
            num[j] = (up - dn) / 2e-6
            sub[j] = analytic.reshape(-1)[i]
        assert rel_error(sub, num) < 1e-4


# -- training ------------------------------------------------------------------

def toy_data(rng, n=12):
    """Two-class data separable by brightness."""
    out = []
    for i in range(n):
        lab = i % 2
        lo, hi = (0, 100) if lab == 0 else (156, 256)
        out.append((rng.integers(lo, hi, (16, 16, 3), dtype=np.uint8), lab))
    return out


def test_training_step_leaves_other_heads_alone(tasks, rng):
    net = mtl.build_network(CFG, tasks, seed=2)
    before = {k: v.copy() for k, v in net.state_dict().items()}
    mtl.train(net, {"t1": toy_data(rng)}, ["t1"], mtl.Schedule(epochs=1, batch_size=4), seed=0)
    after = net.state_dict()
    for k in before:
        changed = not np.array_equal(before[k], after[k])
        if k.startswith("head."):
            assert changed == k.startswith("head.t1.")
        else:
            assert changed, k


def test_training_is_deterministic(tasks, rng):
    data = {"t1": toy_data(rng), "t5": toy_data(rng)}
    runs = []
    for _ in range(2):
        net = mtl.build_network(CFG, tasks, seed=5)
        trace = mtl.train(net, data, ["t1", "t5"], mtl.Schedule(epochs=2, batch_size=5), seed=9)
        runs.append((trace, net.state_dict()))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(runs[0][1][k], runs[1][1][k]) for k in runs[0][1])


def test_trace_records(tasks, rng):
    net = mtl.build_network(CFG, tasks, seed=5)
    seen = []
    trace = mtl.train(net, {"t2": toy_data(rng), "t3": toy_data(rng)}, ["t3", "t2"],
                      mtl.Schedule(epochs=3, batch_size=4), seed=1, callback=seen.append)
    assert seen == trace
    assert [(r.epoch, r.task) for r in trace] == [(e, t) for e in (1, 2, 3) for t in ("t2", "t3")]
    epoch, task, loss, acc = trace[0].line().split("\t")
    assert (epoch, task) == ("1", "t2") and float(loss) == trace[0].loss
    assert all(0 <= r.accuracy <= 1 for r in trace)


def test_training_learns_toy_problem(tasks, rng):
    net = mtl.build_network(CFG, tasks, seed=0)
    data = toy_data(rng, 40)
    mtl.train(net, {"t1": data}, ["t1"], mtl.Schedule(epochs=8, batch_size=8), seed=0)
    assert mtl.evaluate_accuracy(net, toy_data(rng, 20), "t1") == 1.0


def test_train_errors(net, rng):
    with pytest.raises(mtl.UnknownTask):
        mtl.train(net, {"t8": toy_data(rng)}, ["t8"])
    with pytest.raises(mtl.EmptyDataset):
        mtl.train(net, {"t1": []}, ["t1"])
    with pytest.raises(mtl.EmptyDataset):
        mtl.train(net, {}, [])
    with pytest.raises(mtl.EmptyDataset):
        mtl.evaluate_accuracy(net, [], "t1")


@pytest.mark.parametrize("optimizer", ["adam", "adagrad", "adadelta", "rmsprop", "nadam"])
def test_every_optimizer_trains(optimizer, tasks, rng):
    net = mtl.build_network(CFG, tasks[:1], seed=0)
    trace = mtl.train(net, {"t1": toy_data(rng)}, ["t1"], mtl.Schedule(epochs=2, batch_size=4, optimizer=optimizer))
    assert all(np.isfinite(r.loss) for r in trace)


@pytest.mark.parametrize("activation", ["relu", "leaky_relu", "prelu", "elu"])
def test_activation_choice(activation, tasks, rng):
    net = mtl.build_network(mtl.desk_config(activation=activation), tasks, seed=0)
    assert np.all(np.isfinite(mtl.forward(net, img(rng), "t1")))


def test_checkpoint_roundtrip(net, rng, tmp_path):
    path = tmp_path / "net.ck"
    mtl.save_network(path, net)
    back = mtl.load_network(path)
    im = img(rng, 21, 19)
    for tid in net.tasks:
        np.testing.assert_array_equal(mtl.forward(back, im, tid), mtl.forward(net, im, tid))
    assert back.cfg == net.cfg
    assert mtl.config_summary(back) == mtl.config_summary(net)
