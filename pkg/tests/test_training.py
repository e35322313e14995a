import numpy as np
import pytest

from drsan import tensor as T
from drsan.checkpoint import load_checkpoint
from drsan.data import Dataset, synthetic_images
from drsan.model import ParameterStore, build_network
from drsan.training import AdamState, TrainConfig, TrainingDiverged, adam_step, lr_at, train

from conftest import tiny_config


def store_of(**arrays):
    s = ParameterStore()
    for name, a in arrays.items():
        s.add(name, np.asarray(a, dtype=np.float64))
    return s


def test_adam_first_step_closed_form():
    s = store_of(w=np.full((2, 3), 0.7), b=np.zeros(4))
    for t in s.tensors():
        t.grad = np.ones_like(t.data)
    cfg = TrainConfig()
    st = AdamState.for_params(s)
    adam_step(s, st, 2e-4, cfg)
    assert st.t == 1
    np.testing.assert_allclose(s["w"].data, 0.7 - 2e-4 / (1 + 1e-8), atol=1e-9)
    np.testing.assert_allclose(s["b"].data, -2e-4, atol=1e-9)


def test_adam_zero_gradient_keeps_params():
    s = store_of(w=np.arange(5.0))
    s["w"].grad = np.zeros(5)
    st = AdamState.for_params(s)
    for _ in range(3):
        adam_step(s, st, 1e-3, TrainConfig())
    assert np.array_equal(s["w"].data, np.arange(5.0))


def test_adam_three_step_recurrence():
    cfg = TrainConfig(beta1=0.8, beta2=0.95, eps=1e-6)
    s = store_of(w=[1.5])
    st = AdamState.for_params(s)
    grads = [0.3, -1.1, 2.0]
    w, m, v = 1.5, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        s["w"].grad = np.array([g])
        adam_step(s, st, 0.01, cfg)
        m = 0.8 * m + 0.2 * g
        v = 0.95 * v + 0.05 * g * g
        w -= 0.01 * (m / (1 - 0.8 ** t)) / (np.sqrt(v / (1 - 0.95 ** t)) + 1e-6)
    assert abs(s["w"].data[0] - w) < 1e-12
    assert np.all(st.v["w"] >= 0)


def test_adam_update_bound_on_random_streams():
    rng = np.random.default_rng(3)
    s = store_of(w=np.zeros(200))
    st = AdamState.for_params(s)
    lr = 1e-3
    for _ in range(50):
        before = s["w"].data.copy()
        s["w"].grad = rng.standard_normal(200) * rng.uniform(0.01, 100)
        adam_step(s, st, lr, TrainConfig())
        assert np.abs(s["w"].data - before).max() <= 3 * lr


def test_adam_missing_grad_named():
    s = store_of(a=[1.0], zz=[2.0])
    s["a"].grad = np.zeros(1)
    with pytest.raises(ValueError, match="'zz'"):
        adam_step(s, AdamState.for_params(s), 1e-3, TrainConfig())


def test_adam_decreases_quadratic():
    s = store_of(w=[0.8])
    w = s["w"]
    loss = T.tensor_sum(T.mul(Tensor4(w), Tensor4(w)))
    T.backward(loss, [w])
    adam_step(s, AdamState.for_params(s), 1e-3, TrainConfig())
    assert w.data[0] ** 2 < 0.8 ** 2


def Tensor4(t):
    # view a 1-element parameter as a rank-4 map while keeping it in the graph
    return T._result(t.data.reshape(1, 1, 1, 1), "view", (t,), lambda g: (g.reshape(t.shape),))


def test_lr_schedule():
    cfg = TrainConfig()
    assert lr_at(0, cfg) == 2e-4
    assert lr_at(200_000, cfg) == pytest.approx(1.7e-4, rel=1e-12)
    assert lr_at(400_000, cfg) == pytest.approx(1.445e-4, rel=1e-12)
    assert lr_at(199_999, cfg) == 2e-4
    vals = [lr_at(i, cfg) for i in range(0, 2_000_000, 50_000)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert len(set(vals)) == 10


@pytest.mark.parametrize("bad", [dict(batch_size=0), dict(lr=0), dict(decay=-1), dict(beta2=1.0),
                                 dict(workers=0), dict(iterations=-1)])
def test_train_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"epochs": 3})


@pytest.fixture
def small_setup():
    ds = Dataset(synthetic_images(2, 32, seed=1), 2)
    cfg = TrainConfig(batch_size=4, patch_size=8, iterations=6, log_every=2, checkpoint_every=3, seed=5)
    return ds, cfg


def test_zero_iterations_checkpoint_equals_init(tmp_path, small_setup):
    ds, cfg = small_setup
    cfg.iterations = 0
    model = build_network(tiny_config(), seed=2)
    init = {n: t.data.copy() for n, t in model.params.items()}
    train(model, ds, cfg, out_dir=tmp_path)
    ckpt = load_checkpoint(tmp_path / "final.drsan")
    assert ckpt.iteration == 0
    assert all(np.array_equal(ckpt.model.params[n].data, a) for n, a in init.items())


def _run(tmp_path, name, ds, cfg):
    res = train(build_network(tiny_config(), seed=cfg.seed), ds, cfg, out_dir=tmp_path / name)
    return res, (tmp_path / name / "final.drsan").read_bytes()


def test_training_is_reproducible(tmp_path, small_setup):
    ds, cfg = small_setup
    a, ba = _run(tmp_path, "a", ds, cfg)
    b, bb = _run(tmp_path, "b", ds, cfg)
    assert a.losses == b.losses and ba == bb
    rows = (tmp_path / "a" / "train_log.csv").read_text().splitlines()
    assert rows[0] == "iter,lr,loss" and [r.split(",")[0] for r in rows[1:]] == ["2", "4", "6"]
    assert (tmp_path / "a" / "train_log.csv").read_bytes() == (tmp_path / "b" / "train_log.csv").read_bytes()
    times = (tmp_path / "a" / "train_times.csv").read_text().splitlines()
    assert times[0] == "iter,seconds" and [r.split(",")[0] for r in times[1:]] == ["2", "4", "6"]
    assert sorted(p.name for p in (tmp_path / "a").iterdir()) == [
        "final.drsan", "iter_0000003.drsan", "iter_0000006.drsan", "train_log.csv", "train_times.csv"]


def test_training_reproducible_with_workers(tmp_path, small_setup):
    ds, cfg = small_setup
    cfg.workers = 3
    a, ba = _run(tmp_path, "a", ds, cfg)
    b, bb = _run(tmp_path, "b", ds, cfg)
    assert a.losses == b.losses and ba == bb


def test_resume_continues_counters(tmp_path, small_setup):
    ds, cfg = small_setup
    first = train(build_network(tiny_config()), ds, cfg)
    second = train(first.model, ds, cfg, state=first.state, start_iteration=first.iteration)
    assert second.iteration == 12 and second.state.t == 12


def test_divergence_reports_iteration_and_parameter(small_setup):
    ds, cfg = small_setup
    model = build_network(tiny_config())
    model.params["drag.0.rb.1.conv.0.weight"].data[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingDiverged, match=r"at iteration 0;") as err:
        train(model, ds, cfg)
    assert str(err.value).rsplit(" ", 1)[-1] in model.params.names()


def test_scale_mismatch(small_setup):
    ds, cfg = small_setup
    with pytest.raises(ValueError):
        train(build_network(tiny_config(scale=3)), ds, cfg)


@pytest.mark.slow
def test_desk_run_halves_loss(desk_run):
    losses = desk_run["result"].losses
    assert np.mean(losses[-20:]) < 0.5 * np.mean(losses[:5])
