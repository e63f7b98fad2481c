import numpy as np
import pytest

from arteryflow.autodiff import Tape
from arteryflow.experiments import build_model
from arteryflow.nn.segnn import param_reader
from arteryflow.so3 import Rotation
from arteryflow.synthetic import TubeSpec, analytic_flow, gen_dataset, gen_tube
from arteryflow.train import (AdamState, TrainConfig, adam_step, l1_loss, moving_average, prepare, split_indices,
                              train)
from arteryflow.verify import end_to_end_error

@pytest.fixture(scope="module")
def small_set():
    samples = gen_dataset(3, seed=6)
    model, lmax = build_model("segnn")
    return model, [prepare(s.mesh, s.velocity, lmax) for s in samples]


def test_l1_examples():
    y = np.arange(6.0).reshape(2, 3)
    assert l1_loss(y, y) == 0.0
    assert l1_loss(y + 0.25, y) == pytest.approx(0.25, abs=1e-15)
    assert l1_loss(np.array([[1.0, 0.0, 0.0]]), np.zeros((1, 3))) == pytest.approx(1 / 3, abs=1e-15)
    with pytest.raises(ValueError):
        l1_loss(np.zeros((2, 3)), np.zeros((3, 3)))


def test_l1_gradient_is_sign_over_count():
    tape = Tape()
    x = tape.leaf(np.array([[2.0, -1.0, 0.5]]))
    g = tape.grad(l1_loss(x, np.zeros((1, 3))), x)
    np.testing.assert_allclose(g, [[1 / 3, -1 / 3, 1 / 3]])


def test_adam_zero_gradient():
    p = np.array([1.0, -2.0])
    q, s = adam_step(p, np.zeros(2), AdamState.zeros(2))
    assert np.array_equal(p, q) and s.t == 1


def test_adam_first_and_second_step():
    lr = 3e-4
    g = np.array([5.0, -0.3, 1e-2])
    p0 = np.zeros(3)
    p1, s = adam_step(p0, g, AdamState.zeros(3), lr)
    step1 = p1 - p0
    # closed form at t = 1: m_hat = g, v_hat = g^2
    np.testing.assert_allclose(step1, -lr * g / (np.abs(g) + 1e-8), rtol=1e-12)
    np.testing.assert_allclose(step1, -lr * np.sign(g), rtol=1e-5)
    p2, s = adam_step(p1, g, s, lr)
    np.testing.assert_allclose(np.abs(p2 - p1), np.abs(step1), rtol=0.01)
    assert s.t == 2


def test_adam_rejects_bad_input():
    with pytest.raises(FloatingPointError):
        adam_step(np.zeros(2), np.array([1.0, np.nan]), AdamState.zeros(2))
    with pytest.raises(ValueError):
        adam_step(np.zeros(2), np.zeros(3), AdamState.zeros(2))


def test_split_sizes():
    tr, va, te = split_indices(20, seed=3)
    assert (len(tr), len(va), len(te)) == (16, 2, 2)
    assert sorted(np.concatenate([tr, va, te]).tolist()) == list(range(20))
    with pytest.raises(ValueError):
        split_indices(4)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)


def test_empty_training_split(small_set):
    model, data = small_set
    with pytest.raises(ValueError):
        train(model, model.init_params(0), [], data, TrainConfig(max_epochs=1))


def test_zero_learning_rate_keeps_parameters(small_set):
    model, data = small_set
    p = model.init_params(1)
    r = train(model, p, data[:2], data[2:], TrainConfig(learning_rate=0.0, max_epochs=3))
    assert np.array_equal(r.params.vector, p.vector)
    assert len(r.history) == 4


def test_same_seed_same_history(small_set):
    model, data = small_set
    cfg = TrainConfig(learning_rate=1e-3, max_epochs=3, seed=4)
    a = train(model, model.init_params(2), data[:2], data[2:], cfg)
    b = train(model, model.init_params(2), data[:2], data[2:], cfg)
    assert a.history_csv() == b.history_csv()
    assert np.array_equal(a.params.vector, b.params.vector)
    assert a.history_csv().splitlines()[0] == "epoch,train_loss,val_loss"


def test_batch_gradient_is_sum_of_samples(small_set):
    # one step with batch 2 equals Adam applied to g1 + g2
    model, data = small_set
    p = model.init_params(3)
    grads = []
    for s in data[:2]:
        tape = Tape()
        P, leaf = param_reader(p, tape)
        grads.append(tape.grad(l1_loss(model.forward(P, s.graph, s.X), s.target), leaf))
    expected, _ = adam_step(p.vector, grads[0] + grads[1], AdamState.zeros(len(p)), 1e-3)
    r = train(model, p, data[:2], [], TrainConfig(learning_rate=1e-3, max_epochs=1, batch_size=2))
    np.testing.assert_allclose(r.params.vector, expected, rtol=0, atol=1e-15)


def test_best_validation_epoch_is_returned(small_set):
    model, data = small_set
    seen = {}
    r = train(model, model.init_params(0), data[:2], data[2:], TrainConfig(learning_rate=3e-3, max_epochs=4),
              on_epoch=lambda e, tr, va, p: seen.setdefault(e, p.vector.copy()))
    vals = [h[2] for h in r.history]
    best = int(np.argmin(vals))
    assert r.best_epoch == best
    if best > 0:
        assert np.array_equal(r.params.vector, seen[best])


def test_patience_stops_early(small_set):
    model, data = small_set
    r = train(model, model.init_params(0), data[:1], data[1:], TrainConfig(learning_rate=0.0, max_epochs=20,
                                                                             patience=2))
    assert r.stopped_early and len(r.history) == 3


def test_moving_average():
    np.testing.assert_allclose(moving_average([1, 2, 3, 4], 2), [1.5, 2.5, 3.5])
    np.testing.assert_allclose(moving_average([1, 3], 5), [2.0])


def test_overfit_one_sample_stays_equivariant():
    spec = TubeSpec(axial_segments=12, radial_rings=3, seed=4)  # 481 vertices
    mesh = gen_tube(spec)
    assert mesh.n_vertices <= 500
    model, lmax = build_model("segnn")
    sample = prepare(mesh, analytic_flow(mesh, spec), lmax)
    epochs = 150
    snapshots = {}

    def keep(epoch, tr, va, params):
        if epoch in (epochs // 2, epochs):
            snapshots[epoch] = params

    p0 = model.init_params(0)
    r = train(model, p0, [sample], [], TrainConfig(learning_rate=1e-3, batch_size=1, max_epochs=epochs,
                                                   patience=epochs), on_epoch=keep)
    losses = np.array([h[1] for h in r.history])
    assert losses.min() < 0.1 * losses[0]
    assert (np.diff(moving_average(losses[1:], 20)) <= 0).all()

    rng = np.random.default_rng(8)
    rots = [Rotation.random(rng).matrix for _ in range(2)]
    ts = [rng.uniform(-10, 10, 3) for _ in range(2)]
    for params in (p0, snapshots[epochs // 2], snapshots[epochs]):
        assert end_to_end_error(mesh, params, model.config, rots, ts) < 1e-7
