import numpy as np
import pytest
from pydantic import ValidationError

from config import TrainerConfig
from errors import ConfigurationError, DimensionError
from models.tensor import ComplexTensor, RealTensor
from schema.network import ActivationSpec, LayerDecl, NetworkSpec, Variant
from services import netspec
from services.network import backward, predict
from services.trainer import AdamOptimizer, mean_loss, train


def _spec(variant=Variant.CID, kind="AMU"):
    act = ActivationSpec(kind=kind, pieces=4)
    return NetworkSpec(
        variant=variant,
        in_channels=3,
        layers=(
            LayerDecl(kind="conv", kernel_count=8, kernel_hw=((3, 3),), activation=act),
            LayerDecl(kind="final1x1", kernel_count=4, kernel_hw=((1, 1),), activation=act),
        ),
    )


def _samples(rng, count, shape=(6, 5)):
    out = []
    for _ in range(count):
        x = (rng.standard_normal((3,) + shape), rng.standard_normal((3,) + shape))
        y = (x[0].mean(axis=0, keepdims=True), x[1].mean(axis=0, keepdims=True))
        out.append((x, y))
    return out


def test_backward_independent_of_worker_count(rng):
    network = netspec.build(_spec(), seed=5)
    samples = _samples(rng, 4)
    xs, ys = [s[0] for s in samples], [s[1] for s in samples]
    loss_1, grads_1 = backward(network, xs, ys, workers=1)
    loss_3, grads_3 = backward(network, xs, ys, workers=3)
    assert loss_1 == loss_3
    for a, b in zip(grads_1, grads_3):
        np.testing.assert_array_equal(a, b)


def test_backward_loss_is_batch_mean(rng):
    network = netspec.build(_spec(), seed=5)
    samples = _samples(rng, 3)
    loss, grads = backward(network, [s[0] for s in samples], [s[1] for s in samples])
    assert loss == pytest.approx(mean_loss(network, samples), rel=1e-12)
    assert len(grads) == len(network.parameters())


def test_backward_accepts_batch_tensors(rng):
    network = netspec.build(_spec(), seed=5)
    samples = _samples(rng, 2)
    x = ComplexTensor(np.stack([s[0][0] for s in samples]), np.stack([s[0][1] for s in samples]))
    y = ComplexTensor(np.stack([s[1][0] for s in samples]), np.stack([s[1][1] for s in samples]))
    loss_tensor, _ = backward(network, x, y)
    loss_list, _ = backward(network, [s[0] for s in samples], [s[1] for s in samples])
    assert loss_tensor == pytest.approx(loss_list, rel=1e-12)


def test_backward_rejects_mismatched_batches(rng):
    network = netspec.build(_spec(), seed=5)
    samples = _samples(rng, 2)
    with pytest.raises(DimensionError):
        backward(network, [s[0] for s in samples], [samples[0][1]])
    with pytest.raises(DimensionError):
        backward(network, [], [])


def test_batch_forward_matches_per_sample(rng):
    network = netspec.build(_spec(), seed=2)
    samples = _samples(rng, 3)
    batch = ComplexTensor(np.stack([s[0][0] for s in samples]), np.stack([s[0][1] for s in samples]))
    out = network(batch)
    assert out.shape == (3, 1, 6, 5)
    for i, (x, _) in enumerate(samples):
        single = network(ComplexTensor(*x))
        np.testing.assert_allclose(out.re[i], single.re, rtol=1e-12)


def test_predict_preserves_order(rng):
    network = netspec.build(_spec(), seed=2)
    inputs = [s[0] for s in _samples(rng, 5)]
    serial = predict(network, inputs, workers=1)
    pooled = predict(network, inputs, workers=4)
    for a, b in zip(serial, pooled):
        np.testing.assert_array_equal(a[0], b[0])


def test_network_rejects_wrong_input():
    network = netspec.build(_spec(), seed=0)
    with pytest.raises(DimensionError):
        network(ComplexTensor.zeros((2, 4, 4)))
    with pytest.raises(DimensionError):
        network(RealTensor.zeros((3, 4, 4)))


def test_adam_first_step_moves_by_learning_rate():
    param = np.array([1.0, -1.0])
    optimizer = AdamOptimizer([param])
    optimizer.step([param], [np.array([0.5, -2.0])], lr=0.1)
    np.testing.assert_allclose(param, [0.9, -0.9], rtol=1e-6)


def test_training_reduces_validation_loss(rng):
    network = netspec.build(_spec(), seed=1)
    samples = _samples(rng, 2)
    initial = mean_loss(network, samples)
    cfg = TrainerConfig(batch_size=2, lr0=1e-3, plateau_patience=5, stop_patience=10, max_epochs=15)
    result = train(network, samples, samples, cfg)
    assert result.best_val_loss < initial
    assert mean_loss(network, samples) == pytest.approx(result.best_val_loss, rel=1e-9)
    assert [r.epoch for r in result.history] == list(range(1, len(result.history) + 1))


@pytest.mark.parametrize("variant,kind", [(Variant.CID, "AMU"), (Variant.ID, "MU")])
def test_overfits_a_single_sample(rng, variant, kind):
    network = netspec.build(_spec(variant, kind), seed=0)
    samples = _samples(rng, 1)
    if variant == Variant.ID:
        samples = [((x[0],), (y[0],)) for x, y in samples]
    initial = mean_loss(network, samples)
    cfg = TrainerConfig(batch_size=1, lr0=1e-2, plateau_patience=20, stop_patience=60, max_epochs=500)
    result = train(network, samples, samples, cfg)
    losses = [r.train_loss for r in result.history]
    assert result.best_val_loss < 0.01 * initial
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_training_is_deterministic(rng):
    samples = _samples(rng, 3)
    cfg = TrainerConfig(batch_size=2, lr0=1e-3, plateau_patience=1, stop_patience=2, max_epochs=3, seed=4)
    runs = []
    for _ in range(2):
        network = netspec.build(_spec(), seed=1)
        result = train(network, samples[:2], samples[2:], cfg)
        runs.append((network.parameters(), [r.model_dump() for r in result.history]))
    assert runs[0][1] == runs[1][1]
    for a, b in zip(runs[0][0], runs[1][0]):
        np.testing.assert_array_equal(a, b)


def test_plateau_halving_and_early_stop():
    # zero weights and zero data: the validation loss never improves after epoch 1
    network = netspec.build(_spec(), seed=None)
    zeros = ((np.zeros((3, 4, 4)), np.zeros((3, 4, 4))), (np.zeros((1, 4, 4)), np.zeros((1, 4, 4))))
    cfg = TrainerConfig(batch_size=1, lr0=1e-2, plateau_patience=2, stop_patience=4)
    result = train(network, [zeros], [zeros], cfg)
    assert result.stopped_early
    assert result.best_epoch == 1
    assert [r.lr for r in result.history] == [1e-2, 1e-2, 1e-2, 5e-3, 5e-3]


def test_max_epochs_caps_training(rng):
    network = netspec.build(_spec(Variant.ID, "MU"), seed=0)
    samples = [((x[0],), (y[0],)) for x, y in _samples(rng, 2)]
    cfg = TrainerConfig(batch_size=1, lr0=1e-4, plateau_patience=50, stop_patience=50, max_epochs=2)
    result = train(network, samples, samples, cfg)
    assert len(result.history) == 2
    assert not result.stopped_early


def test_empty_sets_rejected():
    network = netspec.build(_spec(), seed=0)
    with pytest.raises(ConfigurationError):
        train(network, [], [], TrainerConfig())


def test_schedule_validation():
    with pytest.raises(ValidationError):
        TrainerConfig(stop_patience=0)
    with pytest.raises(ValidationError):
        TrainerConfig(plateau_patience=0)
    with pytest.raises(ValidationError):
        TrainerConfig(plateau_patience=5, stop_patience=3)
    with pytest.raises(ValidationError):
        TrainerConfig(lr0=0.0)
