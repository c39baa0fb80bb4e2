import math
import numpy as np
import pytest
import torch
from torch.func import functional_call
from core.exceptions import DimMismatch, EmptyBatch, EmptyData
from estimators.flow import (
    DTYPE,
    IDENTITY_DERIVATIVE,
    ActNorm,
    FlowModel,
    FlowNetwork,
    actnorm_init,
    build_flow_network,
    flow_forward,
    flow_inverse,
    flow_log_density,
    rq_spline_transform,
    train_flow,
)
from schemas.config import FlowConfig
from schemas.models import FlowDocument

SMALL = FlowConfig(blocks=3, hidden_width=8, hidden_layers=4, spline_bins=4, epochs=0, batch_size=16)


def random_flow(dim: int, seed: int, config: FlowConfig = SMALL, scale: float = 0.1) -> FlowModel:
    """A flow with every parameter moved off its initialization."""
    torch.manual_seed(seed)
    network = build_flow_network(dim, config)
    with torch.no_grad():
        for parameter in network.parameters():
            parameter.add_(scale * torch.randn_like(parameter))
    return FlowModel(network, config)


def identity_flow(dim: int) -> FlowModel:
    return FlowModel(build_flow_network(dim, SMALL, identity=True), SMALL)


def random_spline_params(generator, shape, bins):
    widths = torch.randn(*shape, bins, generator=generator, dtype=DTYPE)
    heights = torch.randn(*shape, bins, generator=generator, dtype=DTYPE)
    derivatives = torch.randn(*shape, bins - 1, generator=generator, dtype=DTYPE)
    return widths, heights, derivatives


def test_identity_spline():
    x = torch.linspace(-2.9, 2.9, 101, dtype=DTYPE)
    widths = torch.zeros(101, 8, dtype=DTYPE)
    heights = torch.zeros(101, 8, dtype=DTYPE)
    derivatives = torch.full((101, 7), IDENTITY_DERIVATIVE, dtype=DTYPE)
    y, logdet = rq_spline_transform(x, widths, heights, derivatives, 3.0)
    assert torch.allclose(y, x, atol=1e-12)
    assert torch.allclose(logdet, torch.zeros_like(logdet), atol=1e-9)


def test_spline_tails_are_identity():
    generator = torch.Generator().manual_seed(0)
    widths, heights, derivatives = random_spline_params(generator, (3,), 8)
    x = torch.tensor([4.0, -4.0, 3.5], dtype=DTYPE)
    y, logdet = rq_spline_transform(x, widths, heights, derivatives, 3.0)
    assert torch.equal(y, x)
    assert torch.equal(logdet, torch.zeros(3, dtype=DTYPE))


def test_spline_derivative_matches_finite_difference():
    generator = torch.Generator().manual_seed(1)
    widths, heights, derivatives = random_spline_params(generator, (1,), 8)
    h = 1e-6
    x = torch.tensor([0.3 - h, 0.3, 0.3 + h], dtype=DTYPE)
    y, logdet = rq_spline_transform(x, widths.expand(3, 8), heights.expand(3, 8), derivatives.expand(3, 7), 3.0)
    numeric = (y[2] - y[0]) / (2 * h)
    assert float(torch.exp(logdet[1])) == pytest.approx(float(numeric), rel=1e-4)


def test_spline_is_monotone_and_invertible():
    generator = torch.Generator().manual_seed(2)
    for _ in range(20):
        widths, heights, derivatives = random_spline_params(generator, (1,), 8)
        x = torch.arange(-3.0, 3.0 + 5e-4, 1e-3, dtype=DTYPE)
        n = x.shape[0]
        y, logdet = rq_spline_transform(x, widths.expand(n, 8), heights.expand(n, 8), derivatives.expand(n, 7), 3.0)
        assert torch.all(y[1:] > y[:-1])
        back, inverse_logdet = rq_spline_transform(
            y, widths.expand(n, 8), heights.expand(n, 8), derivatives.expand(n, 7), 3.0, inverse=True
        )
        assert torch.max(torch.abs(back - x)) <= 1e-9
        assert torch.allclose(inverse_logdet, -logdet, atol=1e-8)


def test_actnorm_init_standardizes_the_batch(rng):
    batch = torch.as_tensor(rng.normal(loc=5.0, scale=2.0, size=(500, 3)))
    layer = actnorm_init(ActNorm(3), batch)
    z, _ = layer(batch)
    assert torch.all(torch.abs(z.mean(dim=0)) <= 1e-6)
    assert torch.all(torch.abs(z.std(dim=0, unbiased=False) - 1) <= 1e-4)


def test_actnorm_init_closed_form():
    # per-dim mean 5, population std 2
    batch = torch.tensor([[3.0], [7.0]], dtype=DTYPE)
    layer = actnorm_init(ActNorm(1), batch)
    assert float(torch.exp(layer.log_scale)) == pytest.approx(0.5)
    assert float(layer.bias) == pytest.approx(-2.5)


def test_actnorm_init_constant_batch_is_finite():
    layer = actnorm_init(ActNorm(2), torch.ones(10, 2, dtype=DTYPE))
    assert torch.all(torch.isfinite(layer.log_scale)) and torch.all(torch.isfinite(layer.bias))


def test_actnorm_init_needs_two_rows():
    with pytest.raises(EmptyBatch):
        actnorm_init(ActNorm(2), torch.ones(1, 2, dtype=DTYPE))


def test_identity_model():
    model = identity_flow(3)
    x = np.array([0.5, -1.0, 2.0])
    z, log_det = flow_forward(model, x)
    assert np.allclose(z, x, atol=1e-12)
    assert log_det == pytest.approx(0.0, abs=1e-9)
    assert np.allclose(flow_inverse(model, x), x, atol=1e-12)


def test_identity_model_log_density():
    assert flow_log_density(identity_flow(1), np.array([0.0])) == pytest.approx(-0.5 * math.log(2 * math.pi))
    assert flow_log_density(identity_flow(2), np.zeros(2)) == pytest.approx(-math.log(2 * math.pi))


def test_scale_two_actnorm():
    layer = ActNorm(1)
    with torch.no_grad():
        layer.log_scale.fill_(math.log(2.0))
    model = FlowModel(FlowNetwork(1, [layer]), SMALL)
    z, log_det = flow_forward(model, np.array([3.0]))
    assert z[0] == pytest.approx(6.0)
    assert log_det == pytest.approx(math.log(2.0))
    assert flow_inverse(model, np.array([6.0]))[0] == pytest.approx(3.0)


@pytest.mark.parametrize("dim", [2, 4, 8])
def test_random_models_invert(dim):
    for seed in range(100):
        model = random_flow(dim, seed)
        x = np.random.default_rng(seed).normal(scale=2.0, size=(32, dim))
        z, log_det = flow_forward(model, x)
        assert np.max(np.abs(flow_inverse(model, z) - x)) <= 1e-5
        with torch.no_grad():
            _, inverse_log_det = model.network.inverse(torch.as_tensor(z))
        assert np.allclose(log_det, -inverse_log_det.numpy(), atol=1e-6)


@pytest.mark.parametrize("dim", [2, 3, 6])
def test_log_det_matches_numerical_jacobian(dim):
    h = 1e-6
    for seed in range(10):
        model = random_flow(dim, seed)
        x = np.random.default_rng(seed).normal(size=dim)
        _, log_det = flow_forward(model, x)
        jacobian = np.empty((dim, dim))
        for j in range(dim):
            step = np.zeros(dim)
            step[j] = h
            jacobian[:, j] = (flow_forward(model, x + step)[0] - flow_forward(model, x - step)[0]) / (2 * h)
        _, numeric = np.linalg.slogdet(jacobian)
        assert abs(log_det - numeric) <= 1e-3 * max(1.0, abs(numeric))


def test_parameter_gradients_match_finite_differences():
    config = SMALL.model_copy(update={"blocks": 2})
    torch.manual_seed(0)
    network = build_flow_network(4, config)
    with torch.no_grad():
        for parameter in network.parameters():
            parameter.add_(0.1 * torch.randn_like(parameter))
    x = torch.randn(16, 4, generator=torch.Generator().manual_seed(1), dtype=DTYPE)

    for name, parameter in network.named_parameters():
        def nll(value, name=name):
            z, log_det = functional_call(network, {name: value}, (x,))
            log_prob = -0.5 * (network.dim * math.log(2 * math.pi) + torch.sum(z ** 2, dim=1)) + log_det
            return -log_prob.mean()

        value = parameter.detach().clone().requires_grad_(True)
        assert torch.autograd.gradcheck(nll, (value,), eps=1e-6, atol=1e-6, rtol=1e-4), name


def test_wrong_dimension():
    model = identity_flow(3)
    with pytest.raises(DimMismatch):
        flow_forward(model, np.zeros(2))
    with pytest.raises(DimMismatch):
        flow_log_density(model, np.zeros((4, 5)))


def test_training_needs_two_rows():
    with pytest.raises(EmptyData):
        train_flow(np.zeros((1, 2)), SMALL)


def test_zero_epochs_returns_initialized_model(rng):
    data = rng.normal(loc=3.0, scale=2.0, size=(64, 2))
    model = train_flow(data, SMALL, seed=4)
    assert model.loss_history == []
    z, _ = flow_forward(model, data)
    # actnorm of the first block standardizes the first batch only, so stay loose
    assert np.all(np.abs(z.mean(axis=0)) < 1.0)


def test_training_improves_held_out_density(rng):
    config = FlowConfig(blocks=2, hidden_width=16, hidden_layers=2, spline_bins=8, epochs=30, batch_size=64, step_size=5e-3)
    train = np.concatenate([rng.normal(size=(400, 2)) * [1.0, 0.3], rng.normal(size=(400, 2)) * [0.3, 1.0] + [2.0, 2.0]])
    held_out = np.concatenate([rng.normal(size=(200, 2)) * [1.0, 0.3], rng.normal(size=(200, 2)) * [0.3, 1.0] + [2.0, 2.0]])
    initial = train_flow(train, config.model_copy(update={"epochs": 0}), seed=0)
    trained = train_flow(train, config, seed=0)
    assert trained.score(held_out).mean() > initial.score(held_out).mean()
    assert len(trained.loss_history) == 30


def test_gaussian_data_reaches_the_entropy_bound(rng):
    config = FlowConfig(blocks=2, hidden_width=16, hidden_layers=2, spline_bins=8, epochs=40, batch_size=128, step_size=3e-3)
    data = rng.normal(size=(2000, 2))
    model = train_flow(data, config, seed=0)
    per_dim = model.score(rng.normal(size=(2000, 2))).mean() / 2
    assert abs(per_dim - (-0.5 * math.log(2 * math.pi * math.e))) <= 0.2


def test_trained_density_integrates_to_one(rng):
    config = FlowConfig(blocks=2, hidden_width=16, hidden_layers=2, spline_bins=8, epochs=15, batch_size=64, step_size=5e-3)
    data = np.concatenate([rng.normal(size=(300, 2)) + [-2.0, 0.0], rng.normal(size=(300, 2)) * 0.7 + [2.0, 1.0]])
    model = train_flow(data, config, seed=1)
    step = 0.04
    axis = np.arange(-20.0, 20.0 + step / 2, step)
    gx, gy = np.meshgrid(axis, axis)
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
    total = np.exp(model.score(grid)).sum() * step * step
    assert abs(total - 1.0) <= 5e-3


def test_training_is_deterministic(rng):
    config = FlowConfig(blocks=1, hidden_width=8, hidden_layers=2, epochs=3, batch_size=32)
    data = rng.normal(size=(100, 3))
    a = train_flow(data, config, seed=9)
    b = train_flow(data, config, seed=9)
    assert a.to_document().model_dump_json() == b.to_document().model_dump_json()


def test_document_round_trip(tmp_path):
    model = random_flow(3, seed=5)
    path = tmp_path / "flow.json"
    model.save(path)
    restored = FlowModel.from_document(FlowDocument.model_validate_json(path.read_text()))
    x = np.random.default_rng(0).normal(size=(10, 3))
    assert np.array_equal(restored.score(x), model.score(x))
    assert restored.to_document().model_dump_json() == path.read_text()


def test_samples_follow_the_inverse_map():
    model = random_flow(2, seed=3)
    samples = model.sample(50, seed=1)
    assert samples.shape == (50, 2)
    z, _ = flow_forward(model, samples)
    generator = torch.Generator().manual_seed(1)
    expected = torch.randn(50, 2, generator=generator, dtype=DTYPE).numpy()
    assert np.allclose(z, expected, atol=1e-6)
