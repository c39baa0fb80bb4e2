"""
Neural spline flow density estimator.

Each block is actnorm -> invertible linear mixing (P L U) -> rational-quadratic
spline coupling. The composed map sends data to a standard Gaussian prior and
is trained by maximum likelihood in float64.
"""
from typing import List, Optional, Tuple, Union
import logging
import math
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm
from core.exceptions import DimMismatch, EmptyBatch, EmptyData, NonFiniteValue, ModelLoadError
from estimators.base import DensityModel
from schemas.config import FlowConfig
from schemas.enums import EstimatorKind
from schemas.models import FlowDocument

logger = logging.getLogger(__name__)

DTYPE = torch.float64
MIN_BIN_WIDTH = 1e-3
MIN_BIN_HEIGHT = 1e-3
MIN_DERIVATIVE = 1e-3
MIN_STD = 1e-6
LOG_MIN_DIAG = math.log(1e-8)
# softplus(IDENTITY_DERIVATIVE) + MIN_DERIVATIVE == 1
IDENTITY_DERIVATIVE = math.log(math.expm1(1.0 - MIN_DERIVATIVE))
LOG_2PI = math.log(2.0 * math.pi)


def rq_spline_transform(
    inputs: torch.Tensor,
    unnormalized_widths: torch.Tensor,
    unnormalized_heights: torch.Tensor,
    unnormalized_derivatives: torch.Tensor,
    tail_bound: float,
    inverse: bool = False,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Monotone rational-quadratic spline on [-B, B] with identity tails.

    Args:
        inputs: (...,) values to transform
        unnormalized_widths: (..., K)
        unnormalized_heights: (..., K)
        unnormalized_derivatives: (..., K - 1) interior knot derivatives;
            the two boundary derivatives are fixed to 1 to match the tails
        tail_bound: B
        inverse: evaluate the inverse map (analytic quadratic root)

    Returns:
        (outputs, logabsdet) with logabsdet = log|dy/dx| of the direction evaluated
    """
    num_bins = unnormalized_widths.shape[-1]
    left, right = -tail_bound, tail_bound
    inside = (inputs >= left) & (inputs <= right)
    clamped = torch.clamp(inputs, left, right)

    widths = F.softmax(unnormalized_widths, dim=-1)
    widths = MIN_BIN_WIDTH + (1 - MIN_BIN_WIDTH * num_bins) * widths
    cumwidths = _knots(widths, left, right)
    widths = cumwidths[..., 1:] - cumwidths[..., :-1]

    heights = F.softmax(unnormalized_heights, dim=-1)
    heights = MIN_BIN_HEIGHT + (1 - MIN_BIN_HEIGHT * num_bins) * heights
    cumheights = _knots(heights, left, right)
    heights = cumheights[..., 1:] - cumheights[..., :-1]

    padded = F.pad(unnormalized_derivatives, pad=(1, 1), value=IDENTITY_DERIVATIVE)
    derivatives = MIN_DERIVATIVE + F.softplus(padded)

    locations = cumheights if inverse else cumwidths
    bin_idx = torch.sum(clamped[..., None] >= locations[..., 1:-1], dim=-1, keepdim=True)

    input_cumwidths = cumwidths.gather(-1, bin_idx)[..., 0]
    input_bin_widths = widths.gather(-1, bin_idx)[..., 0]
    input_cumheights = cumheights.gather(-1, bin_idx)[..., 0]
    input_heights = heights.gather(-1, bin_idx)[..., 0]
    delta = heights / widths
    input_delta = delta.gather(-1, bin_idx)[..., 0]
    input_derivatives = derivatives.gather(-1, bin_idx)[..., 0]
    input_derivatives_plus_one = derivatives[..., 1:].gather(-1, bin_idx)[..., 0]
    slope_sum = input_derivatives + input_derivatives_plus_one - 2 * input_delta

    if inverse:
        shifted = clamped - input_cumheights
        a = shifted * slope_sum + input_heights * (input_delta - input_derivatives)
        b = input_heights * input_derivatives - shifted * slope_sum
        c = -input_delta * shifted
        discriminant = torch.clamp(b.pow(2) - 4 * a * c, min=0.0)
        theta = (2 * c) / (-b - torch.sqrt(discriminant))
        spline_out = theta * input_bin_widths + input_cumwidths
    else:
        theta = (clamped - input_cumwidths) / input_bin_widths
        theta_one_minus_theta = theta * (1 - theta)
        numerator = input_heights * (input_delta * theta.pow(2) + input_derivatives * theta_one_minus_theta)
        denominator = input_delta + slope_sum * theta_one_minus_theta
        spline_out = input_cumheights + numerator / denominator

    theta_one_minus_theta = theta * (1 - theta)
    denominator = input_delta + slope_sum * theta_one_minus_theta
    derivative_numerator = input_delta.pow(2) * (
        input_derivatives_plus_one * theta.pow(2)
        + 2 * input_delta * theta_one_minus_theta
        + input_derivatives * (1 - theta).pow(2)
    )
    logabsdet = torch.log(derivative_numerator) - 2 * torch.log(denominator)
    if inverse:
        logabsdet = -logabsdet

    outputs = torch.where(inside, spline_out, inputs)
    logabsdet = torch.where(inside, logabsdet, torch.zeros_like(logabsdet))
    return outputs, logabsdet


def _knots(sizes: torch.Tensor, low: float, high: float) -> torch.Tensor:
    interior = torch.cumsum(sizes, dim=-1)[..., :-1]
    interior = (high - low) * interior + low
    knots = F.pad(interior, pad=(1, 0), value=low)
    return F.pad(knots, pad=(0, 1), value=high)


class ActNorm(nn.Module):
    """Per-dimension affine layer z = x * exp(log_scale) + bias."""

    def __init__(self, dim: int):
        super().__init__()
        self.log_scale = nn.Parameter(torch.zeros(dim, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(dim, dtype=DTYPE))
        self.initialized = False

    def forward(self, x):
        z = x * torch.exp(self.log_scale) + self.bias
        return z, self.log_scale.sum().expand(x.shape[0])

    def inverse(self, z):
        x = (z - self.bias) * torch.exp(-self.log_scale)
        return x, (-self.log_scale.sum()).expand(z.shape[0])


def actnorm_init(layer: ActNorm, batch) -> ActNorm:
    """
    Data-dependent initialization: afterwards the layer maps ``batch`` to
    per-dimension zero mean and unit (population) standard deviation.

    Raises:
        EmptyBatch: fewer than two rows
    """
    batch = torch.as_tensor(batch, dtype=DTYPE)
    if batch.ndim != 2 or batch.shape[0] < 2:
        raise EmptyBatch(f"actnorm initialization needs at least 2 rows, got shape {tuple(batch.shape)}")
    with torch.no_grad():
        mean = batch.mean(dim=0)
        std = torch.clamp(batch.std(dim=0, unbiased=False), min=MIN_STD)
        layer.log_scale.copy_(-torch.log(std))
        layer.bias.copy_(-mean / std)
    layer.initialized = True
    return layer


class InvertibleLinear(nn.Module):
    """Invertible linear mixing W = P L U; log|det W| = sum(log|diag U|)."""

    def __init__(self, dim: int, identity: bool = False):
        super().__init__()
        if identity:
            permutation = torch.eye(dim, dtype=DTYPE)
            lower = torch.eye(dim, dtype=DTYPE)
            upper = torch.eye(dim, dtype=DTYPE)
        else:
            q, _ = torch.linalg.qr(torch.randn(dim, dim, dtype=DTYPE))
            permutation, lower, upper = torch.linalg.lu(q)
        diag = torch.diagonal(upper)
        self.register_buffer("permutation", permutation)
        self.register_buffer("sign", torch.sign(diag))
        self.lower = nn.Parameter(torch.tril(lower, diagonal=-1))
        self.upper = nn.Parameter(torch.triu(upper, diagonal=1))
        self.log_abs_diag = nn.Parameter(torch.log(torch.abs(diag)))
        self.register_buffer("eye", torch.eye(dim, dtype=DTYPE), persistent=False)

    def _log_diag(self):
        return torch.clamp(self.log_abs_diag, min=LOG_MIN_DIAG)

    def _triangles(self):
        lower = torch.tril(self.lower, diagonal=-1) + self.eye
        upper = torch.triu(self.upper, diagonal=1) + torch.diag(self.sign * torch.exp(self._log_diag()))
        return lower, upper

    def weight(self) -> torch.Tensor:
        lower, upper = self._triangles()
        return self.permutation @ lower @ upper

    def forward(self, x):
        z = x @ self.weight().T
        return z, self._log_diag().sum().expand(x.shape[0])

    def inverse(self, z):
        lower, upper = self._triangles()
        y = self.permutation.T @ z.T
        y = torch.linalg.solve_triangular(lower, y, upper=False, unitriangular=True)
        x = torch.linalg.solve_triangular(upper, y, upper=True)
        return x.T, (-self._log_diag().sum()).expand(z.shape[0])


class Conditioner(nn.Module):
    """MLP with ``hidden_layers`` tanh hidden layers of equal width."""

    def __init__(self, nin: int, nout: int, hidden_width: int, hidden_layers: int):
        super().__init__()
        layers = [nn.Linear(nin, hidden_width, dtype=DTYPE), nn.Tanh()]
        for _ in range(hidden_layers - 1):
            layers += [nn.Linear(hidden_width, hidden_width, dtype=DTYPE), nn.Tanh()]
        layers += [nn.Linear(hidden_width, nout, dtype=DTYPE)]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class RQSplineCoupling(nn.Module):
    """
    First ceil(C/2) dims pass through and condition a spline on the last
    floor(C/2) dims. Initialized to the identity map.
    """

    def __init__(self, dim: int, hidden_width: int, hidden_layers: int, bins: int, tail_bound: float):
        super().__init__()
        self.split = (dim + 1) // 2
        self.transformed = dim - self.split
        self.bins = bins
        self.tail_bound = tail_bound
        self.conditioner = None
        if self.transformed > 0:
            self.conditioner = Conditioner(self.split, self.transformed * (3 * bins - 1), hidden_width, hidden_layers)
            last = self.conditioner.net[-1]
            with torch.no_grad():
                last.weight.zero_()
                bias = last.bias.view(self.transformed, 3 * bins - 1)
                bias.zero_()
                bias[:, 2 * bins:] = IDENTITY_DERIVATIVE

    def _spline(self, conditioning, target, inverse: bool):
        params = self.conditioner(conditioning).reshape(-1, self.transformed, 3 * self.bins - 1)
        widths = params[..., :self.bins]
        heights = params[..., self.bins:2 * self.bins]
        derivatives = params[..., 2 * self.bins:]
        out, logabsdet = rq_spline_transform(target, widths, heights, derivatives, self.tail_bound, inverse=inverse)
        return out, logabsdet.sum(dim=1)

    def forward(self, x):
        if self.conditioner is None:
            return x, x.new_zeros(x.shape[0])
        conditioning, target = x[:, :self.split], x[:, self.split:]
        out, log_det = self._spline(conditioning, target, inverse=False)
        return torch.cat([conditioning, out], dim=1), log_det

    def inverse(self, z):
        if self.conditioner is None:
            return z, z.new_zeros(z.shape[0])
        conditioning, target = z[:, :self.split], z[:, self.split:]
        out, log_det = self._spline(conditioning, target, inverse=True)
        return torch.cat([conditioning, out], dim=1), log_det


class FlowNetwork(nn.Module):
    """A sequence of invertible layers followed by a standard Gaussian prior."""

    def __init__(self, dim: int, layers: List[nn.Module]):
        super().__init__()
        self.dim = dim
        self.layers = nn.ModuleList(layers)

    def forward(self, x):
        log_det = x.new_zeros(x.shape[0])
        for layer in self.layers:
            x, ld = layer(x)
            log_det = log_det + ld
        return x, log_det

    def inverse(self, z):
        log_det = z.new_zeros(z.shape[0])
        for layer in reversed(self.layers):
            z, ld = layer.inverse(z)
            log_det = log_det + ld
        return z, log_det

    def log_prob(self, x):
        z, log_det = self.forward(x)
        return -0.5 * (self.dim * LOG_2PI + torch.sum(z ** 2, dim=1)) + log_det

    def initialize_actnorms(self, batch: torch.Tensor) -> None:
        """Initialize every actnorm layer on the batch as it arrives at that layer."""
        with torch.no_grad():
            h = batch
            for layer in self.layers:
                if isinstance(layer, ActNorm):
                    actnorm_init(layer, h)
                h, _ = layer(h)


def build_flow_network(dim: int, config: FlowConfig, identity: bool = False) -> FlowNetwork:
    """Blocks of (actnorm, invertible linear, spline coupling); draws from torch's global RNG."""
    layers: List[nn.Module] = []
    for _ in range(config.blocks):
        layers.append(ActNorm(dim))
        layers.append(InvertibleLinear(dim, identity=identity))
        layers.append(RQSplineCoupling(dim, config.hidden_width, config.hidden_layers, config.spline_bins, config.tail_bound))
    return FlowNetwork(dim, layers)


class FlowModel(DensityModel):
    kind = EstimatorKind.FLOW

    def __init__(
        self,
        network: FlowNetwork,
        config: FlowConfig,
        normalized: bool = False,
        loss_history: Optional[List[float]] = None,
    ):
        self.network = network
        self.config = config
        self._normalized = normalized
        self.loss_history = list(loss_history or [])
        self.network.eval()
        for parameter in self.network.parameters():
            parameter.requires_grad_(False)

    @property
    def dim(self) -> int:
        return self.network.dim

    @property
    def normalized(self) -> bool:
        return self._normalized

    def score_batch(self, features: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            x = torch.as_tensor(features, dtype=DTYPE)
            return self.network.log_prob(x).numpy()

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        """Draw n samples by pushing prior noise through the inverse map."""
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            z = torch.randn(n, self.dim, generator=generator, dtype=DTYPE)
            x, _ = self.network.inverse(z)
        return x.numpy()

    def to_document(self) -> FlowDocument:
        return FlowDocument(
            dim=self.dim,
            normalized=self.normalized,
            blocks=self.config.blocks,
            hidden_width=self.config.hidden_width,
            hidden_layers=self.config.hidden_layers,
            spline_bins=self.config.spline_bins,
            tail_bound=self.config.tail_bound,
            state={name: tensor.tolist() for name, tensor in self.network.state_dict().items()},
            loss_history=self.loss_history,
        )

    @classmethod
    def from_document(cls, document: FlowDocument) -> "FlowModel":
        config = FlowConfig(
            blocks=document.blocks,
            hidden_width=document.hidden_width,
            hidden_layers=document.hidden_layers,
            spline_bins=document.spline_bins,
            tail_bound=document.tail_bound,
            normalize=document.normalized,
        )
        network = build_flow_network(document.dim, config, identity=True)
        try:
            state = {name: torch.tensor(value, dtype=DTYPE) for name, value in document.state.items()}
            network.load_state_dict(state)
        except (RuntimeError, TypeError, ValueError) as e:
            raise ModelLoadError(f"Flow document does not match its declared architecture: {str(e)}")
        return cls(network, config, normalized=document.normalized, loss_history=document.loss_history)


def _as_batch(model: FlowModel, values) -> Tuple[torch.Tensor, bool]:
    array = np.asarray(values, dtype=np.float64)
    single = array.ndim == 1
    if single:
        array = array[None, :]
    if array.ndim != 2 or array.shape[1] != model.dim:
        raise DimMismatch(f"Flow expects {model.dim}-d inputs, got shape {np.shape(values)}")
    return torch.from_numpy(array), single


def flow_forward(model: FlowModel, x) -> Tuple[np.ndarray, Union[float, np.ndarray]]:
    """Map data to latent space; returns (z, log|det dz/dx|)."""
    batch, single = _as_batch(model, x)
    with torch.no_grad():
        z, log_det = model.network(batch)
    z, log_det = z.numpy(), log_det.numpy()
    return (z[0], float(log_det[0])) if single else (z, log_det)


def flow_inverse(model: FlowModel, z) -> np.ndarray:
    batch, single = _as_batch(model, z)
    with torch.no_grad():
        x, _ = model.network.inverse(batch)
    x = x.numpy()
    return x[0] if single else x


def flow_log_density(model: FlowModel, x) -> Union[float, np.ndarray]:
    batch, single = _as_batch(model, x)
    scores = model.score_batch(batch.numpy())
    return float(scores[0]) if single else scores


def train_flow(
    data: np.ndarray,
    config: FlowConfig,
    seed: int = 0,
    normalized: bool = False,
) -> FlowModel:
    """
    Fit a flow by mini-batch maximum likelihood with Adam.

    Actnorm layers are initialized on the first (shuffled) batch before any
    gradient step, so ``epochs=0`` returns the initialized model.

    Raises:
        EmptyData: fewer than two rows
        NonFiniteValue: the training loss stopped being finite
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise EmptyData(f"Flow training needs at least 2 rows, got shape {data.shape}")
    n, dim = data.shape
    x = torch.from_numpy(data)
    history: List[float] = []

    with torch.random.fork_rng():
        torch.manual_seed(seed)
        network = build_flow_network(dim, config)
        generator = torch.Generator().manual_seed(seed)
        first = x[torch.randperm(n, generator=generator)[:max(config.batch_size, 2)]]
        network.initialize_actnorms(first)

        optimizer = torch.optim.Adam(network.parameters(), lr=config.step_size, betas=(0.9, 0.999))
        progress = tqdm(
            range(config.epochs),
            desc=f"Flow training (C={dim})",
            leave=False,
            disable=not logger.isEnabledFor(logging.INFO),
        )
        for epoch in progress:
            order = torch.randperm(n, generator=generator)
            total, seen = 0.0, 0
            for start in range(0, n, config.batch_size):
                batch = x[order[start:start + config.batch_size]]
                loss = -network.log_prob(batch).mean()
                if not torch.isfinite(loss):
                    raise NonFiniteValue(f"Flow training loss became non-finite in epoch {epoch}")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total += float(loss) * batch.shape[0]
                seen += batch.shape[0]
            history.append(total / seen)
            progress.set_postfix(nll=f"{history[-1]:.4f}")

    if history:
        logger.info(f"Flow training finished: {config.epochs} epochs, C={dim}, N={n}, final NLL {history[-1]:.4f}")
    else:
        logger.info(f"Flow initialized without training: C={dim}, N={n}")
    return FlowModel(network, config, normalized=normalized, loss_history=history)
