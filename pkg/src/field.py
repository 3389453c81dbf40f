"""
The learnable Metric-Phase Field.

A sinusoidal backbone feeds two heads: a metric head whose sharp softplus
output r is non-negative, and a phase head with unbounded output theta.
They compose into the signed field phi = r * tanh(beta * theta) + theta.
Spatial derivatives come from torch autograd in float64.
"""

import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import torch
from torch import nn

from src.errors import CheckpointError, NonFiniteGradientError
from src.losses import BatchJets, LossBreakdown, LossWeights, total_loss
from src.spatial import SampleBatch

logger = logging.getLogger(__name__)

DTYPE = torch.float64
BETA_FLOOR = 1e-3
WATERTIGHT_PHASE_BIAS = -0.1
COMPOSITIONS = ("gated", "indicator")

Gradients = Dict[str, torch.Tensor]


@dataclass
class FieldConfig:
    """Architecture and initialization of the field."""

    hidden: int = 256
    omega0: float = 30.0
    beta_init: float = 50.0
    phase_bias_init: Optional[float] = None
    watertight_prior: bool = False
    softplus_slope: float = 100.0
    composition: str = "gated"

    def resolved_phase_bias(self) -> float:
        if self.phase_bias_init is not None:
            return float(self.phase_bias_init)
        return WATERTIGHT_PHASE_BIAS if self.watertight_prior else 0.0


def _as_tensor(value) -> torch.Tensor:
    return torch.as_tensor(value, dtype=DTYPE)


def sharp_softplus(z: torch.Tensor, slope: float) -> torch.Tensor:
    """softplus(slope * z) / slope without overflow for large |z|."""
    return torch.relu(z) + torch.log1p(torch.exp(-slope * z.abs())) / slope


def sech2(t: torch.Tensor) -> torch.Tensor:
    return 1.0 / torch.cosh(t) ** 2


def compose(r, theta, beta, composition: str = "gated"):
    """
    Combine metric and phase into the phase indicator and the signed field.

    Args:
        r: Metric value(s), >= 0
        theta: Phase value(s)
        beta: Phase sharpness, > 0
        composition: 'gated' (phi = r * P + theta) or 'indicator' (phi = P)

    Returns:
        Tuple of (P, phi) tensors
    """
    r, theta, beta = _as_tensor(r), _as_tensor(theta), _as_tensor(beta)
    indicator = torch.tanh(beta * theta)
    if composition == "indicator":
        return indicator, indicator
    return indicator, r * indicator + theta


def dphi_dtheta(r, theta, beta) -> torch.Tensor:
    """
    Partial derivative of the gated composite with respect to theta.

    Equals 1 + r * beta * sech^2(beta * theta), so it never drops below 1.
    """
    r, theta, beta = _as_tensor(r), _as_tensor(theta), _as_tensor(beta)
    return 1.0 + r * beta * sech2(beta * theta)


def compose_gradient(r, theta, beta, grad_r, grad_theta,
                     composition: str = "gated") -> torch.Tensor:
    """Chain rule for grad(phi) from grad(r) and grad(theta)."""
    if composition == "indicator":
        return (beta * sech2(beta * theta))[..., None] * grad_theta
    indicator = torch.tanh(beta * theta)
    return indicator[..., None] * grad_r + \
        dphi_dtheta(r, theta, beta)[..., None] * grad_theta


@dataclass
class FieldJet:
    """Values and spatial derivatives of the field at a batch of points."""

    r: torch.Tensor
    theta: torch.Tensor
    P: torch.Tensor
    phi: torch.Tensor
    grad_r: Optional[torch.Tensor] = None
    grad_theta: Optional[torch.Tensor] = None
    grad_phi: Optional[torch.Tensor] = None
    lap_phi: Optional[torch.Tensor] = None

    def __len__(self) -> int:
        return int(self.r.shape[0])

    def detach(self) -> "FieldJet":
        return FieldJet(**{
            k: (v.detach() if v is not None else None)
            for k, v in self.__dict__.items()
        })


class SineLayer(nn.Module):
    """Affine map followed by sin(omega0 * .)."""

    def __init__(self, in_features: int, out_features: int,
                 is_first: bool = False, omega0: float = 30.0):
        super().__init__()
        self.omega0 = omega0
        self.is_first = is_first
        self.in_features = in_features
        self.linear = nn.Linear(in_features, out_features, dtype=DTYPE)

    def init_weights(self, generator: torch.Generator):
        with torch.no_grad():
            if self.is_first:
                bound = 1.0 / self.in_features
            else:
                bound = np.sqrt(6.0 / self.in_features) / self.omega0
            self.linear.weight.uniform_(-bound, bound, generator=generator)
            b = 1.0 / np.sqrt(self.in_features)
            self.linear.bias.uniform_(-b, b, generator=generator)

    def forward(self, x):
        return torch.sin(self.omega0 * self.linear(x))


def _init_output(layer: nn.Linear, omega0: float, generator: torch.Generator):
    with torch.no_grad():
        bound = np.sqrt(6.0 / layer.in_features) / omega0
        layer.weight.uniform_(-bound, bound, generator=generator)
        b = 1.0 / np.sqrt(layer.in_features)
        layer.bias.uniform_(-b, b, generator=generator)


class MetricPhaseField(nn.Module):
    """Shared sine backbone with metric and phase heads plus learnable beta."""

    def __init__(self, config: FieldConfig,
                 generator: Optional[torch.Generator] = None):
        super().__init__()
        if config.composition not in COMPOSITIONS:
            raise ValueError(
                f"Unknown composition '{config.composition}' "
                f"(expected one of {COMPOSITIONS})"
            )
        self.config = config
        h, w0 = config.hidden, config.omega0
        self.backbone = nn.Sequential(
            SineLayer(3, h, is_first=True, omega0=w0),
            SineLayer(h, h, omega0=w0),
        )
        self.metric_head = nn.Sequential(
            SineLayer(h, h, omega0=w0), nn.Linear(h, 1, dtype=DTYPE)
        )
        self.phase_head = nn.Sequential(
            SineLayer(h, h, omega0=w0), nn.Linear(h, 1, dtype=DTYPE)
        )
        self.beta = nn.Parameter(torch.tensor(config.beta_init, dtype=DTYPE))
        self.reset_parameters(generator or torch.Generator().manual_seed(0))

    def reset_parameters(self, generator: torch.Generator):
        w0 = self.config.omega0
        for module in self.modules():
            if isinstance(module, SineLayer):
                module.init_weights(generator)
        _init_output(self.metric_head[1], w0, generator)
        _init_output(self.phase_head[1], w0, generator)
        with torch.no_grad():
            self.phase_head[1].bias.fill_(self.config.resolved_phase_bias())
            self.beta.fill_(self.config.beta_init)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        features = self.backbone(x)
        z = self.metric_head(features)[..., 0]
        r = sharp_softplus(z, self.config.softplus_slope)
        theta = self.phase_head(features)[..., 0]
        return r, theta

    def jet(self, x, create_graph: bool = False, gradients: bool = True,
            laplacian: bool = False) -> FieldJet:
        """
        Evaluate values and spatial derivatives at a batch of points.

        Args:
            x: (N, 3) query points
            create_graph: Keep the graph so parameter gradients can flow
                through the derivatives
            gradients: Compute grad_r, grad_theta and grad_phi
            laplacian: Also compute the Laplacian of phi

        Returns:
            FieldJet
        """
        x = _as_tensor(x).reshape(-1, 3).detach().requires_grad_(True)
        composition = self.config.composition
        with torch.enable_grad():
            r, theta = self(x)
            P, phi = compose(r, theta, self.beta, composition)
            jet = FieldJet(r=r, theta=theta, P=P, phi=phi)
            if gradients or laplacian:
                keep = create_graph or laplacian
                jet.grad_r, = torch.autograd.grad(
                    r.sum(), x, create_graph=keep, retain_graph=True
                )
                jet.grad_theta, = torch.autograd.grad(
                    theta.sum(), x, create_graph=keep, retain_graph=True
                )
                jet.grad_phi = compose_gradient(
                    r, theta, self.beta, jet.grad_r, jet.grad_theta,
                    composition
                )
            if laplacian:
                lap = torch.zeros_like(phi)
                for i in range(3):
                    second, = torch.autograd.grad(
                        jet.grad_phi[:, i].sum(), x,
                        create_graph=create_graph, retain_graph=True
                    )
                    lap = lap + second[:, i]
                jet.lap_phi = lap
        return jet if create_graph else jet.detach()

    def values(self, x, which: str = "phi", chunk: int = 65536) -> np.ndarray:
        """
        Field values without derivatives, evaluated in chunks.

        Args:
            x: (N, 3) query points
            which: 'phi', 'r' or 'theta'
            chunk: Points per forward pass

        Returns:
            (N,) numpy array
        """
        if which not in ("phi", "r", "theta"):
            raise ValueError(f"Unknown field '{which}'")
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        out = np.empty(len(x))
        with torch.no_grad():
            for start in range(0, len(x), chunk):
                block = torch.from_numpy(x[start:start + chunk])
                r, theta = self(block)
                if which == "r":
                    vals = r
                elif which == "theta":
                    vals = theta
                else:
                    vals = compose(r, theta, self.beta,
                                   self.config.composition)[1]
                out[start:start + chunk] = vals.numpy()
        return out

    def clamp_beta(self):
        with torch.no_grad():
            self.beta.clamp_(min=BETA_FLOOR)

    def architecture(self) -> dict:
        return asdict(self.config)


def init_params(seed: int, config: Optional[FieldConfig] = None
                ) -> MetricPhaseField:
    """
    Create a freshly initialized field.

    Args:
        seed: Seed of the initialization generator
        config: Architecture and initialization options

    Returns:
        MetricPhaseField; identical seeds give bit-identical parameters
    """
    generator = torch.Generator().manual_seed(int(seed))
    return MetricPhaseField(config or FieldConfig(), generator)


def evaluate_jet(field: MetricPhaseField, x, laplacian: bool = True
                 ) -> FieldJet:
    """Detached jet of the field at x (a single 3-vector or a batch)."""
    return field.jet(x, create_graph=False, gradients=True,
                     laplacian=laplacian)


def evaluate_batch_jets(field: MetricPhaseField, batch: SampleBatch,
                        create_graph: bool = True) -> BatchJets:
    """
    Evaluate the jets each loss term needs for one SampleBatch.

    Surface and near-band points get first derivatives, ambient points
    the Laplacian, far-field points values only.
    """
    return BatchJets(
        surface=field.jet(batch.surface, create_graph=create_graph),
        near=field.jet(batch.near, create_graph=create_graph),
        far=field.jet(batch.far, create_graph=create_graph, gradients=False),
        ambient=field.jet(batch.ambient, create_graph=create_graph,
                          laplacian=True),
        surface_normals=None if batch.surface_normals is None
        else _as_tensor(batch.surface_normals),
    )


def _first_non_finite(grads: Gradients) -> Optional[str]:
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            return name
    return None


def _blame_term(breakdown: LossBreakdown, params, fallback: str
                ) -> Tuple[str, str]:
    names = list(params.keys())
    for term, weighted in breakdown.weighted_terms().items():
        if not weighted.requires_grad:
            continue
        grads = torch.autograd.grad(
            weighted, list(params.values()), retain_graph=True,
            allow_unused=True
        )
        for name, g in zip(names, grads):
            if g is not None and not torch.isfinite(g).all():
                return term, name
    return "total", fallback


def loss_param_gradients(field: MetricPhaseField, batch: SampleBatch,
                         weights: LossWeights, iteration: int
                         ) -> Tuple[LossBreakdown, Gradients]:
    """
    Total loss of one batch and its gradient for every parameter and beta.

    Args:
        field: Field to differentiate
        batch: Query points of this step
        weights: Loss weights
        iteration: Current iteration (drives the alignment schedule)

    Returns:
        Tuple of (LossBreakdown, ordered dict parameter name -> gradient)

    Raises:
        NonFiniteLossError: When a loss term is NaN or Inf
        NonFiniteGradientError: Naming the loss term that produced it
    """
    jets = evaluate_batch_jets(field, batch, create_graph=True)
    breakdown = total_loss(jets, weights, iteration, batch.delta)
    params = OrderedDict(field.named_parameters())

    if breakdown.total.requires_grad:
        raw = torch.autograd.grad(
            breakdown.total, list(params.values()), retain_graph=True,
            allow_unused=True
        )
    else:
        raw = [None] * len(params)
    grads: Gradients = OrderedDict(
        (name, g.detach() if g is not None else torch.zeros_like(p))
        for (name, p), g in zip(params.items(), raw)
    )

    bad = _first_non_finite(grads)
    if bad is not None:
        term, name = _blame_term(breakdown, params, bad)
        raise NonFiniteGradientError(term, name)
    return breakdown, grads


def field_state(field: MetricPhaseField) -> dict:
    """Flat, versioned record of the architecture and all parameters."""
    return {
        "architecture": field.architecture(),
        "params": OrderedDict(
            (name, p.detach().numpy().copy())
            for name, p in field.named_parameters()
        ),
    }


def field_from_state(state: dict) -> MetricPhaseField:
    """
    Rebuild a field from field_state output.

    Raises:
        CheckpointError: On missing or mis-shaped parameters
    """
    try:
        config = FieldConfig(**state["architecture"])
        params = state["params"]
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed field record: {exc}") from None
    field = MetricPhaseField(config)
    expected = OrderedDict(field.named_parameters())
    if set(params) != set(expected):
        raise CheckpointError(
            f"parameter names differ from the architecture: "
            f"{sorted(set(params) ^ set(expected))}"
        )
    with torch.no_grad():
        for name, p in expected.items():
            value = np.asarray(params[name])
            if tuple(value.shape) != tuple(p.shape):
                raise CheckpointError(
                    f"dimension mismatch for '{name}': checkpoint "
                    f"{tuple(value.shape)} vs architecture {tuple(p.shape)}"
                )
            p.copy_(torch.from_numpy(value.astype(np.float64)))
    return field
