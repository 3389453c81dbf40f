"""
Loss terms for learning a Metric-Phase Field from unoriented points.

Every term consumes already evaluated jets (see ``src.field.FieldJet``).
The zero-level term is a sum over the surface batch; all others are batch
means. Empty inputs give 0.
"""

from collections import OrderedDict
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, Optional, Tuple

import torch

from src.errors import MissingNormalsError, NonFiniteLossError

if TYPE_CHECKING:
    from src.field import FieldJet

TERMS = ("zero", "align", "eik_r", "eik_phi", "lap", "phase", "far", "normal")


@dataclass
class LossWeights:
    """Per-term weights plus the constants the terms use."""

    zero: float = 1.0
    align: float = 0.7
    eik_r: float = 0.007
    eik_phi: float = 0.007
    lap: float = 0.0004
    phase: float = 0.002
    far: float = 0.1
    normal: float = 0.15
    alpha_far: float = 100.0
    alpha_align: float = 100.0
    eps: float = 1e-8
    align_start_iter: int = 3000

    def term_weights(self) -> Dict[str, float]:
        return OrderedDict((t, float(getattr(self, t))) for t in TERMS)

    def validate(self):
        for term, value in self.term_weights().items():
            if value < 0:
                raise ValueError(f"weight '{term}' must be >= 0, got {value}")
        if self.alpha_far <= 0 or self.alpha_align <= 0 or self.eps <= 0:
            raise ValueError("alpha_far, alpha_align and eps must be > 0")


@dataclass
class BatchJets:
    """Jets of one optimization step, grouped by sample set."""

    surface: "FieldJet"
    near: "FieldJet"
    far: "FieldJet"
    ambient: Optional["FieldJet"] = None
    surface_normals: Optional[torch.Tensor] = None


def _mean(values: torch.Tensor) -> torch.Tensor:
    if values.numel() == 0:
        return torch.zeros((), dtype=torch.float64)
    return values.mean()


def _unit(vectors: torch.Tensor, eps: float) -> torch.Tensor:
    return vectors / (vectors.norm(dim=-1, keepdim=True) + eps)


def loss_zero(surface: "FieldJet") -> torch.Tensor:
    """Sum of r + |phi| over surface samples."""
    if len(surface) == 0:
        return torch.zeros((), dtype=torch.float64)
    return (surface.r + surface.phi.abs()).sum()


def loss_align(near: "FieldJet", alpha: float = 100.0,
               eps: float = 1e-8) -> torch.Tensor:
    """Mean of exp(-alpha r) * (1 - |unit(grad r) . unit(grad theta)|)."""
    cos = (_unit(near.grad_r, eps) * _unit(near.grad_theta, eps)).sum(-1)
    return _mean(torch.exp(-alpha * near.r) * (1.0 - cos.abs()))


def near_band_mask(near: "FieldJet", delta: float) -> torch.Tensor:
    """Points whose predicted metric lies strictly inside (0, delta)."""
    return (near.r > 0) & (near.r < delta)


def loss_eikonal_r(near: "FieldJet", delta: float) -> torch.Tensor:
    """
    Mean | |grad r| - 1 | over near samples with 0 < r < delta.

    Points outside the band are dropped; an empty band gives 0.
    """
    mask = near_band_mask(near, delta)
    return _mean((near.grad_r[mask].norm(dim=-1) - 1.0).abs())


def loss_eikonal_phi(surface: "FieldJet") -> torch.Tensor:
    """Unit-gradient deviation of both phi and theta on surface samples."""
    return _mean((surface.grad_phi.norm(dim=-1) - 1.0).abs()) + \
        _mean((surface.grad_theta.norm(dim=-1) - 1.0).abs())


def loss_laplacian(ambient: Optional["FieldJet"]) -> torch.Tensor:
    """Mean |Laplacian of phi| over ambient samples."""
    if ambient is None or ambient.lap_phi is None:
        return torch.zeros((), dtype=torch.float64)
    return _mean(ambient.lap_phi.abs())


def loss_phase_saturation(far: "FieldJet") -> torch.Tensor:
    """Mean (1 - |P|)^2 over far-field samples."""
    return _mean((1.0 - far.P.abs()) ** 2)


def loss_far_field(far: "FieldJet", alpha: float = 100.0) -> torch.Tensor:
    """Mean exp(-alpha (r + |phi|)) over far-field samples."""
    return _mean(torch.exp(-alpha * (far.r + far.phi.abs())))


def loss_normal(surface: "FieldJet", normals: Optional[torch.Tensor],
                eps: float = 1e-8) -> torch.Tensor:
    """
    Mean 1 - |unit(grad phi) . n| over surface samples.

    Samples whose normal is the zero vector carry no orientation and are
    left out of the mean.

    Raises:
        MissingNormalsError: When normals is None
    """
    if normals is None:
        raise MissingNormalsError(
            "normal alignment is enabled but no surface normals were given"
        )
    normals = torch.as_tensor(normals, dtype=torch.float64)
    known = normals.abs().sum(-1) > 0
    cos = (_unit(surface.grad_phi[known], eps) * normals[known]).sum(-1)
    return _mean(1.0 - cos.abs())


@dataclass
class LossBreakdown:
    """Raw terms, the weights applied to them and the weighted total."""

    raw: Dict[str, torch.Tensor]
    weights: Dict[str, float]
    total: torch.Tensor
    empty: Tuple[str, ...] = ()

    def weighted(self, term: str) -> torch.Tensor:
        w = self.weights[term]
        if w == 0.0:
            return torch.zeros((), dtype=torch.float64)
        return w * self.raw[term]

    def weighted_terms(self) -> Dict[str, torch.Tensor]:
        return OrderedDict(
            (t, self.weighted(t)) for t in TERMS if self.weights[t] != 0.0
        )

    def as_row(self, iteration: int) -> dict:
        """Flat record for the training log."""
        row = {"iteration": iteration}
        for t in TERMS:
            row[f"raw_{t}"] = float(self.raw[t].detach())
        for t in TERMS:
            row[f"weighted_{t}"] = float(self.weighted(t).detach())
        row["total"] = float(self.total.detach())
        return row


def applied_weights(weights: LossWeights, iteration: int) -> Dict[str, float]:
    """Term weights at an iteration; alignment is gated off early on."""
    applied = weights.term_weights()
    if iteration < weights.align_start_iter:
        applied["align"] = 0.0
    return applied


def combine_terms(raw: Dict[str, torch.Tensor], weights: LossWeights,
                  iteration: int, empty: Tuple[str, ...] = ()
                  ) -> LossBreakdown:
    """
    Weight and sum raw terms in the fixed TERMS order.

    Raises:
        NonFiniteLossError: Naming the first non-finite raw term
    """
    for t in TERMS:
        if not torch.isfinite(raw[t]).all():
            raise NonFiniteLossError(t, float(raw[t].detach()))
    applied = applied_weights(weights, iteration)
    total = torch.zeros((), dtype=torch.float64)
    for t in TERMS:
        if applied[t] != 0.0:
            total = total + applied[t] * raw[t]
    return LossBreakdown(raw=OrderedDict((t, raw[t]) for t in TERMS),
                         weights=applied, total=total, empty=tuple(empty))


def total_loss(jets: BatchJets, weights: LossWeights, iteration: int,
               delta: float) -> LossBreakdown:
    """
    Evaluate every term and the weighted total.

    Args:
        jets: Jets of the surface, near, far and ambient sets
        weights: Loss weights and constants
        iteration: Current iteration (>= 0)
        delta: Near-band half-width

    Returns:
        LossBreakdown
    """
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    empty = []
    if len(jets.surface) == 0:
        empty.append("zero")
    if not bool(near_band_mask(jets.near, delta).any()):
        empty.append("eik_r")
    if jets.ambient is None or len(jets.ambient) == 0:
        empty.append("lap")

    if weights.normal > 0 or jets.surface_normals is not None:
        normal = loss_normal(jets.surface, jets.surface_normals, weights.eps)
    else:
        normal = torch.zeros((), dtype=torch.float64)

    raw = {
        "zero": loss_zero(jets.surface),
        "align": loss_align(jets.near, weights.alpha_align, weights.eps),
        "eik_r": loss_eikonal_r(jets.near, delta),
        "eik_phi": loss_eikonal_phi(jets.surface),
        "lap": loss_laplacian(jets.ambient),
        "phase": loss_phase_saturation(jets.far),
        "far": loss_far_field(jets.far, weights.alpha_far),
        "normal": normal,
    }
    return combine_terms(raw, weights, iteration, tuple(empty))
