"""
Finite-difference self-check of the field's derivatives.

Three suites compare autograd against fourth-order central differences:
spatial gradients of r, theta and phi, the Laplacian of phi against a
fourth-order second-difference stencil of values along each axis, and the
gradient of the full loss for every parameter.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, List, Optional

import numpy as np
import torch

from src.field import (
    FieldConfig,
    MetricPhaseField,
    evaluate_batch_jets,
    evaluate_jet,
    init_params,
    loss_param_gradients,
)
from src.losses import LossWeights, total_loss
from src.spatial import SampleBatch
from src.trainer import make_rng

logger = logging.getLogger(__name__)

SPATIAL_STEP = 1e-4
LAPLACIAN_STEP = 1e-4
PARAM_STEP = 1e-6

SPATIAL_TOLERANCE = 1e-4
LAPLACIAN_TOLERANCE = 1e-3
PARAM_TOLERANCE = 1e-3

SPATIAL_FLOOR = 1e-6
LAPLACIAN_FLOOR = 1e-6
PARAM_FLOOR = 1e-6

# Band half-width of the check batch; wide enough that every near point
# counts for the metric Eikonal term.
CHECK_DELTA = 10.0


def central_difference(f: Callable[[float], float], h: float):
    """Fourth-order central difference of f at 0 (scalar or array valued)."""
    return (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h)


def second_difference(f: Callable[[float], float], h: float):
    """Fourth-order central second difference of f at 0."""
    return (-f(2 * h) + 16 * f(h) - 30 * f(0.0) + 16 * f(-h) - f(-2 * h)) \
        / (12 * h * h)


@dataclass
class SuiteResult:
    name: str
    worst_error: float
    worst_at: str
    tolerance: float
    checked: int

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.worst_error)) and \
            self.worst_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{self.name:<10} worst rel err {self.worst_error:.3e} at "
            f"{self.worst_at} (tol {self.tolerance:.0e}, "
            f"{self.checked} checked) {status}"
        )


@dataclass
class GradCheckReport:
    seed: int
    suites: List[SuiteResult] = dataclass_field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)

    def worst(self) -> SuiteResult:
        """Failing suite with the largest error relative to its tolerance."""
        return max(self.suites, key=lambda s: s.worst_error / s.tolerance)

    def text(self) -> str:
        lines = [f"gradient check (seed {self.seed})"]
        lines.extend(s.line() for s in self.suites)
        lines.append("result: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def _random_points(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.uniform(-0.9, 0.9, size=(n, 3))


def check_spatial(field: MetricPhaseField, points: np.ndarray,
                  h: float = SPATIAL_STEP) -> SuiteResult:
    """grad r, grad theta and grad phi against central differences."""
    jet = evaluate_jet(field, points, laplacian=False)
    analytic = {
        "r": jet.grad_r.numpy(),
        "theta": jet.grad_theta.numpy(),
        "phi": jet.grad_phi.numpy(),
    }
    worst, where = 0.0, "-"
    for which, grad in analytic.items():
        fd = np.empty_like(grad)
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = 1.0

            def f(t, step=step, which=which):
                return field.values(points + t * step, which=which)

            fd[:, axis] = central_difference(f, h)
        err = np.linalg.norm(grad - fd, axis=1) / np.maximum(
            np.linalg.norm(fd, axis=1), SPATIAL_FLOOR
        )
        i = int(np.argmax(err))
        if err[i] > worst or where == "-":
            worst, where = float(err[i]), f"grad_{which}[{i}]"
    return SuiteResult("spatial", worst, where, SPATIAL_TOLERANCE,
                       3 * len(points))


def check_laplacian(field: MetricPhaseField, points: np.ndarray,
                    h: float = LAPLACIAN_STEP) -> SuiteResult:
    """Laplacian of phi against per-axis second differences of phi."""
    analytic = evaluate_jet(field, points, laplacian=True).lap_phi.numpy()
    fd = np.zeros(len(points))
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = 1.0

        def f(t, step=step):
            return field.values(points + t * step)

        fd += second_difference(f, h)
    err = np.abs(analytic - fd) / np.maximum(np.abs(fd), LAPLACIAN_FLOOR)
    i = int(np.argmax(err))
    return SuiteResult("laplacian", float(err[i]), f"lap_phi[{i}]",
                       LAPLACIAN_TOLERANCE, len(points))


def check_batch(rng: np.random.Generator, n: int) -> SampleBatch:
    """Random batch that activates every loss term."""
    normals = rng.normal(size=(n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return SampleBatch(
        surface=_random_points(rng, n),
        near=_random_points(rng, n),
        far=_random_points(rng, n),
        ambient=_random_points(rng, n),
        delta=CHECK_DELTA,
        surface_normals=normals,
    )


def check_parameters(field: MetricPhaseField, batch: SampleBatch,
                     weights: LossWeights, h: float = PARAM_STEP,
                     max_entries: Optional[int] = None,
                     corrupt: Optional[str] = None) -> SuiteResult:
    """
    Loss gradient of every parameter entry against central differences.

    Args:
        field: Field under test
        batch: Query points
        weights: Loss weights; evaluated past the alignment warm-up
        h: Parameter step
        max_entries: Check at most this many leading entries per tensor
        corrupt: Parameter whose analytic gradient is offset by 1 (fault
            injection for testing the checker itself)
    """
    iteration = weights.align_start_iter
    _, grads = loss_param_gradients(field, batch, weights, iteration)
    if corrupt is not None:
        if corrupt not in grads:
            raise ValueError(f"unknown parameter '{corrupt}'")
        grads[corrupt] = grads[corrupt] + 1.0

    def loss_value() -> float:
        jets = evaluate_batch_jets(field, batch, create_graph=False)
        loss = total_loss(jets, weights, iteration, batch.delta).total
        return float(loss.detach())

    params = OrderedDict(field.named_parameters())
    worst, where, checked = 0.0, "-", 0
    for name, p in params.items():
        flat = p.data.view(-1)
        analytic = grads[name].reshape(-1)
        count = flat.numel() if max_entries is None else \
            min(flat.numel(), max_entries)
        for i in range(count):
            original = flat[i].item()

            def f(t):
                with torch.no_grad():
                    flat[i] = original + t
                return loss_value()

            fd = central_difference(f, h)
            with torch.no_grad():
                flat[i] = original
            a = float(analytic[i])
            err = abs(a - fd) / max(abs(fd), PARAM_FLOOR)
            checked += 1
            if err > worst or where == "-":
                worst, where = err, f"{name}[{i}]"
    return SuiteResult("parameter", worst, where, PARAM_TOLERANCE, checked)


def run_gradcheck(seed: int = 0, batch_size: int = 64, hidden: int = 16,
                  max_entries: Optional[int] = None,
                  corrupt: Optional[str] = None) -> GradCheckReport:
    """
    Run all three suites on freshly initialized parameters.

    Args:
        seed: Seed of parameters and points
        batch_size: Points per sample set
        hidden: Hidden width of the field under test
        max_entries: Per-tensor cap for the parameter suite
        corrupt: Parameter whose gradient is deliberately corrupted

    Returns:
        GradCheckReport; its text is identical for identical arguments
    """
    field = init_params(seed, FieldConfig(hidden=hidden))
    rng = make_rng(seed)
    points = _random_points(rng, batch_size)
    report = GradCheckReport(seed=seed)
    report.suites.append(check_spatial(field, points))
    report.suites.append(check_laplacian(field, points))
    report.suites.append(check_parameters(
        field, check_batch(rng, batch_size), LossWeights(),
        max_entries=max_entries, corrupt=corrupt,
    ))
    for suite in report.suites:
        logger.info(suite.line())
    return report
