"""
Adam optimization of a Metric-Phase Field on a normalized point cloud.
"""

import logging
import os
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass, field as dataclass_field
from typing import Dict, List, Optional, Tuple

import joblib
import numpy as np
import pandas as pd
import torch

from src.errors import (
    CheckpointError,
    MPFError,
    NonFiniteGradientError,
    NonFiniteLossError,
    ShapeMismatchError,
    TrainingAbortedError,
)
from src.field import (
    BETA_FLOOR,
    FieldConfig,
    MetricPhaseField,
    field_from_state,
    field_state,
    init_params,
    loss_param_gradients,
)
from src.geometry_io import PointCloud
from src.losses import LossWeights
from src.spatial import build_index, draw_batch, estimate_normals

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "mpf-checkpoint"
CHECKPOINT_VERSION = 1
BETA_PARAM = "beta"


@dataclass
class TrainConfig:
    """Optimization schedule, batch sizes and sampling parameters."""

    iterations: int = 10000
    lr_net: float = 1e-4
    lr_beta: float = 1e-4
    surface_batch: int = 2048
    near_batch: int = 2048
    far_batch: int = 1024
    ambient_batch: int = 512
    delta: float = 0.05
    jitter: Optional[float] = None
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 1000
    snapshot_iters: List[int] = dataclass_field(default_factory=list)
    pca_k: int = 16
    weights: LossWeights = dataclass_field(default_factory=LossWeights)
    field: FieldConfig = dataclass_field(default_factory=FieldConfig)

    @property
    def sigma(self) -> float:
        return self.jitter if self.jitter is not None else self.delta / 2.0

    def validate(self):
        counts = {
            "surface_batch": self.surface_batch,
            "near_batch": self.near_batch,
            "far_batch": self.far_batch,
            "ambient_batch": self.ambient_batch,
            "log_every": self.log_every,
            "pca_k": self.pca_k,
        }
        for name, value in counts.items():
            if value <= 0:
                raise ValueError(f"{name} must be > 0, got {value}")
        if self.iterations < 0 or self.checkpoint_every < 0:
            raise ValueError("iterations and checkpoint_every must be >= 0")
        if self.lr_net <= 0 or self.lr_beta <= 0:
            raise ValueError("learning rates must be > 0")
        if self.delta <= 0 or self.sigma <= 0:
            raise ValueError("delta and jitter must be > 0")
        self.weights.validate()


@dataclass
class AdamState:
    """First / second moments per parameter and the step counter."""

    m: Dict[str, torch.Tensor]
    v: Dict[str, torch.Tensor]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: Dict[str, torch.Tensor]) -> "AdamState":
        return cls(
            m=OrderedDict((k, torch.zeros_like(p.detach()))
                          for k, p in params.items()),
            v=OrderedDict((k, torch.zeros_like(p.detach()))
                          for k, p in params.items()),
        )

    def to_dict(self) -> dict:
        return {
            "m": OrderedDict((k, t.numpy().copy()) for k, t in self.m.items()),
            "v": OrderedDict((k, t.numpy().copy()) for k, t in self.v.items()),
            "step": self.step,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AdamState":
        return cls(
            m=OrderedDict((k, torch.from_numpy(np.array(a)))
                          for k, a in data["m"].items()),
            v=OrderedDict((k, torch.from_numpy(np.array(a)))
                          for k, a in data["v"].items()),
            step=int(data["step"]),
            beta1=float(data["beta1"]),
            beta2=float(data["beta2"]),
            eps=float(data["eps"]),
        )


def _check_shapes(params, other, what: str):
    if list(params.keys()) != list(other.keys()):
        raise ShapeMismatchError(
            f"{what} keys differ from parameters: "
            f"{sorted(set(params) ^ set(other))}"
        )
    for k, p in params.items():
        if tuple(other[k].shape) != tuple(p.shape):
            raise ShapeMismatchError(
                f"{what} '{k}' has shape {tuple(other[k].shape)}, "
                f"parameter has {tuple(p.shape)}"
            )


def adam_step(params: Dict[str, torch.Tensor], grads: Dict[str, torch.Tensor],
              state: AdamState, lr_net: float, lr_beta: float
              ) -> Tuple[Dict[str, torch.Tensor], AdamState]:
    """
    One bias-corrected Adam update, in place.

    beta uses lr_beta and is clamped to BETA_FLOOR afterwards; everything
    else uses lr_net.

    Args:
        params: Parameter name -> tensor (updated in place)
        grads: Parameter name -> gradient
        state: Moments and step counter (updated in place)
        lr_net: Learning rate of the network weights
        lr_beta: Learning rate of beta

    Returns:
        Tuple of (params, state)

    Raises:
        ShapeMismatchError: When grads or moments do not match params
    """
    _check_shapes(params, grads, "gradient")
    _check_shapes(params, state.m, "first moment")
    _check_shapes(params, state.v, "second moment")

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    with torch.no_grad():
        for k, p in params.items():
            g = grads[k]
            m, v = state.m[k], state.v[k]
            m.mul_(state.beta1).add_((1.0 - state.beta1) * g)
            v.mul_(state.beta2).add_((1.0 - state.beta2) * (g * g))
            lr = lr_beta if k == BETA_PARAM else lr_net
            denom = torch.sqrt(v / bc2) + state.eps
            p.sub_((lr / bc1) * m / denom)
        if BETA_PARAM in params:
            params[BETA_PARAM].clamp_(min=BETA_FLOOR)
    return params, state


@dataclass
class Checkpoint:
    """Everything needed to resume or reuse a run."""

    field: MetricPhaseField
    state: AdamState
    iteration: int = 0
    rng_state: Optional[dict] = None
    log_rows: List[dict] = dataclass_field(default_factory=list)


def save_checkpoint(path: str, field: MetricPhaseField, state: AdamState,
                    iteration: int = 0,
                    rng: Optional[np.random.Generator] = None,
                    log_rows: Optional[List[dict]] = None):
    """
    Persist parameters, optimizer moments and rng state with joblib.

    Args:
        path: Destination file
        field: Field to store
        state: Adam state
        iteration: Number of completed iterations
        rng: Sampling generator whose state is stored for exact resume
        log_rows: Training log so far
    """
    record = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "field": field_state(field),
        "adam": state.to_dict(),
        "iteration": int(iteration),
        "rng_state": rng.bit_generator.state if rng is not None else None,
        "log": list(log_rows or []),
    }
    joblib.dump(record, path)
    logger.debug("Checkpoint written to %s (iteration %d)", path, iteration)


def load_checkpoint(path: str) -> Checkpoint:
    """
    Load a checkpoint written by save_checkpoint.

    Raises:
        CheckpointError: On unreadable, truncated or incompatible files
    """
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        record = joblib.load(path)
    except Exception as exc:
        raise CheckpointError(
            f"cannot read checkpoint {path}: {exc}"
        ) from None

    if not isinstance(record, dict) or \
            record.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a field checkpoint")
    if record.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path} has version {record.get('version')}, "
            f"expected {CHECKPOINT_VERSION}"
        )

    field = field_from_state(record["field"])
    try:
        state = AdamState.from_dict(record["adam"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed optimizer record: {exc}") from None
    params = OrderedDict(field.named_parameters())
    try:
        _check_shapes(params, state.m, "first moment")
        _check_shapes(params, state.v, "second moment")
    except ShapeMismatchError as exc:
        raise CheckpointError(str(exc)) from None
    return Checkpoint(field=field, state=state,
                      iteration=int(record["iteration"]),
                      rng_state=record.get("rng_state"),
                      log_rows=list(record.get("log", [])))


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator so checkpoints can restore the sample stream."""
    return np.random.Generator(np.random.Philox(int(seed)))


@contextmanager
def single_thread():
    """
    Run torch on one intra-op thread, restoring the previous count on exit.

    Training reductions then sum in a fixed order whatever MPF_NUM_THREADS
    is set to; grid and slice evaluation keep the configured count.
    """
    previous = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(previous)


class FieldTrainer:
    """Fit a MetricPhaseField to a normalized point cloud."""

    def __init__(self, config: Optional[TrainConfig] = None,
                 run_dir: Optional[str] = None):
        """
        Initialize the trainer.

        Args:
            config: Training configuration
            run_dir: Directory for checkpoints and snapshots (optional)
        """
        self.config = config or TrainConfig()
        self.config.validate()
        self.run_dir = run_dir
        self.field: Optional[MetricPhaseField] = None
        self.state: Optional[AdamState] = None
        self.rng: Optional[np.random.Generator] = None
        self.log_rows: List[dict] = []
        self.iteration = 0
        self.last_checkpoint: Optional[str] = None

    @property
    def checkpoint_path(self) -> Optional[str]:
        if self.run_dir is None:
            return None
        return os.path.join(self.run_dir, "checkpoint.joblib")

    def surface_normals(self, cloud: PointCloud,
                        index) -> Optional[np.ndarray]:
        """
        Normals for the normal-alignment term, computed once per run.

        File normals are used when present, PCA normals otherwise; None when
        the term is disabled.
        """
        if self.config.weights.normal <= 0:
            return None
        if cloud.has_normals:
            return cloud.normals
        return estimate_normals(index, cloud, self.config.pca_k,
                                skip_degenerate=True)

    def _start(self, resume_from: Optional[str]):
        cfg = self.config
        if resume_from is None:
            self.field = init_params(cfg.seed, cfg.field)
            self.state = AdamState.fresh(OrderedDict(
                self.field.named_parameters()
            ))
            self.rng = make_rng(cfg.seed)
            self.log_rows = []
            self.iteration = 0
            return
        ckpt = load_checkpoint(resume_from)
        self.field, self.state = ckpt.field, ckpt.state
        self.rng = make_rng(cfg.seed)
        if ckpt.rng_state is not None:
            self.rng.bit_generator.state = ckpt.rng_state
        self.log_rows = ckpt.log_rows
        self.iteration = ckpt.iteration
        self.last_checkpoint = resume_from
        logger.info("Resuming from %s at iteration %d",
                    resume_from, self.iteration)

    def save(self, path: str):
        save_checkpoint(path, self.field, self.state, self.iteration,
                        self.rng, self.log_rows)

    def train(self, cloud: PointCloud, resume_from: Optional[str] = None
              ) -> Tuple[MetricPhaseField, pd.DataFrame]:
        """
        Run the optimization loop.

        Args:
            cloud: Normalized point cloud
            resume_from: Checkpoint to continue from

        Returns:
            Tuple of (trained field, training log DataFrame)

        Raises:
            TrainingAbortedError: On a non-finite loss or gradient; the last
                written checkpoint is left untouched
            SamplerStarvationError: When a sampler cannot fill its batch
        """
        with single_thread():
            return self._run(cloud, resume_from)

    def _run(self, cloud: PointCloud, resume_from: Optional[str]
             ) -> Tuple[MetricPhaseField, pd.DataFrame]:
        cfg = self.config
        if cloud.count == 0:
            raise MPFError("cannot train on an empty point cloud")
        self._start(resume_from)
        index = build_index(cloud)
        normals = self.surface_normals(cloud, index)
        params = OrderedDict(self.field.named_parameters())
        snapshots = set(cfg.snapshot_iters)

        for it in range(self.iteration, cfg.iterations):
            batch = draw_batch(
                index, cloud, normals, cfg.surface_batch, cfg.near_batch,
                cfg.far_batch, cfg.ambient_batch, cfg.delta, cfg.sigma,
                self.rng,
            )
            try:
                breakdown, grads = loss_param_gradients(
                    self.field, batch, cfg.weights, it
                )
            except (NonFiniteLossError, NonFiniteGradientError) as exc:
                logger.error("Non-finite value at iteration %d: %s", it, exc)
                raise TrainingAbortedError(
                    it, exc, self.last_checkpoint
                ) from exc

            beta_before = float(self.field.beta.detach())
            adam_step(params, grads, self.state, cfg.lr_net, cfg.lr_beta)
            self.iteration = it + 1

            if it % cfg.log_every == 0 or self.iteration == cfg.iterations:
                row = breakdown.as_row(it)
                row["beta"] = beta_before
                self.log_rows.append(row)
                logger.info("iter %6d  loss %.6e  beta %.4f",
                            it, row["total"], beta_before)

            if self.run_dir is not None:
                if cfg.checkpoint_every and \
                        self.iteration % cfg.checkpoint_every == 0:
                    self.save(self.checkpoint_path)
                    self.last_checkpoint = self.checkpoint_path
                if self.iteration in snapshots:
                    self.save(os.path.join(
                        self.run_dir, f"snapshot_{self.iteration}.joblib"
                    ))

        return self.field, self.training_log()

    def training_log(self) -> pd.DataFrame:
        return pd.DataFrame(self.log_rows)


def train(cloud: PointCloud, cfg: Optional[TrainConfig] = None
          ) -> Tuple[MetricPhaseField, pd.DataFrame]:
    """Train a field without writing any files."""
    return FieldTrainer(cfg).train(cloud)
