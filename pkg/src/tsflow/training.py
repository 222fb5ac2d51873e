"""Flow-path construction, matching losses, and the optimization loop.

Training pairs each data window x1 with Gaussian noise x0 and a uniform
time draw, forms the linear path point x_t = t*x1 + (1-t)*x0, and regresses
the model velocity onto the constant path velocity x1 - x0. The stochastic
variant perturbs the predicted velocity with Gaussian noise of scale
sigma_train before the squared error, which shifts the expected loss up by
exactly sigma_train**2 per entry without moving its minimizer.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, ContractError, NumericError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class FlowSchedule:
    """Linear interpolation schedule a(t)=t, b(t)=1-t plus noise scales."""

    sigma_train: float = 0.1
    sigma_sample: float = 0.1

    def __post_init__(self):
        if self.sigma_train < 0 or self.sigma_sample < 0:
            raise ConfigError("diffusion coefficients must be nonnegative")

    @staticmethod
    def a(t):
        return t

    @staticmethod
    def b(t):
        return 1.0 - t


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0
    loss_kind: str = "sfm"
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be nonnegative, got {self.learning_rate}")
        if self.loss_kind not in ("cfm", "sfm"):
            raise ConfigError(f"loss_kind must be 'cfm' or 'sfm', got {self.loss_kind!r}")


@dataclass
class TrainingReport:
    """Loss curve plus wall-clock accounting, written as CSV on request."""

    losses: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)

    @property
    def final_loss(self):
        return self.losses[-1] if self.losses else float("nan")

    @property
    def total_seconds(self):
        return sum(self.wall_ms) / 1000.0

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["step", "loss", "wall_ms"])
            for step, (loss, ms) in enumerate(zip(self.losses, self.wall_ms)):
                writer.writerow([step, repr(loss), f"{ms:.3f}"])


def interpolate(x0, x1, t):
    """Path point t*x1 + (1-t)*x0; exact at both endpoints."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ShapeError(f"interpolate endpoints disagree: {x0.shape} vs {x1.shape}")
    t = np.asarray(t, dtype=np.float64)
    if np.all(t == 0.0):
        return x0.copy()
    if np.all(t == 1.0):
        return x1.copy()
    return t * x1 + (1.0 - t) * x0


def target_velocity(x0, x1):
    """Constant path velocity x1 - x0 under the linear schedule."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ShapeError(f"target_velocity endpoints disagree: {x0.shape} vs {x1.shape}")
    return x1 - x0


def _draw_path(x1, sigma_train, rng):
    """Sample (t, x_t, target, epsilon) for one batch of data windows."""
    batch = x1.shape[0]
    t = rng.uniform(0.0, 1.0, size=batch)
    x0 = rng.standard_normal(x1.shape)
    eps = sigma_train * rng.standard_normal(x1.shape)
    t_full = t.reshape(batch, 1, 1)
    x_t = interpolate(x0, x1, t_full)
    return t, x_t, target_velocity(x0, x1), eps


def sfm_loss(model, x1, schedule, rng):
    """Mean squared error of the noise-perturbed velocity prediction.

    Per-entry mean of ||v(x_t, t) + eps - (x1 - x0)||^2 with t ~ U(0,1) per
    batch element, x0 ~ N(0, I) and eps ~ N(0, sigma_train^2 I). eps is a
    constant w.r.t. model parameters.
    """
    t, x_t, target, eps = _draw_path(np.asarray(x1, np.float64), schedule.sigma_train, rng)
    residual = model.forward(x_t, t) + Tensor(eps) - Tensor(target)
    return (residual * residual).mean()


def cfm_loss(model, x1, schedule, rng):
    """The sigma_train = 0 specialization; consumes the same RNG stream."""
    zeroed = FlowSchedule(sigma_train=0.0, sigma_sample=schedule.sigma_sample)
    return sfm_loss(model, x1, zeroed, rng)


def _global_grad_norm(params):
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return total**0.5


class AdamOptimizer:
    """Adaptive-moment gradient descent over a named parameter table."""

    def __init__(self, params, config: TrainConfig):
        self.params = params
        self.config = config
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self):
        cfg = self.config
        self.step_count += 1
        clip_scale = 1.0
        if cfg.grad_clip > 0:
            norm = _global_grad_norm(self.params)
            if norm > cfg.grad_clip:
                clip_scale = cfg.grad_clip / norm
        bias1 = 1.0 - cfg.beta1**self.step_count
        bias2 = 1.0 - cfg.beta2**self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad * clip_scale
            self._m[name] = cfg.beta1 * self._m[name] + (1.0 - cfg.beta1) * g
            self._v[name] = cfg.beta2 * self._v[name] + (1.0 - cfg.beta2) * g * g
            m_hat = self._m[name] / bias1
            v_hat = self._v[name] / bias2
            p.data = p.data - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


def train(model, data, schedule, config):
    """Optimize the model on a SeriesBatch; deterministic given the seed."""
    values = data.values
    if values.shape[0] == 0:
        raise ContractError("training data is empty")
    rng = np.random.default_rng(config.seed)
    loss_fn = sfm_loss if config.loss_kind == "sfm" else cfm_loss
    optimizer = AdamOptimizer(model.parameters(), config)
    report = TrainingReport()
    for step in range(config.steps):
        started = time.perf_counter()
        idx = rng.integers(0, values.shape[0], size=min(config.batch_size, values.shape[0]))
        model.zero_grad()
        loss = loss_fn(model, values[idx], schedule, rng)
        loss_value = float(loss.data)
        if not np.isfinite(loss_value):
            raise NumericError(
                f"non-finite loss {loss_value} at step {step}; "
                f"last finite loss {report.final_loss}"
            )
        loss.backward()
        if config.learning_rate > 0:
            optimizer.step()
        report.losses.append(loss_value)
        report.wall_ms.append((time.perf_counter() - started) * 1000.0)
    return report
